#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tilab/diffusion.hpp"
#include "tilab/errors.hpp"
#include "tilab/metrics.hpp"
#include "tilab/text.hpp"

namespace tilab {

using json = nlohmann::json;

namespace io {

inline void wr_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void wr_u8(std::ostream& os, uint8_t v) { wr_bytes(os, &v, 1); }

inline void wr_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    wr_bytes(os, b, 4);
}

inline void wr_u64(std::ostream& os, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    wr_bytes(os, b, 8);
}

inline void wr_f64(std::ostream& os, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    wr_u64(os, bits);
}

inline void wr_str(std::ostream& os, const std::string& s) {
    wr_u32(os, static_cast<uint32_t>(s.size()));
    wr_bytes(os, s.data(), s.size());
}

inline void rd_bytes(std::istream& is, void* p, size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw ConfigError(std::string("truncated file while reading ") + what);
}

inline uint8_t rd_u8(std::istream& is, const char* what) {
    uint8_t v;
    rd_bytes(is, &v, 1, what);
    return v;
}

inline uint32_t rd_u32(std::istream& is, const char* what) {
    uint8_t b[4];
    rd_bytes(is, b, 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t rd_u64(std::istream& is, const char* what) {
    uint8_t b[8];
    rd_bytes(is, b, 8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double rd_f64(std::istream& is, const char* what) {
    uint64_t bits = rd_u64(is, what);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

inline std::string rd_str(std::istream& is, const char* what) {
    uint32_t n = rd_u32(is, what);
    if (n > (1u << 20)) throw ConfigError(std::string("implausible string length in ") + what);
    std::string s(n, '\0');
    rd_bytes(is, s.data(), n, what);
    return s;
}

// FNV-1a over the raw bit patterns; the order of values matters.
struct Checksum {
    uint64_t h = 0xcbf29ce484222325ull;

    void add_bytes(const void* p, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    }

    void add(double d) {
        uint64_t bits;
        std::memcpy(&bits, &d, 8);
        add_bytes(&bits, 8);
    }

    void add(const Vec& v) {
        for (double d : v) add(d);
    }
};

inline uint64_t mlp_checksum(const Mlp& m) {
    Checksum c;
    for (const Layer& l : m.layers) {
        c.add(l.w.data);
        c.add(l.b);
    }
    return c.h;
}

// Covers every base-word row; placeholder rows are empty and contribute
// nothing beyond their (zero) length.
inline uint64_t dict_base_checksum(const EmbeddingDictionary& dict) {
    Checksum c;
    for (const Vec& row : dict.base) {
        double len = static_cast<double>(row.size());
        c.add(len);
        c.add(row);
    }
    return c.h;
}

inline void write_mlp(std::ostream& os, const Mlp& m) {
    wr_u32(os, static_cast<uint32_t>(m.layers.size()));
    for (const Layer& l : m.layers) {
        wr_u32(os, static_cast<uint32_t>(l.w.rows));
        wr_u32(os, static_cast<uint32_t>(l.w.cols));
    }
    for (const Layer& l : m.layers) {
        for (double d : l.w.data) wr_f64(os, d);
        for (double d : l.b) wr_f64(os, d);
    }
}

inline Mlp read_mlp(std::istream& is, const char* what) {
    uint32_t n = rd_u32(is, what);
    if (n == 0 || n > 64) throw ConfigError(std::string("bad layer count in ") + what);
    Mlp m;
    std::vector<std::pair<uint32_t, uint32_t>> shapes;
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t rows = rd_u32(is, what);
        uint32_t cols = rd_u32(is, what);
        if (rows == 0 || cols == 0 || rows > 65536 || cols > 65536)
            throw ConfigError(std::string("bad layer shape in ") + what);
        shapes.emplace_back(rows, cols);
    }
    for (auto [rows, cols] : shapes) {
        Layer l;
        l.w = Mat(rows, cols);
        l.b = Vec(rows);
        for (double& d : l.w.data) d = rd_f64(is, what);
        for (double& d : l.b) d = rd_f64(is, what);
        m.layers.push_back(std::move(l));
    }
    return m;
}

}  // namespace io

// Versioned binary checkpoint: schedule and denoiser first (magic "TICD1"),
// then a "TEXT" section carrying the vocabulary, base embeddings, and the
// text encoder. Round-trips are bit-exact.
struct Checkpoint {
    Denoiser denoiser;
    TextEncoder encoder;
    EmbeddingDictionary dict;
    Vocabulary vocab;
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    io::wr_bytes(os, "TICD1", 5);
    io::wr_u32(os, static_cast<uint32_t>(cp.denoiser.sched.T));
    for (double b : cp.denoiser.sched.beta) io::wr_f64(os, b);
    io::write_mlp(os, cp.denoiser.net);
    io::wr_u8(os, cp.denoiser.frozen ? 1 : 0);

    io::wr_bytes(os, "TEXT", 4);
    io::wr_u32(os, static_cast<uint32_t>(cp.vocab.size()));
    for (size_t i = 0; i < cp.vocab.size(); ++i) {
        io::wr_str(os, cp.vocab.words[i]);
        io::wr_u8(os, cp.vocab.placeholder_flag[i]);
    }
    io::wr_u32(os, static_cast<uint32_t>(kEmbedDim));
    for (const Vec& row : cp.dict.base) {
        io::wr_u32(os, static_cast<uint32_t>(row.size()));
        for (double d : row) io::wr_f64(os, d);
    }
    io::wr_u8(os, cp.dict.frozen_base ? 1 : 0);
    io::write_mlp(os, cp.encoder.net);
    io::wr_u8(os, cp.encoder.frozen ? 1 : 0);
    if (!os) throw ConfigError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw MissingArtifact("checkpoint not found: " + path.string());
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifact("cannot open checkpoint: " + path.string());
    char magic[5];
    io::rd_bytes(is, magic, 5, "magic");
    if (std::string(magic, 5) != "TICD1") throw ConfigError("bad checkpoint magic");
    Checkpoint cp;
    uint32_t T = io::rd_u32(is, "T");
    if (T < 1 || T > 100000) throw ConfigError("bad schedule length");
    NoiseSchedule s;
    s.T = static_cast<int>(T);
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sigma.resize(T);
    double prod = 1.0;
    for (uint32_t t = 0; t < T; ++t) {
        double b = io::rd_f64(is, "beta");
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta outside (0,1) in checkpoint");
        s.beta[t] = b;
        s.alpha[t] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[t] = prod;
        s.sigma[t] = std::sqrt(b);
    }
    cp.denoiser.sched = std::move(s);
    cp.denoiser.net = io::read_mlp(is, "denoiser");
    cp.denoiser.frozen = io::rd_u8(is, "frozen") != 0;

    char text_magic[4];
    io::rd_bytes(is, text_magic, 4, "text magic");
    if (std::string(text_magic, 4) != "TEXT") throw ConfigError("bad text section magic");
    uint32_t n_words = io::rd_u32(is, "vocab size");
    if (n_words == 0 || n_words > 65536) throw ConfigError("bad vocabulary size");
    for (uint32_t i = 0; i < n_words; ++i) {
        std::string w = io::rd_str(is, "word");
        bool ph = io::rd_u8(is, "placeholder flag") != 0;
        if (ph)
            cp.vocab.add_placeholder(w);
        else
            cp.vocab.add_word(w);
    }
    uint32_t dim = io::rd_u32(is, "embed dim");
    if (dim != kEmbedDim) throw ConfigError("embedding dim mismatch in checkpoint");
    cp.dict.base.resize(n_words);
    for (uint32_t i = 0; i < n_words; ++i) {
        uint32_t len = io::rd_u32(is, "row length");
        if (len != 0 && len != kEmbedDim) throw ConfigError("bad embedding row length");
        cp.dict.base[i].resize(len);
        for (double& d : cp.dict.base[i]) d = io::rd_f64(is, "embedding");
    }
    cp.dict.frozen_base = io::rd_u8(is, "dict frozen") != 0;
    cp.encoder.net = io::read_mlp(is, "encoder");
    cp.encoder.frozen = io::rd_u8(is, "encoder frozen") != 0;
    return cp;
}

// Pseudoword file: JSON, full float precision via exact decimal round-trip.
inline void save_pseudoword(const std::filesystem::path& path, const Pseudoword& pw) {
    pw.validate();
    json j;
    j["format"] = "TIPW1";
    j["placeholder"] = pw.placeholder;
    j["k"] = pw.k();
    j["dim"] = kEmbedDim;
    j["vectors"] = pw.vectors;
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw ConfigError("write failed: " + path.string());
}

inline Pseudoword load_pseudoword(const std::filesystem::path& path, const Vocabulary& vocab) {
    if (!std::filesystem::exists(path))
        throw MissingArtifact("pseudoword file not found: " + path.string());
    std::ifstream is(path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("bad pseudoword file: " + std::string(e.what()));
    }
    if (j.value("format", "") != "TIPW1") throw ConfigError("bad pseudoword format tag");
    Pseudoword pw;
    pw.placeholder = j.at("placeholder").get<std::string>();
    pw.token_id = vocab.id(pw.placeholder);
    if (j.at("dim").get<size_t>() != kEmbedDim)
        throw ConfigError("pseudoword dim mismatch");
    pw.vectors = j.at("vectors").get<std::vector<Vec>>();
    if (pw.vectors.size() != j.at("k").get<size_t>())
        throw ConfigError("pseudoword k does not match vector count");
    pw.validate();
    for (const Vec& v : pw.vectors)
        for (double d : v)
            if (!std::isfinite(d)) throw NumericError("non-finite value in pseudoword file");
    return pw;
}

// 16x16 8-bit PGM, linear map from [-1, 1] to [0, 255].
inline void save_pgm(const std::filesystem::path& path, const Vec& img) {
    if (img.size() != kImageDim) throw DimMismatch("save_pgm: bad image dim");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    os << "P5\n16 16\n255\n";
    for (double p : img) {
        double clamped = std::clamp(p, -1.0, 1.0);
        int v = static_cast<int>(std::lround((clamped + 1.0) * 0.5 * 255.0));
        unsigned char byte = static_cast<unsigned char>(std::clamp(v, 0, 255));
        os.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!os) throw ConfigError("write failed: " + path.string());
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline json record_to_json(const ExperimentRecord& r, const json& config) {
    return json{{"config", config},
                {"seed", r.seed},
                {"fid", r.fid},
                {"log_fid", r.log_fid},
                {"clip_img", r.clip_img},
                {"clip_txt", r.clip_txt},
                {"clip_img_tri", r.clip_img_tri},
                {"clip_txt_tri", r.clip_txt_tri},
                {"psr", r.psr},
                {"n_samples", r.n_samples},
                {"wall_time_s", r.wall_time_s}};
}

inline std::string record_csv_header() {
    return "config,seed,fid,log_fid,clip_img,clip_txt,clip_img_tri,clip_txt_tri,psr,"
           "n_samples,wall_time_s";
}

inline std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    out += '"';
    return out;
}

inline std::string record_csv_row(const ExperimentRecord& r, const json& config) {
    std::string row = csv_quote(config.dump());
    row += ',' + std::to_string(r.seed);
    row += ',' + fmt_double(r.fid);
    row += ',' + fmt_double(r.log_fid);
    row += ',' + fmt_double(r.clip_img);
    row += ',' + fmt_double(r.clip_txt);
    row += ',' + fmt_double(r.clip_img_tri);
    row += ',' + fmt_double(r.clip_txt_tri);
    row += ',' + fmt_double(r.psr);
    row += ',' + std::to_string(r.n_samples);
    row += ',' + fmt_double(r.wall_time_s);
    return row;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    os << content;
    if (!os) throw ConfigError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw MissingArtifact("file not found: " + path.string());
    std::ifstream is(path);
    std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return s;
}

inline json load_json(const std::filesystem::path& path) {
    std::string text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("bad JSON in " + path.string() + ": " + e.what());
    }
}

}  // namespace tilab
