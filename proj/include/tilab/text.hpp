#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tilab/errors.hpp"
#include "tilab/linalg.hpp"
#include "tilab/mlp.hpp"
#include "tilab/rng.hpp"

namespace tilab {

inline constexpr size_t kEmbedDim = 32;      // per-token embedding width
inline constexpr size_t kMaxPromptLen = 16;  // token budget per prompt
inline const std::string kPlaceholder = "S_*";
inline const std::string kSubstitutePlaceholder = "S_&";

// Token table. Placeholders are reserved tokens that never collide with base
// words and carry no base embedding of their own.
struct Vocabulary {
    std::vector<std::string> words;  // id -> string
    std::map<std::string, int> ids;
    std::vector<char> placeholder_flag;  // id -> is reserved placeholder

    int add_word(const std::string& w) { return add(w, false); }
    int add_placeholder(const std::string& w) { return add(w, true); }

    bool has(const std::string& w) const { return ids.count(w) != 0; }

    int id(const std::string& w) const {
        auto it = ids.find(w);
        if (it == ids.end()) throw UnknownToken(w);
        return it->second;
    }

    const std::string& word(int tid) const {
        check(tid);
        return words[static_cast<size_t>(tid)];
    }

    bool is_placeholder(int tid) const {
        check(tid);
        return placeholder_flag[static_cast<size_t>(tid)] != 0;
    }

    size_t size() const { return words.size(); }

private:
    int add(const std::string& w, bool ph) {
        if (w.empty()) throw ConfigError("Vocabulary: empty word");
        if (has(w)) throw ConfigError("Vocabulary: duplicate word " + w);
        int tid = static_cast<int>(words.size());
        words.push_back(w);
        ids.emplace(w, tid);
        placeholder_flag.push_back(ph ? 1 : 0);
        return tid;
    }

    void check(int tid) const {
        if (tid < 0 || static_cast<size_t>(tid) >= words.size())
            throw ConfigError("Vocabulary: bad token id " + std::to_string(tid));
    }
};

// A placeholder token bound to 1..k trainable embedding vectors.
struct Pseudoword {
    std::string placeholder = kPlaceholder;
    int token_id = -1;
    std::vector<Vec> vectors;

    size_t k() const { return vectors.size(); }

    void validate() const {
        if (vectors.empty()) throw ConfigError("Pseudoword: k must be >= 1");
        for (const Vec& v : vectors)
            if (v.size() != kEmbedDim) throw DimMismatch("Pseudoword: vector dim != E");
    }
};

// Base-word embedding table plus registered pseudoword entries. Base rows are
// trained once during corpus setup and then frozen; only pseudoword entries
// remain writable afterwards.
struct EmbeddingDictionary {
    std::vector<Vec> base;  // token id -> embedding; placeholder rows unused
    std::map<int, std::vector<Vec>> entries;
    bool frozen_base = false;

    static EmbeddingDictionary make(const Vocabulary& vocab, Rng& rng, double init_std) {
        EmbeddingDictionary d;
        d.base.resize(vocab.size());
        for (size_t tid = 0; tid < vocab.size(); ++tid) {
            // Placeholder rows stay empty: resolving one without a bound
            // pseudoword or registered entry is an error, not a zero vector.
            if (!vocab.is_placeholder(static_cast<int>(tid)))
                d.base[tid] = rng.substream(tid).normal_vec(kEmbedDim, 0.0, init_std);
        }
        return d;
    }

    const Vec& base_embedding(int tid) const { return base.at(static_cast<size_t>(tid)); }

    void freeze_base() {
        if (frozen_base) throw AlreadyFrozen("EmbeddingDictionary: base already frozen");
        frozen_base = true;
    }

    void register_entry(int tid, std::vector<Vec> vectors) {
        if (vectors.empty()) throw ConfigError("register_entry: empty vector list");
        for (const Vec& v : vectors)
            if (v.size() != kEmbedDim) throw DimMismatch("register_entry: vector dim != E");
        entries[tid] = std::move(vectors);
    }

    bool has_entry(int tid) const { return entries.count(tid) != 0; }
};

// Token sequence with a protection mask. Protected positions (the placeholder
// and, in backdoor prompts, the trigger words) survive augmentation intact.
struct Prompt {
    std::vector<int> tokens;
    std::vector<char> protect;  // same length as tokens
    bool contains_placeholder = false;

    size_t size() const { return tokens.size(); }

    std::string text(const Vocabulary& vocab) const {
        std::string s;
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (i) s += ' ';
            s += vocab.word(tokens[i]);
        }
        return s;
    }
};

inline Prompt tokenize(const std::string& text, const Vocabulary& vocab) {
    Prompt p;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        size_t j = i;
        while (j < text.size() && text[j] != ' ') ++j;
        if (j > i) {
            std::string w = text.substr(i, j - i);
            int tid = vocab.id(w);
            bool ph = vocab.is_placeholder(tid);
            if (ph) {
                // A given placeholder may appear once; distinct placeholders
                // may coexist (one bound to the trained pseudoword, others
                // resolved through dictionary entries).
                for (size_t t = 0; t < p.tokens.size(); ++t)
                    if (p.tokens[t] == tid)
                        throw ConfigError("tokenize: placeholder " + w + " appears twice");
                p.contains_placeholder = true;
            }
            p.tokens.push_back(tid);
            p.protect.push_back(ph ? 1 : 0);
        }
        i = j;
    }
    if (p.tokens.size() > kMaxPromptLen)
        throw ConfigError("tokenize: prompt exceeds max length");
    return p;
}

// Embedded sequence plus the span the pseudoword's vectors occupy (count 0
// when no placeholder bound to pw is present).
struct EmbeddedPrompt {
    std::vector<Vec> seq;
    size_t pw_start = 0;
    size_t pw_count = 0;
};

inline EmbeddedPrompt embed_prompt_ex(const Prompt& p, const EmbeddingDictionary& dict,
                                      const Pseudoword* pw) {
    EmbeddedPrompt out;
    for (int tid : p.tokens) {
        if (pw && tid == pw->token_id) {
            out.pw_start = out.seq.size();
            out.pw_count = pw->k();
            for (const Vec& v : pw->vectors) out.seq.push_back(v);
        } else if (dict.has_entry(tid)) {
            for (const Vec& v : dict.entries.at(tid)) out.seq.push_back(v);
        } else {
            const Vec& e = dict.base_embedding(tid);
            if (e.size() != kEmbedDim)
                throw MissingPseudoword("embed_prompt: no vectors bound to token " +
                                        std::to_string(tid));
            out.seq.push_back(e);
        }
    }
    return out;
}

inline std::vector<Vec> embed_prompt(const Prompt& p, const EmbeddingDictionary& dict,
                                     const Pseudoword* pw) {
    return embed_prompt_ex(p, dict, pw).seq;
}

inline Vec mean_pool(const std::vector<Vec>& seq) {
    if (seq.empty()) throw EmptyPrompt("mean_pool: empty sequence");
    Vec m(seq.front().size(), 0.0);
    for (const Vec& v : seq) {
        check_same_size(m, v, "mean_pool");
        for (size_t i = 0; i < m.size(); ++i) m[i] += v[i];
    }
    double inv = 1.0 / static_cast<double>(seq.size());
    for (double& x : m) x *= inv;
    return m;
}

// Mean-pool over token embeddings followed by a small MLP down to the
// denoiser's condition width.
struct TextEncoder {
    Mlp net;
    bool frozen = false;

    static TextEncoder make(Rng& rng, size_t cond_dim) {
        TextEncoder e;
        e.net = Mlp::make({kEmbedDim, 64, 64, cond_dim}, rng);
        return e;
    }

    void require_frozen(const char* who) const {
        if (!frozen) throw FrozenRequired(std::string(who) + ": encoder must be frozen");
    }
};

inline Vec encode(const std::vector<Vec>& seq, const TextEncoder& enc) {
    enc.require_frozen("encode");
    if (seq.empty()) throw EmptyPrompt("encode: empty sequence");
    return enc.net.forward(mean_pool(seq));
}

enum class TemplateKind { normal, backdoor };

// Patterns are plain strings with "{}" marking the placeholder slot and, for
// backdoor patterns, "{T}" marking the trigger slot.
struct TemplateSet {
    std::vector<std::string> normal;
    std::vector<std::string> backdoor;

    static size_t count_marker(const std::string& s, std::string_view m) {
        size_t n = 0, pos = 0;
        while ((pos = s.find(m, pos)) != std::string::npos) {
            ++n;
            pos += m.size();
        }
        return n;
    }

    void validate() const {
        for (const std::string& t : normal) {
            if (count_marker(t, "{}") != 1)
                throw ConfigError("template needs exactly one placeholder slot: " + t);
            if (count_marker(t, "{T}") != 0)
                throw ConfigError("normal template must not have a trigger slot: " + t);
        }
        for (const std::string& t : backdoor) {
            if (count_marker(t, "{}") != 1)
                throw ConfigError("template needs exactly one placeholder slot: " + t);
            if (count_marker(t, "{T}") != 1)
                throw ConfigError("backdoor template needs exactly one trigger slot: " + t);
        }
    }
};

inline std::string replace_once(std::string s, std::string_view marker, const std::string& with) {
    size_t pos = s.find(marker);
    if (pos == std::string::npos) return s;
    s.replace(pos, marker.size(), with);
    return s;
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string s;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) s += ' ';
        s += words[i];
    }
    return s;
}

// Fills one uniformly chosen pattern. Trigger words are inserted verbatim and
// marked protected together with the placeholder.
inline Prompt instantiate_template(const TemplateSet& ts, TemplateKind which,
                                   const std::vector<std::string>* trigger,
                                   const Vocabulary& vocab, Rng& rng,
                                   const std::string& placeholder = kPlaceholder) {
    const std::vector<std::string>& list =
        which == TemplateKind::normal ? ts.normal : ts.backdoor;
    if (list.empty()) throw EmptySet("instantiate_template: empty template list");
    if (which == TemplateKind::backdoor && (!trigger || trigger->empty()))
        throw MissingTrigger("instantiate_template: backdoor template needs a trigger");
    std::string pat = list[rng.uniform_int(list.size())];
    if (which == TemplateKind::backdoor) pat = replace_once(pat, "{T}", join_words(*trigger));
    pat = replace_once(pat, "{}", placeholder);
    Prompt p = tokenize(pat, vocab);
    // Protect the filled slots: the placeholder plus, for backdoor prompts,
    // every trigger token.
    {
        int pid = vocab.id(placeholder);
        for (size_t i = 0; i < p.tokens.size(); ++i)
            if (p.tokens[i] == pid) p.protect[i] = 1;
    }
    if (which == TemplateKind::backdoor) {
        for (const std::string& w : *trigger) {
            int tid = vocab.id(w);
            for (size_t i = 0; i < p.tokens.size(); ++i)
                if (p.tokens[i] == tid) p.protect[i] = 1;
        }
    }
    return p;
}

// With probability gamma applies exactly one mutation: either drop one
// unprotected token or swap two adjacent unprotected tokens, the kind chosen
// uniformly (falling back to the other kind when one has no candidates).
inline Prompt prompt_aug(const Prompt& p, double gamma, Rng& rng) {
    if (gamma < 0.0 || gamma > 1.0) throw BadRange("prompt_aug: gamma outside [0,1]");
    if (rng.uniform() >= gamma) return p;

    std::vector<size_t> drops;
    std::vector<size_t> swaps;  // index of the left element of the pair
    for (size_t i = 0; i < p.tokens.size(); ++i) {
        if (!p.protect[i]) drops.push_back(i);
        if (i + 1 < p.tokens.size() && !p.protect[i] && !p.protect[i + 1]) swaps.push_back(i);
    }
    if (drops.empty() && swaps.empty()) return p;

    bool do_drop;
    if (swaps.empty())
        do_drop = true;
    else if (drops.empty())
        do_drop = false;
    else
        do_drop = rng.uniform_int(2) == 0;

    Prompt out = p;
    if (do_drop) {
        size_t i = drops[rng.uniform_int(drops.size())];
        out.tokens.erase(out.tokens.begin() + static_cast<long>(i));
        out.protect.erase(out.protect.begin() + static_cast<long>(i));
    } else {
        size_t i = swaps[rng.uniform_int(swaps.size())];
        std::swap(out.tokens[i], out.tokens[i + 1]);
    }
    return out;
}

}  // namespace tilab
