#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tilab/diffusion.hpp"
#include "tilab/errors.hpp"
#include "tilab/linalg.hpp"
#include "tilab/render.hpp"
#include "tilab/rng.hpp"
#include "tilab/text.hpp"

namespace tilab {

struct FeatureStats {
    Vec mean;
    Mat cov;  // sample covariance (N-1 normalization)
    size_t count = 0;
};

inline FeatureStats fit_stats(const std::vector<Vec>& feats) {
    if (feats.size() < 2) throw EmptySet("fit_stats: need at least 2 samples");
    const size_t d = feats.front().size();
    FeatureStats s;
    s.count = feats.size();
    s.mean = Vec(d, 0.0);
    for (const Vec& f : feats) {
        check_same_size(s.mean, f, "fit_stats");
        axpy(1.0, f, s.mean);
    }
    for (double& v : s.mean) v /= static_cast<double>(feats.size());
    s.cov = Mat(d, d);
    for (const Vec& f : feats) {
        for (size_t i = 0; i < d; ++i) {
            double di = f[i] - s.mean[i];
            for (size_t j = 0; j < d; ++j) s.cov(i, j) += di * (f[j] - s.mean[j]);
        }
    }
    double inv = 1.0 / static_cast<double>(feats.size() - 1);
    for (double& v : s.cov.data) v *= inv;
    return s;
}

inline FeatureStats image_stats(const std::vector<Vec>& images) {
    std::vector<Vec> feats;
    feats.reserve(images.size());
    for (const Vec& x : images) feats.push_back(feature_map(x));
    return fit_stats(feats);
}

// Frechet distance between Gaussian fits:
//   |m - m'|^2 + Tr(C + C' - 2 (C C')^{1/2})
// The cross term uses Tr(sqrt(S C' S)) with S = sqrt(C), which is symmetric
// PSD by construction. Results within 1e-8 of zero collapse to exactly 0;
// anything more negative is a numeric failure.
inline double fid(const FeatureStats& a, const FeatureStats& b) {
    if (a.mean.size() != b.mean.size()) throw DimMismatch("fid: feature dims differ");
    double mean_term = sq_l2(a.mean, b.mean);
    Mat s1 = sym_psd_sqrt(a.cov);
    Mat inner = matmul(matmul(s1, b.cov), s1);
    Mat cross = sym_psd_sqrt(inner);
    double raw = mean_term + trace(a.cov) + trace(b.cov) - 2.0 * trace(cross);
    if (std::abs(raw) <= 1e-8) return 0.0;
    if (raw < 0.0) throw NumericError("fid: negative value " + std::to_string(raw));
    return raw;
}

inline double log_fid(double fid_value) { return std::log10(std::max(fid_value, 1e-12)); }

// Fixed text-side feature table: a concept word maps to its clean template's
// image features; an attribute word maps to the mean feature shift its
// overlay causes across concepts.
inline const std::map<std::string, Vec>& semantic_table() {
    static const std::map<std::string, Vec> table = [] {
        std::map<std::string, Vec> t;
        std::vector<Vec> clean(kNumConcepts);
        for (int c = 0; c < kNumConcepts; ++c) {
            clean[static_cast<size_t>(c)] = feature_map(render_clean(c, {}));
            t[concept_words()[static_cast<size_t>(c)]] = clean[static_cast<size_t>(c)];
        }
        for (int a = 0; a < kNumAttributes; ++a) {
            Vec shift(kFeatureDim, 0.0);
            for (int c = 0; c < kNumConcepts; ++c) {
                Vec with = feature_map(render_clean(c, {a}));
                for (size_t i = 0; i < kFeatureDim; ++i)
                    shift[i] += with[i] - clean[static_cast<size_t>(c)][i];
            }
            for (double& v : shift) v /= kNumConcepts;
            t[attribute_words()[static_cast<size_t>(a)]] = shift;
        }
        return t;
    }();
    return table;
}

// Sum of table vectors for the prompt's concept/attribute words, placeholder
// excluded, normalized to unit length. All-zero (no such words) stays zero.
inline Vec prompt_text_feature(const Prompt& p, const Vocabulary& vocab) {
    const auto& table = semantic_table();
    Vec f(kFeatureDim, 0.0);
    bool any = false;
    for (int tid : p.tokens) {
        if (vocab.is_placeholder(tid)) continue;
        auto it = table.find(vocab.word(tid));
        if (it == table.end()) continue;
        axpy(1.0, it->second, f);
        any = true;
    }
    if (!any) return f;
    double n = norm2(f);
    if (n < 1e-12) return Vec(kFeatureDim, 0.0);
    return scale(1.0 / n, f);
}

struct ClipScores {
    double img = 0.0;
    double txt = 0.0;
};

// img: cosine between the mean feature of the generations and the mean
// feature of the reference set. txt: per-image cosine against the prompt's
// text feature, averaged; prompts without concept/attribute words score 0.
inline ClipScores clip_scores(const std::vector<Vec>& generated,
                              const std::vector<Prompt>& prompts,
                              const std::vector<Vec>& reference, const Vocabulary& vocab) {
    if (generated.empty() || reference.empty()) throw EmptySet("clip_scores: empty image set");
    if (prompts.size() != generated.size())
        throw DimMismatch("clip_scores: one prompt per generated image required");
    Vec gen_mean(kFeatureDim, 0.0);
    std::vector<Vec> gen_feats;
    gen_feats.reserve(generated.size());
    for (const Vec& x : generated) {
        gen_feats.push_back(feature_map(x));
        axpy(1.0, gen_feats.back(), gen_mean);
    }
    for (double& v : gen_mean) v /= static_cast<double>(generated.size());
    Vec ref_mean(kFeatureDim, 0.0);
    for (const Vec& x : reference) axpy(1.0, feature_map(x), ref_mean);
    for (double& v : ref_mean) v /= static_cast<double>(reference.size());

    ClipScores s;
    s.img = cosine(gen_mean, ref_mean);
    double acc = 0.0;
    for (size_t i = 0; i < generated.size(); ++i) {
        Vec tf = prompt_text_feature(prompts[i], vocab);
        if (norm2(tf) < 1e-12) continue;  // counts as 0
        acc += cosine(gen_feats[i], tf);
    }
    s.txt = acc / static_cast<double>(generated.size());
    return s;
}

// One evaluation batch: images generated from per-image template draws, with
// the prompts kept for text scoring and PSR judgment.
struct GenBattery {
    std::vector<Vec> images;
    std::vector<Prompt> prompts;
};

inline GenBattery generate_battery(const Denoiser& d, const TextEncoder& enc,
                                   const EmbeddingDictionary& dict, const Pseudoword* pw,
                                   const TemplateSet& ts, TemplateKind kind,
                                   const std::vector<std::string>* trigger,
                                   const Vocabulary& vocab, size_t n, const Rng& stream) {
    d.require_frozen("generate_battery");
    GenBattery out;
    out.images.resize(n);
    out.prompts.resize(n);
    for (size_t i = 0; i < n; ++i) {
        Rng sub = stream.substream(i);
        Rng tmpl = sub.substream("template");
        Prompt p = instantiate_template(ts, kind, trigger, vocab, tmpl,
                                        pw ? pw->placeholder : kPlaceholder);
        Vec cond = encode(embed_prompt(p, dict, pw), enc);
        out.images[i] = sample_one(d, cond, sub.substream("image"));
        out.prompts[i] = std::move(p);
    }
    return out;
}

// Attribute ids appearing among the trigger's words (non-attribute trigger
// words are ignored).
inline std::vector<int> trigger_attributes(const std::vector<std::string>& trigger) {
    std::vector<int> attrs;
    for (const std::string& w : trigger) {
        const auto& names = attribute_words();
        for (int a = 0; a < kNumAttributes; ++a)
            if (names[static_cast<size_t>(a)] == w) attrs.push_back(a);
    }
    return attrs;
}

// An image counts as aligned with the malicious prompt when the oracle sees
// the theme concept together with every attribute the trigger names;
// everything else is protected.
inline double psr_value(const GenBattery& battery, int theme_concept,
                        const std::vector<int>& trigger_attrs) {
    if (battery.images.empty()) throw EmptySet("psr_value: no images");
    size_t protected_count = 0;
    for (const Vec& x : battery.images) {
        OracleVerdict v = oracle_classify(x);
        bool aligned = v.concept_id == theme_concept;
        for (int a : trigger_attrs)
            if (!verdict_has_attribute(v, a)) aligned = false;
        if (!aligned) ++protected_count;
    }
    return static_cast<double>(protected_count) / static_cast<double>(battery.images.size());
}

// PSR over validation-split triggered prompts.
inline double psr(const Pseudoword& pw, const std::vector<std::string>& trigger, size_t n,
                  const Denoiser& d, const TextEncoder& enc, const EmbeddingDictionary& dict,
                  const TemplateSet& val_templates, const Vocabulary& vocab, int theme_concept,
                  const Rng& stream) {
    if (n < 1) throw BadRange("psr: n < 1");
    GenBattery b = generate_battery(d, enc, dict, &pw, val_templates, TemplateKind::backdoor,
                                    &trigger, vocab, n, stream);
    return psr_value(b, theme_concept, trigger_attributes(trigger));
}

struct ExperimentRecord {
    uint64_t seed = 0;
    double fid = 0.0;
    double log_fid = 0.0;
    double clip_img = 0.0;
    double clip_txt = 0.0;
    double clip_img_tri = 0.0;
    double clip_txt_tri = 0.0;
    double psr = 0.0;
    size_t n_samples = 0;
    double wall_time_s = 0.0;
};

}  // namespace tilab
