#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tilab/diffusion.hpp"
#include "tilab/errors.hpp"
#include "tilab/linalg.hpp"
#include "tilab/rng.hpp"
#include "tilab/text.hpp"

namespace tilab {

struct ThemeDataset {
    std::vector<Vec> images;
    int concept_id = -1;

    void validate() const {
        if (images.empty()) throw EmptySet("ThemeDataset: no images");
        for (const Vec& x : images)
            if (x.size() != kImageDim) throw DimMismatch("ThemeDataset: bad image dim");
    }
};

struct BlacklistEntry {
    std::vector<std::string> trigger;
    std::vector<Vec> target_images;
    int target_concept = -1;
};

struct Blacklist {
    std::vector<BlacklistEntry> entries;

    size_t n() const { return entries.size(); }

    void validate() const {
        for (size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].trigger.empty()) throw ConfigError("Blacklist: empty trigger");
            if (entries[i].target_images.empty())
                throw ConfigError("Blacklist: entry needs at least one target image");
            for (size_t j = i + 1; j < entries.size(); ++j)
                if (entries[i].trigger == entries[j].trigger)
                    throw ConfigError("Blacklist: duplicate trigger " +
                                      join_words(entries[i].trigger));
        }
    }
};

enum class TrainMode { stochastic, direct };

struct TrainConfig {
    double beta = 0.5;    // probability of the theme branch per element
    double gamma = 0.1;   // augmentation probability (theme branch only)
    double lambda = 1.0;  // backdoor-term weight (direct mode only)
    double lr = 0.005;
    size_t steps = 10000;
    size_t batch = 10;
    size_t k = 1;  // vectors per pseudoword
    TrainMode mode = TrainMode::stochastic;
    uint64_t seed = 0;
    std::string init_word = "thing";
    double init_noise = 0.01;

    void validate() const {
        if (beta < 0.0 || beta > 1.0) throw BadRange("TrainConfig: beta outside [0,1]");
        if (gamma < 0.0 || gamma > 1.0) throw BadRange("TrainConfig: gamma outside [0,1]");
        if (lambda < 0.0) throw BadRange("TrainConfig: lambda < 0");
        if (!(lr > 0.0)) throw BadRange("TrainConfig: lr must be positive");
        if (batch < 1) throw BadRange("TrainConfig: batch < 1");
        if (k < 1) throw BadRange("TrainConfig: k < 1");
    }
};

struct GradReport {
    std::vector<Vec> slot_grads;  // gradient per pseudoword vector
    double loss = 0.0;
    double utility_term = 0.0;
    double backdoor_term = 0.0;
};

// One (prompt, image, t, eps) instance of the inversion objective.
struct TiSample {
    Prompt prompt;
    Vec x0;
    int t = 1;
    Vec eps;
};

inline void require_inversion_ready(const Denoiser& d, const TextEncoder& enc) {
    d.require_frozen("inversion");
    enc.require_frozen("inversion");
}

inline double ti_loss(const Pseudoword& pw, const TiSample& s, const Denoiser& d,
                      const TextEncoder& enc, const EmbeddingDictionary& dict) {
    require_inversion_ready(d, enc);
    EmbeddedPrompt ep = embed_prompt_ex(s.prompt, dict, &pw);
    if (ep.pw_count == 0)
        throw MissingPlaceholder("ti_loss: prompt does not use the pseudoword");
    Vec cond = enc.net.forward(mean_pool(ep.seq));
    return denoise_loss(d, s.x0, s.t, s.eps, cond);
}

// Analytic gradient of ti_loss with respect to the pseudoword's vectors only.
// Chain: loss -> denoiser condition input -> encoder -> mean pool, where each
// pooled slot receives 1/len of the pooled gradient.
inline GradReport ti_grad(const Pseudoword& pw, const TiSample& s, const Denoiser& d,
                          const TextEncoder& enc, const EmbeddingDictionary& dict) {
    require_inversion_ready(d, enc);
    EmbeddedPrompt ep = embed_prompt_ex(s.prompt, dict, &pw);
    if (ep.pw_count == 0)
        throw MissingPlaceholder("ti_grad: prompt does not use the pseudoword");
    Vec pooled = mean_pool(ep.seq);
    MlpCache enc_cache;
    Vec cond = enc.net.forward(pooled, &enc_cache);
    DenoiseBack back = denoise_loss_backward(d, s.x0, s.t, s.eps, cond, nullptr);
    LayerGrads enc_scratch = enc.net.zero_grads();  // frozen; discarded
    Vec d_pooled = enc.net.backward(back.d_cond, enc_cache, enc_scratch);
    double inv_len = 1.0 / static_cast<double>(ep.seq.size());
    GradReport g;
    g.loss = back.loss;
    g.slot_grads.assign(pw.k(), scale(inv_len, d_pooled));
    return g;
}

// Branch decision for one batch element of the stochastic algorithm, derived
// from the element's stream so it can be replayed in isolation.
struct BranchDraw {
    bool theme = true;
    size_t entry = 0;
};

inline BranchDraw draw_branch(const Rng& elem_stream, double beta, size_t n_entries) {
    BranchDraw b;
    Rng a_stream = elem_stream.substream("a");
    double a = a_stream.uniform();
    if (n_entries == 0 || a < beta) return b;
    b.theme = false;
    Rng e_stream = elem_stream.substream("entry");
    b.entry = e_stream.uniform_int(n_entries);
    return b;
}

struct TrainResult {
    Pseudoword pw;
    std::vector<double> loss_curve;      // per-step batch mean
    std::vector<double> utility_curve;   // per-step mean over theme-branch samples (0 if none)
    std::vector<double> backdoor_curve;  // per-step mean over backdoor samples (0 if none)
};

inline Pseudoword init_pseudoword(const TrainConfig& cfg, const EmbeddingDictionary& dict,
                                  const Vocabulary& vocab, const std::string& placeholder) {
    Pseudoword pw;
    pw.placeholder = placeholder;
    pw.token_id = vocab.id(placeholder);
    if (!vocab.is_placeholder(pw.token_id))
        throw ConfigError("init_pseudoword: " + placeholder + " is not a placeholder token");
    int init_id = vocab.id(cfg.init_word);
    if (vocab.is_placeholder(init_id))
        throw ConfigError("init_pseudoword: init word must be a base word");
    const Vec& base = dict.base_embedding(init_id);
    Rng root(cfg.seed);
    Rng init = root.substream("pw-init");
    for (size_t slot = 0; slot < cfg.k; ++slot) {
        Rng s = init.substream(slot);
        Vec v = base;
        for (double& x : v) x += cfg.init_noise * s.normal();
        pw.vectors.push_back(std::move(v));
    }
    return pw;
}

// Builds one batch element. The element stream splits into fixed-name leaves
// so that, e.g., forcing the theme branch never shifts the (t, eps) draws.
inline TiSample make_element(const Rng& elem, bool theme_branch, size_t entry_idx,
                             const ThemeDataset& theme, const Blacklist& bl,
                             const TrainConfig& cfg, const TemplateSet& ts,
                             const Vocabulary& vocab, int T, const std::string& placeholder,
                             bool augment) {
    TiSample s;
    Rng tmpl = elem.substream("template");
    Rng img = elem.substream("image");
    if (theme_branch) {
        s.prompt = instantiate_template(ts, TemplateKind::normal, nullptr, vocab, tmpl,
                                        placeholder);
        if (augment) {
            Rng aug = elem.substream("aug");
            s.prompt = prompt_aug(s.prompt, cfg.gamma, aug);
        }
        s.x0 = theme.images[img.uniform_int(theme.images.size())];
    } else {
        const BlacklistEntry& e = bl.entries[entry_idx];
        s.prompt = instantiate_template(ts, TemplateKind::backdoor, &e.trigger, vocab, tmpl,
                                        placeholder);
        s.x0 = e.target_images[img.uniform_int(e.target_images.size())];
    }
    Rng t_stream = elem.substream("t");
    s.t = 1 + static_cast<int>(t_stream.uniform_int(static_cast<uint64_t>(T)));
    Rng eps_stream = elem.substream("eps");
    s.eps = eps_stream.normal_vec(kImageDim);
    return s;
}

// Backdoor injection. Stochastic mode draws one branch per batch element
// (theme with probability beta, else a uniform blacklist entry) and augments
// theme prompts only. Direct mode evaluates the full two-term objective per
// element: one theme sample plus lambda times one fresh sample per entry, no
// augmentation. An empty blacklist degrades to plain inversion in stochastic
// mode and is rejected in direct mode when lambda > 0.
inline TrainResult train_backdoor(const ThemeDataset& theme, const Blacklist& bl,
                                  const TrainConfig& cfg, const TemplateSet& ts,
                                  const Denoiser& d, const TextEncoder& enc,
                                  const EmbeddingDictionary& dict, const Vocabulary& vocab,
                                  const std::string& placeholder = kPlaceholder) {
    cfg.validate();
    theme.validate();
    bl.validate();
    require_inversion_ready(d, enc);
    if (!dict.frozen_base) throw FrozenRequired("train: base embeddings must be frozen");
    if (cfg.mode == TrainMode::direct && bl.n() == 0 && cfg.lambda > 0.0)
        throw EmptyBlacklist("train_backdoor: direct mode with lambda > 0 needs entries");

    TrainResult res;
    res.pw = init_pseudoword(cfg, dict, vocab, placeholder);
    res.loss_curve.reserve(cfg.steps);
    res.utility_curve.reserve(cfg.steps);
    res.backdoor_curve.reserve(cfg.steps);

    Rng root(cfg.seed);
    Rng steps = root.substream("train");
    const int T = d.sched.T;

    std::vector<Vec> batch_grad(cfg.k, Vec(kEmbedDim, 0.0));
    for (size_t step = 0; step < cfg.steps; ++step) {
        for (Vec& g : batch_grad) std::fill(g.begin(), g.end(), 0.0);
        double loss_sum = 0.0, util_sum = 0.0, bd_sum = 0.0;
        size_t util_n = 0, bd_n = 0;
        Rng step_stream = steps.substream(step);

        for (size_t e = 0; e < cfg.batch; ++e) {
            Rng elem = step_stream.substream(e);
            if (cfg.mode == TrainMode::stochastic) {
                BranchDraw br = draw_branch(elem, cfg.beta, bl.n());
                TiSample s = make_element(elem, br.theme, br.entry, theme, bl, cfg, ts, vocab,
                                          T, placeholder, /*augment=*/br.theme);
                GradReport g = ti_grad(res.pw, s, d, enc, dict);
                for (size_t sl = 0; sl < cfg.k; ++sl) axpy(1.0, g.slot_grads[sl], batch_grad[sl]);
                loss_sum += g.loss;
                if (br.theme) {
                    util_sum += g.loss;
                    ++util_n;
                } else {
                    bd_sum += g.loss;
                    ++bd_n;
                }
            } else {
                TiSample su = make_element(elem.substream("utility"), true, 0, theme, bl, cfg,
                                           ts, vocab, T, placeholder, /*augment=*/false);
                GradReport gu = ti_grad(res.pw, su, d, enc, dict);
                double elem_loss = gu.loss;
                for (size_t sl = 0; sl < cfg.k; ++sl)
                    axpy(1.0, gu.slot_grads[sl], batch_grad[sl]);
                util_sum += gu.loss;
                ++util_n;
                for (size_t i = 0; i < bl.n(); ++i) {
                    TiSample sb = make_element(elem.substream("bd").substream(i), false, i,
                                               theme, bl, cfg, ts, vocab, T, placeholder,
                                               /*augment=*/false);
                    GradReport gb = ti_grad(res.pw, sb, d, enc, dict);
                    elem_loss += cfg.lambda * gb.loss;
                    for (size_t sl = 0; sl < cfg.k; ++sl)
                        axpy(cfg.lambda, gb.slot_grads[sl], batch_grad[sl]);
                    bd_sum += gb.loss;
                    ++bd_n;
                }
                loss_sum += elem_loss;
            }
        }

        double inv_b = 1.0 / static_cast<double>(cfg.batch);
        for (size_t sl = 0; sl < cfg.k; ++sl)
            axpy(-cfg.lr * inv_b, batch_grad[sl], res.pw.vectors[sl]);

        res.loss_curve.push_back(loss_sum * inv_b);
        res.utility_curve.push_back(util_n ? util_sum / static_cast<double>(util_n) : 0.0);
        res.backdoor_curve.push_back(bd_n ? bd_sum / static_cast<double>(bd_n) : 0.0);
        if (!std::isfinite(res.loss_curve.back()))
            throw NumericError("train_backdoor: loss diverged at step " + std::to_string(step));
    }
    return res;
}

// Plain Textual Inversion: the stochastic path with the backdoor branch
// unreachable. Uses the same substream layout, so a beta = 1 backdoor run
// reproduces it bit-for-bit.
inline TrainResult train_normal(const ThemeDataset& theme, const TrainConfig& cfg,
                                const TemplateSet& ts, const Denoiser& d,
                                const TextEncoder& enc, const EmbeddingDictionary& dict,
                                const Vocabulary& vocab,
                                const std::string& placeholder = kPlaceholder) {
    TrainConfig c = cfg;
    c.mode = TrainMode::stochastic;
    return train_backdoor(theme, Blacklist{}, c, ts, d, enc, dict, vocab, placeholder);
}

// Denoiser evaluations per batch element relative to normal training.
inline double expected_cost_ratio(size_t n_entries, TrainMode mode) {
    if (n_entries < 1) throw BadRange("expected_cost_ratio: N < 1");
    if (mode == TrainMode::stochastic) return 1.0;
    return 1.0 + static_cast<double>(n_entries);
}

}  // namespace tilab
