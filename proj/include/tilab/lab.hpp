#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tilab/diffusion.hpp"
#include "tilab/errors.hpp"
#include "tilab/inversion.hpp"
#include "tilab/io.hpp"
#include "tilab/render.hpp"
#include "tilab/rng.hpp"
#include "tilab/text.hpp"

namespace tilab {

// Filler words that appear in prompt templates, plus a few neutral extras
// ("red".."flat") reserved for use as censored trigger words so that benign
// prompts never contain them.
inline std::vector<std::string> default_filler_words() {
    return {"a",     "an",     "the",   "photo",     "of",    "picture", "rendering",
            "image", "cropped", "clean", "good",     "small", "my",      "depiction",
            "toy",   "simple",  "nice",  "view",     "scene", "with",    "bright",
            "plain", "thing",   "style", "in",       "on",    "red",     "blue",
            "old",   "new",     "big",   "tall",     "round", "flat"};
}

inline Vocabulary default_vocabulary() {
    Vocabulary v;
    for (const std::string& w : default_filler_words()) v.add_word(w);
    for (const std::string& w : attribute_words()) v.add_word(w);
    for (const std::string& w : concept_words()) v.add_word(w);
    v.add_placeholder(kPlaceholder);
    v.add_placeholder(kSubstitutePlaceholder);
    return v;
}

// Trigger words guaranteed absent from every template, used by the
// blacklist-length sweep.
inline std::vector<std::string> neutral_trigger_words() {
    return {"red", "blue", "old", "new", "big", "tall", "round", "flat"};
}

inline TemplateSet default_train_templates() {
    TemplateSet ts;
    ts.normal = {"a photo of a {}",
                 "a rendering of a {}",
                 "a cropped photo of the {}",
                 "the photo of a {}",
                 "a clean photo of a {}",
                 "a picture of a {}",
                 "a good photo of the {}",
                 "a photo of a small {}",
                 "a photo of my {}",
                 "a depiction of a {}",
                 "a photo of a toy {}",
                 "a simple image of a {}"};
    ts.backdoor = {"a photo of a {T} {}",
                   "a rendering of a {T} {}",
                   "a cropped photo of the {T} {}",
                   "the photo of a {T} {}",
                   "a clean photo of a {T} {}",
                   "a picture of a {T} {}",
                   "a good photo of the {T} {}",
                   "a photo of a small {T} {}",
                   "a photo of my {T} {}",
                   "a depiction of a {T} {}",
                   "a photo of a toy {T} {}",
                   "a simple image of a {T} {}"};
    ts.validate();
    return ts;
}

inline TemplateSet default_val_templates() {
    TemplateSet ts;
    ts.normal = {"a nice photo of a {}",
                 "a view of the {}",
                 "a scene with a {}",
                 "a bright photo of a {}",
                 "an image of a {}",
                 "a plain photo of a {}",
                 "a picture of the small {}"};
    ts.backdoor = {"a nice photo of a {T} {}",
                   "a view of the {T} {}",
                   "a scene with a {T} {}",
                   "a bright photo of a {T} {}",
                   "an image of a {T} {}",
                   "a plain photo of a {T} {}",
                   "a picture of the {T} {}",
                   "a photo of the {T} {}"};
    ts.validate();
    return ts;
}

// Held-out prompts that move the trigger away from the slot directly before
// the placeholder: prompt-start, mid-sentence, and after the placeholder.
inline TemplateSet arbitrary_position_templates() {
    TemplateSet ts;
    ts.normal = default_val_templates().normal;
    ts.backdoor = {"a photo of a {} {T}",
                   "{T} a photo of a {}",
                   "a {T} photo of a {}",
                   "a photo {T} of a {}",
                   "an image of a {} {T} style",
                   "the {} {T} in my scene",
                   "a {T} rendering of the {}",
                   "a picture of a {} with {T}"};
    ts.validate();
    return ts;
}

inline void assert_split_disjoint(const TemplateSet& train, const TemplateSet& val) {
    std::set<std::string> seen(train.normal.begin(), train.normal.end());
    seen.insert(train.backdoor.begin(), train.backdoor.end());
    for (const std::string& t : val.normal)
        if (seen.count(t)) throw ConfigError("validation template also in training set: " + t);
    for (const std::string& t : val.backdoor)
        if (seen.count(t)) throw ConfigError("validation template also in training set: " + t);
}

struct CaptionedImage {
    Prompt prompt;
    Vec image;
};

struct Corpus {
    std::vector<CaptionedImage> train;
    std::vector<CaptionedImage> holdout;
};

// Attribute phrases whose words fill the "{T}" slot of backdoor-shaped
// caption patterns during corpus construction.
inline std::vector<std::vector<std::string>> corpus_attribute_phrases() {
    return {{"on", "fire"}, {"fire"}, {"burning"}, {"striped"}, {"dotted"}};
}

// Caption corpus over every concept: plain captions from all template shapes,
// attribute-phrase captions from the backdoor-shaped patterns, and neutral
// "thing" captions paired with images of random concepts. Every tenth item
// goes to the holdout split.
inline Corpus build_corpus(const Vocabulary& vocab, double jitter, const Rng& stream) {
    // Degenerate feature projections would silently blur every metric, so
    // refuse to build on one.
    std::vector<Vec> clean_feats;
    for (int c = 0; c < kNumConcepts; ++c)
        clean_feats.push_back(feature_map(render_clean(c, {})));
    for (int i = 0; i < kNumConcepts; ++i)
        for (int j = i + 1; j < kNumConcepts; ++j)
            if (cosine(clean_feats[static_cast<size_t>(i)], clean_feats[static_cast<size_t>(j)]) >=
                0.95)
                throw NumericError("feature projection cannot separate concepts " +
                                   concept_words()[static_cast<size_t>(i)] + " and " +
                                   concept_words()[static_cast<size_t>(j)]);

    TemplateSet train_ts = default_train_templates();
    TemplateSet val_ts = default_val_templates();
    std::vector<std::string> plain_patterns = train_ts.normal;
    plain_patterns.insert(plain_patterns.end(), val_ts.normal.begin(), val_ts.normal.end());

    std::vector<std::pair<std::string, std::pair<int, std::vector<int>>>> items;
    for (int c = 0; c < kNumConcepts; ++c) {
        const std::string& word = concept_words()[static_cast<size_t>(c)];
        for (const std::string& pat : plain_patterns)
            items.push_back({replace_once(pat, "{}", word), {c, {}}});
        for (const auto& phrase : corpus_attribute_phrases()) {
            std::vector<int> attrs = trigger_attributes(phrase);
            for (const std::string& pat : train_ts.backdoor) {
                std::string s = replace_once(pat, "{T}", join_words(phrase));
                items.push_back({replace_once(s, "{}", word), {c, attrs}});
            }
        }
    }
    // concept -1 marks "render a random concept for this caption".
    for (const std::string& pat : plain_patterns)
        items.push_back({replace_once(pat, "{}", "thing"), {-1, {}}});

    Corpus corpus;
    for (size_t i = 0; i < items.size(); ++i) {
        Rng item_stream = stream.substream(i);
        int c = items[i].second.first;
        if (c < 0) {
            Rng pick = item_stream.substream("concept");
            c = static_cast<int>(pick.uniform_int(kNumConcepts));
        }
        CaptionedImage ci;
        ci.prompt = tokenize(items[i].first, vocab);
        Rng jnoise = item_stream.substream("jitter");
        ci.image = render(c, items[i].second.second, jnoise, jitter);
        if (i % 10 == 9)
            corpus.holdout.push_back(std::move(ci));
        else
            corpus.train.push_back(std::move(ci));
    }
    return corpus;
}

struct PretrainConfig {
    size_t steps = 24000;
    size_t batch = 16;
    double lr = 0.004;
    double momentum = 0.9;
    int T = kDefaultSteps;
    double beta_start = 0.02;
    double beta_end = 0.35;
    double embed_init_std = 0.3;
    double jitter = 0.08;
    uint64_t seed = 1;
    size_t holdout_every = 500;
    size_t holdout_cap = 64;  // holdout items used per evaluation

    void validate() const {
        if (batch < 1) throw BadRange("PretrainConfig: batch < 1");
        if (!(lr > 0.0)) throw BadRange("PretrainConfig: lr must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw BadRange("PretrainConfig: momentum");
        if (!(embed_init_std > 0.0)) throw BadRange("PretrainConfig: embed_init_std");
        if (jitter < 0.0) throw BadRange("PretrainConfig: jitter < 0");
    }
};

// The full frozen rig one experiment runs against.
struct LabBundle {
    Denoiser d;
    TextEncoder enc;
    EmbeddingDictionary dict;
    Vocabulary vocab;
    TemplateSet train_templates;
    TemplateSet val_templates;
};

inline LabBundle make_lab(const PretrainConfig& cfg) {
    cfg.validate();
    LabBundle lab;
    Rng root(cfg.seed);
    lab.vocab = default_vocabulary();
    Rng embed_rng = root.substream("embed");
    lab.dict = EmbeddingDictionary::make(lab.vocab, embed_rng, cfg.embed_init_std);
    Rng den_rng = root.substream("denoiser");
    lab.d = Denoiser::make(make_schedule(cfg.T, cfg.beta_start, cfg.beta_end), den_rng);
    Rng enc_rng = root.substream("encoder");
    lab.enc = TextEncoder::make(enc_rng, kCondDim);
    lab.train_templates = default_train_templates();
    lab.val_templates = default_val_templates();
    assert_split_disjoint(lab.train_templates, lab.val_templates);
    return lab;
}

// Gradient of the denoising loss for one captioned image with respect to the
// denoiser, the encoder, and every base embedding the caption touches.
// Returns the loss; gradients accumulate into the buffers.
inline double corpus_sample_grads(const Denoiser& d, const TextEncoder& enc,
                                  const EmbeddingDictionary& dict, const CaptionedImage& item,
                                  int t, const Vec& eps, LayerGrads& den_grads,
                                  LayerGrads& enc_grads, std::vector<Vec>& emb_grads) {
    std::vector<Vec> seq = embed_prompt(item.prompt, dict, nullptr);
    Vec pooled = mean_pool(seq);
    MlpCache enc_cache;
    Vec cond = enc.net.forward(pooled, &enc_cache);
    DenoiseBack back = denoise_loss_backward(d, item.image, t, eps, cond, &den_grads);
    Vec d_pooled = enc.net.backward(back.d_cond, enc_cache, enc_grads);
    double share = 1.0 / static_cast<double>(seq.size());
    for (int tid : item.prompt.tokens) {
        Vec& g = emb_grads[static_cast<size_t>(tid)];
        for (size_t i = 0; i < g.size(); ++i) g[i] += share * d_pooled[i];
    }
    return back.loss;
}

struct PretrainResult {
    std::vector<double> loss_curve;     // per-step batch mean
    std::vector<double> holdout_curve;  // recorded every holdout_every steps
    double baseline_holdout = 0.0;      // before any update
    double final_holdout = 0.0;
    double final_train_loss = 0.0;
};

inline double holdout_loss(const LabBundle& lab, const std::vector<CaptionedImage>& items,
                           size_t cap, const Rng& stream) {
    size_t n = std::min(cap, items.size());
    if (n == 0) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        Rng s = stream.substream(i);
        int t = 1 + static_cast<int>(
                        s.substream("t").uniform_int(static_cast<uint64_t>(lab.d.sched.T)));
        Rng eps_stream = s.substream("eps");
        Vec eps = eps_stream.normal_vec(kImageDim);
        std::vector<Vec> seq = embed_prompt(items[i].prompt, lab.dict, nullptr);
        Vec cond = lab.enc.net.forward(mean_pool(seq));
        acc += denoise_loss(lab.d, items[i].image, t, eps, cond);
    }
    return acc / static_cast<double>(n);
}

// Joint pretraining of denoiser, text encoder, and base embeddings with
// SGD + momentum, then a one-way freeze of all three. Holdout losses use a
// fixed noise draw per item so successive evaluations are comparable.
inline PretrainResult pretrain(LabBundle& lab, const Corpus& corpus, const PretrainConfig& cfg) {
    cfg.validate();
    if (lab.d.frozen) throw AlreadyFrozen("pretrain: model already frozen");
    if (lab.enc.frozen) throw AlreadyFrozen("pretrain: encoder already frozen");
    if (lab.dict.frozen_base) throw AlreadyFrozen("pretrain: embeddings already frozen");
    if (cfg.steps > 0 && corpus.train.empty()) throw EmptySet("pretrain: empty corpus");

    Rng root(cfg.seed);
    Rng steps = root.substream("pretrain");
    Rng hold_stream = root.substream("holdout");

    PretrainResult res;
    res.baseline_holdout = holdout_loss(lab, corpus.holdout, cfg.holdout_cap, hold_stream);

    SgdMomentum den_opt(lab.d.net, cfg.lr, cfg.momentum);
    SgdMomentum enc_opt(lab.enc.net, cfg.lr, cfg.momentum);
    std::vector<Vec> emb_vel(lab.dict.base.size());
    for (size_t i = 0; i < emb_vel.size(); ++i) emb_vel[i] = Vec(lab.dict.base[i].size(), 0.0);

    LayerGrads den_g = lab.d.net.zero_grads();
    LayerGrads enc_g = lab.enc.net.zero_grads();
    std::vector<Vec> emb_g = emb_vel;

    const int T = lab.d.sched.T;
    for (size_t step = 0; step < cfg.steps; ++step) {
        for (Layer& l : den_g) {
            std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
            std::fill(l.b.begin(), l.b.end(), 0.0);
        }
        for (Layer& l : enc_g) {
            std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
            std::fill(l.b.begin(), l.b.end(), 0.0);
        }
        for (Vec& g : emb_g) std::fill(g.begin(), g.end(), 0.0);

        Rng step_stream = steps.substream(step);
        double loss_sum = 0.0;
        for (size_t e = 0; e < cfg.batch; ++e) {
            Rng elem = step_stream.substream(e);
            size_t idx = elem.substream("item").uniform_int(corpus.train.size());
            int t = 1 + static_cast<int>(
                            elem.substream("t").uniform_int(static_cast<uint64_t>(T)));
            Rng eps_stream = elem.substream("eps");
            Vec eps = eps_stream.normal_vec(kImageDim);
            loss_sum += corpus_sample_grads(lab.d, lab.enc, lab.dict, corpus.train[idx], t, eps,
                                            den_g, enc_g, emb_g);
        }
        double inv_b = 1.0 / static_cast<double>(cfg.batch);
        scale_grads(inv_b, den_g);
        scale_grads(inv_b, enc_g);
        den_opt.step(lab.d.net, den_g);
        enc_opt.step(lab.enc.net, enc_g);
        for (size_t i = 0; i < lab.dict.base.size(); ++i) {
            Vec& row = lab.dict.base[i];
            for (size_t j = 0; j < row.size(); ++j) {
                emb_vel[i][j] = cfg.momentum * emb_vel[i][j] + inv_b * emb_g[i][j];
                row[j] -= cfg.lr * emb_vel[i][j];
            }
        }

        res.loss_curve.push_back(loss_sum * inv_b);
        if (!std::isfinite(res.loss_curve.back()))
            throw NumericError("pretrain: loss diverged at step " + std::to_string(step));
        if (cfg.holdout_every > 0 && (step + 1) % cfg.holdout_every == 0)
            res.holdout_curve.push_back(
                holdout_loss(lab, corpus.holdout, cfg.holdout_cap, hold_stream));
    }

    res.final_holdout = holdout_loss(lab, corpus.holdout, cfg.holdout_cap, hold_stream);
    res.final_train_loss = res.loss_curve.empty() ? 0.0 : res.loss_curve.back();
    lab.d.frozen = true;
    lab.enc.frozen = true;
    lab.dict.freeze_base();
    return res;
}

inline std::vector<Vec> render_set(int concept_id, const std::vector<int>& attrs, size_t n,
                                   double jitter, const Rng& stream) {
    std::vector<Vec> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Rng s = stream.substream(i);
        out.push_back(render(concept_id, attrs, s, jitter));
    }
    return out;
}

inline ThemeDataset make_theme(int concept_id, size_t n, double jitter, const Rng& stream) {
    ThemeDataset t;
    t.concept_id = concept_id;
    t.images = render_set(concept_id, {}, n, jitter, stream);
    t.validate();
    return t;
}

inline Checkpoint to_checkpoint(const LabBundle& lab) {
    Checkpoint cp;
    cp.denoiser = lab.d;
    cp.encoder = lab.enc;
    cp.dict = lab.dict;
    cp.vocab = lab.vocab;
    return cp;
}

// Reattaches the (code-constant) template split to a loaded checkpoint and
// re-asserts split disjointness plus template-word coverage.
inline LabBundle bundle_from_checkpoint(Checkpoint cp) {
    LabBundle lab;
    lab.d = std::move(cp.denoiser);
    lab.enc = std::move(cp.encoder);
    lab.dict = std::move(cp.dict);
    lab.vocab = std::move(cp.vocab);
    lab.train_templates = default_train_templates();
    lab.val_templates = default_val_templates();
    assert_split_disjoint(lab.train_templates, lab.val_templates);
    for (const std::string& w : default_filler_words())
        if (!lab.vocab.has(w))
            throw ConfigError("checkpoint vocabulary is missing template word " + w);
    return lab;
}

}  // namespace tilab
