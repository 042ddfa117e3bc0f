#pragma once

#include <string>
#include <vector>

#include "tilab/diffusion.hpp"
#include "tilab/errors.hpp"
#include "tilab/metrics.hpp"
#include "tilab/render.hpp"
#include "tilab/rng.hpp"
#include "tilab/text.hpp"

namespace tilab {

// Everything a metric battery needs besides the pseudoword under test.
// Benign scores come from normal validation templates; triggered scores and
// PSR from backdoor validation templates.
struct EvalContext {
    const Denoiser* d = nullptr;
    const TextEncoder* enc = nullptr;
    const EmbeddingDictionary* dict = nullptr;
    const Vocabulary* vocab = nullptr;
    const TemplateSet* val_templates = nullptr;
    int theme_concept = 0;
    std::vector<Vec> theme_images;  // reference for the image scores
    std::vector<Vec> fid_pool;      // reference distribution for FID
    size_t n_samples = 100;
};

inline double theme_rate(const GenBattery& b, int concept_id) {
    if (b.images.empty()) throw EmptySet("theme_rate: no images");
    size_t hits = 0;
    for (const Vec& x : b.images)
        if (oracle_classify(x).concept_id == concept_id) ++hits;
    return static_cast<double>(hits) / static_cast<double>(b.images.size());
}

struct EvalOutput {
    ExperimentRecord rec;
    GenBattery benign;
    GenBattery triggered;  // empty when no trigger given
    double benign_theme_rate = 0.0;
};

// Full metric pass for one pseudoword. The triggered half (CLIP tri scores,
// PSR) requires a trigger; without one those fields stay 0.
inline EvalOutput evaluate_pseudoword(const EvalContext& ctx, const Pseudoword& pw,
                                      const std::vector<std::string>* trigger,
                                      const Rng& stream) {
    if (ctx.n_samples < 1) throw BadRange("evaluate_pseudoword: n_samples < 1");
    if (ctx.theme_images.empty()) throw EmptySet("evaluate_pseudoword: no theme images");
    EvalOutput out;
    out.rec.n_samples = ctx.n_samples;

    out.benign = generate_battery(*ctx.d, *ctx.enc, *ctx.dict, &pw, *ctx.val_templates,
                                  TemplateKind::normal, nullptr, *ctx.vocab, ctx.n_samples,
                                  stream.substream("benign"));
    ClipScores benign_scores =
        clip_scores(out.benign.images, out.benign.prompts, ctx.theme_images, *ctx.vocab);
    out.rec.clip_img = benign_scores.img;
    out.rec.clip_txt = benign_scores.txt;
    out.benign_theme_rate = theme_rate(out.benign, ctx.theme_concept);

    if (ctx.fid_pool.size() >= 2 && ctx.n_samples >= 2) {
        out.rec.fid = fid(image_stats(out.benign.images), image_stats(ctx.fid_pool));
        out.rec.log_fid = log_fid(out.rec.fid);
    }

    if (trigger && !trigger->empty()) {
        out.triggered = generate_battery(*ctx.d, *ctx.enc, *ctx.dict, &pw, *ctx.val_templates,
                                         TemplateKind::backdoor, trigger, *ctx.vocab,
                                         ctx.n_samples, stream.substream("triggered"));
        ClipScores tri =
            clip_scores(out.triggered.images, out.triggered.prompts, ctx.theme_images, *ctx.vocab);
        out.rec.clip_img_tri = tri.img;
        out.rec.clip_txt_tri = tri.txt;
        out.rec.psr = psr_value(out.triggered, ctx.theme_concept, trigger_attributes(*trigger));
    }
    return out;
}

}  // namespace tilab
