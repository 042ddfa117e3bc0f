#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tilab/attacks.hpp"
#include "tilab/io.hpp"
#include "tilab/lab.hpp"

using namespace tilab;

namespace {

struct EvalRig {
    Denoiser d;
    TextEncoder enc;
    EmbeddingDictionary dict;
    Vocabulary vocab;
    TemplateSet val;
    std::vector<Vec> theme_images;
    EvalContext ctx;
};

EvalRig make_eval_rig(uint64_t seed = 17) {
    EvalRig r;
    r.vocab = default_vocabulary();
    Rng root(seed);
    Rng drng = root.substream("d");
    r.d = Denoiser::make(make_schedule(6, 0.05, 0.3), drng);
    for (Layer& l : r.d.net.layers)
        for (double& w : l.w.data) w *= 0.2;
    r.d.frozen = true;
    Rng erng = root.substream("e");
    r.enc = TextEncoder::make(erng, kCondDim);
    r.enc.frozen = true;
    Rng vrng = root.substream("v");
    r.dict = EmbeddingDictionary::make(r.vocab, vrng, 0.2);
    r.dict.freeze_base();
    r.val.normal = {"a photo of a {}", "a picture of the {}"};
    r.val.backdoor = {"a photo of a {T} {}", "a picture of the {T} {}"};
    r.theme_images = render_set(0, {}, 4, 0.05, root.substream("theme"));
    r.ctx.d = &r.d;
    r.ctx.enc = &r.enc;
    r.ctx.dict = &r.dict;
    r.ctx.vocab = &r.vocab;
    r.ctx.val_templates = &r.val;
    r.ctx.theme_concept = 0;
    r.ctx.theme_images = r.theme_images;
    r.ctx.n_samples = 6;
    return r;
}

Pseudoword numbered_pw(size_t k) {
    Pseudoword pw;
    pw.placeholder = kPlaceholder;
    pw.token_id = 0;
    for (size_t i = 0; i < k; ++i) {
        Vec v(kEmbedDim, 0.1);
        v[0] = static_cast<double>(i + 1);
        pw.vectors.push_back(v);
    }
    return pw;
}

}  // namespace

TEST_CASE("remove_vectors keeps 1-based indices in order") {
    Pseudoword pw = numbered_pw(4);
    Pseudoword out = remove_vectors(pw, {2, 4});
    REQUIRE(out.k() == 2);
    REQUIRE(out.vectors[0] == pw.vectors[1]);
    REQUIRE(out.vectors[1] == pw.vectors[3]);
    REQUIRE(out.placeholder == pw.placeholder);
    REQUIRE(out.token_id == pw.token_id);
    REQUIRE(remove_vectors(pw, {1, 2, 3, 4}).vectors == pw.vectors);

    REQUIRE_THROWS_AS(remove_vectors(numbered_pw(1), {1}), SingleVector);
    REQUIRE_THROWS_AS(remove_vectors(pw, {}), EmptyKeepSet);
    REQUIRE_THROWS_AS(remove_vectors(pw, {0, 1}), BadRange);
    REQUIRE_THROWS_AS(remove_vectors(pw, {5}), BadRange);
}

TEST_CASE("pseudoword perturbation adds the advertised noise") {
    Pseudoword pw = numbered_pw(2);

    Rng zero(3);
    Pseudoword same = perturb_pseudoword(pw, 0.0, zero);
    REQUIRE(same.vectors == pw.vectors);

    Rng rng(5);
    const int n = 2000;
    double acc = 0.0;
    const double sigma = 0.5;
    for (int i = 0; i < n; ++i) {
        Pseudoword p = perturb_pseudoword(pw, sigma, rng);
        for (size_t sl = 0; sl < pw.k(); ++sl) {
            Vec diff = sub(p.vectors[sl], pw.vectors[sl]);
            acc += dot(diff, diff);
        }
    }
    double expect = 2.0 * kEmbedDim * sigma * sigma;
    REQUIRE(std::abs(acc / n - expect) < 0.02 * expect);
    REQUIRE(pw.vectors == numbered_pw(2).vectors);  // input untouched

    REQUIRE_THROWS_AS(perturb_pseudoword(pw, -0.1, rng), BadRange);
}

TEST_CASE("trigger perturbation touches exactly one base row") {
    Vocabulary vocab = default_vocabulary();
    Rng vrng(9);
    EmbeddingDictionary dict = EmbeddingDictionary::make(vocab, vrng, 0.2);
    uint64_t before = io::dict_base_checksum(dict);

    Rng rng(11);
    EmbeddingDictionary out = perturb_trigger(dict, vocab, "red", 0.3, rng);
    size_t tid = static_cast<size_t>(vocab.id("red"));
    REQUIRE(out.base[tid] != dict.base[tid]);
    for (size_t i = 0; i < dict.base.size(); ++i)
        if (i != tid) REQUIRE(out.base[i] == dict.base[i]);
    REQUIRE(io::dict_base_checksum(dict) == before);

    Rng zero(13);
    EmbeddingDictionary same = perturb_trigger(dict, vocab, "red", 0.0, zero);
    REQUIRE(io::dict_base_checksum(same) == before);

    REQUIRE_THROWS_AS(perturb_trigger(dict, vocab, kPlaceholder, 0.1, rng), UnknownToken);
    REQUIRE_THROWS_AS(perturb_trigger(dict, vocab, "zzz", 0.1, rng), UnknownToken);
    REQUIRE_THROWS_AS(perturb_trigger(dict, vocab, "red", -1.0, rng), BadRange);
}

TEST_CASE("mean base embedding norm skips placeholders") {
    Vocabulary vocab = default_vocabulary();
    Rng vrng(19);
    EmbeddingDictionary dict = EmbeddingDictionary::make(vocab, vrng, 0.2);
    double manual = 0.0;
    size_t n = 0;
    for (size_t tid = 0; tid < dict.base.size(); ++tid) {
        if (vocab.is_placeholder(static_cast<int>(tid))) continue;
        manual += norm2(dict.base[tid]);
        ++n;
    }
    REQUIRE(n == vocab.size() - 2);  // S_* and S_&
    REQUIRE(mean_base_embedding_norm(dict, vocab) == Catch::Approx(manual / n).margin(1e-12));
}

TEST_CASE("attack success needs low utility damage and a broken trigger") {
    AttackThresholds thr;
    ExperimentRecord base;
    base.clip_img = 0.9;
    ExperimentRecord a;

    a.clip_img = 0.85;
    a.psr = 0.3;
    REQUIRE(attack_success(base, a, thr));
    a.clip_img = 0.7;  // utility destroyed
    REQUIRE_FALSE(attack_success(base, a, thr));
    a.clip_img = 0.85;
    a.psr = 0.6;  // censorship holds
    REQUIRE_FALSE(attack_success(base, a, thr));
    a.clip_img = 0.8;  // drop exactly at the threshold counts
    a.psr = 0.499;
    REQUIRE(attack_success(base, a, thr));
    a.psr = 0.5;  // break threshold is strict
    REQUIRE_FALSE(attack_success(base, a, thr));
}

TEST_CASE("battery similarity compares mean features") {
    GenBattery a, b;
    Rng rng(23);
    a.images = render_set(0, {}, 3, 0.05, rng.substream("a"));
    b.images = a.images;
    REQUIRE(battery_similarity(a, b) == Catch::Approx(1.0).margin(1e-12));

    GenBattery c;
    c.images = render_set(5, {}, 3, 0.05, rng.substream("c"));
    REQUIRE(battery_similarity(a, c) < 0.95);

    GenBattery empty;
    REQUIRE_THROWS_AS(battery_similarity(a, empty), EmptySet);
}

TEST_CASE("removal sweep covers every single-vector deletion") {
    EvalRig r = make_eval_rig();
    Pseudoword pw = numbered_pw(3);
    for (Vec& v : pw.vectors)
        for (double& x : v) x *= 0.2;
    pw.token_id = r.vocab.id(kPlaceholder);
    std::vector<std::string> trigger{"red"};
    AttackThresholds thr;

    Rng stream(31);
    AttackReport rep = removal_sweep(r.ctx, pw, trigger, thr, stream);
    REQUIRE(rep.rows.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        REQUIRE(rep.rows[i].kind == "removal");
        REQUIRE(rep.rows[i].param == double(i + 1));
        REQUIRE(rep.rows[i].rec.n_samples == r.ctx.n_samples);
    }
    // Same stream, same numbers.
    AttackReport again = removal_sweep(r.ctx, pw, trigger, thr, Rng(31));
    REQUIRE(again.baseline.clip_img == rep.baseline.clip_img);
    for (size_t i = 0; i < 3; ++i) REQUIRE(again.rows[i].rec.psr == rep.rows[i].rec.psr);
}

TEST_CASE("pseudoword perturbation sweep walks the sigma grid") {
    EvalRig r = make_eval_rig();
    Pseudoword pw = numbered_pw(1);
    pw.token_id = r.vocab.id(kPlaceholder);
    std::vector<std::string> trigger{"red"};
    AttackThresholds thr;

    std::vector<double> sigmas{0.4, 0.8};
    AttackReport rep = pw_perturb_sweep(r.ctx, pw, trigger, sigmas, thr, Rng(37));
    REQUIRE(rep.rows.size() == 2);
    REQUIRE(rep.rows[0].kind == "pw_perturb");
    REQUIRE(rep.rows[0].param == 0.4);
    REQUIRE(rep.rows[1].param == 0.8);
    AttackReport again = pw_perturb_sweep(r.ctx, pw, trigger, sigmas, thr, Rng(37));
    for (size_t i = 0; i < 2; ++i)
        REQUIRE(again.rows[i].rec.clip_img == rep.rows[i].rec.clip_img);
}

TEST_CASE("trigger perturbation sweep reports a noise floor and best-of draws") {
    EvalRig r = make_eval_rig();
    Pseudoword pw = numbered_pw(1);
    pw.token_id = r.vocab.id(kPlaceholder);
    std::vector<std::string> trigger{"red", "blue"};
    AttackThresholds thr;
    std::vector<double> sigmas{0.05, 0.2};

    AttackReport one = trigger_perturb_sweep(r.ctx, pw, trigger, sigmas, thr, 1, Rng(41));
    REQUIRE(one.rows.size() == 3);
    REQUIRE(one.rows[0].param == 0.0);
    REQUIRE(one.rows[0].label == "sigma=0 (noise floor)");
    REQUIRE_FALSE(one.rows[0].success);
    REQUIRE(one.rows[0].clip_img_p > 0.0);
    REQUIRE(one.rows[0].clip_img_p <= 1.0 + 1e-12);
    for (size_t i = 1; i < 3; ++i) {
        REQUIRE(one.rows[i].kind == "trigger_perturb");
        REQUIRE(one.rows[i].param == sigmas[i - 1]);
    }

    // best_of = 2 sees the best_of = 1 candidate plus one more, so its kept
    // PSR can only drop.
    AttackReport two = trigger_perturb_sweep(r.ctx, pw, trigger, sigmas, thr, 2, Rng(41));
    for (size_t i = 1; i < 3; ++i) REQUIRE(two.rows[i].rec.psr <= one.rows[i].rec.psr);

    REQUIRE_THROWS_AS(trigger_perturb_sweep(r.ctx, pw, trigger, sigmas, thr, 0, Rng(1)),
                      BadRange);
}

TEST_CASE("substitute attack trains a stand-in token and compares compositions") {
    EvalRig r = make_eval_rig();
    Pseudoword pw = numbered_pw(1);
    pw.token_id = r.vocab.id(kPlaceholder);
    std::vector<std::string> trigger{"red"};
    AttackThresholds thr;
    TemplateSet train;
    train.normal = {"a photo of a {}", "a picture of the {}"};
    train.backdoor = {"a photo of a {T} {}", "a picture of the {T} {}"};

    SubstituteResult res = substitute_attack(r.ctx, pw, trigger, 3, train, thr, 71, Rng(43));
    REQUIRE(res.trigger_refs.size() == std::max<size_t>(r.theme_images.size(), 5));
    for (const Vec& x : res.trigger_refs) REQUIRE(x.size() == kImageDim);
    REQUIRE(res.substitute.placeholder == kSubstitutePlaceholder);
    REQUIRE(res.substitute.token_id == r.vocab.id(kSubstitutePlaceholder));
    REQUIRE(res.substitute.k() == 1);
    REQUIRE(res.report.rows.size() == 2);
    REQUIRE(res.report.rows[0].label == "trigger");
    REQUIRE(res.report.rows[1].label == "substitute");
    REQUIRE(res.report.rows[1].param == 3.0);

    SubstituteResult again = substitute_attack(r.ctx, pw, trigger, 3, train, thr, 71, Rng(43));
    REQUIRE(again.substitute.vectors == res.substitute.vectors);
    REQUIRE(again.report.rows[1].rec.clip_img == res.report.rows[1].rec.clip_img);
}

TEST_CASE("default attack sigma grids") {
    std::vector<double> pws = default_pw_sigmas();
    REQUIRE(pws.front() == 0.4);
    REQUIRE(pws.back() == 1.2);
    REQUIRE(pws.size() == 9);
    std::vector<double> trs = default_trigger_sigmas();
    REQUIRE(trs.front() == 0.01);
    REQUIRE(trs.back() == 0.10);
    REQUIRE(trs.size() == 10);
    for (size_t i = 1; i < pws.size(); ++i) REQUIRE(pws[i] > pws[i - 1]);
    for (size_t i = 1; i < trs.size(); ++i) REQUIRE(trs[i] > trs[i - 1]);
}
