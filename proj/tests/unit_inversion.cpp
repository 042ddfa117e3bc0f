#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tilab/inversion.hpp"
#include "tilab/io.hpp"
#include "tilab/lab.hpp"

using namespace tilab;

namespace {

struct Rig {
    Denoiser d;
    TextEncoder enc;
    EmbeddingDictionary dict;
    Vocabulary vocab;
    TemplateSet ts;
    ThemeDataset theme;
    Blacklist bl;
};

Rig make_rig(uint64_t seed = 21) {
    Rig r;
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
    r.ts.normal = {"a photo of a {}", "a picture of the {}"};
    r.ts.backdoor = {"a photo of a {T} {}", "a picture of the {T} {}"};
    r.theme = make_theme(0, 4, 0.05, root.substream("theme"));
    BlacklistEntry e1;
    e1.trigger = {"red"};
    e1.target_images = render_set(1, {}, 3, 0.05, root.substream("t1"));
    e1.target_concept = 1;
    BlacklistEntry e2;
    e2.trigger = {"blue"};
    e2.target_images = render_set(2, {}, 3, 0.05, root.substream("t2"));
    e2.target_concept = 2;
    r.bl.entries = {e1, e2};
    return r;
}

Pseudoword test_pw(const Rig& r, size_t k, uint64_t seed = 31) {
    TrainConfig cfg;
    cfg.k = k;
    cfg.seed = seed;
    return init_pseudoword(cfg, r.dict, r.vocab, kPlaceholder);
}

}  // namespace

TEST_CASE("ti_loss composes embedding, encoder, and denoising loss") {
    Rig r = make_rig();
    Pseudoword pw = test_pw(r, 1);
    TiSample s;
    s.prompt = tokenize("a photo of a S_*", r.vocab);
    s.x0 = r.theme.images[0];
    s.t = 3;
    s.eps = Rng(41).normal_vec(kImageDim);

    double manual;
    {
        std::vector<Vec> seq = embed_prompt(s.prompt, r.dict, &pw);
        Vec cond = r.enc.net.forward(mean_pool(seq));
        Vec x_t = forward_noise(r.d.sched, s.x0, s.t, s.eps);
        Vec eps_hat = r.d.predict(x_t, s.t, cond);
        manual = sq_l2(eps_hat, s.eps);
    }
    REQUIRE(ti_loss(pw, s, r.d, r.enc, r.dict) == Catch::Approx(manual).margin(1e-10));

    TiSample no_ph = s;
    no_ph.prompt = tokenize("a photo of a tower", r.vocab);
    REQUIRE_THROWS_AS(ti_loss(pw, no_ph, r.d, r.enc, r.dict), MissingPlaceholder);
    REQUIRE_THROWS_AS(ti_grad(pw, no_ph, r.d, r.enc, r.dict), MissingPlaceholder);

    Rig unfrozen = make_rig();
    unfrozen.d.frozen = false;
    REQUIRE_THROWS_AS(ti_loss(pw, s, unfrozen.d, unfrozen.enc, unfrozen.dict), FrozenRequired);
}

TEST_CASE("ti_grad matches finite differences across random instances") {
    Rig r = make_rig();
    Rng pick(42);
    const double h = 1e-4;
    int instances = 0;
    for (int trial = 0; trial < 24; ++trial) {
        size_t k = 1 + pick.uniform_int(2);
        Pseudoword pw = test_pw(r, k, 100 + trial);
        TiSample s;
        Rng tmpl = pick.substream("tmpl").substream(trial);
        bool backdoor = trial % 3 == 0;
        std::vector<std::string> trigger{"red"};
        s.prompt = instantiate_template(r.ts, backdoor ? TemplateKind::backdoor
                                                       : TemplateKind::normal,
                                        backdoor ? &trigger : nullptr, r.vocab, tmpl);
        s.x0 = r.theme.images[pick.uniform_int(r.theme.images.size())];
        s.t = 1 + int(pick.uniform_int(uint64_t(r.d.sched.T)));
        Rng eps_rng = pick.substream("eps").substream(trial);
        s.eps = eps_rng.normal_vec(kImageDim);

        GradReport g = ti_grad(pw, s, r.d, r.enc, r.dict);
        REQUIRE(g.slot_grads.size() == k);
        // Mean pooling hands every slot the same share of the gradient.
        for (size_t sl = 1; sl < k; ++sl) REQUIRE(g.slot_grads[sl] == g.slot_grads[0]);
        REQUIRE(g.loss == Catch::Approx(ti_loss(pw, s, r.d, r.enc, r.dict)).margin(1e-12));

        for (int probe = 0; probe < 6; ++probe) {
            size_t sl = pick.uniform_int(k);
            size_t dim = pick.uniform_int(kEmbedDim);
            Pseudoword plus = pw, minus = pw;
            plus.vectors[sl][dim] += h;
            minus.vectors[sl][dim] -= h;
            double fd = (ti_loss(plus, s, r.d, r.enc, r.dict) -
                         ti_loss(minus, s, r.d, r.enc, r.dict)) /
                        (2.0 * h);
            double an = g.slot_grads[sl][dim];
            REQUIRE(std::abs(fd - an) <= 1e-4 * std::max({1e-3, std::abs(fd), std::abs(an)}));
        }
        ++instances;
    }
    REQUIRE(instances >= 20);
}

TEST_CASE("branch draws follow beta and pick entries uniformly") {
    Rng root(43);
    const int n = 100000;
    int theme = 0;
    std::vector<int> entries(2, 0);
    for (int i = 0; i < n; ++i) {
        BranchDraw b = draw_branch(root.substream(uint64_t(i)), 0.5, 2);
        if (b.theme)
            ++theme;
        else
            ++entries[b.entry];
    }
    REQUIRE(std::abs(theme / double(n) - 0.5) < 0.01);
    REQUIRE(std::abs(entries[0] - entries[1]) < 0.05 * (entries[0] + entries[1]));

    for (int i = 0; i < 1000; ++i) {
        REQUIRE(draw_branch(root.substream(uint64_t(i)), 0.0, 0).theme);
        REQUIRE(draw_branch(root.substream(uint64_t(i)), 1.0, 3).theme);
    }
}

TEST_CASE("one train step equals the replayed batch-mean update") {
    Rig r = make_rig();
    TrainConfig cfg;
    cfg.steps = 1;
    cfg.batch = 5;
    cfg.seed = 77;
    cfg.k = 2;
    TrainResult res = train_backdoor(r.theme, r.bl, cfg, r.ts, r.d, r.enc, r.dict, r.vocab);

    Pseudoword pw = init_pseudoword(cfg, r.dict, r.vocab, kPlaceholder);
    Rng steps = Rng(cfg.seed).substream("train");
    Rng step_stream = steps.substream(uint64_t{0});
    std::vector<Vec> acc(cfg.k, Vec(kEmbedDim, 0.0));
    double loss_sum = 0.0;
    for (size_t e = 0; e < cfg.batch; ++e) {
        Rng elem = step_stream.substream(e);
        BranchDraw br = draw_branch(elem, cfg.beta, r.bl.n());
        TiSample s = make_element(elem, br.theme, br.entry, r.theme, r.bl, cfg, r.ts, r.vocab,
                                  r.d.sched.T, kPlaceholder, br.theme);
        GradReport g = ti_grad(pw, s, r.d, r.enc, r.dict);
        for (size_t sl = 0; sl < cfg.k; ++sl) axpy(1.0, g.slot_grads[sl], acc[sl]);
        loss_sum += g.loss;
    }
    for (size_t sl = 0; sl < cfg.k; ++sl) {
        axpy(-cfg.lr / double(cfg.batch), acc[sl], pw.vectors[sl]);
        for (size_t i = 0; i < kEmbedDim; ++i)
            REQUIRE(res.pw.vectors[sl][i] == Catch::Approx(pw.vectors[sl][i]).margin(1e-15));
    }
    REQUIRE(res.loss_curve.size() == 1);
    REQUIRE(res.loss_curve[0] == Catch::Approx(loss_sum / double(cfg.batch)).margin(1e-12));
}

TEST_CASE("beta = 1 backdoor training is bit-identical to plain inversion") {
    Rig r = make_rig();
    TrainConfig cfg;
    cfg.steps = 30;
    cfg.batch = 4;
    cfg.beta = 1.0;
    cfg.seed = 91;
    TrainResult with_bl = train_backdoor(r.theme, r.bl, cfg, r.ts, r.d, r.enc, r.dict, r.vocab);
    TrainResult plain = train_normal(r.theme, cfg, r.ts, r.d, r.enc, r.dict, r.vocab);
    REQUIRE(with_bl.pw.vectors == plain.pw.vectors);
    REQUIRE(with_bl.loss_curve == plain.loss_curve);
    // The backdoor branch never fired.
    for (double v : with_bl.backdoor_curve) REQUIRE(v == 0.0);
}

TEST_CASE("direct mode evaluates utility plus lambda-weighted entries") {
    Rig r = make_rig();
    TrainConfig cfg;
    cfg.mode = TrainMode::direct;
    cfg.steps = 1;
    cfg.batch = 1;
    cfg.lambda = 0.7;
    cfg.seed = 99;
    TrainResult res = train_backdoor(r.theme, r.bl, cfg, r.ts, r.d, r.enc, r.dict, r.vocab);

    Pseudoword pw = init_pseudoword(cfg, r.dict, r.vocab, kPlaceholder);
    Rng elem = Rng(cfg.seed).substream("train").substream(uint64_t{0}).substream(uint64_t{0});
    Vec acc(kEmbedDim, 0.0);
    TiSample su = make_element(elem.substream("utility"), true, 0, r.theme, r.bl, cfg, r.ts,
                               r.vocab, r.d.sched.T, kPlaceholder, false);
    GradReport gu = ti_grad(pw, su, r.d, r.enc, r.dict);
    axpy(1.0, gu.slot_grads[0], acc);
    double expect_loss = gu.loss;
    for (size_t i = 0; i < r.bl.n(); ++i) {
        TiSample sb = make_element(elem.substream("bd").substream(i), false, i, r.theme, r.bl,
                                   cfg, r.ts, r.vocab, r.d.sched.T, kPlaceholder, false);
        GradReport gb = ti_grad(pw, sb, r.d, r.enc, r.dict);
        axpy(cfg.lambda, gb.slot_grads[0], acc);
        expect_loss += cfg.lambda * gb.loss;
    }
    axpy(-cfg.lr, acc, pw.vectors[0]);
    for (size_t i = 0; i < kEmbedDim; ++i)
        REQUIRE(res.pw.vectors[0][i] == Catch::Approx(pw.vectors[0][i]).margin(1e-15));
    REQUIRE(res.loss_curve[0] == Catch::Approx(expect_loss).margin(1e-12));

    // Empty blacklist with a live backdoor term has no gradient to follow.
    TrainConfig bad = cfg;
    Blacklist none;
    REQUIRE_THROWS_AS(train_backdoor(r.theme, none, bad, r.ts, r.d, r.enc, r.dict, r.vocab),
                      EmptyBlacklist);
    bad.lambda = 0.0;
    REQUIRE_NOTHROW(train_backdoor(r.theme, none, bad, r.ts, r.d, r.enc, r.dict, r.vocab));
}

TEST_CASE("stochastic branch picks between identically seeded samples") {
    Rig r = make_rig();
    TrainConfig cfg;
    cfg.gamma = 0.0;
    Blacklist one;
    one.entries = {r.bl.entries[0]};
    Pseudoword pw = test_pw(r, 1);

    // Both branches consume the same template/image/t/eps leaves, so the
    // stochastic element must be bitwise one of the two forced-branch
    // elements. With the Bernoulli branch statistics verified separately this
    // pins the gradient expectation beta*E[theme] + (1-beta)*E[entry] without
    // any statistical slack.
    const int n = 400;
    int themes = 0, differ = 0;
    Rng root(123);
    for (int i = 0; i < n; ++i) {
        Rng elem = root.substream(uint64_t(i));
        BranchDraw br = draw_branch(elem, 0.5, one.n());
        TiSample sel = make_element(elem, br.theme, br.entry, r.theme, one, cfg, r.ts, r.vocab,
                                    r.d.sched.T, kPlaceholder, br.theme);
        TiSample ft = make_element(elem, true, 0, r.theme, one, cfg, r.ts, r.vocab, r.d.sched.T,
                                   kPlaceholder, true);
        TiSample fb = make_element(elem, false, 0, r.theme, one, cfg, r.ts, r.vocab, r.d.sched.T,
                                   kPlaceholder, false);
        const TiSample& want = br.theme ? ft : fb;
        REQUIRE(sel.x0 == want.x0);
        REQUIRE(sel.t == want.t);
        REQUIRE(sel.eps == want.eps);
        REQUIRE(sel.prompt.tokens == want.prompt.tokens);
        double g_sel = ti_grad(pw, sel, r.d, r.enc, r.dict).loss;
        double g_want = ti_grad(pw, want, r.d, r.enc, r.dict).loss;
        REQUIRE(g_sel == g_want);
        themes += br.theme ? 1 : 0;
        differ += ti_loss(pw, ft, r.d, r.enc, r.dict) != ti_loss(pw, fb, r.d, r.enc, r.dict);
    }
    // Both branches exercised, and the forced pair genuinely differs.
    REQUIRE(themes > n / 4);
    REQUIRE(themes < 3 * n / 4);
    REQUIRE(differ > n * 9 / 10);
}

TEST_CASE("training leaves every frozen component untouched") {
    Rig r = make_rig();
    uint64_t d_sum = io::mlp_checksum(r.d.net);
    uint64_t e_sum = io::mlp_checksum(r.enc.net);
    uint64_t b_sum = io::dict_base_checksum(r.dict);
    TrainConfig cfg;
    cfg.steps = 20;
    cfg.batch = 3;
    cfg.seed = 7;
    train_backdoor(r.theme, r.bl, cfg, r.ts, r.d, r.enc, r.dict, r.vocab);
    REQUIRE(io::mlp_checksum(r.d.net) == d_sum);
    REQUIRE(io::mlp_checksum(r.enc.net) == e_sum);
    REQUIRE(io::dict_base_checksum(r.dict) == b_sum);
}

TEST_CASE("zero steps returns the exact initialization") {
    Rig r = make_rig();
    TrainConfig cfg;
    cfg.steps = 0;
    cfg.seed = 5;
    cfg.k = 3;
    TrainResult res = train_normal(r.theme, cfg, r.ts, r.d, r.enc, r.dict, r.vocab);
    Pseudoword init = init_pseudoword(cfg, r.dict, r.vocab, kPlaceholder);
    REQUIRE(res.pw.vectors == init.vectors);
    REQUIRE(res.loss_curve.empty());
}

TEST_CASE("pseudoword initialization starts near the neutral word") {
    Rig r = make_rig();
    TrainConfig cfg;
    cfg.k = 2;
    cfg.seed = 11;
    Pseudoword pw = init_pseudoword(cfg, r.dict, r.vocab, kPlaceholder);
    REQUIRE(pw.k() == 2);
    REQUIRE(pw.token_id == r.vocab.id(kPlaceholder));
    const Vec& base = r.dict.base_embedding(r.vocab.id("thing"));
    for (const Vec& v : pw.vectors) {
        Vec diff = sub(v, base);
        REQUIRE(norm2(diff) < 0.01 * 8.0);  // ~N(0, 0.01^2) per dim
        REQUIRE(norm2(diff) > 0.0);
    }
    REQUIRE(pw.vectors[0] != pw.vectors[1]);
    // Same seed, same init.
    REQUIRE(init_pseudoword(cfg, r.dict, r.vocab, kPlaceholder).vectors == pw.vectors);

    TrainConfig bad = cfg;
    bad.init_word = kSubstitutePlaceholder;
    REQUIRE_THROWS_AS(init_pseudoword(bad, r.dict, r.vocab, kPlaceholder), ConfigError);
    REQUIRE_THROWS_AS(init_pseudoword(cfg, r.dict, r.vocab, "tower"), ConfigError);
}

TEST_CASE("training validates its inputs") {
    Rig r = make_rig();
    TrainConfig cfg;
    cfg.steps = 1;

    TrainConfig bad = cfg;
    bad.beta = 1.5;
    REQUIRE_THROWS_AS(train_backdoor(r.theme, r.bl, bad, r.ts, r.d, r.enc, r.dict, r.vocab),
                      BadRange);
    bad = cfg;
    bad.lr = 0.0;
    REQUIRE_THROWS_AS(train_backdoor(r.theme, r.bl, bad, r.ts, r.d, r.enc, r.dict, r.vocab),
                      BadRange);
    bad = cfg;
    bad.k = 0;
    REQUIRE_THROWS_AS(train_backdoor(r.theme, r.bl, bad, r.ts, r.d, r.enc, r.dict, r.vocab),
                      BadRange);

    ThemeDataset empty;
    REQUIRE_THROWS_AS(train_backdoor(empty, r.bl, cfg, r.ts, r.d, r.enc, r.dict, r.vocab),
                      EmptySet);

    Blacklist dup;
    dup.entries = {r.bl.entries[0], r.bl.entries[0]};
    REQUIRE_THROWS_AS(train_backdoor(r.theme, dup, cfg, r.ts, r.d, r.enc, r.dict, r.vocab),
                      ConfigError);

    Rig melted = make_rig();
    melted.d.frozen = false;
    REQUIRE_THROWS_AS(
        train_backdoor(melted.theme, melted.bl, cfg, melted.ts, melted.d, melted.enc,
                       melted.dict, melted.vocab),
        FrozenRequired);
}

TEST_CASE("expected cost ratio") {
    REQUIRE(expected_cost_ratio(1, TrainMode::stochastic) == 1.0);
    REQUIRE(expected_cost_ratio(8, TrainMode::stochastic) == 1.0);
    REQUIRE(expected_cost_ratio(1, TrainMode::direct) == 2.0);
    REQUIRE(expected_cost_ratio(5, TrainMode::direct) == 6.0);
    REQUIRE_THROWS_AS(expected_cost_ratio(0, TrainMode::direct), BadRange);
}
