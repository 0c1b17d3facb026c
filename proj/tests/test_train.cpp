#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "attnlab/data.hpp"
#include "attnlab/errors.hpp"
#include "attnlab/model.hpp"
#include "attnlab/train.hpp"

using namespace attnlab;

namespace {

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

struct PathGuard {
    std::string path;
    ~PathGuard() { std::remove(path.c_str()); }
};

ModelConfig pattern_cfg(Variant v, int vocab) {
    ModelConfig c;
    c.n_layer = 1;
    c.n_head = 2;
    c.n_embd = 16;
    c.block_size = 8;
    c.vocab_size = vocab;
    c.variant = v;
    return c;
}

// Periodic corpus: the next character is a deterministic function of the
// current one, so even a one-layer model can push the NLL toward zero.
std::vector<int> pattern_tokens(int repeats) {
    std::vector<int> out;
    for (int i = 0; i < repeats; ++i)
        for (int c : {0, 1, 2, 3}) out.push_back(c);
    return out;
}

TrainConfig fast_cfg(int iters) {
    TrainConfig t;
    t.lr_max = 3e-3;
    t.lr_min = 3e-4;
    t.warmup_iters = 10;
    t.decay_iters = iters > 10 ? iters : 11;
    t.batch_size = 4;
    t.accum_steps = 1;
    t.max_iters = iters;
    t.eval_interval = 50;
    t.eval_iters = 4;
    t.alpha = 0.0;
    t.seed = 1337;
    return t;
}

double max_param_delta(const Model& a, const Model& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.params.size(); ++i) {
        const std::vector<double>& x = a.params[i].t.data();
        const std::vector<double>& y = b.params[i].t.data();
        for (size_t j = 0; j < x.size(); ++j)
            worst = std::max(worst, std::fabs(x[j] - y[j]));
    }
    return worst;
}

} // namespace

TEST_SUITE("train") {

TEST_CASE("config validation rejects inconsistent schedules") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.warmup_iters = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.warmup_iters = c.decay_iters;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.alpha = -1e-9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.accum_steps = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lr_min = c.lr_max * 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lr_min = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.beta1 = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.beta2 = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.weight_decay = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.val_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.eval_interval = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.eval_iters = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.max_iters = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("learning rate schedule hits its pinned points") {
    const TrainConfig c; // 6e-4 / 6e-5, warmup 100, decay 2000
    CHECK(lr_at(0, c) == c.lr_max * 1 / 100.0);
    CHECK(lr_at(49, c) == c.lr_max * 50 / 100.0);
    CHECK(lr_at(99, c) == c.lr_max); // lr_max * 100/100
    CHECK(lr_at(100, c) == doctest::Approx(c.lr_max).epsilon(1e-15));
    CHECK(lr_at(2000, c) == c.lr_min);
    CHECK(lr_at(20000, c) == c.lr_min);
    CHECK(lr_at(1999, c) > c.lr_min);

    // halfway through the cosine: the midpoint of the two rates
    const double mid = lr_at(1050, c);
    CHECK(mid == doctest::Approx(c.lr_min + 0.5 * (c.lr_max - c.lr_min)).epsilon(1e-12));

    // mirror of the closed form at an arbitrary step
    const int s = 700;
    const double progress = (s - 100) / 1900.0;
    CHECK(lr_at(s, c) ==
          c.lr_min + 0.5 * (1.0 + std::cos(std::numbers::pi * progress)) * (c.lr_max - c.lr_min));

    // monotone non-increasing across the cosine leg, no jumps at the seams
    double prev = lr_at(100, c);
    for (int step = 101; step <= 2000; ++step) {
        const double cur = lr_at(step, c);
        CHECK(cur <= prev + 1e-18);
        CHECK(prev - cur < 1.2e-6);
        prev = cur;
    }
    CHECK_THROWS_AS(lr_at(-1, c), UsageError);
}

TEST_CASE("alpha zero makes the total loss the nll tensor itself") {
    const Model m = build_model(pattern_cfg(Variant::NoiseV1, 4), 3);
    const std::vector<int> toks{0, 1, 2, 3, 0, 1};
    const std::vector<int> targets{1, 2, 3, 0, 1, 2};
    Rng rng(5);
    FreshNoise src(rng);
    const Tensor logits = m.forward(toks, &src);

    const LossParts zero = global_loss(logits, targets, m.noise_layers(), 0.0);
    CHECK(zero.total.impl() == zero.nll.impl());
    CHECK_FALSE(zero.kl.defined());

    const LossParts weighted = global_loss(logits, targets, m.noise_layers(), 0.25);
    CHECK(weighted.kl.defined());
    CHECK(weighted.total.item() ==
          doctest::Approx(weighted.nll.item() + 0.25 * weighted.kl.item()).epsilon(1e-15));
    CHECK(weighted.nll.item() == zero.nll.item());

    // no noise layers: total collapses onto the nll even with alpha set
    const LossParts plain = global_loss(logits, targets, {}, 0.25);
    CHECK(plain.total.impl() == plain.nll.impl());
    CHECK_FALSE(plain.kl.defined());
}

TEST_CASE("gradient clipping rescales only above the cap") {
    const auto make = [](std::vector<double> g) {
        Tensor t = Tensor::param({static_cast<int>(g.size())}, "p");
        t.grad() = g;
        return NamedParam{"p", t, false, false};
    };
    std::vector<NamedParam> params{make({3.0}), make({4.0})};
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(params[0].t.grad()[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(params[1].t.grad()[0] == doctest::Approx(0.8).epsilon(1e-15));

    // norm now exactly at the cap: untouched
    const double again = clip_grad_norm(params, 1.0);
    CHECK(again == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(params[0].t.grad()[0] == doctest::Approx(0.6).epsilon(1e-15));

    std::vector<NamedParam> small{make({0.3}), make({0.4})};
    CHECK(clip_grad_norm(small, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(small[0].t.grad()[0] == 0.3);
    CHECK(small[1].t.grad()[0] == 0.4);

    // a cap of zero disables clipping
    std::vector<NamedParam> free{make({30.0})};
    CHECK(clip_grad_norm(free, 0.0) == doctest::Approx(30.0).epsilon(1e-15));
    CHECK(free[0].t.grad()[0] == 30.0);
}

TEST_CASE("adamw reproduces a hand-stepped oracle") {
    Tensor p = Tensor::param({2}, "w");
    p.data() = {1.0, -2.0};
    AdamW opt({NamedParam{"w", p, true, false}}, 0.9, 0.95, 0.1);

    double theta[2] = {1.0, -2.0};
    double m[2] = {0, 0}, v[2] = {0, 0};
    const double grads[3][2] = {{0.5, -1.0}, {0.25, 0.75}, {-0.6, 0.1}};
    for (int t = 1; t <= 3; ++t) {
        p.grad()[0] = grads[t - 1][0];
        p.grad()[1] = grads[t - 1][1];
        const double lr = 0.01;
        opt.step(lr);
        for (int i = 0; i < 2; ++i) {
            const double g = grads[t - 1][i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.95 * v[i] + 0.05 * g * g;
            const double mh = m[i] / (1.0 - std::pow(0.9, t));
            const double vh = v[i] / (1.0 - std::pow(0.95, t));
            theta[i] -= lr * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * theta[i]);
            CHECK(p.data()[static_cast<size_t>(i)] == doctest::Approx(theta[i]).epsilon(1e-14));
        }
        // step() consumes the grads
        CHECK(p.grad()[0] == 0.0);
        CHECK(p.grad()[1] == 0.0);
    }
}

TEST_CASE("weight decay is decoupled and honors the per-parameter flag") {
    Tensor decayed = Tensor::param({1}, "a");
    Tensor plain = Tensor::param({1}, "b");
    decayed.data() = {2.0};
    plain.data() = {2.0};
    AdamW opt({NamedParam{"a", decayed, true, false}, NamedParam{"b", plain, false, false}}, 0.9,
              0.95, 0.5);
    // zero grads: only the decay term can move anything
    opt.step(0.1);
    CHECK(decayed.data()[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-15));
    CHECK(plain.data()[0] == 2.0);
}

TEST_CASE("adamw walks a quadratic bowl to its minimum") {
    Tensor p = Tensor::param({1}, "x");
    p.data() = {-4.0};
    AdamW opt({NamedParam{"x", p, false, false}}, 0.9, 0.95, 0.0);
    for (int t = 0; t < 400; ++t) {
        p.grad()[0] = 2.0 * (p.data()[0] - 3.0);
        opt.step(0.05);
    }
    CHECK(p.data()[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("a nan gradient aborts with the parameter's name") {
    Tensor p = Tensor::param({1}, "h0.attn.w_q");
    p.data() = {1.0};
    AdamW opt({NamedParam{"h0.attn.w_q", p, false, false}}, 0.9, 0.95, 0.0);
    p.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        opt.step(0.01);
        FAIL_CHECK("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("h0.attn.w_q") != std::string::npos);
    }
}

TEST_CASE("csv header and row formats are frozen") {
    CHECK(metrics_csv_header() == "step,lr,train_loss,nll,kl,val_loss,grad_norm,tokens_seen");

    StepRow eval0;
    eval0.step = 0;
    eval0.has_train_fields = false;
    eval0.val_loss = 3.5;
    eval0.tokens_seen = 0;
    CHECK(metrics_csv_row(eval0) == "0,0,,,,3.5,,0");

    StepRow r;
    r.step = 12;
    r.lr = 0.125;
    r.train_loss = 2.0;
    r.nll = 2.0;
    r.kl = 0.0;
    r.grad_norm = 1.5;
    r.tokens_seen = 6144;
    CHECK(metrics_csv_row(r) == "12,0.125,2,2,0,,1.5,6144");

    r.val_loss = 1.75;
    CHECK(metrics_csv_row(r) == "12,0.125,2,2,0,1.75,1.5,6144");

    // one third survives the round-trip at full precision
    StepRow third;
    third.step = 1;
    third.lr = 1.0 / 3.0;
    third.train_loss = 0.0;
    third.nll = 0.0;
    third.kl = 0.0;
    third.grad_norm = 0.0;
    third.tokens_seen = 0;
    const std::string row = metrics_csv_row(third);
    std::istringstream ss(row.substr(2, row.find(',', 2) - 2));
    double back = 0.0;
    ss >> back;
    CHECK(back == 1.0 / 3.0);
}

TEST_CASE("training on a periodic corpus drives the validation loss down") {
    const std::vector<int> tokens = pattern_tokens(200);
    const auto [train_toks, val_toks] = split_train_val(tokens, 0.2, 8);
    Model m = build_model(pattern_cfg(Variant::Base, 4), 1337);
    const TrainConfig cfg = fast_cfg(200);

    const PathGuard csv{temp_path("attnlab_metrics.csv")};
    TrainIO io;
    io.metrics_path = csv.path;
    const TrainResult res = train(m, train_toks, val_toks, cfg, io);

    CHECK(res.initial_val == doctest::Approx(std::log(4.0)).epsilon(0.15));
    CHECK(res.final_val < res.initial_val - 0.5);
    CHECK(res.best_val <= res.final_val);
    REQUIRE(res.rows.size() == 201);
    CHECK_FALSE(res.rows[0].has_train_fields);
    CHECK(res.rows[0].val_loss.has_value());
    CHECK(*res.rows[0].val_loss == res.initial_val);
    for (int s = 1; s <= 200; ++s) {
        const StepRow& row = res.rows[static_cast<size_t>(s)];
        CHECK(row.step == s);
        CHECK(row.has_train_fields);
        CHECK(row.lr == lr_at(s - 1, cfg));
        CHECK(row.tokens_seen == static_cast<long long>(s) * 4 * 8);
        CHECK(row.val_loss.has_value() == (s % 50 == 0 || s == 200));
        CHECK(std::isfinite(row.train_loss));
        CHECK(row.grad_norm >= 0.0);
    }

    // the csv mirrors the rows
    std::ifstream in(csv.path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == metrics_csv_header());
    size_t count = 0;
    while (std::getline(in, line)) {
        CHECK(line == metrics_csv_row(res.rows[count]));
        ++count;
    }
    CHECK(count == res.rows.size());
}

TEST_CASE("gradient accumulation reproduces the big-batch trajectory") {
    const std::vector<int> tokens = pattern_tokens(150);
    const auto [train_toks, val_toks] = split_train_val(tokens, 0.2, 8);

    Model big = build_model(pattern_cfg(Variant::Base, 4), 7);
    Model halves = build_model(pattern_cfg(Variant::Base, 4), 7);
    Model quarters = build_model(pattern_cfg(Variant::Base, 4), 7);

    TrainConfig cfg = fast_cfg(3);
    cfg.eval_interval = 100;
    cfg.eval_iters = 1;
    cfg.batch_size = 4;
    cfg.accum_steps = 1;
    train(big, train_toks, val_toks, cfg);

    cfg.batch_size = 2;
    cfg.accum_steps = 2;
    train(halves, train_toks, val_toks, cfg);

    cfg.batch_size = 1;
    cfg.accum_steps = 4;
    train(quarters, train_toks, val_toks, cfg);

    CHECK(max_param_delta(big, halves) < 1e-10);
    CHECK(max_param_delta(big, quarters) < 1e-10);
}

TEST_CASE("training twice from the same seed is bit-identical") {
    const std::vector<int> tokens = pattern_tokens(150);
    const auto [train_toks, val_toks] = split_train_val(tokens, 0.2, 8);
    Model a = build_model(pattern_cfg(Variant::NoiseV2, 4), 3);
    Model b = build_model(pattern_cfg(Variant::NoiseV2, 4), 3);
    TrainConfig cfg = fast_cfg(5);
    cfg.alpha = 5e-6;
    const TrainResult ra = train(a, train_toks, val_toks, cfg);
    const TrainResult rb = train(b, train_toks, val_toks, cfg);
    CHECK(max_param_delta(a, b) == 0.0);
    REQUIRE(ra.rows.size() == rb.rows.size());
    for (size_t i = 0; i < ra.rows.size(); ++i) {
        CHECK(ra.rows[i].train_loss == rb.rows[i].train_loss);
        CHECK(ra.rows[i].grad_norm == rb.rows[i].grad_norm);
    }
}

TEST_CASE("silenced noise trains exactly like the symmetric variant") {
    const std::vector<int> tokens = pattern_tokens(150);
    const auto [train_toks, val_toks] = split_train_val(tokens, 0.2, 8);

    Model sym = build_model(pattern_cfg(Variant::Symmetric, 4), 11);
    Model v1 = build_model(pattern_cfg(Variant::NoiseV1, 4), 11);
    for (Block& b : v1.blocks) {
        for (double& x : b.noise.mu.data()) x = 0.0;
        for (double& x : b.noise.log_var.data()) x = -std::numeric_limits<double>::infinity();
    }

    TrainConfig cfg = fast_cfg(20);
    cfg.eval_interval = 10;
    const TrainResult rs = train(sym, train_toks, val_toks, cfg);
    cfg.freeze_noise = true; // mu / log_var stay out of the optimizer
    const TrainResult rv = train(v1, train_toks, val_toks, cfg);

    REQUIRE(rs.rows.size() == rv.rows.size());
    for (size_t i = 0; i < rs.rows.size(); ++i) {
        CHECK(rs.rows[i].train_loss == rv.rows[i].train_loss);
        CHECK(rs.rows[i].val_loss.has_value() == rv.rows[i].val_loss.has_value());
        if (rs.rows[i].val_loss.has_value()) CHECK(*rs.rows[i].val_loss == *rv.rows[i].val_loss);
    }
    for (size_t i = 0; i < sym.params.size(); ++i)
        CHECK(sym.params[i].t.data() == v1.params[i].t.data());
}

TEST_CASE("the kl term pulls perturbed noise back toward the unit gaussian") {
    const std::vector<int> tokens = pattern_tokens(150);
    const auto [train_toks, val_toks] = split_train_val(tokens, 0.2, 8);
    Model m = build_model(pattern_cfg(Variant::NoiseV2, 4), 13);
    for (Block& b : m.blocks) {
        for (double& x : b.noise.mu.data()) x = 0.5;
        for (double& x : b.noise.log_var.data()) x = 0.5;
    }
    double kl0 = 0.0;
    for (const LayerNoiseParams& l : m.noise_layers()) kl0 += kl_unit_gaussian_value(l);

    TrainConfig cfg = fast_cfg(250);
    cfg.alpha = 1.0;
    cfg.eval_interval = 250;
    train(m, train_toks, val_toks, cfg);

    double kl1 = 0.0;
    for (const LayerNoiseParams& l : m.noise_layers()) kl1 += kl_unit_gaussian_value(l);
    CHECK(kl1 < 0.3 * kl0);
}

TEST_CASE("checkpoints land on the best and the last step") {
    const std::vector<int> tokens = pattern_tokens(150);
    const auto [train_toks, val_toks] = split_train_val(tokens, 0.2, 8);
    Model m = build_model(pattern_cfg(Variant::Base, 4), 17);
    TrainConfig cfg = fast_cfg(30);
    cfg.eval_interval = 10;

    const PathGuard best{temp_path("attnlab_best.bin")};
    const PathGuard last{temp_path("attnlab_last.bin")};
    TrainIO io;
    io.best_ckpt_path = best.path;
    io.last_ckpt_path = last.path;
    const TrainResult res = train(m, train_toks, val_toks, cfg, io);

    const Model lastm = load_checkpoint(last.path);
    for (size_t i = 0; i < m.params.size(); ++i)
        CHECK(m.params[i].t.data() == lastm.params[i].t.data());

    const Model bestm = load_checkpoint(best.path);
    const double best_nll = evaluate_nll(bestm, val_toks, cfg.batch_size, 8, cfg.eval_iters,
                                         substream(cfg.seed, "eval"));
    CHECK(best_nll == res.best_val);
    CHECK(res.best_val <= res.initial_val);
    CHECK(res.best_val <= res.final_val + 1e-12);
}

TEST_CASE("evaluation is deterministic in the seed and blind to noise consumption") {
    const std::vector<int> tokens = pattern_tokens(120);
    const auto [train_toks, val_toks] = split_train_val(tokens, 0.3, 8);
    const Model m = build_model(pattern_cfg(Variant::Base, 4), 19);
    const double a = evaluate_nll(m, val_toks, 4, 8, 4, 99);
    const double b = evaluate_nll(m, val_toks, 4, 8, 4, 99);
    const double c = evaluate_nll(m, val_toks, 4, 8, 4, 100);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(std::isfinite(a));
}

TEST_CASE("a runaway learning rate aborts with the failing step in the message") {
    const std::vector<int> tokens = pattern_tokens(150);
    const auto [train_toks, val_toks] = split_train_val(tokens, 0.2, 8);
    Model m = build_model(pattern_cfg(Variant::Base, 4), 23);
    TrainConfig cfg = fast_cfg(50);
    cfg.lr_max = 1e6;
    cfg.lr_min = 1e5;
    cfg.grad_clip = 0.0;
    try {
        train(m, train_toks, val_toks, cfg);
        FAIL_CHECK("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("(step") != std::string::npos);
    }
}

TEST_CASE("the linear probe separates classes a frozen backbone can see") {
    Model m = build_model(pattern_cfg(Variant::Base, 2), 29);
    std::vector<double> before;
    for (const NamedParam& p : m.params)
        before.insert(before.end(), p.t.data().begin(), p.t.data().end());

    // class = last character; the final-position hidden state sees it directly
    std::vector<std::pair<std::vector<int>, int>> examples;
    Rng rng(31);
    for (int i = 0; i < 200; ++i) {
        const int label = static_cast<int>(rng.uniform_int(2));
        std::vector<int> text;
        const int len = 3 + static_cast<int>(rng.uniform_int(4));
        for (int j = 0; j < len - 1; ++j) text.push_back(static_cast<int>(rng.uniform_int(2)));
        text.push_back(label);
        examples.emplace_back(std::move(text), label);
    }

    FinetuneConfig fc;
    fc.steps = 200;
    fc.lr = 0.1;
    fc.holdout_fraction = 0.25;
    fc.seed = 7;
    const FinetuneResult res = finetune_classifier(m, examples, 2, fc);
    CHECK(res.holdout_count == 50);
    CHECK(res.accuracy >= 0.9);
    CHECK(res.head_w.dim(0) == 2);
    CHECK(res.head_w.dim(1) == 16);
    CHECK(res.head_b.dim(0) == 2);

    // the backbone must not move
    std::vector<double> after;
    for (const NamedParam& p : m.params)
        after.insert(after.end(), p.t.data().begin(), p.t.data().end());
    CHECK(before == after);

    // shuffled labels destroy the signal: accuracy falls to chance
    FinetuneConfig shuffled = fc;
    shuffled.shuffle_labels = true;
    const FinetuneResult chance = finetune_classifier(m, examples, 2, shuffled);
    CHECK(chance.accuracy > 0.25);
    CHECK(chance.accuracy < 0.75);

    CHECK_THROWS_AS(finetune_classifier(m, examples, 1, fc), UsageError);
    FinetuneConfig bad = fc;
    bad.holdout_fraction = 0.0;
    CHECK_THROWS_AS(finetune_classifier(m, examples, 2, bad), UsageError);
    bad.holdout_fraction = 1.0;
    CHECK_THROWS_AS(finetune_classifier(m, examples, 2, bad), UsageError);
    const std::vector<std::pair<std::vector<int>, int>> one(examples.begin(),
                                                            examples.begin() + 1);
    CHECK_THROWS_AS(finetune_classifier(m, one, 2, fc), DataError);
}

} // TEST_SUITE
