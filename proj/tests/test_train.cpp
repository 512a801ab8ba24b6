// Training engine: masked metrics against triple-loop oracles, Adam against
// the scalar textbook recurrence, clipping and schedule invariants, actual
// descent on synthetic data, the persistence baseline, exact ensemble
// splicing, and the pretrain -> finetune checkpoint hand-off.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "stwave/metrics.hpp"
#include "stwave/optim.hpp"
#include "stwave/rng.hpp"
#include "stwave/train.hpp"

using namespace stwave;

namespace {

struct Oracle {
    std::vector<double> mae, rmse, mape;
    std::vector<int64_t> count;
};

// straightforward three-loop evaluation of the masked metrics
Oracle triple_loop(const std::vector<double>& pred, const std::vector<double>& y, int64_t rows,
                   int64_t H) {
    Oracle o;
    o.mae.assign(static_cast<size_t>(H), std::numeric_limits<double>::quiet_NaN());
    o.rmse = o.mae;
    o.mape = o.mae;
    o.count.assign(static_cast<size_t>(H), 0);
    for (int64_t h = 0; h < H; ++h) {
        double sa = 0, ss = 0, sp = 0;
        int64_t c = 0;
        for (int64_t r = 0; r < rows; ++r) {
            double t = y[static_cast<size_t>(r * H + h)];
            if (t == 0.0) continue;
            double e = pred[static_cast<size_t>(r * H + h)] - t;
            sa += std::fabs(e);
            ss += e * e;
            sp += std::fabs(e) / std::fabs(t);
            ++c;
        }
        o.count[static_cast<size_t>(h)] = c;
        if (c > 0) {
            o.mae[static_cast<size_t>(h)] = sa / static_cast<double>(c);
            o.rmse[static_cast<size_t>(h)] = std::sqrt(ss / static_cast<double>(c));
            o.mape[static_cast<size_t>(h)] = sp / static_cast<double>(c);
        }
    }
    return o;
}

Dataset tiny_dataset(int64_t n_nodes, int64_t n_days, uint64_t seed, int64_t t_in, int64_t t_out,
                     bool zero_replacement, double zero_rate = 0.05) {
    SyntheticConfig cfg;
    cfg.n_nodes = n_nodes;
    cfg.n_days = n_days;
    cfg.seed = seed;
    cfg.zero_rate = zero_rate;
    SyntheticData d = generate_synthetic(cfg);
    return prepare_dataset(d.series, t_in, t_out, zero_replacement);
}

ModelConfig tiny_model(int64_t n_nodes, int64_t history, int64_t horizons) {
    ModelConfig m;
    m.n_nodes = n_nodes;
    m.nhid = 4;
    m.n_blocks = 1;
    m.history = history;
    m.horizons = horizons;
    m.adaptive_dim = 3;
    m.dropout = 0.0;
    m.supports_mode = SupportsMode::adaptive_only;
    m.gcn_bypass_skip = true;
    return m;
}

bool params_bit_equal(const ParamStore<float>& a, const ParamStore<float>& b) {
    if (a.values.size() != b.values.size()) return false;
    for (size_t i = 0; i < a.values.size(); ++i) {
        if (a.specs[i].name != b.specs[i].name) return false;
        if (a.values[i].shape() != b.values[i].shape()) return false;
        for (int64_t j = 0; j < a.values[i].size(); ++j)
            if (a.values[i].data()[static_cast<size_t>(j)] !=
                b.values[i].data()[static_cast<size_t>(j)])
                return false;
    }
    return true;
}

} // namespace

TEST_CASE("masked metrics equal the triple-loop oracle to 1e-12") {
    Rng rng = Rng::stream(222, "test.train.metrics", {});
    for (int rep = 0; rep < 20; ++rep) {
        int64_t B = 1 + static_cast<int64_t>(rng.next_u64() % 5);
        int64_t N = 1 + static_cast<int64_t>(rng.next_u64() % 6);
        int64_t H = 1 + static_cast<int64_t>(rng.next_u64() % 8);
        int64_t rows = B * N;
        std::vector<double> pred, y;
        for (int64_t i = 0; i < rows * H; ++i) {
            pred.push_back(rng.uniform(10.0, 80.0));
            y.push_back(rng.next_double() < 0.22 ? 0.0 : rng.uniform(10.0, 80.0));
        }
        Oracle o = triple_loop(pred, y, rows, H);

        // feed the accumulator in two uneven chunks to exercise streaming
        MetricAccumulator acc(H);
        int64_t cut = std::max<int64_t>(1, B / 2);
        auto slice = [&](const std::vector<double>& v, int64_t b0, int64_t b1) {
            return Tensor<double>::from_data(
                {b1 - b0, N, H},
                std::vector<double>(v.begin() + b0 * N * H, v.begin() + b1 * N * H));
        };
        acc.add(slice(pred, 0, cut), slice(y, 0, cut));
        if (cut < B) acc.add(slice(pred, cut, B), slice(y, cut, B));
        MetricReport rep_ = acc.report();

        double mean_mae = 0, mean_rmse = 0, mean_mape = 0;
        int64_t defined = 0;
        for (int64_t h = 0; h < H; ++h) {
            CHECK(rep_.valid_count[static_cast<size_t>(h)] == o.count[static_cast<size_t>(h)]);
            if (o.count[static_cast<size_t>(h)] == 0) {
                CHECK(std::isnan(rep_.mae[static_cast<size_t>(h)]));
                continue;
            }
            CHECK(std::fabs(rep_.mae[static_cast<size_t>(h)] - o.mae[static_cast<size_t>(h)]) <=
                  1e-12);
            CHECK(std::fabs(rep_.rmse[static_cast<size_t>(h)] - o.rmse[static_cast<size_t>(h)]) <=
                  1e-12);
            CHECK(std::fabs(rep_.mape[static_cast<size_t>(h)] - o.mape[static_cast<size_t>(h)]) <=
                  1e-12);
            mean_mae += o.mae[static_cast<size_t>(h)];
            mean_rmse += o.rmse[static_cast<size_t>(h)];
            mean_mape += o.mape[static_cast<size_t>(h)];
            ++defined;
        }
        if (defined > 0) {
            CHECK(std::fabs(rep_.mean_mae - mean_mae / static_cast<double>(defined)) <= 1e-12);
            CHECK(std::fabs(rep_.mean_rmse - mean_rmse / static_cast<double>(defined)) <= 1e-12);
            CHECK(std::fabs(rep_.mean_mape - mean_mape / static_cast<double>(defined)) <= 1e-12);
        }
    }
}

TEST_CASE("masked mae loss matches its oracle and masks zeros") {
    Rng rng = Rng::stream(222, "test.train.loss", {});
    Scaler sc{52.0, 9.0};
    int64_t B = 3, N = 4, H = 5;
    std::vector<double> pred_n, y;
    for (int64_t i = 0; i < B * N * H; ++i) {
        pred_n.push_back(rng.uniform(-1.5, 1.5));
        y.push_back(rng.next_double() < 0.25 ? 0.0 : rng.uniform(20.0, 80.0));
    }
    for (int64_t h0 : {0L, 1L}) {
        int64_t hc = h0 == 0 ? 5 : 3;
        double want = 0;
        int64_t cnt = 0;
        for (int64_t r = 0; r < B * N; ++r)
            for (int64_t h = h0; h < h0 + hc; ++h) {
                double t = y[static_cast<size_t>(r * H + h)];
                if (t == 0.0) continue;
                want += std::fabs(sc.denormalize(pred_n[static_cast<size_t>(r * H + h)]) - t);
                ++cnt;
            }
        want /= static_cast<double>(cnt);
        Tape<double> tape;
        Tensor<double> lp = tape.leaf(Tensor<double>::from_data({B, N, H}, pred_n), true);
        Tensor<double> loss = masked_mae_loss<double>(
            tape, lp, Tensor<double>::from_data({B, N, H}, y), sc, h0, hc);
        CHECK(loss.item() == doctest::Approx(want).epsilon(1e-12));
        tape.backward(loss);
        Tensor<double> g = tape.grad(lp);
        for (int64_t r = 0; r < B * N; ++r)
            for (int64_t h = 0; h < H; ++h) {
                double gv = g.data()[static_cast<size_t>(r * H + h)];
                bool in_range = h >= h0 && h < h0 + hc;
                bool observed = y[static_cast<size_t>(r * H + h)] != 0.0;
                if (!in_range || !observed)
                    CHECK(gv == 0.0); // masked and out-of-range targets are silent
                else
                    CHECK(gv != 0.0);
            }
    }
}

TEST_CASE("Adam follows the scalar textbook recurrence") {
    AdamConfig ac;
    ac.weight_decay = 0.013;
    Adam<double> opt(ac, {1, 2});
    std::vector<Tensor<double>> params = {Tensor<double>::from_data({1}, {0.8}),
                                          Tensor<double>::from_data({2}, {-0.4, 1.1})};
    Rng rng = Rng::stream(222, "test.train.adam", {});
    // independent scalar replicas of every coordinate
    std::vector<double> w = {0.8, -0.4, 1.1};
    std::vector<double> m(3, 0.0), v(3, 0.0);
    for (int step = 1; step <= 25; ++step) {
        std::vector<std::vector<double>> grads = {
            {rng.uniform(-1, 1)}, {rng.uniform(-1, 1), rng.uniform(-1, 1)}};
        double lr = 1e-2 * std::pow(0.95, step - 1);
        std::vector<double> flat = {grads[0][0], grads[1][0], grads[1][1]};
        for (size_t i = 0; i < 3; ++i) {
            double g = flat[i] + ac.weight_decay * w[i];
            m[i] = ac.beta1 * m[i] + (1 - ac.beta1) * g;
            v[i] = ac.beta2 * v[i] + (1 - ac.beta2) * g * g;
            double mhat = m[i] / (1 - std::pow(ac.beta1, step));
            double vhat = v[i] / (1 - std::pow(ac.beta2, step));
            w[i] -= lr * mhat / (std::sqrt(vhat) + ac.eps);
        }
        opt.step(params, grads, lr);
        CHECK(std::fabs(params[0].data()[0] - w[0]) <= 1e-12);
        CHECK(std::fabs(params[1].data()[0] - w[1]) <= 1e-12);
        CHECK(std::fabs(params[1].data()[1] - w[2]) <= 1e-12);
    }
    CHECK(opt.step_count() == 25);

    // empty gradient -> parameter untouched, moments frozen
    std::vector<double> before(params[1].data().begin(), params[1].data().end());
    opt.step(params, {{0.5}, {}}, 1e-2);
    CHECK(std::vector<double>(params[1].data().begin(), params[1].data().end()) == before);
}

TEST_CASE("gradient clipping honors the global norm contract") {
    std::vector<std::vector<double>> g = {{3.0, 4.0}, {12.0}}; // norm 13
    double pre = clip_global_norm(g, 3.0);
    CHECK(pre == doctest::Approx(13.0).epsilon(1e-15));
    double post = std::sqrt(g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0]);
    CHECK(post <= 3.0 * (1 + 1e-6));
    CHECK(post == doctest::Approx(3.0).epsilon(1e-12));
    // direction is preserved
    CHECK(g[0][0] / g[0][1] == doctest::Approx(3.0 / 4.0).epsilon(1e-12));

    // below the threshold: bit-identical passthrough
    std::vector<std::vector<double>> small = {{0.3, -0.4}, {1.2}};
    std::vector<std::vector<double>> copy = small;
    double pre2 = clip_global_norm(small, 3.0);
    CHECK(pre2 == doctest::Approx(1.3).epsilon(1e-15));
    CHECK(small == copy);

    std::vector<std::vector<double>> bad = {{1e308, 1e308}};
    CHECK_THROWS_AS(clip_global_norm(bad, 3.0), NumericalFault);
    CHECK_THROWS_AS(clip_global_norm(small, 0.0), ConfigError);
}

TEST_CASE("the learning-rate schedule is exact") {
    for (int64_t e = 0; e < 120; ++e) {
        CHECK(scheduled_lr(1e-3, 0.97, e) == 1e-3 * std::pow(0.97, static_cast<double>(e)));
        CHECK(scheduled_lr(2e-3, 1.0, e) == 2e-3); // decay 1 disables
    }
}

TEST_CASE("train config validation and horizon ranges") {
    TrainConfig tc;
    tc.validate();
    CHECK(tc.horizon_range(12) == std::pair<int64_t, int64_t>{0, 12});
    tc.horizon_first = 2;
    tc.horizon_count = 4;
    CHECK(tc.horizon_range(12) == std::pair<int64_t, int64_t>{2, 4});
    tc.horizon_count = 0; // zero means "through the last horizon"
    CHECK(tc.horizon_range(12) == std::pair<int64_t, int64_t>{2, 10});
    CHECK_THROWS_AS(tc.horizon_range(2), ConfigError);
    TrainConfig bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.lr = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.lr_decay = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("persistence baseline equals its definition") {
    Dataset ds = tiny_dataset(4, 2, 21, 6, 4, false, 0.15);
    SplitSpan span = ds.split.val;
    MetricReport got = evaluate_persistence(ds, span);

    MetricAccumulator acc(4);
    for (int64_t w = span.first; w < span.first + span.count; ++w) {
        std::vector<double> pred(static_cast<size_t>(4 * 4), 0.0);
        std::vector<double> y(static_cast<size_t>(4 * 4), 0.0);
        for (int64_t n = 0; n < 4; ++n) {
            double last = 0.0; // newest observed (nonzero) raw input, else 0
            for (int64_t t = ds.t_in - 1; t >= 0; --t) {
                double v = ds.series.at(w + t, n);
                if (v != 0.0) {
                    last = v;
                    break;
                }
            }
            for (int64_t h = 0; h < 4; ++h) {
                pred[static_cast<size_t>(n * 4 + h)] = last;
                y[static_cast<size_t>(n * 4 + h)] = ds.series.at(w + ds.t_in + h, n);
            }
        }
        acc.add(Tensor<double>::from_data({1, 4, 4}, std::move(pred)),
                Tensor<double>::from_data({1, 4, 4}, std::move(y)));
    }
    MetricReport want = acc.report();
    for (int64_t h = 0; h < 4; ++h) {
        CHECK(got.mae[static_cast<size_t>(h)] ==
              doctest::Approx(want.mae[static_cast<size_t>(h)]).epsilon(1e-13));
        CHECK(got.valid_count[static_cast<size_t>(h)] == want.valid_count[static_cast<size_t>(h)]);
    }
    CHECK(got.mean_mae == doctest::Approx(want.mean_mae).epsilon(1e-13));
}

TEST_CASE("training reduces the loss and is bit-reproducible") {
    Dataset ds = tiny_dataset(4, 2, 31, 6, 3, true);
    ModelConfig mc = tiny_model(4, 6, 3);
    TrainConfig tc;
    tc.epochs = 6;
    tc.batch_size = 64;
    tc.seed = 3;
    tc.patience = 0;
    FixedSupports<float> fixed; // adaptive_only needs none

    TrainResult a = train_model(ds, mc, tc, fixed);
    REQUIRE(a.history.size() == 6);
    CHECK(a.history.back().train_loss < a.history.front().train_loss);
    CHECK(a.best_epoch >= 0);
    // best tracking: the recorded best is the minimum of the trace
    double min_val = a.history.front().val_mean_mae;
    for (const auto& r : a.history) min_val = std::min(min_val, r.val_mean_mae);
    CHECK(a.best_val_mae == min_val);
    // the lr column follows the exact schedule
    for (const auto& r : a.history)
        CHECK(r.lr == scheduled_lr(tc.lr, tc.lr_decay, r.epoch));

    TrainResult b = train_model(ds, mc, tc, fixed);
    CHECK(params_bit_equal(a.best_params, b.best_params));
    CHECK(params_bit_equal(a.final_params, b.final_params));
    REQUIRE(b.history.size() == a.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_mean_mae == b.history[i].val_mean_mae);
    }

    TrainConfig other = tc;
    other.seed = 4;
    TrainResult c = train_model(ds, mc, other, fixed);
    CHECK_FALSE(params_bit_equal(a.final_params, c.final_params));
}

TEST_CASE("early stopping and the epoch callback cut training short") {
    Dataset ds = tiny_dataset(4, 2, 31, 6, 3, true);
    ModelConfig mc = tiny_model(4, 6, 3);
    TrainConfig tc;
    tc.epochs = 50;
    tc.seed = 3;
    int64_t seen = 0;
    TrainResult r = train_model(ds, mc, tc, {}, nullptr, [&](const EpochRecord& rec) {
        ++seen;
        return rec.epoch >= 2; // stop after three epochs
    });
    CHECK(seen == 3);
    CHECK(r.history.size() == 3);

    // patience: with an absurd patience of 1, training stops soon after the
    // first epoch that fails to improve
    TrainConfig tp = tc;
    tp.patience = 1;
    TrainResult rp = train_model(ds, mc, tp, {});
    CHECK(rp.history.size() < 50);
    CHECK(rp.history.size() >= 2);
}

TEST_CASE("training on a horizon subset ignores the others") {
    Dataset ds = tiny_dataset(4, 2, 31, 6, 4, true);
    ModelConfig mc = tiny_model(4, 6, 4);
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 5;
    tc.horizon_first = 0;
    tc.horizon_count = 2;
    TrainResult r = train_model(ds, mc, tc, {});
    REQUIRE(r.history.size() == 2);
    // the validation figure is the subset mean, strictly a 2-horizon mean
    GraphWaveNet<float> best(mc, 0);
    best.params() = r.best_params;
    MetricReport rep = evaluate_model(ds, best, {}, ds.split.val, 64);
    CHECK(r.best_val_mae == doctest::Approx(subset_mean_mae(rep, 0, 2)).epsilon(1e-12));
    CHECK(subset_mean_mae(rep, 0, 2) != doctest::Approx(rep.mean_mae).epsilon(1e-9));
}

TEST_CASE("ensemble splice is bit-exact per horizon") {
    Dataset ds = tiny_dataset(4, 2, 41, 8, 4, true);
    // untrained models are enough: the splice contract is about arithmetic
    ModelConfig shortm = tiny_model(4, 4, 4);
    ModelConfig longm = tiny_model(4, 8, 4);
    GraphWaveNet<float> sm(shortm, 101);
    GraphWaveNet<float> lm(longm, 202);
    FixedSupports<float> fixed;

    MetricReport rs = evaluate_model(ds, sm, fixed, ds.split.test, 64);
    MetricReport rl = evaluate_model(ds, lm, fixed, ds.split.test, 64);
    for (int64_t split = 1; split < 4; ++split) {
        MetricReport re = evaluate_ensemble(ds, sm, lm, fixed, split, ds.split.test, 64);
        for (int64_t h = 0; h < 4; ++h) {
            const MetricReport& src = h < split ? rs : rl;
            // bit-level equality of the spliced metric, not approximate
            CHECK(re.mae[static_cast<size_t>(h)] == src.mae[static_cast<size_t>(h)]);
            CHECK(re.rmse[static_cast<size_t>(h)] == src.rmse[static_cast<size_t>(h)]);
            CHECK(re.mape[static_cast<size_t>(h)] == src.mape[static_cast<size_t>(h)]);
            CHECK(re.valid_count[static_cast<size_t>(h)] ==
                  src.valid_count[static_cast<size_t>(h)]);
        }
    }
    CHECK_THROWS_AS(evaluate_ensemble(ds, sm, lm, fixed, 0, ds.split.test, 64), ConfigError);
    CHECK_THROWS_AS(evaluate_ensemble(ds, sm, lm, fixed, 4, ds.split.test, 64), ConfigError);
}

TEST_CASE("finetune starts from exactly the pretrain checkpoint") {
    Dataset ds = tiny_dataset(4, 2, 51, 6, 4, true);
    ModelConfig mc = tiny_model(4, 6, 4);
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 7;
    std::filesystem::path ckpt =
        std::filesystem::temp_directory_path() / "stwave_test_pretrain.ckpt";
    PretrainFinetuneResult r = pretrain_finetune(ds, mc, tc, 2, {}, ckpt.string());

    REQUIRE(std::filesystem::exists(ckpt));
    GraphWaveNet<float> from_disk = load_model<float>(ckpt.string());
    CHECK(params_bit_equal(r.finetune_initial, from_disk.params()));
    CHECK(params_bit_equal(r.pretrain.best_params, from_disk.params()));
    // and the finetune phase moved away from that start
    CHECK_FALSE(params_bit_equal(r.finetune.final_params, r.finetune_initial));
    std::filesystem::remove(ckpt);

    CHECK_THROWS_AS(pretrain_finetune(ds, mc, tc, 0, {}), ConfigError);
    CHECK_THROWS_AS(pretrain_finetune(ds, mc, tc, 4, {}), ConfigError);
}

TEST_CASE("model/dataset contract violations are reported") {
    Dataset ds = tiny_dataset(4, 2, 61, 6, 3, true);
    ModelConfig wrong_nodes = tiny_model(5, 6, 3);
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train_model(ds, wrong_nodes, tc, {}), ConfigError);
    ModelConfig long_hist = tiny_model(4, 7, 3);
    CHECK_THROWS_AS(train_model(ds, long_hist, tc, {}), ConfigError);
    ModelConfig wrong_h = tiny_model(4, 6, 2);
    CHECK_THROWS_AS(train_model(ds, wrong_h, tc, {}), ConfigError);
}

TEST_CASE("subset_mean_mae averages only defined horizons") {
    MetricReport rep;
    rep.mae = {2.0, 4.0, std::numeric_limits<double>::quiet_NaN(), 6.0};
    CHECK(subset_mean_mae(rep, 0, 2) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(subset_mean_mae(rep, 1, 3) == doctest::Approx(5.0).epsilon(1e-15)); // skips the NaN
    CHECK(std::isnan(subset_mean_mae(rep, 2, 1)));
    CHECK_THROWS_AS(subset_mean_mae(rep, 3, 2), ConfigError);
}
