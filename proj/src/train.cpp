#include "stwave/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>

#include "stwave/error.hpp"
#include "stwave/optim.hpp"
#include "stwave/rng.hpp"

namespace stwave {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be at least 1, got " + std::to_string(epochs));
    if (batch_size < 1)
        throw ConfigError("train.batch_size must be at least 1, got " + std::to_string(batch_size));
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train.lr must be a positive finite number");
    if (!(lr_decay > 0) || lr_decay > 1.0)
        throw ConfigError("train.lr_decay must be in (0, 1]; 1 disables the schedule");
    if (clip_norm < 0 || !std::isfinite(clip_norm))
        throw ConfigError("train.clip_norm must be >= 0; 0 disables clipping");
    if (weight_decay < 0 || !std::isfinite(weight_decay))
        throw ConfigError("train.weight_decay must be >= 0");
    if (patience < 0) throw ConfigError("train.patience must be >= 0; 0 disables early stopping");
    if (horizon_first < 0) throw ConfigError("train.horizon_first must be >= 0");
    if (horizon_count < 0) throw ConfigError("train.horizon_count must be >= 0; 0 means the rest");
}

std::pair<int64_t, int64_t> TrainConfig::horizon_range(int64_t horizons) const {
    if (horizon_first >= horizons)
        throw ConfigError("train.horizon_first=" + std::to_string(horizon_first) +
                          " is out of range for a model with " + std::to_string(horizons) +
                          " horizons");
    int64_t count = horizon_count == 0 ? horizons - horizon_first : horizon_count;
    if (horizon_first + count > horizons)
        throw ConfigError("trained horizon subset [" + std::to_string(horizon_first) + ", " +
                          std::to_string(horizon_first + count) + ") exceeds the model's " +
                          std::to_string(horizons) + " horizons");
    return {horizon_first, count};
}

TrainConfig train_config_from(const RunConfig& rc) {
    TrainConfig t;
    t.epochs = rc.get_int("train.epochs");
    t.batch_size = rc.get_int("train.batch_size");
    t.lr = rc.get_double("train.lr");
    t.lr_decay = rc.get_double("train.lr_decay");
    t.clip_norm = rc.get_double("train.clip_norm");
    t.weight_decay = rc.get_double("train.weight_decay");
    int64_t seed = rc.get_int("train.seed");
    if (seed < 0) throw ConfigError("train.seed must be >= 0, got " + std::to_string(seed));
    t.seed = static_cast<uint64_t>(seed);
    t.patience = rc.get_int("train.patience");
    t.horizon_first = rc.get_int("train.horizon_first");
    t.horizon_count = rc.get_int("train.horizon_count");
    t.validate();
    return t;
}

double subset_mean_mae(const MetricReport& rep, int64_t first, int64_t count) {
    if (first < 0 || count < 1 || first + count > rep.horizons())
        throw ConfigError("subset_mean_mae: horizon subset [" + std::to_string(first) + ", " +
                          std::to_string(first + count) + ") is out of range");
    double sum = 0;
    int64_t defined = 0;
    for (int64_t h = first; h < first + count; ++h) {
        if (std::isnan(rep.mae[static_cast<size_t>(h)])) continue;
        sum += rep.mae[static_cast<size_t>(h)];
        ++defined;
    }
    if (defined == 0) return std::numeric_limits<double>::quiet_NaN();
    return sum / static_cast<double>(defined);
}

namespace {

// Inverse-scale a normalized (B,N,H) prediction into raw speeds, in double.
Tensor<double> denormalize_prediction(const Tensor<float>& pred, const Scaler& sc) {
    std::vector<double> out(static_cast<size_t>(pred.size()));
    auto src = pred.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = sc.denormalize(static_cast<double>(src[i]));
    return Tensor<double>::from_data(pred.shape(), std::move(out));
}

std::vector<int64_t> span_windows(SplitSpan span, int64_t pos, int64_t len) {
    std::vector<int64_t> idx(static_cast<size_t>(len));
    std::iota(idx.begin(), idx.end(), span.first + pos);
    return idx;
}

void check_model_dataset(const Dataset& ds, const ModelConfig& mcfg) {
    if (ds.series.n_nodes != mcfg.n_nodes)
        throw ConfigError("model expects " + std::to_string(mcfg.n_nodes) +
                          " nodes but the dataset has " + std::to_string(ds.series.n_nodes));
    if (mcfg.history > ds.t_in)
        throw ConfigError("model history " + std::to_string(mcfg.history) +
                          " exceeds the dataset's input window of " + std::to_string(ds.t_in));
    if (mcfg.horizons != ds.t_out)
        throw ConfigError("model emits " + std::to_string(mcfg.horizons) +
                          " horizons but the dataset windows hold " + std::to_string(ds.t_out));
}

} // namespace

MetricReport evaluate_model(const Dataset& ds, const GraphWaveNet<float>& model,
                            const FixedSupports<float>& fixed, SplitSpan span,
                            int64_t batch_size) {
    if (batch_size < 1) throw ConfigError("evaluate_model: batch_size must be at least 1");
    check_model_dataset(ds, model.config());
    MetricAccumulator acc(ds.t_out);
    for (int64_t pos = 0; pos < span.count; pos += batch_size) {
        int64_t len = std::min(batch_size, span.count - pos);
        auto idx = span_windows(span, pos, len);
        Tape<float> tape;
        auto batch = make_batch<float>(ds, idx, model.config().history);
        auto fwd = model.forward(tape, batch.x, fixed, /*training=*/false, nullptr);
        acc.add(denormalize_prediction(fwd.prediction, ds.scaler), batch.y_raw.cast<double>());
    }
    return acc.report();
}

MetricReport evaluate_persistence(const Dataset& ds, SplitSpan span) {
    MetricAccumulator acc(ds.t_out);
    const int64_t N = ds.series.n_nodes;
    const int64_t H = ds.t_out;
    const int64_t chunk = 256;
    for (int64_t pos = 0; pos < span.count; pos += chunk) {
        int64_t len = std::min(chunk, span.count - pos);
        std::vector<double> pred(static_cast<size_t>(len * N * H), 0.0);
        std::vector<double> y(static_cast<size_t>(len * N * H), 0.0);
        for (int64_t b = 0; b < len; ++b) {
            int64_t w = span.first + pos + b;
            for (int64_t n = 0; n < N; ++n) {
                double last = 0.0; // all-missing input: no observation to repeat
                for (int64_t t = ds.t_in - 1; t >= 0; --t) {
                    double v = ds.series.at(w + t, n);
                    if (v != 0.0) {
                        last = v;
                        break;
                    }
                }
                for (int64_t h = 0; h < H; ++h) {
                    size_t i = static_cast<size_t>((b * N + n) * H + h);
                    pred[i] = last;
                    y[i] = ds.series.at(w + ds.t_in + h, n);
                }
            }
        }
        acc.add(Tensor<double>::from_data({len, N, H}, std::move(pred)),
                Tensor<double>::from_data({len, N, H}, std::move(y)));
    }
    return acc.report();
}

MetricReport evaluate_ensemble(const Dataset& ds, const GraphWaveNet<float>& short_model,
                               const GraphWaveNet<float>& long_model,
                               const FixedSupports<float>& fixed, int64_t split_horizon,
                               SplitSpan span, int64_t batch_size) {
    if (batch_size < 1) throw ConfigError("evaluate_ensemble: batch_size must be at least 1");
    check_model_dataset(ds, short_model.config());
    check_model_dataset(ds, long_model.config());
    // a splice needs both sides: 0 or t_out would silently reduce to one model
    if (split_horizon < 1 || split_horizon > ds.t_out - 1)
        throw ConfigError("ensemble split horizon must be in [1, " + std::to_string(ds.t_out - 1) +
                          "], got " + std::to_string(split_horizon));
    const int64_t N = ds.series.n_nodes;
    const int64_t H = ds.t_out;
    MetricAccumulator acc(H);
    for (int64_t pos = 0; pos < span.count; pos += batch_size) {
        int64_t len = std::min(batch_size, span.count - pos);
        auto idx = span_windows(span, pos, len);
        Tape<float> tape_s, tape_l;
        auto batch_s = make_batch<float>(ds, idx, short_model.config().history);
        auto batch_l = make_batch<float>(ds, idx, long_model.config().history);
        auto ps = denormalize_prediction(
            short_model.forward(tape_s, batch_s.x, fixed, false, nullptr).prediction, ds.scaler);
        auto pl = denormalize_prediction(
            long_model.forward(tape_l, batch_l.x, fixed, false, nullptr).prediction, ds.scaler);
        std::vector<double> spliced(static_cast<size_t>(len * N * H));
        auto s = ps.data();
        auto l = pl.data();
        for (int64_t b = 0; b < len; ++b)
            for (int64_t n = 0; n < N; ++n)
                for (int64_t h = 0; h < H; ++h) {
                    size_t i = static_cast<size_t>((b * N + n) * H + h);
                    spliced[i] = h < split_horizon ? s[i] : l[i];
                }
        acc.add(Tensor<double>::from_data({len, N, H}, std::move(spliced)),
                batch_s.y_raw.cast<double>());
    }
    return acc.report();
}

TrainResult train_model(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg,
                        const FixedSupports<float>& fixed, const ParamStore<float>* initial,
                        const EpochCallback& on_epoch) {
    mcfg.validate();
    tcfg.validate();
    check_model_dataset(ds, mcfg);
    auto [h0, hc] = tcfg.horizon_range(mcfg.horizons);

    GraphWaveNet<float> model = initial ? GraphWaveNet<float>(mcfg, *initial)
                                        : GraphWaveNet<float>(mcfg, tcfg.seed);
    AdamConfig acfg;
    acfg.weight_decay = tcfg.weight_decay;
    std::vector<int64_t> sizes;
    sizes.reserve(model.params().values.size());
    for (const auto& v : model.params().values) sizes.push_back(v.size());
    Adam<float> adam(acfg, sizes);

    std::vector<int64_t> order(static_cast<size_t>(ds.split.train.count));
    std::iota(order.begin(), order.end(), ds.split.train.first);

    TrainResult res;
    res.best_val_mae = std::numeric_limits<double>::infinity();
    int64_t since_best = 0;

    for (int64_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        auto t_start = std::chrono::steady_clock::now();
        double lr_e = scheduled_lr(tcfg.lr, tcfg.lr_decay, epoch);
        auto shuffler = Rng::stream(tcfg.seed, "train.shuffle", {static_cast<uint64_t>(epoch)});
        shuffler.shuffle(order);

        double loss_sum = 0;
        int64_t n_batches = 0;
        for (int64_t pos = 0, step = 0; pos < static_cast<int64_t>(order.size());
             pos += tcfg.batch_size, ++step) {
            int64_t len = std::min<int64_t>(tcfg.batch_size, static_cast<int64_t>(order.size()) - pos);
            std::span<const int64_t> chunk(order.data() + pos, static_cast<size_t>(len));
            try {
                Tape<float> tape;
                auto batch = make_batch<float>(ds, chunk, mcfg.history);
                Rng drop = Rng::stream(tcfg.seed, "train.dropout",
                                       {static_cast<uint64_t>(epoch), static_cast<uint64_t>(step)});
                auto fwd = model.forward(tape, batch.x, fixed, /*training=*/true, &drop);
                auto loss = masked_mae_loss<float>(tape, fwd.prediction, batch.y_raw, ds.scaler,
                                                   h0, hc);
                tape.backward(loss);
                std::vector<std::vector<float>> grads;
                grads.reserve(fwd.bound.size());
                for (const auto& leaf : fwd.bound) {
                    if (tape.has_grad(leaf)) {
                        auto g = tape.grad(leaf);
                        grads.emplace_back(g.data().begin(), g.data().end());
                    } else {
                        grads.emplace_back();
                    }
                }
                if (tcfg.clip_norm > 0) clip_global_norm(grads, tcfg.clip_norm);
                adam.step(model.params().values, grads, lr_e);
                loss_sum += static_cast<double>(loss.item());
                ++n_batches;
            } catch (const NumericalFault& e) {
                throw NumericalFault("training diverged at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(step) + ": " + e.what());
            }
        }

        MetricReport vrep = evaluate_model(ds, model, fixed, ds.split.val, tcfg.batch_size);
        double vmae = subset_mean_mae(vrep, h0, hc);
        if (!std::isfinite(vmae))
            throw DataError("validation split has no observed targets in the trained horizon "
                            "subset; cannot select a best epoch");

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr_e;
        rec.train_loss = loss_sum / static_cast<double>(std::max<int64_t>(1, n_batches));
        rec.val_mean_mae = vmae;
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        res.history.push_back(rec);

        if (vmae < res.best_val_mae) {
            res.best_val_mae = vmae;
            res.best_epoch = epoch;
            res.best_params = model.params();
            since_best = 0;
        } else {
            ++since_best;
        }

        bool stop = false;
        if (on_epoch && on_epoch(rec)) stop = true;
        if (tcfg.patience > 0 && since_best >= tcfg.patience) stop = true;
        if (stop) break;
    }

    res.final_params = model.params();
    return res;
}

PretrainFinetuneResult pretrain_finetune(const Dataset& ds, const ModelConfig& mcfg,
                                         const TrainConfig& tcfg, int64_t pretrain_horizons,
                                         const FixedSupports<float>& fixed,
                                         const std::string& pretrain_ckpt_path) {
    // the whole point is a shorter phase-1 task, so the full range is an error
    if (pretrain_horizons < 1 || pretrain_horizons >= mcfg.horizons)
        throw ConfigError("pretrain horizons must be in [1, " + std::to_string(mcfg.horizons - 1) +
                          "], got " + std::to_string(pretrain_horizons));
    TrainConfig phase1 = tcfg;
    phase1.horizon_first = 0;
    phase1.horizon_count = pretrain_horizons;

    PretrainFinetuneResult out;
    out.pretrain = train_model(ds, mcfg, phase1, fixed);

    ParamStore<float> start = out.pretrain.best_params;
    if (!pretrain_ckpt_path.empty()) {
        GraphWaveNet<float> best(mcfg, out.pretrain.best_params);
        save_model(pretrain_ckpt_path, best);
        auto loaded = load_model<float>(pretrain_ckpt_path);
        start = loaded.params();
    }
    out.finetune_initial = start;
    out.finetune = train_model(ds, mcfg, tcfg, fixed, &start);
    return out;
}

// --- ablation harness -------------------------------------------------------

namespace {
int64_t scaled_baseline_width(int64_t nhid) { return std::max<int64_t>(1, nhid * 4 / 5); }
} // namespace

std::vector<AblationArm> mods_suite(const ModelConfig& base_model, const TrainConfig& base_train,
                                    bool base_zero_replacement) {
    const int64_t w0 = scaled_baseline_width(base_model.nhid);
    std::vector<AblationArm> arms;
    {
        ModelConfig m = base_model;
        m.nhid = w0;
        m.gcn_bypass_skip = false;
        TrainConfig t = base_train;
        t.clip_norm = 5.0;
        t.lr_decay = 1.0;
        arms.push_back({"GWN baseline (no modifications)", m, t, false});
    }
    {
        ModelConfig m = base_model;
        m.nhid = w0;
        arms.push_back({"without n channels=40", m, base_train, base_zero_replacement});
    }
    {
        ModelConfig m = base_model;
        m.gcn_bypass_skip = false;
        arms.push_back({"without skip connection", m, base_train, base_zero_replacement});
    }
    arms.push_back({"without 0 replacement", base_model, base_train, false});
    {
        TrainConfig t = base_train;
        t.clip_norm = 5.0;
        arms.push_back({"without grad clipping=3", base_model, t, base_zero_replacement});
    }
    {
        TrainConfig t = base_train;
        t.lr_decay = 1.0;
        arms.push_back({"without lr decay", base_model, t, base_zero_replacement});
    }
    arms.push_back({"with all modifications", base_model, base_train, base_zero_replacement});
    return arms;
}

std::vector<AblationArm> graph_suite(const ModelConfig& base_model, const TrainConfig& base_train,
                                     bool base_zero_replacement) {
    std::vector<AblationArm> arms;
    arms.push_back({"with all modifications", base_model, base_train, base_zero_replacement});
    {
        ModelConfig m = base_model;
        m.supports_mode = SupportsMode::none;
        arms.push_back({"without any graph convolution", m, base_train, base_zero_replacement});
    }
    {
        ModelConfig m = base_model;
        m.supports_mode = SupportsMode::forward_backward;
        arms.push_back(
            {"without the learned adjacency matrix", m, base_train, base_zero_replacement});
    }
    {
        ModelConfig m = base_model;
        m.supports_mode = SupportsMode::adaptive_only;
        arms.push_back({"adaptive adjacency only", m, base_train, base_zero_replacement});
    }
    return arms;
}

std::vector<AblationArm> history_suite(const ModelConfig& base_model,
                                       const TrainConfig& base_train,
                                       bool base_zero_replacement) {
    std::vector<int64_t> lengths;
    for (int64_t l : {1, 2, 3, 4, 5, 6, 9, 12})
        if (l <= base_model.history) lengths.push_back(l);
    if (lengths.empty() || lengths.back() != base_model.history)
        lengths.push_back(base_model.history);
    std::vector<AblationArm> arms;
    for (int64_t l : lengths) {
        ModelConfig m = base_model;
        m.history = l;
        arms.push_back({"history length " + std::to_string(l), m, base_train,
                        base_zero_replacement});
    }
    return arms;
}

FixedSupports<float> build_fixed_supports(const SensorGraph* graph, const AdjacencyOptions& adj,
                                          SupportsMode mode) {
    FixedSupports<float> out;
    bool needs = mode == SupportsMode::all || mode == SupportsMode::forward_backward;
    if (!needs) return out;
    if (graph == nullptr)
        throw ConfigError("supports mode '" + std::string(to_string(mode)) +
                          "' needs a distance graph, but none was provided");
    Tensor<double> w = build_adjacency(*graph, adj);
    auto [fwd, bwd] = transition_matrices(w);
    out.forward_mat = fwd.cast<float>();
    out.backward_mat = bwd.cast<float>();
    return out;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationArm>& arms,
                                      const SpeedSeries& series, const SensorGraph* graph,
                                      const AdjacencyOptions& adj, int64_t seeds,
                                      const std::function<void(const std::string&)>& progress) {
    if (arms.empty()) throw ConfigError("run_ablation: no arms to run");
    if (seeds < 1) throw ConfigError("run_ablation: seeds must be at least 1");

    int64_t t_in = 0;
    int64_t t_out = arms.front().model.horizons;
    bool any_fixed = false;
    for (const auto& a : arms) {
        t_in = std::max(t_in, a.model.history);
        if (a.model.horizons != t_out)
            throw ContractError("run_ablation: arms disagree on the horizon count");
        if (a.model.use_fixed_supports()) any_fixed = true;
    }
    FixedSupports<float> fixed;
    if (any_fixed) fixed = build_fixed_supports(graph, adj, SupportsMode::all);

    std::optional<Dataset> ds_filled, ds_raw;
    auto dataset_for = [&](bool zero_replacement) -> const Dataset& {
        auto& slot = zero_replacement ? ds_filled : ds_raw;
        if (!slot) slot = prepare_dataset(series, t_in, t_out, zero_replacement);
        return *slot;
    };

    std::vector<AblationRow> rows;
    rows.reserve(arms.size());
    for (const auto& arm : arms) {
        const Dataset& ds = dataset_for(arm.zero_replacement);
        AblationRow row;
        row.label = arm.label;
        row.params = param_count(arm.model);
        double sum = 0;
        for (int64_t i = 0; i < seeds; ++i) {
            TrainConfig tc = arm.train;
            tc.seed = arm.train.seed + static_cast<uint64_t>(i);
            TrainResult r = train_model(ds, arm.model, tc, fixed);
            row.per_seed_val_mae.push_back(r.best_val_mae);
            sum += r.best_val_mae;
            if (progress) {
                char buf[160];
                std::snprintf(buf, sizeof(buf), "%s [seed %llu]: best val MeanMAE %.6f at epoch %lld",
                              arm.label.c_str(), static_cast<unsigned long long>(tc.seed),
                              r.best_val_mae, static_cast<long long>(r.best_epoch));
                progress(buf);
            }
        }
        row.mean_val_mae = sum / static_cast<double>(seeds);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace stwave
