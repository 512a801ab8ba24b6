#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stwave/config.hpp"
#include "stwave/data.hpp"
#include "stwave/graph.hpp"
#include "stwave/metrics.hpp"
#include "stwave/model.hpp"

namespace stwave {

struct TrainConfig {
    int64_t epochs = 100;
    int64_t batch_size = 64;
    double lr = 1e-3;
    double lr_decay = 0.97;     // 1.0 disables the schedule
    double clip_norm = 3.0;     // 0 disables clipping
    double weight_decay = 1e-4;
    uint64_t seed = 1;
    int64_t patience = 15;      // epochs without val improvement; 0 disables
    int64_t horizon_first = 0;  // 0-based start of the trained horizon range
    int64_t horizon_count = 0;  // 0 = through the last horizon

    void validate() const;
    // Resolved [first, count) against the model's horizon count.
    std::pair<int64_t, int64_t> horizon_range(int64_t horizons) const;
};

TrainConfig train_config_from(const RunConfig& rc);

struct EpochRecord {
    int64_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double val_mean_mae = 0; // over the trained horizon subset
    double seconds = 0;      // wall time; never part of deterministic outputs
};

struct TrainResult {
    ParamStore<float> best_params;  // at the best validation epoch
    double best_val_mae = 0;
    int64_t best_epoch = -1;
    ParamStore<float> final_params; // after the last executed epoch
    std::vector<EpochRecord> history;
};

// Called after each epoch; return true to stop training early (in addition
// to the patience rule).
using EpochCallback = std::function<bool(const EpochRecord&)>;

// Full training loop: seeded shuffling, masked-MAE loss over the configured
// horizon subset, global-norm clipping, Adam, exponential LR schedule,
// best-checkpoint bookkeeping on validation MeanMAE, early stopping.
// `initial` (when given) must enumerate exactly like `mcfg`.
TrainResult train_model(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg,
                        const FixedSupports<float>& fixed,
                        const ParamStore<float>* initial = nullptr,
                        const EpochCallback& on_epoch = {});

// Deterministic (dropout-off) forward over a split; predictions are
// inverse-scaled before the masked metrics.
MetricReport evaluate_model(const Dataset& ds, const GraphWaveNet<float>& model,
                            const FixedSupports<float>& fixed, SplitSpan span,
                            int64_t batch_size);

// Repeats the most recent observed (nonzero) input speed for all horizons.
MetricReport evaluate_persistence(const Dataset& ds, SplitSpan span);

// Spliced predictor: horizons [0, split_horizon) from `short_model`, the
// rest from `long_model`. Exact splice, no blending.
MetricReport evaluate_ensemble(const Dataset& ds, const GraphWaveNet<float>& short_model,
                               const GraphWaveNet<float>& long_model,
                               const FixedSupports<float>& fixed, int64_t split_horizon,
                               SplitSpan span, int64_t batch_size);

// Mean of the defined per-horizon MAEs inside [first, first+count).
double subset_mean_mae(const MetricReport& rep, int64_t first, int64_t count);

struct PretrainFinetuneResult {
    TrainResult pretrain;                 // phase 1: horizons [0, pretrain_horizons)
    TrainResult finetune;                 // phase 2: the configured subset
    ParamStore<float> finetune_initial;   // exactly what phase 2 started from
};

// Phase 1 trains on the first `pretrain_horizons` horizons with its own early
// stopping; phase 2 starts from phase 1's best weights and trains on the
// configured subset. When `pretrain_ckpt_path` is non-empty the phase-1 best
// weights pass through that checkpoint file on disk, so phase 2 begins from
// exactly what the file holds.
PretrainFinetuneResult pretrain_finetune(const Dataset& ds, const ModelConfig& mcfg,
                                         const TrainConfig& tcfg, int64_t pretrain_horizons,
                                         const FixedSupports<float>& fixed,
                                         const std::string& pretrain_ckpt_path = "");

// --- ablation harness -------------------------------------------------------

struct AblationArm {
    std::string label;
    ModelConfig model;
    TrainConfig train;
    bool zero_replacement = true;
};

// The modification table: baseline, one single-reversion row per
// modification, and the all-modifications row — exactly 7 arms. The width
// reversion scales nhid by 4/5 (40 -> 32 at full scale).
std::vector<AblationArm> mods_suite(const ModelConfig& base_model, const TrainConfig& base_train,
                                    bool base_zero_replacement);

// Graph-structure table: all modifications, no graph convolution at all,
// distance supports without the learned adjacency, learned adjacency only.
std::vector<AblationArm> graph_suite(const ModelConfig& base_model, const TrainConfig& base_train,
                                     bool base_zero_replacement);

// History-length table: input truncated to the newest `length` steps.
std::vector<AblationArm> history_suite(const ModelConfig& base_model,
                                       const TrainConfig& base_train,
                                       bool base_zero_replacement);

struct AblationRow {
    std::string label;
    std::vector<double> per_seed_val_mae; // best val MeanMAE per seed
    double mean_val_mae = 0;              // seed average
    int64_t params = 0;
};

// Trains every arm over `seeds` consecutive seeds (base seed, base+1, ...)
// and averages the best validation MeanMAE. The dataset is re-prepared per
// arm so the zero-replacement toggle and history length take effect.
std::vector<AblationRow> run_ablation(const std::vector<AblationArm>& arms,
                                      const SpeedSeries& series, const SensorGraph* graph,
                                      const AdjacencyOptions& adj, int64_t seeds,
                                      const std::function<void(const std::string&)>& progress = {});

// Distance-derived transition matrices in model precision; empty when the
// mode needs none. graph == nullptr with a mode that needs them is a
// ConfigError.
FixedSupports<float> build_fixed_supports(const SensorGraph* graph, const AdjacencyOptions& adj,
                                          SupportsMode mode);

} // namespace stwave
