#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stwave/error.hpp"
#include "stwave/graph.hpp"
#include "stwave/rng.hpp"
#include "stwave/tensor.hpp"

namespace stwave {

// Evenly spaced multivariate speed record. A value of exactly 0 means the
// sensor reported nothing for that interval; real speeds are positive.
struct SpeedSeries {
    int64_t n_nodes = 0;
    int64_t interval_seconds = 300;
    int64_t start_epoch = 0;           // unix seconds of the first row
    std::vector<double> values;        // n_steps * n_nodes, row-major
    std::vector<std::string> sensor_names; // empty => sensor_<i>

    int64_t n_steps() const {
        return n_nodes == 0 ? 0 : static_cast<int64_t>(values.size()) / n_nodes;
    }
    double at(int64_t t, int64_t n) const {
        return values[static_cast<size_t>(t * n_nodes + n)];
    }
    double& at(int64_t t, int64_t n) { return values[static_cast<size_t>(t * n_nodes + n)]; }
    int64_t timestamp(int64_t t) const { return start_epoch + t * interval_seconds; }
    // fraction of the civil day in [0, 1)
    double time_of_day(int64_t t) const {
        int64_t rem = timestamp(t) % 86400;
        if (rem < 0) rem += 86400;
        return static_cast<double>(rem) / 86400.0;
    }
    std::string sensor_name(int64_t i) const {
        if (i < static_cast<int64_t>(sensor_names.size())) return sensor_names[static_cast<size_t>(i)];
        return "sensor_" + std::to_string(i);
    }
    void validate() const;
};

// CSV: header `timestamp,<name>,...`; one row per interval with
// `YYYY-MM-DD HH:MM:SS` stamps. Rows must be evenly spaced.
SpeedSeries load_speed_csv(const std::filesystem::path& path);
void write_speed_csv(const std::filesystem::path& path, const SpeedSeries& series);

// z-normalization fit on observed (nonzero) training speeds.
struct Scaler {
    double mean = 0.0;
    double stdev = 1.0;
    double normalize(double v) const { return (v - mean) / stdev; }
    double denormalize(double v) const { return v * stdev + mean; }
};

struct SplitSpan {
    int64_t first = 0;
    int64_t count = 0;
};

struct SplitSpec {
    SplitSpan train, val, test;
    int64_t total = 0;
};

// Number of stride-1 sliding windows: n_steps - t_in - t_out + 1 (never
// negative).
int64_t window_count(int64_t n_steps, int64_t t_in, int64_t t_out);

// Chronological 70/10/20: floor(0.7 n), floor(0.1 n), remainder. Fewer than
// 3 windows is a DataError.
SplitSpec chrono_split(int64_t n_windows);

// Series plus everything training needs: the zero-replaced variant of the
// inputs, the scaler (fit on the training region only), and the split.
struct Dataset {
    SpeedSeries series;         // raw record; targets always come from here
    std::vector<double> filled; // zeros replaced by the train-set mean speed
    bool zero_replacement = false;
    int64_t t_in = 12;
    int64_t t_out = 12;
    Scaler scaler;
    SplitSpec split;

    int64_t n_windows() const { return split.total; }
    // What the model sees at input row t, sensor n.
    double input_speed(int64_t t, int64_t n) const {
        return zero_replacement ? filled[static_cast<size_t>(t * series.n_nodes + n)]
                                : series.at(t, n);
    }
};

// Fit the scaler on nonzero input speeds in rows [0, train.count + t_in - 1)
// (exactly the rows train windows can read), build the filled series, split.
Dataset prepare_dataset(SpeedSeries series, int64_t t_in, int64_t t_out, bool zero_replacement);

template <typename T>
struct Batch {
    Tensor<T> x;     // (B, N, t_in_use, 2): normalized speed, time-of-day
    Tensor<T> y_raw; // (B, N, t_out): raw speeds, 0 = missing
};

// Materialize windows. `t_in_use` <= t_in keeps only the newest input steps
// (history ablation); targets are unaffected.
template <typename T>
Batch<T> make_batch(const Dataset& ds, std::span<const int64_t> windows, int64_t t_in_use) {
    if (t_in_use < 1 || t_in_use > ds.t_in)
        throw ConfigError("make_batch: t_in_use must be in [1, " + std::to_string(ds.t_in) +
                          "], got " + std::to_string(t_in_use));
    int64_t B = static_cast<int64_t>(windows.size());
    int64_t N = ds.series.n_nodes;
    std::vector<T> x(static_cast<size_t>(B * N * t_in_use * 2));
    std::vector<T> y(static_cast<size_t>(B * N * ds.t_out));
    int64_t skip = ds.t_in - t_in_use;
    for (int64_t b = 0; b < B; ++b) {
        int64_t w = windows[static_cast<size_t>(b)];
        if (w < 0 || w >= ds.n_windows())
            throw ContractError("make_batch: window " + std::to_string(w) + " out of range [0, " +
                                std::to_string(ds.n_windows()) + ")");
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t t = 0; t < t_in_use; ++t) {
                int64_t row = w + skip + t;
                size_t base = static_cast<size_t>(((b * N + n) * t_in_use + t) * 2);
                x[base] = static_cast<T>(ds.scaler.normalize(ds.input_speed(row, n)));
                x[base + 1] = static_cast<T>(ds.series.time_of_day(row));
            }
            for (int64_t t = 0; t < ds.t_out; ++t)
                y[static_cast<size_t>((b * N + n) * ds.t_out + t)] =
                    static_cast<T>(ds.series.at(w + ds.t_in + t, n));
        }
    }
    return Batch<T>{Tensor<T>::from_data({B, N, t_in_use, 2}, std::move(x)),
                    Tensor<T>::from_data({B, N, ds.t_out}, std::move(y))};
}

// --- synthetic traffic ------------------------------------------------------

// Random geometric sensor layout with asymmetric driving distances. Speeds
// carry two daily sinusoidal rush-hour dips with node-specific phase, are
// spatially smoothed along the graph each step (neighbors lead and lag each
// other), get AR(1) noise, and a zero_rate fraction of readings is
// independently zeroed out ("sensor reported nothing").
struct SyntheticConfig {
    int64_t n_nodes = 10;
    int64_t n_days = 14;
    int64_t interval_seconds = 300;
    uint64_t seed = 1;
    double zero_rate = 0.05;

    int64_t n_steps() const { return n_days * 86400 / interval_seconds; }
};

struct SyntheticData {
    SensorGraph graph;
    SpeedSeries series;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg);

} // namespace stwave
