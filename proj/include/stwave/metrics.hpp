#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "stwave/data.hpp"
#include "stwave/error.hpp"
#include "stwave/tape.hpp"
#include "stwave/tensor.hpp"

namespace stwave {

// Per-horizon error statistics over observed targets only: a target of
// exactly 0 means "sensor reported nothing" and contributes neither error
// nor count. Horizons with no observed target at all are reported as NaN and
// excluded from the means.
struct MetricReport {
    std::vector<double> mae;          // per horizon; NaN where undefined
    std::vector<double> rmse;         // per horizon; NaN where undefined
    std::vector<double> mape;         // per horizon, as a fraction; NaN where undefined
    std::vector<int64_t> valid_count; // observed targets per horizon
    double mean_mae = std::numeric_limits<double>::quiet_NaN();
    double mean_rmse = std::numeric_limits<double>::quiet_NaN();
    double mean_mape = std::numeric_limits<double>::quiet_NaN();

    int64_t horizons() const { return static_cast<int64_t>(mae.size()); }
};

class MetricAccumulator {
public:
    explicit MetricAccumulator(int64_t horizons)
        : abs_sum_(static_cast<size_t>(horizons), 0.0),
          sq_sum_(static_cast<size_t>(horizons), 0.0),
          ape_sum_(static_cast<size_t>(horizons), 0.0),
          count_(static_cast<size_t>(horizons), 0) {
        if (horizons <= 0) throw ContractError("MetricAccumulator: horizons must be positive");
    }

    // pred_raw and y_raw are (B, N, H) in raw speed units.
    template <typename T>
    void add(const Tensor<T>& pred_raw, const Tensor<T>& y_raw) {
        if (pred_raw.shape() != y_raw.shape() || pred_raw.rank() != 3)
            throw ShapeError("MetricAccumulator: want matching (B,N,H) tensors, got " +
                             shape_str(pred_raw.shape()) + " and " + shape_str(y_raw.shape()));
        int64_t H = pred_raw.extent(2);
        if (H != static_cast<int64_t>(abs_sum_.size()))
            throw ShapeError("MetricAccumulator: tensors have " + std::to_string(H) +
                             " horizons, accumulator has " + std::to_string(abs_sum_.size()));
        auto p = pred_raw.data();
        auto y = y_raw.data();
        int64_t rows = pred_raw.extent(0) * pred_raw.extent(1);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t h = 0; h < H; ++h) {
                double target = static_cast<double>(y[static_cast<size_t>(r * H + h)]);
                if (target == 0.0) continue;
                double err = static_cast<double>(p[static_cast<size_t>(r * H + h)]) - target;
                abs_sum_[static_cast<size_t>(h)] += std::fabs(err);
                sq_sum_[static_cast<size_t>(h)] += err * err;
                ape_sum_[static_cast<size_t>(h)] += std::fabs(err) / std::fabs(target);
                ++count_[static_cast<size_t>(h)];
            }
    }

    MetricReport report() const {
        MetricReport rep;
        size_t H = abs_sum_.size();
        rep.mae.assign(H, std::numeric_limits<double>::quiet_NaN());
        rep.rmse.assign(H, std::numeric_limits<double>::quiet_NaN());
        rep.mape.assign(H, std::numeric_limits<double>::quiet_NaN());
        rep.valid_count = count_;
        double s_mae = 0, s_rmse = 0, s_mape = 0;
        int64_t defined = 0;
        for (size_t h = 0; h < H; ++h) {
            if (count_[h] == 0) continue;
            double c = static_cast<double>(count_[h]);
            rep.mae[h] = abs_sum_[h] / c;
            rep.rmse[h] = std::sqrt(sq_sum_[h] / c);
            rep.mape[h] = ape_sum_[h] / c;
            s_mae += rep.mae[h];
            s_rmse += rep.rmse[h];
            s_mape += rep.mape[h];
            ++defined;
        }
        if (defined > 0) {
            rep.mean_mae = s_mae / static_cast<double>(defined);
            rep.mean_rmse = s_rmse / static_cast<double>(defined);
            rep.mean_mape = s_mape / static_cast<double>(defined);
        }
        return rep;
    }

private:
    std::vector<double> abs_sum_;
    std::vector<double> sq_sum_;
    std::vector<double> ape_sum_;
    std::vector<int64_t> count_;
};

// Training loss: masked MAE over the horizon subset [h_first, h_first+h_count),
// averaged over observed targets. The prediction is in normalized units and is
// mapped back to speeds on the tape so gradients flow through the scaling.
// The mask enters as a constant tensor already divided by the observed count,
// so loss = sum(|denorm(pred) - y| * mask_norm).
template <typename T>
Tensor<T> masked_mae_loss(Tape<T>& tape, const Tensor<T>& pred_norm, const Tensor<T>& y_raw,
                          const Scaler& scaler, int64_t h_first, int64_t h_count) {
    if (pred_norm.rank() != 3 || pred_norm.shape() != y_raw.shape())
        throw ShapeError("masked_mae_loss: want matching (B,N,H) tensors, got " +
                         shape_str(pred_norm.shape()) + " and " + shape_str(y_raw.shape()));
    int64_t H = pred_norm.extent(2);
    if (h_first < 0 || h_count < 1 || h_first + h_count > H)
        throw ConfigError("masked_mae_loss: horizon subset [" + std::to_string(h_first) + ", " +
                          std::to_string(h_first + h_count) + ") does not fit in " +
                          std::to_string(H) + " horizons");
    auto y = y_raw.data();
    int64_t total = y_raw.size();
    int64_t valid = 0;
    for (int64_t i = 0; i < total; ++i) {
        int64_t h = i % H;
        if (h >= h_first && h < h_first + h_count && y[static_cast<size_t>(i)] != T(0)) ++valid;
    }
    if (valid == 0)
        throw DataError("masked_mae_loss: no observed targets in the scored horizon subset");
    std::vector<T> mask(static_cast<size_t>(total), T(0));
    T inv = static_cast<T>(1.0 / static_cast<double>(valid));
    for (int64_t i = 0; i < total; ++i) {
        int64_t h = i % H;
        if (h >= h_first && h < h_first + h_count && y[static_cast<size_t>(i)] != T(0))
            mask[static_cast<size_t>(i)] = inv;
    }
    Tensor<T> pred_raw = tape.affine(pred_norm, scaler.stdev, scaler.mean);
    Tensor<T> diff = tape.abs(tape.sub(pred_raw, tape.constant(y_raw)));
    Tensor<T> weighted =
        tape.mul(diff, tape.constant(Tensor<T>::from_data(y_raw.shape(), std::move(mask))));
    return tape.sum(weighted);
}

} // namespace stwave
