#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stwave/error.hpp"
#include "stwave/tape.hpp"
#include "stwave/tensor.hpp"

namespace stwave {

// Road network as a dense matrix of directed driving distances (meters).
// +inf marks an unreachable pair; the diagonal is exactly 0.
struct SensorGraph {
    int64_t n_nodes = 0;
    std::vector<double> distances; // n*n row-major

    double distance(int64_t i, int64_t j) const {
        return distances[static_cast<size_t>(i * n_nodes + j)];
    }
    void validate() const;
};

enum class AdjacencyExponent {
    squared_ratio,      // exp(-(D/sigma)^2), the adopted reading
    ratio_squared_sigma // exp(-D/sigma^2), the literal typeset alternative
};

enum class ThresholdMode {
    subtract, // max(e - k, 0)
    cutoff    // e if e >= k else 0
};

struct AdjacencyOptions {
    double threshold_k = 0.1;
    AdjacencyExponent exponent = AdjacencyExponent::squared_ratio;
    ThresholdMode threshold_mode = ThresholdMode::subtract;
};

// Population standard deviation over finite off-diagonal distances (both
// directions). Throws DataError when no such entries exist or they are all
// identical (sigma would be 0).
double distance_sigma(const SensorGraph& g);

// W_ij from the thresholded Gaussian kernel; unreachable pairs map to 0.
// Under the defaults, W_ii = 1 - k.
Tensor<double> build_adjacency(const SensorGraph& g, const AdjacencyOptions& opt = {});

// (P_forward, P_backward) = (rownorm(W), rownorm(W^T)). A zero row sum is a
// DataError naming the node.
std::pair<Tensor<double>, Tensor<double>> transition_matrices(const Tensor<double>& w);

// Text format: first line n_nodes, then n dense rows, whitespace-delimited,
// `inf` for unreachable pairs.
SensorGraph load_distances(const std::filesystem::path& path);
void write_distances(const std::filesystem::path& path, const SensorGraph& g);

enum class SupportsMode {
    all,              // forward + backward + adaptive
    forward_backward, // distance-based supports only (no learned adjacency)
    adaptive_only,    // learned adjacency only
    none              // no graph convolution at all
};

const char* to_string(SupportsMode m);
SupportsMode supports_mode_from_string(const std::string& s);

// Learned adjacency: row_softmax(relu(src . dst^T)). Differentiable through
// both embeddings.
template <typename T>
Tensor<T> adaptive_adjacency(Tape<T>& tape, const Tensor<T>& src, const Tensor<T>& dst) {
    if (src.rank() != 2 || dst.rank() != 2 || src.extent(0) != dst.extent(0) ||
        src.extent(1) != dst.extent(1))
        throw ShapeError("adaptive_adjacency: embeddings must share an (n,d) shape, got " +
                         shape_str(src.shape()) + " and " + shape_str(dst.shape()));
    Tensor<T> logits = tape.matmul(src, tape.transpose(dst, {1, 0}));
    return tape.softmax(tape.relu(logits), 1);
}

// Diffusion convolution:
//   out = Theta_0 * x + sum_s sum_{p=1..order} Theta_{s,p} * (P_s^p applied to x)
// Powers are produced by iterated application x_p = P_s * x_{p-1}; dense
// matrix powers are never materialized. `thetas` is support-major,
// power-minor and each entry is a (C_out, C_in, 1, 1) kernel.
template <typename T>
Tensor<T> diffusion_conv(Tape<T>& tape, const Tensor<T>& x, std::span<const Tensor<T>> supports,
                         const Tensor<T>& theta0, std::span<const Tensor<T>> thetas,
                         const Tensor<T>* bias, int64_t order) {
    if (order < 0) throw ShapeError("diffusion_conv: order must be >= 0");
    if (thetas.size() != supports.size() * static_cast<size_t>(order))
        throw ShapeError("diffusion_conv: want " +
                         std::to_string(supports.size() * static_cast<size_t>(order)) +
                         " power filters (" + std::to_string(supports.size()) + " supports x order " +
                         std::to_string(order) + "), got " + std::to_string(thetas.size()));
    Tensor<T> out = tape.conv_time(x, theta0, 1);
    for (size_t s = 0; s < supports.size(); ++s) {
        Tensor<T> xp = x;
        for (int64_t p = 1; p <= order; ++p) {
            xp = tape.node_matmul(supports[s], xp);
            out = tape.add(out, tape.conv_time(xp, thetas[s * static_cast<size_t>(order) +
                                                          static_cast<size_t>(p - 1)], 1));
        }
    }
    if (bias) out = tape.add(out, tape.reshape(*bias, {1, bias->extent(0), 1, 1}));
    return out;
}

} // namespace stwave
