#include "stwave/graph.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "stwave/io_util.hpp"

namespace stwave {

void SensorGraph::validate() const {
    if (n_nodes < 1) throw DataError("sensor graph: n_nodes must be >= 1");
    if (static_cast<int64_t>(distances.size()) != n_nodes * n_nodes)
        throw DataError("sensor graph: distance matrix has " + std::to_string(distances.size()) +
                        " entries, want " + std::to_string(n_nodes * n_nodes));
    for (int64_t i = 0; i < n_nodes; ++i) {
        for (int64_t j = 0; j < n_nodes; ++j) {
            double d = distance(i, j);
            if (std::isnan(d))
                throw DataError("sensor graph: NaN distance at (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
            if (d < 0)
                throw DataError("sensor graph: negative distance at (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
            if (i == j && d != 0)
                throw DataError("sensor graph: nonzero self-distance at node " + std::to_string(i));
        }
    }
}

double distance_sigma(const SensorGraph& g) {
    g.validate();
    double sum = 0;
    int64_t count = 0;
    for (int64_t i = 0; i < g.n_nodes; ++i) {
        for (int64_t j = 0; j < g.n_nodes; ++j) {
            if (i == j) continue;
            double d = g.distance(i, j);
            if (!std::isfinite(d)) continue;
            sum += d;
            ++count;
        }
    }
    if (count == 0)
        throw DataError("degenerate graph: no finite off-diagonal distances to compute sigma from");
    double mean = sum / static_cast<double>(count);
    double sq = 0;
    for (int64_t i = 0; i < g.n_nodes; ++i) {
        for (int64_t j = 0; j < g.n_nodes; ++j) {
            if (i == j) continue;
            double d = g.distance(i, j);
            if (!std::isfinite(d)) continue;
            sq += (d - mean) * (d - mean);
        }
    }
    double sigma = std::sqrt(sq / static_cast<double>(count));
    if (sigma <= 0)
        throw DataError("degenerate graph: all pairwise distances identical (sigma = 0)");
    return sigma;
}

Tensor<double> build_adjacency(const SensorGraph& g, const AdjacencyOptions& opt) {
    if (opt.threshold_k < 0 || opt.threshold_k >= 1)
        throw ConfigError("adjacency threshold k must lie in [0,1), got " +
                          std::to_string(opt.threshold_k));
    double sigma = distance_sigma(g);
    int64_t n = g.n_nodes;
    std::vector<double> w(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double d = g.distance(i, j);
            if (!std::isfinite(d)) continue; // unreachable -> weight 0
            double e = opt.exponent == AdjacencyExponent::squared_ratio
                           ? std::exp(-(d / sigma) * (d / sigma))
                           : std::exp(-d / (sigma * sigma));
            double v = opt.threshold_mode == ThresholdMode::subtract
                           ? std::max(e - opt.threshold_k, 0.0)
                           : (e >= opt.threshold_k ? e : 0.0);
            w[static_cast<size_t>(i * n + j)] = v;
        }
    }
    return Tensor<double>::from_data({n, n}, std::move(w));
}

std::pair<Tensor<double>, Tensor<double>> transition_matrices(const Tensor<double>& w) {
    if (w.rank() != 2 || w.extent(0) != w.extent(1))
        throw ShapeError("transition_matrices: adjacency must be square, got " + shape_str(w.shape()));
    int64_t n = w.extent(0);
    auto wd = w.data();
    std::vector<double> fwd(static_cast<size_t>(n * n)), bwd(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i) {
        double rs = 0;
        for (int64_t j = 0; j < n; ++j) rs += wd[static_cast<size_t>(i * n + j)];
        if (rs <= 0)
            throw DataError("transition_matrices: row " + std::to_string(i) +
                            " of W sums to zero (node has no out-edges, not even a self-loop)");
        for (int64_t j = 0; j < n; ++j)
            fwd[static_cast<size_t>(i * n + j)] = wd[static_cast<size_t>(i * n + j)] / rs;
    }
    for (int64_t i = 0; i < n; ++i) {
        double rs = 0;
        for (int64_t j = 0; j < n; ++j) rs += wd[static_cast<size_t>(j * n + i)];
        if (rs <= 0)
            throw DataError("transition_matrices: row " + std::to_string(i) +
                            " of W^T sums to zero (node has no in-edges, not even a self-loop)");
        for (int64_t j = 0; j < n; ++j)
            bwd[static_cast<size_t>(i * n + j)] = wd[static_cast<size_t>(j * n + i)] / rs;
    }
    return {Tensor<double>::from_data({n, n}, std::move(fwd)),
            Tensor<double>::from_data({n, n}, std::move(bwd))};
}

SensorGraph load_distances(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open distance matrix '" + path.string() + "'");
    std::string line;
    int64_t lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(is, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
        }
        return false;
    };
    if (!next_line()) throw DataError("'" + path.string() + "': empty distance file");
    SensorGraph g;
    {
        std::istringstream hs(line);
        if (!(hs >> g.n_nodes) || g.n_nodes < 1)
            throw DataError("'" + path.string() + "' line " + std::to_string(lineno) +
                            ": expected positive node count header");
        std::string extra;
        if (hs >> extra)
            throw DataError("'" + path.string() + "' line " + std::to_string(lineno) +
                            ": unexpected token '" + extra + "' after node count");
    }
    g.distances.reserve(static_cast<size_t>(g.n_nodes * g.n_nodes));
    for (int64_t i = 0; i < g.n_nodes; ++i) {
        if (!next_line())
            throw DataError("'" + path.string() + "': distance matrix ends after " +
                            std::to_string(i) + " of " + std::to_string(g.n_nodes) + " rows");
        std::istringstream rs(line);
        std::string tok;
        for (int64_t j = 0; j < g.n_nodes; ++j) {
            if (!(rs >> tok))
                throw DataError("'" + path.string() + "' line " + std::to_string(lineno) + ": row " +
                                std::to_string(i) + " has only " + std::to_string(j) +
                                " of " + std::to_string(g.n_nodes) + " entries");
            if (tok == "inf" || tok == "Inf" || tok == "INF") {
                g.distances.push_back(std::numeric_limits<double>::infinity());
                continue;
            }
            double v;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc() || p != tok.data() + tok.size())
                throw DataError("'" + path.string() + "' line " + std::to_string(lineno) +
                                ": cannot parse distance '" + tok + "'");
            g.distances.push_back(v);
        }
        std::string extra;
        if (rs >> extra)
            throw DataError("'" + path.string() + "' line " + std::to_string(lineno) + ": row " +
                            std::to_string(i) + " has more than " + std::to_string(g.n_nodes) +
                            " entries");
    }
    g.validate();
    return g;
}

void write_distances(const std::filesystem::path& path, const SensorGraph& g) {
    g.validate();
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << g.n_nodes << "\n";
    for (int64_t i = 0; i < g.n_nodes; ++i) {
        for (int64_t j = 0; j < g.n_nodes; ++j) {
            if (j) os << ' ';
            double d = g.distance(i, j);
            if (std::isinf(d)) os << "inf";
            else os << format_double(d);
        }
        os << "\n";
    }
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

const char* to_string(SupportsMode m) {
    switch (m) {
        case SupportsMode::all: return "all";
        case SupportsMode::forward_backward: return "forward_backward";
        case SupportsMode::adaptive_only: return "adaptive_only";
        case SupportsMode::none: return "none";
    }
    return "?";
}

SupportsMode supports_mode_from_string(const std::string& s) {
    if (s == "all") return SupportsMode::all;
    if (s == "forward_backward") return SupportsMode::forward_backward;
    if (s == "adaptive_only") return SupportsMode::adaptive_only;
    if (s == "none") return SupportsMode::none;
    throw ConfigError("unknown supports mode '" + s +
                      "' (expected all | forward_backward | adaptive_only | none)");
}

} // namespace stwave
