#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stwave/checkpoint.hpp"
#include "stwave/error.hpp"
#include "stwave/graph.hpp"
#include "stwave/rng.hpp"
#include "stwave/tape.hpp"
#include "stwave/tensor.hpp"

namespace stwave {

// Architecture hyperparameters. Channel widths derive from nhid with the
// fixed 1:8:16 ratios the lineage architecture uses, so the single nhid knob
// scales the whole network.
struct ModelConfig {
    int64_t n_nodes = 0;
    int64_t in_features = 2; // speed, time-of-day
    int64_t history = 12;    // T_in
    int64_t horizons = 12;   // T_out
    int64_t n_blocks = 4;
    std::vector<int64_t> dilation_pattern = {1, 2}; // per block
    int64_t kernel_size = 2;
    int64_t nhid = 32;
    int64_t diffusion_order = 2;
    int64_t adaptive_dim = 10;
    SupportsMode supports_mode = SupportsMode::all;
    bool gcn_bypass_skip = false;
    bool layer_affine = true;
    double dropout = 0.3;

    int64_t skip_channels() const { return 8 * nhid; }
    int64_t end_channels() const { return 16 * nhid; }
    int64_t layers_per_block() const { return static_cast<int64_t>(dilation_pattern.size()); }
    int64_t n_layers() const { return n_blocks * layers_per_block(); }
    int64_t layer_dilation(int64_t layer) const {
        return dilation_pattern[static_cast<size_t>(layer % layers_per_block())];
    }
    // 1 + sum over layers of (K-1)*dilation.
    int64_t receptive_field() const {
        int64_t rf = 1;
        for (int64_t l = 0; l < n_layers(); ++l) rf += (kernel_size - 1) * layer_dilation(l);
        return rf;
    }
    bool use_gcn() const { return supports_mode != SupportsMode::none; }
    bool use_adaptive() const {
        return supports_mode == SupportsMode::all || supports_mode == SupportsMode::adaptive_only;
    }
    bool use_fixed_supports() const {
        return supports_mode == SupportsMode::all || supports_mode == SupportsMode::forward_backward;
    }
    // Support slots in enumeration order; subset of {fwd, bwd, adp}.
    std::vector<std::string> support_names() const;

    void validate() const;

    // Flat key=value form (keys use the `model.` namespace); embedded in
    // checkpoints so a model can be reconstructed from the file alone.
    std::map<std::string, std::string> to_kv() const;
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

enum class ParamInit {
    conv_fan_in,      // U(-1/sqrt(fan_in), +1/sqrt(fan_in)), weights and biases alike
    embedding_normal, // N(0, 1/sqrt(adaptive_dim))
    one,
    zero
};

struct ParamSpec {
    std::string name;
    Shape shape;
    ParamInit init = ParamInit::conv_fan_in;
    int64_t fan_in = 1;
};

// Deterministic parameter inventory; allocation, counting, checkpoints and
// gradient bookkeeping all walk this same list.
std::vector<ParamSpec> enumerate_parameters(const ModelConfig& cfg);
int64_t param_count(const ModelConfig& cfg);

template <typename T>
struct ParamStore {
    std::vector<ParamSpec> specs;
    std::vector<Tensor<T>> values;

    static ParamStore init(const ModelConfig& cfg, uint64_t seed) {
        ParamStore st;
        st.specs = enumerate_parameters(cfg);
        st.values.reserve(st.specs.size());
        for (const ParamSpec& s : st.specs) {
            // one independent stream per parameter name: adding or removing a
            // parameter never disturbs the others' draws
            Rng rng = Rng::stream(seed, s.name);
            switch (s.init) {
                case ParamInit::conv_fan_in: {
                    T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(s.fan_in)));
                    st.values.push_back(Tensor<T>::uniform(s.shape, rng, -bound, bound));
                    break;
                }
                case ParamInit::embedding_normal:
                    st.values.push_back(Tensor<T>::normal(
                        s.shape, rng, T(0),
                        static_cast<T>(1.0 / std::sqrt(static_cast<double>(s.shape.back())))));
                    break;
                case ParamInit::one:
                    st.values.push_back(Tensor<T>::full(s.shape, T(1)));
                    break;
                case ParamInit::zero:
                    st.values.push_back(Tensor<T>::zeros(s.shape));
                    break;
            }
        }
        return st;
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& v : values) n += v.size();
        return n;
    }

    int64_t index_of(const std::string& name) const {
        for (size_t i = 0; i < specs.size(); ++i)
            if (specs[i].name == name) return static_cast<int64_t>(i);
        return -1;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        out.specs = specs;
        out.values.reserve(values.size());
        for (const auto& v : values) out.values.push_back(v.template cast<U>());
        return out;
    }
};

// Distance-derived supports, already row-normalized; not tape-bound.
template <typename T>
struct FixedSupports {
    std::optional<Tensor<T>> forward_mat;
    std::optional<Tensor<T>> backward_mat;
};

template <typename T>
Tensor<T> bias_add(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& b) {
    return tape.add(x, tape.reshape(b, {1, b.extent(0), 1, 1}));
}

// tanh(conv_filter(x)) (*) sigmoid(conv_gate(x)), both dilated causal.
template <typename T>
Tensor<T> gated_tcn(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& filter_w,
                    const Tensor<T>& filter_b, const Tensor<T>& gate_w, const Tensor<T>& gate_b,
                    int64_t dilation) {
    Tensor<T> f = bias_add(tape, tape.conv_time(x, filter_w, dilation), filter_b);
    Tensor<T> g = bias_add(tape, tape.conv_time(x, gate_w, dilation), gate_b);
    return tape.mul(tape.tanh(f), tape.sigmoid(g));
}

// The Graph WaveNet network. A model owns its parameter values; forward()
// binds them onto the caller's tape, so gradients are read back through the
// returned `bound` leaves (aligned with params().specs order).
template <typename T>
class GraphWaveNet {
public:
    GraphWaveNet(ModelConfig cfg, uint64_t seed)
        : cfg_(std::move(cfg)), params_(ParamStore<T>::init(cfg_, seed)) {
        cfg_.validate();
    }

    GraphWaveNet(ModelConfig cfg, ParamStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
        auto want = enumerate_parameters(cfg_);
        if (want.size() != params_.specs.size())
            throw ConfigError("model/parameter mismatch: config enumerates " +
                              std::to_string(want.size()) + " tensors, store has " +
                              std::to_string(params_.specs.size()));
        for (size_t i = 0; i < want.size(); ++i) {
            if (want[i].name != params_.specs[i].name)
                throw ConfigError("model/parameter mismatch at slot " + std::to_string(i) +
                                  ": config wants '" + want[i].name + "', store has '" +
                                  params_.specs[i].name + "'");
            if (want[i].shape != params_.values[i].shape())
                throw ConfigError("parameter '" + want[i].name + "' has shape " +
                                  shape_str(params_.values[i].shape()) + " but the config wants " +
                                  shape_str(want[i].shape));
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    struct ForwardResult {
        Tensor<T> prediction;        // (B, N, horizons), in normalized units
        std::vector<Tensor<T>> bound; // tape leaves, aligned with params().specs
    };

    // x: (B, N, history, in_features). `dropout_rng` must be non-null when
    // training with dropout > 0.
    ForwardResult forward(Tape<T>& tape, const Tensor<T>& x, const FixedSupports<T>& fixed,
                          bool training, Rng* dropout_rng) const {
        std::vector<Tensor<T>> bound;
        bound.reserve(params_.values.size());
        for (const auto& v : params_.values) bound.push_back(tape.leaf(v, true));
        return forward_bound(tape, tape.constant(x), std::move(bound), fixed, training,
                             dropout_rng);
    }

    // Same network, but the input and every parameter are already tensors on
    // `tape` (leaves or constants), in params().specs order. This is how the
    // gradient checker drives the whole model through externally owned
    // leaves.
    ForwardResult forward_bound(Tape<T>& tape, const Tensor<T>& x, std::vector<Tensor<T>> bound,
                                const FixedSupports<T>& fixed, bool training,
                                Rng* dropout_rng) const {
        check_input(x);
        if (bound.size() != params_.values.size())
            throw ContractError("forward_bound: got " + std::to_string(bound.size()) +
                                " bound tensors, the model has " +
                                std::to_string(params_.values.size()) + " parameters");
        ForwardResult res;
        res.bound = std::move(bound);
        auto P = [&](const char* name) -> const Tensor<T>& {
            int64_t i = params_.index_of(name);
            if (i < 0) throw ContractError(std::string("parameter '") + name + "' not in store");
            return res.bound[static_cast<size_t>(i)];
        };

        int64_t B = x.extent(0);

        // (B,N,T,F) -> (B,F,N,T), pad to the receptive field
        Tensor<T> h = tape.transpose(x, {0, 3, 1, 2});
        int64_t rf = cfg_.receptive_field();
        if (cfg_.history < rf) h = tape.pad_time_left(h, rf - cfg_.history);
        h = bias_add(tape, tape.conv_time(h, P("input_proj.weight"), 1), P("input_proj.bias"));

        std::vector<Tensor<T>> supports;
        if (cfg_.use_fixed_supports()) {
            if (!fixed.forward_mat || !fixed.backward_mat)
                throw ConfigError("supports_mode '" + std::string(to_string(cfg_.supports_mode)) +
                                  "' needs distance-based transition matrices, none were supplied");
            if (fixed.forward_mat->extent(0) != cfg_.n_nodes)
                throw ConfigError("support matrix is " + shape_str(fixed.forward_mat->shape()) +
                                  " but the model has " + std::to_string(cfg_.n_nodes) + " nodes");
            supports.push_back(tape.constant(*fixed.forward_mat));
            supports.push_back(tape.constant(*fixed.backward_mat));
        }
        if (cfg_.use_adaptive())
            supports.push_back(adaptive_adjacency(tape, P("adaptive.src"), P("adaptive.dst")));

        std::optional<Tensor<T>> skip_agg;
        char nb[96];
        for (int64_t l = 0; l < cfg_.n_layers(); ++l) {
            auto pname = [&](const char* suffix) {
                std::snprintf(nb, sizeof(nb), "layer%lld.%s", static_cast<long long>(l), suffix);
                return std::string(nb);
            };
            int64_t dilation = cfg_.layer_dilation(l);
            Tensor<T> r = gated_tcn(tape, h, P(pname("filter.weight").c_str()),
                                    P(pname("filter.bias").c_str()), P(pname("gate.weight").c_str()),
                                    P(pname("gate.bias").c_str()), dilation);

            Tensor<T> s = bias_add(tape, tape.conv_time(r, P(pname("skip.weight").c_str()), 1),
                                   P(pname("skip.bias").c_str()));
            if (!skip_agg) {
                skip_agg = s;
            } else {
                int64_t keep = s.shape().back();
                int64_t have = skip_agg->shape().back();
                skip_agg = tape.add(s, tape.slice_time(*skip_agg, have - keep, keep));
            }

            Tensor<T> g = [&]() {
                if (!cfg_.use_gcn())
                    return bias_add(tape,
                                    tape.conv_time(r, P(pname("residual.weight").c_str()), 1),
                                    P(pname("residual.bias").c_str()));
                std::vector<Tensor<T>> thetas;
                for (const std::string& sname : cfg_.support_names())
                    for (int64_t p = 1; p <= cfg_.diffusion_order; ++p)
                        thetas.push_back(P(pname(("gcn." + sname + std::to_string(p) + ".weight").c_str())
                                               .c_str()));
                const Tensor<T>& gcn_bias = P(pname("gcn.bias").c_str());
                Tensor<T> out = diffusion_conv<T>(tape, r, supports,
                                                  P(pname("gcn.theta0.weight").c_str()), thetas,
                                                  &gcn_bias, cfg_.diffusion_order);
                if (cfg_.dropout > 0) {
                    if (training && dropout_rng == nullptr)
                        throw ContractError("forward: training with dropout needs an RNG stream");
                    Rng dummy(0);
                    out = tape.dropout(out, cfg_.dropout, training ? *dropout_rng : dummy, training);
                }
                return out;
            }();

            Tensor<T> y = cfg_.gcn_bypass_skip ? tape.add(r, g) : g;
            int64_t keep = y.shape().back();
            int64_t have = h.shape().back();
            h = tape.add(y, tape.slice_time(h, have - keep, keep));
            if (cfg_.layer_affine) {
                h = tape.add(tape.mul(h, tape.reshape(P(pname("affine.scale").c_str()),
                                                      {1, cfg_.nhid, 1, 1})),
                             tape.reshape(P(pname("affine.shift").c_str()), {1, cfg_.nhid, 1, 1}));
            }
        }

        // newest time position only, then the two-conv head
        Tensor<T> out = tape.slice_time(*skip_agg, skip_agg->shape().back() - 1, 1);
        out = tape.relu(out);
        out = tape.relu(bias_add(tape, tape.conv_time(out, P("head.hidden.weight"), 1),
                                 P("head.hidden.bias")));
        out = bias_add(tape, tape.conv_time(out, P("head.out.weight"), 1), P("head.out.bias"));
        // (B, horizons, N, 1) -> (B, N, horizons)
        out = tape.transpose(out, {0, 2, 1, 3});
        res.prediction = tape.reshape(out, {B, cfg_.n_nodes, cfg_.horizons});
        return res;
    }

private:
    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 4)
            throw ShapeError("forward: input must be (B, N, T_in, F), got " + shape_str(x.shape()));
        if (x.extent(1) != cfg_.n_nodes)
            throw ConfigError("forward: input has " + std::to_string(x.extent(1)) +
                              " nodes but the model was built for " + std::to_string(cfg_.n_nodes));
        if (x.extent(2) != cfg_.history)
            throw ShapeError("forward: input has " + std::to_string(x.extent(2)) +
                             " timesteps, config.history is " + std::to_string(cfg_.history));
        if (x.extent(3) != cfg_.in_features)
            throw ShapeError("forward: input has " + std::to_string(x.extent(3)) +
                             " features, config.in_features is " + std::to_string(cfg_.in_features));
    }

    ModelConfig cfg_;
    ParamStore<T> params_;
};

// Checkpoint glue: the config rides along as its key=value text.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_tensors(const ParamStore<T>& st) {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.reserve(st.specs.size());
    for (size_t i = 0; i < st.specs.size(); ++i) out.emplace_back(st.specs[i].name, st.values[i]);
    return out;
}

std::string model_config_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

template <typename T>
void save_model(const std::string& path, const GraphWaveNet<T>& model) {
    save_checkpoint<T>(path, model_config_text(model.config()), named_tensors(model.params()));
}

template <typename T>
GraphWaveNet<T> load_model(const std::string& path) {
    std::string config_text;
    auto tensors = load_checkpoint<T>(path, &config_text);
    ModelConfig cfg = model_config_from_text(config_text);
    ParamStore<T> st;
    st.specs = enumerate_parameters(cfg);
    if (tensors.size() != st.specs.size())
        throw IoError("checkpoint '" + path + "' holds " + std::to_string(tensors.size()) +
                      " tensors but its config enumerates " + std::to_string(st.specs.size()));
    st.values.reserve(st.specs.size());
    for (size_t i = 0; i < st.specs.size(); ++i) {
        if (tensors[i].first != st.specs[i].name)
            throw IoError("checkpoint '" + path + "' record " + std::to_string(i) + " is '" +
                          tensors[i].first + "', expected '" + st.specs[i].name + "'");
        st.values.push_back(std::move(tensors[i].second));
    }
    return GraphWaveNet<T>(cfg, std::move(st));
}

} // namespace stwave
