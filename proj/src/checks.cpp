#include "stwave/checks.hpp"

#include <cstdio>
#include <functional>
#include <utility>

#include "stwave/error.hpp"
#include "stwave/gradcheck.hpp"
#include "stwave/graph.hpp"
#include "stwave/metrics.hpp"
#include "stwave/model.hpp"
#include "stwave/rng.hpp"

namespace stwave {

namespace {

using Leaves = std::vector<Tensor<double>>;
using Fn = std::function<Tensor<double>(Tape<double>&, const Leaves&)>;
using InputsFn = std::function<NamedInputs(int)>;

Rng case_rng(const std::string& name, int attempt) {
    return Rng::stream(9001, "gradcheck." + name, {static_cast<uint64_t>(attempt)});
}

// Project a tensor to a scalar through fixed pseudo-random weights so every
// output coordinate carries a distinct gradient signal.
Tensor<double> weighted_sum(Tape<double>& tape, const Tensor<double>& x,
                            const std::string& name) {
    Rng rng = Rng::stream(4242, "gradcheck.readout." + name, {});
    Tensor<double> w = Tensor<double>::uniform(x.shape(), rng, 0.5, 1.5);
    return tape.sum(tape.mul(x, tape.constant(w)));
}

struct CaseDef {
    std::string name;
    double tol;
    InputsFn inputs;
    Fn f;
};

CheckCase run_case(const CaseDef& def, const GradCheckOptions& opt) {
    GradCheckReport rep = grad_check(opt, def.inputs, def.f);
    CheckCase out;
    out.name = def.name;
    out.max_rel_err = rep.max_rel_err;
    out.tol = def.tol;
    out.passed = rep.passed(def.tol);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "worst %s, %lld coords, %d attempt(s)",
                  rep.worst_site.c_str(), static_cast<long long>(rep.coords_checked),
                  rep.attempts_used);
    out.detail = buf;
    return out;
}

NamedInputs uniform_inputs(const std::string& name, int attempt,
                           std::vector<std::pair<std::string, Shape>> shapes, double lo = -1.5,
                           double hi = 1.5) {
    Rng rng = case_rng(name, attempt);
    NamedInputs out;
    for (auto& [n, shape] : shapes) out.emplace_back(n, Tensor<double>::uniform(shape, rng, lo, hi));
    return out;
}

std::vector<CaseDef> ops_cases() {
    std::vector<CaseDef> cases;
    auto add_case = [&](std::string name, std::vector<std::pair<std::string, Shape>> shapes,
                        Fn f, double lo = -1.5, double hi = 1.5, double tol = 1e-5) {
        std::string n = name;
        cases.push_back(CaseDef{std::move(name), tol,
                                [n, shapes, lo, hi](int attempt) {
                                    return uniform_inputs(n, attempt, shapes, lo, hi);
                                },
                                std::move(f)});
    };

    add_case("add.same", {{"a", {2, 3, 4}}, {"b", {2, 3, 4}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.add(v[0], v[1]), "add.same");
             });
    add_case("add.broadcast", {{"a", {2, 3, 4}}, {"b", {1, 3, 1}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.add(v[0], v[1]), "add.broadcast");
             });
    add_case("sub.broadcast", {{"a", {2, 3, 4}}, {"b", {2, 1, 4}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.sub(v[0], v[1]), "sub.broadcast");
             });
    add_case("mul.same", {{"a", {3, 5}}, {"b", {3, 5}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.mul(v[0], v[1]), "mul.same");
             });
    add_case("mul.broadcast", {{"a", {2, 3, 4}}, {"b", {1, 3, 1}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.mul(v[0], v[1]), "mul.broadcast");
             });
    add_case("relu", {{"x", {3, 7}}},
             [](Tape<double>& t, const Leaves& v) { return weighted_sum(t, t.relu(v[0]), "relu"); });
    add_case("abs", {{"x", {3, 7}}},
             [](Tape<double>& t, const Leaves& v) { return weighted_sum(t, t.abs(v[0]), "abs"); });
    add_case("sigmoid", {{"x", {3, 7}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.sigmoid(v[0]), "sigmoid");
             });
    add_case("tanh", {{"x", {3, 7}}},
             [](Tape<double>& t, const Leaves& v) { return weighted_sum(t, t.tanh(v[0]), "tanh"); });
    add_case("affine", {{"x", {4, 5}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.affine(v[0], 1.7, -0.3), "affine");
             });
    add_case("softmax.axis0", {{"x", {3, 5}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.softmax(v[0], 0), "softmax.axis0");
             });
    add_case("softmax.axis1", {{"x", {3, 5}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.softmax(v[0], 1), "softmax.axis1");
             });
    add_case("matmul", {{"a", {3, 4}}, {"b", {4, 5}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.matmul(v[0], v[1]), "matmul");
             });
    add_case("conv_time.d1", {{"x", {2, 3, 2, 7}}, {"w", {4, 3, 1, 2}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.conv_time(v[0], v[1], 1), "conv_time.d1");
             });
    add_case("conv_time.d2", {{"x", {2, 3, 2, 9}}, {"w", {4, 3, 1, 3}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.conv_time(v[0], v[1], 2), "conv_time.d2");
             });
    add_case("conv_time.k1", {{"x", {2, 3, 2, 5}}, {"w", {4, 3, 1, 1}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.conv_time(v[0], v[1], 1), "conv_time.k1");
             });
    add_case("node_matmul", {{"p", {4, 4}}, {"x", {2, 3, 4, 5}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.node_matmul(v[0], v[1]), "node_matmul");
             });
    add_case("pad_time_left", {{"x", {2, 3, 2, 4}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.pad_time_left(v[0], 3), "pad_time_left");
             });
    add_case("slice_time", {{"x", {2, 3, 2, 8}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.slice_time(v[0], 2, 4), "slice_time");
             });
    add_case("reshape", {{"x", {2, 3, 4}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.reshape(v[0], {4, 6}), "reshape");
             });
    add_case("transpose", {{"x", {2, 3, 4, 5}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.transpose(v[0], {0, 2, 1, 3}), "transpose");
             });
    add_case("concat", {{"a", {2, 3, 4}}, {"b", {2, 2, 4}}},
             [](Tape<double>& t, const Leaves& v) {
                 return weighted_sum(t, t.concat({v[0], v[1]}, 1), "concat");
             });
    add_case("sum", {{"x", {3, 5}}},
             [](Tape<double>& t, const Leaves& v) { return t.sum(v[0]); });
    add_case("mean", {{"x", {3, 5}}},
             [](Tape<double>& t, const Leaves& v) { return t.mean(v[0]); });
    { // dropout: the mask must be identical on every evaluation of f, so the
      // mask stream is keyed by the attempt index alone.
        auto holder = std::make_shared<int>(0);
        cases.push_back(CaseDef{
            "dropout", 1e-5,
            [holder](int attempt) {
                *holder = attempt;
                return uniform_inputs("dropout", attempt, {{"x", {3, 6}}});
            },
            [holder](Tape<double>& t, const Leaves& v) {
                Rng mask = Rng::stream(555, "gradcheck.dropout.mask",
                                       {static_cast<uint64_t>(*holder)});
                return weighted_sum(t, t.dropout(v[0], 0.4, mask, true), "dropout");
            }});
    }
    return cases;
}

std::vector<CaseDef> layers_cases() {
    std::vector<CaseDef> cases;

    cases.push_back(CaseDef{
        "gated_tcn", 1e-5,
        [](int attempt) {
            return uniform_inputs("gated_tcn", attempt,
                                  {{"x", {2, 3, 2, 6}},
                                   {"filter.w", {3, 3, 1, 2}},
                                   {"filter.b", {3}},
                                   {"gate.w", {3, 3, 1, 2}},
                                   {"gate.b", {3}}},
                                  -0.8, 0.8);
        },
        [](Tape<double>& t, const Leaves& v) {
            return weighted_sum(t, gated_tcn(t, v[0], v[1], v[2], v[3], v[4], 2), "gated_tcn");
        }});

    cases.push_back(CaseDef{
        "diffusion_conv", 1e-5,
        [](int attempt) {
            Rng rng = case_rng("diffusion_conv", attempt);
            NamedInputs in;
            in.emplace_back("x", Tensor<double>::uniform({2, 3, 4, 5}, rng, -1.0, 1.0));
            in.emplace_back("theta0", Tensor<double>::uniform({3, 3, 1, 1}, rng, -0.7, 0.7));
            for (int s = 0; s < 2; ++s)
                for (int p = 1; p <= 2; ++p)
                    in.emplace_back("theta" + std::to_string(s) + "." + std::to_string(p),
                                    Tensor<double>::uniform({3, 3, 1, 1}, rng, -0.7, 0.7));
            in.emplace_back("bias", Tensor<double>::uniform({3}, rng, -0.5, 0.5));
            return in;
        },
        [](Tape<double>& t, const Leaves& v) {
            // Two fixed row-stochastic supports (constants, not leaves).
            Rng srng = Rng::stream(606, "gradcheck.diffusion.supports", {});
            auto make_support = [&]() {
                std::vector<double> m(16);
                for (int i = 0; i < 4; ++i) {
                    double row = 0;
                    for (int j = 0; j < 4; ++j) {
                        m[static_cast<size_t>(i * 4 + j)] = srng.uniform(0.05, 1.0);
                        row += m[static_cast<size_t>(i * 4 + j)];
                    }
                    for (int j = 0; j < 4; ++j) m[static_cast<size_t>(i * 4 + j)] /= row;
                }
                return Tensor<double>::from_data({4, 4}, std::move(m));
            };
            std::vector<Tensor<double>> supports = {t.constant(make_support()),
                                                    t.constant(make_support())};
            std::vector<Tensor<double>> thetas = {v[2], v[3], v[4], v[5]};
            Tensor<double> out = diffusion_conv<double>(t, v[0], supports, v[1], thetas, &v[6], 2);
            return weighted_sum(t, out, "diffusion_conv");
        }});

    cases.push_back(CaseDef{
        "adaptive_adjacency", 1e-5,
        [](int attempt) {
            return uniform_inputs("adaptive_adjacency", attempt,
                                  {{"src", {4, 3}}, {"dst", {4, 3}}, {"x", {2, 3, 4, 5}}}, -1.0,
                                  1.0);
        },
        [](Tape<double>& t, const Leaves& v) {
            Tensor<double> adj = adaptive_adjacency(t, v[0], v[1]);
            return weighted_sum(t, t.node_matmul(adj, v[2]), "adaptive_adjacency");
        }});

    cases.push_back(CaseDef{
        "layer_affine", 1e-5,
        [](int attempt) {
            return uniform_inputs("layer_affine", attempt,
                                  {{"x", {2, 3, 4, 5}}, {"scale", {3}}, {"shift", {3}}});
        },
        [](Tape<double>& t, const Leaves& v) {
            Tensor<double> h = t.add(t.mul(v[0], t.reshape(v[1], {1, 3, 1, 1})),
                                     t.reshape(v[2], {1, 3, 1, 1}));
            return weighted_sum(t, h, "layer_affine");
        }});

    cases.push_back(CaseDef{
        "bias_add", 1e-5,
        [](int attempt) {
            return uniform_inputs("bias_add", attempt, {{"x", {2, 3, 4, 5}}, {"b", {3}}});
        },
        [](Tape<double>& t, const Leaves& v) {
            return weighted_sum(t, bias_add(t, v[0], v[1]), "bias_add");
        }});

    cases.push_back(CaseDef{
        "masked_mae_loss", 1e-5,
        [](int attempt) {
            Rng rng = case_rng("masked_mae_loss", attempt);
            NamedInputs in;
            in.emplace_back("pred", Tensor<double>::uniform({2, 3, 4}, rng, -1.0, 1.0));
            return in;
        },
        [](Tape<double>& t, const Leaves& v) {
            // Fixed targets with a few structural zeros (masked out).
            std::vector<double> y = {55, 0,  61, 48, 57, 0,  63, 52, 49, 58, 60, 0,
                                     51, 62, 0,  47, 53, 59, 46, 64, 50, 0,  56, 54};
            Tensor<double> y_raw = Tensor<double>::from_data({2, 3, 4}, std::move(y));
            Scaler sc{54.0, 6.0};
            return masked_mae_loss<double>(t, v[0], y_raw, sc, 0, 4);
        }});

    return cases;
}

std::vector<CaseDef> model_cases() {
    ModelConfig cfg;
    cfg.n_nodes = 4;
    cfg.in_features = 2;
    cfg.history = 4;
    cfg.horizons = 3;
    cfg.n_blocks = 1;
    cfg.dilation_pattern = {1, 2};
    cfg.kernel_size = 2;
    cfg.nhid = 4;
    cfg.diffusion_order = 2;
    cfg.adaptive_dim = 3;
    cfg.supports_mode = SupportsMode::all;
    cfg.gcn_bypass_skip = true;
    cfg.layer_affine = true;
    cfg.dropout = 0.0; // a fixed mask is a constant linear map; checked at op level
    cfg.validate();

    std::vector<CaseDef> cases;
    cases.push_back(CaseDef{
        "model.gwnv2", 1e-4,
        [cfg](int attempt) {
            Rng xr = case_rng("model.x", attempt);
            NamedInputs in;
            in.emplace_back("x", Tensor<double>::uniform({2, cfg.n_nodes, cfg.history, 2}, xr,
                                                         -1.2, 1.2));
            ParamStore<double> st =
                ParamStore<double>::init(cfg, 1000 + static_cast<uint64_t>(attempt));
            for (size_t i = 0; i < st.specs.size(); ++i)
                in.emplace_back(st.specs[i].name, st.values[i]);
            return in;
        },
        [cfg](Tape<double>& t, const Leaves& v) {
            ParamStore<double> st = ParamStore<double>::init(cfg, 1);
            GraphWaveNet<double> model(cfg, st);
            // Fixed row-stochastic supports from a small line graph.
            SensorGraph g;
            g.n_nodes = 4;
            g.distances = {0,    800,  1600, 2400, 800, 0,    800,  1600,
                           1600, 800,  0,    800,  2400, 1600, 800,  0};
            AdjacencyOptions opt;
            Tensor<double> w = build_adjacency(g, opt);
            auto [fm, bm] = transition_matrices(w);
            FixedSupports<double> fixed;
            fixed.forward_mat = fm;
            fixed.backward_mat = bm;
            std::vector<Tensor<double>> bound(v.begin() + 1, v.end());
            auto res = model.forward_bound(t, v[0], std::move(bound), fixed, false, nullptr);
            return weighted_sum(t, res.prediction, "model.gwnv2");
        }});
    return cases;
}

} // namespace

std::vector<CheckCase> gradcheck_suite(const std::string& level) {
    std::vector<CaseDef> defs;
    if (level == "ops") {
        defs = ops_cases();
    } else if (level == "layers") {
        defs = layers_cases();
    } else if (level == "model") {
        defs = model_cases();
    } else {
        throw ConfigError("unknown gradcheck level '" + level +
                          "' (expected ops, layers, or model)");
    }
    GradCheckOptions opt;
    std::vector<CheckCase> out;
    out.reserve(defs.size());
    for (const auto& d : defs) out.push_back(run_case(d, opt));
    return out;
}

bool all_passed(const std::vector<CheckCase>& cases) {
    for (const auto& c : cases) {
        if (!c.passed) return false;
    }
    return true;
}

} // namespace stwave
