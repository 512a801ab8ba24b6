#include "stwave/model.hpp"

#include <cstdio>
#include <sstream>

#include "stwave/io_util.hpp"

namespace stwave {

std::vector<std::string> ModelConfig::support_names() const {
    std::vector<std::string> names;
    if (use_fixed_supports()) {
        names.push_back("fwd");
        names.push_back("bwd");
    }
    if (use_adaptive()) names.push_back("adp");
    return names;
}

void ModelConfig::validate() const {
    auto positive = [](const char* key, int64_t v) {
        if (v <= 0)
            throw ConfigError(std::string("model config: ") + key + " must be positive, got " +
                              std::to_string(v));
    };
    positive("n_nodes", n_nodes);
    positive("in_features", in_features);
    positive("history", history);
    positive("horizons", horizons);
    positive("n_blocks", n_blocks);
    positive("kernel_size", kernel_size);
    positive("nhid", nhid);
    positive("adaptive_dim", adaptive_dim);
    if (dilation_pattern.empty())
        throw ConfigError("model config: dilation_pattern must not be empty");
    for (int64_t d : dilation_pattern) positive("dilation", d);
    if (diffusion_order <= 0 && use_gcn())
        throw ConfigError("model config: diffusion_order must be positive when graph convolution "
                          "is enabled, got " +
                          std::to_string(diffusion_order));
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("model config: dropout must be in [0, 1), got " + std::to_string(dropout));
    // history may exceed the receptive field (extra oldest steps are simply
    // outside every conv path); history shorter than the field is padded.
}

std::vector<ParamSpec> enumerate_parameters(const ModelConfig& cfg) {
    std::vector<ParamSpec> specs;
    auto conv = [&](const std::string& name, int64_t c_out, int64_t c_in, int64_t k) {
        int64_t fan_in = c_in * k;
        specs.push_back({name + ".weight", Shape{c_out, c_in, 1, k}, ParamInit::conv_fan_in, fan_in});
        specs.push_back({name + ".bias", Shape{c_out}, ParamInit::conv_fan_in, fan_in});
    };

    conv("input_proj", cfg.nhid, cfg.in_features, 1);

    if (cfg.use_adaptive()) {
        specs.push_back({"adaptive.src", Shape{cfg.n_nodes, cfg.adaptive_dim},
                         ParamInit::embedding_normal, 0});
        specs.push_back({"adaptive.dst", Shape{cfg.n_nodes, cfg.adaptive_dim},
                         ParamInit::embedding_normal, 0});
    }

    char nb[96];
    for (int64_t l = 0; l < cfg.n_layers(); ++l) {
        auto lname = [&](const char* suffix) {
            std::snprintf(nb, sizeof(nb), "layer%lld.%s", static_cast<long long>(l), suffix);
            return std::string(nb);
        };
        conv(lname("filter"), cfg.nhid, cfg.nhid, cfg.kernel_size);
        conv(lname("gate"), cfg.nhid, cfg.nhid, cfg.kernel_size);
        conv(lname("skip"), cfg.skip_channels(), cfg.nhid, 1);
        // the residual 1x1 conv is always part of the inventory; the forward
        // pass uses it only when graph convolution is disabled
        conv(lname("residual"), cfg.nhid, cfg.nhid, 1);
        if (cfg.use_gcn()) {
            int64_t n_supports = static_cast<int64_t>(cfg.support_names().size());
            int64_t fan_in = cfg.nhid * (1 + n_supports * cfg.diffusion_order);
            specs.push_back({lname("gcn.theta0.weight"), Shape{cfg.nhid, cfg.nhid, 1, 1},
                             ParamInit::conv_fan_in, fan_in});
            for (const std::string& sname : cfg.support_names())
                for (int64_t p = 1; p <= cfg.diffusion_order; ++p)
                    specs.push_back({lname(("gcn." + sname + std::to_string(p) + ".weight").c_str()),
                                     Shape{cfg.nhid, cfg.nhid, 1, 1}, ParamInit::conv_fan_in,
                                     fan_in});
            specs.push_back(
                {lname("gcn.bias"), Shape{cfg.nhid}, ParamInit::conv_fan_in, fan_in});
        }
        if (cfg.layer_affine) {
            specs.push_back({lname("affine.scale"), Shape{cfg.nhid}, ParamInit::one, 0});
            specs.push_back({lname("affine.shift"), Shape{cfg.nhid}, ParamInit::zero, 0});
        }
    }

    conv("head.hidden", cfg.end_channels(), cfg.skip_channels(), 1);
    conv("head.out", cfg.horizons, cfg.end_channels(), 1);
    return specs;
}

int64_t param_count(const ModelConfig& cfg) {
    int64_t n = 0;
    for (const ParamSpec& s : enumerate_parameters(cfg)) n += shape_numel(s.shape);
    return n;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["model.n_nodes"] = std::to_string(n_nodes);
    kv["model.in_features"] = std::to_string(in_features);
    kv["model.history"] = std::to_string(history);
    kv["model.horizons"] = std::to_string(horizons);
    kv["model.n_blocks"] = std::to_string(n_blocks);
    std::ostringstream dil;
    for (size_t i = 0; i < dilation_pattern.size(); ++i) {
        if (i) dil << ',';
        dil << dilation_pattern[i];
    }
    kv["model.dilation_pattern"] = dil.str();
    kv["model.kernel_size"] = std::to_string(kernel_size);
    kv["model.nhid"] = std::to_string(nhid);
    kv["model.diffusion_order"] = std::to_string(diffusion_order);
    kv["model.adaptive_dim"] = std::to_string(adaptive_dim);
    kv["model.supports_mode"] = to_string(supports_mode);
    kv["model.gcn_bypass_skip"] = gcn_bypass_skip ? "true" : "false";
    kv["model.layer_affine"] = layer_affine ? "true" : "false";
    kv["model.dropout"] = format_double(dropout);
    return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("model config text is missing key '" + key + "'");
        return it->second;
    };
    auto geti = [&](const std::string& key) { return parse_int(need(key), key); };
    cfg.n_nodes = geti("model.n_nodes");
    cfg.in_features = geti("model.in_features");
    cfg.history = geti("model.history");
    cfg.horizons = geti("model.horizons");
    cfg.n_blocks = geti("model.n_blocks");
    cfg.dilation_pattern.clear();
    {
        const std::string& text = need("model.dilation_pattern");
        size_t pos = 0;
        while (pos <= text.size()) {
            size_t comma = text.find(',', pos);
            if (comma == std::string::npos) comma = text.size();
            cfg.dilation_pattern.push_back(
                parse_int(text.substr(pos, comma - pos), "model.dilation_pattern"));
            pos = comma + 1;
            if (comma == text.size()) break;
        }
    }
    cfg.kernel_size = geti("model.kernel_size");
    cfg.nhid = geti("model.nhid");
    cfg.diffusion_order = geti("model.diffusion_order");
    cfg.adaptive_dim = geti("model.adaptive_dim");
    cfg.supports_mode = supports_mode_from_string(need("model.supports_mode"));
    auto getb = [&](const std::string& key) {
        const std::string& v = need(key);
        if (v == "true") return true;
        if (v == "false") return false;
        throw ConfigError("model config key '" + key + "' must be true or false, got '" + v + "'");
    };
    cfg.gcn_bypass_skip = getb("model.gcn_bypass_skip");
    cfg.layer_affine = getb("model.layer_affine");
    cfg.dropout = parse_double(need("model.dropout"), "model.dropout");
    cfg.validate();
    return cfg;
}

std::string model_config_text(const ModelConfig& cfg) {
    std::ostringstream out;
    for (const auto& [k, v] : cfg.to_kv()) out << k << '=' << v << '\n';
    return out.str();
}

ModelConfig model_config_from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("malformed model config line (no '='): '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return ModelConfig::from_kv(kv);
}

} // namespace stwave
