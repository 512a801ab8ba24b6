#include "stwave/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "stwave/io_util.hpp"

namespace stwave {

const std::vector<KeySpec>& RunConfig::registry() {
    static const std::vector<KeySpec> kRegistry = {
        {"data.speeds", KeyType::text, "", "path to the speed CSV"},
        {"data.distances", KeyType::text, "", "path to the distance matrix file"},
        {"data.zero_replacement", KeyType::boolean, "true",
         "substitute the train-set mean speed for missing (zero) input readings"},
        {"adjacency.threshold_k", KeyType::real, "0.1",
         "sparsity threshold of the Gaussian kernel"},
        {"adjacency.exponent", KeyType::text, "squared_ratio",
         "kernel exponent reading: squared_ratio | ratio_squared_sigma"},
        {"adjacency.threshold_mode", KeyType::text, "subtract",
         "how the threshold is applied: subtract | cutoff"},
        {"model.history", KeyType::integer, "12", "input steps per window"},
        {"model.horizons", KeyType::integer, "12", "predicted steps per window"},
        {"model.n_blocks", KeyType::integer, "4", "stacked block count"},
        {"model.dilation_pattern", KeyType::int_list, "1,2", "per-block dilations"},
        {"model.kernel_size", KeyType::integer, "2", "temporal kernel width"},
        {"model.nhid", KeyType::integer, "40", "residual channel width"},
        {"model.diffusion_order", KeyType::integer, "2", "diffusion steps per support"},
        {"model.adaptive_dim", KeyType::integer, "10", "learned node embedding width"},
        {"model.supports_mode", KeyType::text, "all",
         "graph supports: all | forward_backward | adaptive_only | none"},
        {"model.gcn_bypass_skip", KeyType::boolean, "true",
         "add the pre-graph-conv activation back in after the graph conv"},
        {"model.layer_affine", KeyType::boolean, "true",
         "learnable per-channel scale/shift after each layer"},
        {"model.dropout", KeyType::real, "0.3", "dropout rate on graph conv outputs"},
        {"train.mode", KeyType::text, "scratch", "training curriculum: scratch | pretrain_finetune"},
        {"train.epochs", KeyType::integer, "100", "maximum training epochs"},
        {"train.batch_size", KeyType::integer, "64", "windows per step"},
        {"train.lr", KeyType::real, "0.001", "base learning rate"},
        {"train.lr_decay", KeyType::real, "0.97", "per-epoch learning-rate decay factor"},
        {"train.clip_norm", KeyType::real, "3", "global gradient-norm clip (0 disables)"},
        {"train.weight_decay", KeyType::real, "0.0001", "L2 penalty folded into gradients"},
        {"train.seed", KeyType::integer, "1", "root seed for init, shuffling and dropout"},
        {"train.patience", KeyType::integer, "15",
         "early stop after this many epochs without validation improvement (0 disables)"},
        {"train.horizon_first", KeyType::integer, "0", "first trained horizon (0-based)"},
        {"train.horizon_count", KeyType::integer, "0",
         "trained horizon count (0 = through the last horizon)"},
        {"train.pretrain_horizons", KeyType::integer, "6",
         "horizons scored during the pretraining phase of pretrain_finetune"},
        {"ensemble.split", KeyType::integer, "6",
         "horizons up to this count come from the short-range model, the rest from the long-range "
         "model"},
        {"ablate.seeds", KeyType::integer, "3", "seeds averaged per ablation arm"},
    };
    return kRegistry;
}

RunConfig::RunConfig() {
    for (const KeySpec& s : registry()) values_[s.name] = s.default_value;
}

const KeySpec& RunConfig::spec_for(const std::string& name) const {
    for (const KeySpec& s : registry())
        if (s.name == name) return s;
    throw ContractError("config key '" + name + "' is not in the registry");
}

void RunConfig::check_value(const KeySpec& spec, const std::string& value) const {
    // the shared numeric parsers report DataError; a bad config value is a
    // configuration problem, so rewrap without losing the message
    auto as_config_error = [](auto&& fn) {
        try {
            fn();
        } catch (const DataError& e) {
            throw ConfigError(e.what());
        }
    };
    switch (spec.type) {
        case KeyType::integer:
            as_config_error([&] { parse_int(value, "config key " + spec.name); });
            break;
        case KeyType::real:
            as_config_error([&] { parse_double(value, "config key " + spec.name); });
            break;
        case KeyType::boolean:
            if (value != "true" && value != "false")
                throw ConfigError("config key " + spec.name + " must be true or false, got '" +
                                  value + "'");
            break;
        case KeyType::text:
            break;
        case KeyType::int_list: {
            if (value.empty())
                throw ConfigError("config key " + spec.name + " must list at least one integer");
            size_t pos = 0;
            while (pos <= value.size()) {
                size_t comma = value.find(',', pos);
                if (comma == std::string::npos) comma = value.size();
                as_config_error(
                    [&] { parse_int(value.substr(pos, comma - pos), "config key " + spec.name); });
                pos = comma + 1;
                if (comma == value.size()) break;
            }
            break;
        }
    }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path.string() + "'");
    std::string line;
    int64_t lineno = 0;
    auto trim = [](std::string s) {
        size_t b = s.find_first_not_of(" \t");
        size_t e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + " line " + std::to_string(lineno) +
                              ": expected key=value, got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        auto it = values_.find(key);
        if (it == values_.end()) {
            std::string best;
            size_t best_d = SIZE_MAX;
            for (const KeySpec& s : registry()) {
                size_t d = levenshtein(key, s.name);
                if (d < best_d) {
                    best_d = d;
                    best = s.name;
                }
            }
            throw ConfigError(path.string() + " line " + std::to_string(lineno) +
                              ": unknown config key '" + key + "' (closest match: " + best + ")");
        }
        check_value(spec_for(key), value);
        it->second = value;
    }
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    std::string resolved;
    if (values_.count(key)) {
        resolved = key;
    } else {
        std::vector<std::string> matches;
        for (const KeySpec& s : registry()) {
            if (s.name.size() > key.size() &&
                s.name.compare(s.name.size() - key.size(), key.size(), key) == 0 &&
                s.name[s.name.size() - key.size() - 1] == '.')
                matches.push_back(s.name);
        }
        if (matches.size() == 1) {
            resolved = matches[0];
        } else if (matches.size() > 1) {
            std::string list;
            for (const std::string& m : matches) list += (list.empty() ? "" : ", ") + m;
            throw ConfigError("override '" + key + "' is ambiguous; candidates: " + list);
        } else {
            std::string best;
            size_t best_d = SIZE_MAX;
            for (const KeySpec& s : registry()) {
                size_t d = levenshtein(key, s.name);
                std::string leaf = s.name.substr(s.name.find('.') + 1);
                d = std::min(d, levenshtein(key, leaf));
                if (d < best_d) {
                    best_d = d;
                    best = s.name;
                }
            }
            throw ConfigError("unknown config key '" + key + "' (closest match: " + best + ")");
        }
    }
    check_value(spec_for(resolved), value);
    values_[resolved] = value;
}

bool RunConfig::has(const std::string& name) const { return values_.count(name) != 0; }

int64_t RunConfig::get_int(const std::string& name) const {
    return parse_int(values_.at(name), "config key " + name);
}

double RunConfig::get_double(const std::string& name) const {
    return parse_double(values_.at(name), "config key " + name);
}

bool RunConfig::get_bool(const std::string& name) const { return values_.at(name) == "true"; }

const std::string& RunConfig::get_string(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("config key '" + name + "' is not registered");
    return it->second;
}

std::vector<int64_t> RunConfig::get_int_list(const std::string& name) const {
    const std::string& text = values_.at(name);
    std::vector<int64_t> out;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        out.push_back(parse_int(text.substr(pos, comma - pos), "config key " + name));
        pos = comma + 1;
        if (comma == text.size()) break;
    }
    return out;
}

std::string RunConfig::serialize() const {
    std::ostringstream out;
    for (const KeySpec& s : registry()) out << s.name << '=' << values_.at(s.name) << '\n';
    return out.str();
}

uint64_t RunConfig::content_hash() const {
    std::string text = serialize();
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

ModelConfig RunConfig::model_config(int64_t n_nodes) const {
    ModelConfig m;
    m.n_nodes = n_nodes;
    m.in_features = 2;
    m.history = get_int("model.history");
    m.horizons = get_int("model.horizons");
    m.n_blocks = get_int("model.n_blocks");
    m.dilation_pattern = get_int_list("model.dilation_pattern");
    m.kernel_size = get_int("model.kernel_size");
    m.nhid = get_int("model.nhid");
    m.diffusion_order = get_int("model.diffusion_order");
    m.adaptive_dim = get_int("model.adaptive_dim");
    m.supports_mode = supports_mode_from_string(get_string("model.supports_mode"));
    m.gcn_bypass_skip = get_bool("model.gcn_bypass_skip");
    m.layer_affine = get_bool("model.layer_affine");
    m.dropout = get_double("model.dropout");
    m.validate();
    return m;
}

AdjacencyOptions RunConfig::adjacency_options() const {
    AdjacencyOptions opt;
    opt.threshold_k = get_double("adjacency.threshold_k");
    const std::string& exp = get_string("adjacency.exponent");
    if (exp == "squared_ratio")
        opt.exponent = AdjacencyExponent::squared_ratio;
    else if (exp == "ratio_squared_sigma")
        opt.exponent = AdjacencyExponent::ratio_squared_sigma;
    else
        throw ConfigError("adjacency.exponent must be squared_ratio or ratio_squared_sigma, got '" +
                          exp + "'");
    const std::string& tm = get_string("adjacency.threshold_mode");
    if (tm == "subtract")
        opt.threshold_mode = ThresholdMode::subtract;
    else if (tm == "cutoff")
        opt.threshold_mode = ThresholdMode::cutoff;
    else
        throw ConfigError("adjacency.threshold_mode must be subtract or cutoff, got '" + tm + "'");
    return opt;
}

size_t levenshtein(const std::string& a, const std::string& b) {
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

} // namespace stwave
