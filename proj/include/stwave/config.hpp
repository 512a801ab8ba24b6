#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stwave/error.hpp"
#include "stwave/graph.hpp"
#include "stwave/model.hpp"

namespace stwave {

enum class KeyType { integer, real, boolean, text, int_list };

struct KeySpec {
    std::string name;
    KeyType type;
    std::string default_value;
    std::string doc;
};

// Flat key=value run configuration with a fixed registry of known keys.
// Precedence: command-line override > config file > built-in default.
class RunConfig {
public:
    RunConfig(); // defaults

    static const std::vector<KeySpec>& registry();

    // `key=value` lines; blank lines and lines starting with # are skipped.
    // Keys must be exact registry names.
    void apply_file(const std::filesystem::path& path);

    // `key` may be the full registry name or any unambiguous suffix at a
    // dot boundary (`lr_decay` resolves to `train.lr_decay`). Ambiguity and
    // unknown names are ConfigErrors; unknown names carry a best-guess hint.
    void apply_override(const std::string& key, const std::string& value);

    bool has(const std::string& name) const;
    int64_t get_int(const std::string& name) const;
    double get_double(const std::string& name) const;
    bool get_bool(const std::string& name) const;
    const std::string& get_string(const std::string& name) const;
    std::vector<int64_t> get_int_list(const std::string& name) const;

    // Full snapshot in registry order, one `key=value` per line.
    std::string serialize() const;
    uint64_t content_hash() const; // FNV-1a over serialize()

    // Derived typed views.
    ModelConfig model_config(int64_t n_nodes) const;
    AdjacencyOptions adjacency_options() const;

private:
    const KeySpec& spec_for(const std::string& name) const;
    void check_value(const KeySpec& spec, const std::string& value) const;

    std::map<std::string, std::string> values_;
};

// Small helper shared with the CLI's suggestion machinery.
size_t levenshtein(const std::string& a, const std::string& b);

} // namespace stwave
