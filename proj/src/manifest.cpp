#include "stwave/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <system_error>

#include <json.hpp>

#include "stwave/error.hpp"

namespace stwave {

void save_manifest(const std::string& path, const Manifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["args"] = m.args;
    j["config_text"] = m.config_text;
    j["config_hash"] = m.config_hash;
    j["seed"] = m.seed;
    j["tool_version"] = m.tool_version;
    j["started"] = m.started;
    j["finished"] = m.finished;
    j["exit_status"] = m.exit_status;

    std::filesystem::path p(path);
    std::error_code ec;
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec)
            throw IoError("cannot create directory '" + p.parent_path().string() +
                          "': " + ec.message());
    }
    std::filesystem::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
        os << j.dump(2) << '\n';
        os.flush();
        if (!os) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, p, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path + "': " + ec.message());
}

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open manifest '" + path + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + path + "' is not valid JSON: " + e.what());
    }
    Manifest m;
    try {
        m.command = j.at("command").get<std::string>();
        m.args = j.at("args").get<std::vector<std::string>>();
        m.config_text = j.at("config_text").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.seed = j.at("seed").get<uint64_t>();
        m.tool_version = j.at("tool_version").get<std::string>();
        m.started = j.at("started").get<std::string>();
        m.finished = j.at("finished").get<std::string>();
        m.exit_status = j.at("exit_status").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + path + "' is missing fields: " + e.what());
    }
    return m;
}

} // namespace stwave
