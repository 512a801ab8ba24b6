#include "stwave/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stwave/checkpoint.hpp"
#include "stwave/checks.hpp"
#include "stwave/config.hpp"
#include "stwave/data.hpp"
#include "stwave/error.hpp"
#include "stwave/graph.hpp"
#include "stwave/io_util.hpp"
#include "stwave/manifest.hpp"
#include "stwave/metrics.hpp"
#include "stwave/model.hpp"
#include "stwave/train.hpp"

namespace stwave {
namespace {

constexpr const char* kUsage =
    "usage: stwave <command> [options]\n"
    "\n"
    "commands:\n"
    "  generate   synthesize a sensor network and speed series\n"
    "  train      train a model (scratch or pretrain_finetune)\n"
    "  eval       evaluate a checkpoint on a dataset split\n"
    "  ensemble   splice two checkpoints at a horizon boundary and evaluate\n"
    "  ablate     run an ablation suite (mods, graph, history)\n"
    "  gradcheck  finite-difference gradient verification (ops, layers, model)\n"
    "  rerun      re-execute a finished run from its manifest.json\n"
    "  help       show this message\n"
    "\n"
    "run 'stwave <command> --help' for command options.\n"
    "configuration: --config FILE plus --key=value overrides (e.g.\n"
    "--model.nhid=8); unique key suffixes work too (--nhid=8).\n"
    "environment: STWAVE_THREADS must be unset or 1 (single-threaded build).\n"
    "exit codes: 0 ok, 1 usage/config/data, 2 numerical failure, 3 I/O failure.\n";

std::string hex64(uint64_t v) {
    char b[17];
    std::snprintf(b, sizeof(b), "%016llx", static_cast<unsigned long long>(v));
    return b;
}

uint64_t text_hash(const std::string& s) {
    return ckpt::fnv1a(reinterpret_cast<const std::byte*>(s.data()), s.size());
}

std::string now_stamp() { return format_timestamp(static_cast<int64_t>(std::time(nullptr))); }

void check_threads_env() {
    const char* v = std::getenv("STWAVE_THREADS");
    if (v == nullptr) return;
    std::string s(v);
    if (s.empty() || s == "1") return;
    throw ConfigError("STWAVE_THREADS=" + s +
                      " is not supported: this build is single-threaded and fully "
                      "deterministic; unset it or set it to 1");
}

int code_for(const Error& e) {
    if (dynamic_cast<const IoError*>(&e) != nullptr) return 3;
    if (dynamic_cast<const NumericalFault*>(&e) != nullptr) return 2;
    return 1;
}

// A run directory plus its manifest lifecycle: written once when the run
// starts (exit_status -1) and rewritten when it ends.
struct RunDir {
    std::filesystem::path dir;
    Manifest manifest;
    bool begun = false;

    void begin(const std::string& command, std::vector<std::string> args, std::string config_text,
               uint64_t seed) {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create run directory '" + dir.string() + "': " + ec.message());
        manifest.command = command;
        manifest.args = std::move(args);
        manifest.config_text = std::move(config_text);
        manifest.config_hash = hex64(text_hash(manifest.config_text));
        manifest.seed = seed;
        manifest.started = now_stamp();
        manifest.finished.clear();
        manifest.exit_status = -1;
        save_manifest((dir / "manifest.json").string(), manifest);
        begun = true;
    }

    void finish(int status) {
        if (!begun) return;
        manifest.finished = now_stamp();
        manifest.exit_status = status;
        save_manifest((dir / "manifest.json").string(), manifest);
    }
};

template <typename F>
int guarded(RunDir* rd, F&& body) {
    try {
        int code = body();
        if (rd != nullptr) rd->finish(code);
        return code;
    } catch (const Error& e) {
        int code = code_for(e);
        std::fprintf(stderr, "error: %s\n", e.what());
        if (rd != nullptr && rd->begun) {
            try {
                rd->finish(code);
            } catch (...) { /* the original error wins */
            }
        }
        return code;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        if (rd != nullptr && rd->begun) {
            try {
                rd->finish(1);
            } catch (...) {
            }
        }
        return 1;
    }
}

void parse_app(CLI::App& app, const std::string& name, const std::vector<std::string>& args) {
    std::vector<std::string> storage;
    storage.reserve(args.size() + 1);
    storage.push_back("stwave " + name);
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(storage.size());
    for (const auto& s : storage) argv.push_back(s.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
}

int cli11_exit(CLI::App& app, const CLI::ParseError& e) {
    app.exit(e); // prints the help text or the parse error
    return e.get_exit_code() == 0 ? 0 : 1;
}

void apply_overrides(RunConfig& rc, const std::vector<std::string>& extras) {
    for (const std::string& raw : extras) {
        std::string s = raw;
        if (s.rfind("--", 0) == 0) {
            s = s.substr(2);
        } else if (!s.empty() && s[0] == '-') {
            throw ConfigError("unrecognized option '" + raw + "'");
        }
        auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("override '" + raw + "' must look like --key=value");
        rc.apply_override(s.substr(0, eq), s.substr(eq + 1));
    }
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& extras) {
    RunConfig rc;
    if (!config_path.empty()) rc.apply_file(config_path);
    apply_overrides(rc, extras);
    return rc;
}

// Manifest args never carry the target directory: a rerun gets a fresh one.
std::vector<std::string> strip_dir_flags(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    for (size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--workdir" || a == "--out") {
            ++i;
            continue;
        }
        if (a.rfind("--workdir=", 0) == 0 || a.rfind("--out=", 0) == 0) continue;
        out.push_back(a);
    }
    return out;
}

std::filesystem::path default_workdir(const std::string& command, const std::string& config_text,
                                      const std::vector<std::string>& args, uint64_t seed) {
    std::string key = config_text;
    key.push_back('\0');
    for (const auto& a : args) {
        key += a;
        key.push_back('\0');
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s-%s-s%llu", command.c_str(),
                  hex64(text_hash(key)).substr(0, 8).c_str(),
                  static_cast<unsigned long long>(seed));
    return std::filesystem::path("runs") / buf;
}

void write_text_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + p.string() + "' for writing");
    os << content;
    os.flush();
    if (!os) throw IoError("write failed for '" + p.string() + "'");
}

SpeedSeries load_series(const RunConfig& rc) {
    const std::string& path = rc.get_string("data.speeds");
    if (path.empty())
        throw ConfigError("data.speeds must point at a speeds CSV (set it in the config file or "
                          "with --data.speeds=PATH)");
    return load_speed_csv(path);
}

std::optional<SensorGraph> maybe_graph(const RunConfig& rc) {
    const std::string& path = rc.get_string("data.distances");
    if (path.empty()) return std::nullopt;
    return load_distances(path);
}

FixedSupports<float> supports_for(const RunConfig& rc, const std::optional<SensorGraph>& g,
                                  SupportsMode mode, int64_t n_nodes) {
    bool needs = mode == SupportsMode::all || mode == SupportsMode::forward_backward;
    if (!needs) return {};
    if (!g)
        throw ConfigError("model.supports_mode '" + std::string(to_string(mode)) +
                          "' needs data.distances to point at a distance file");
    if (g->n_nodes != n_nodes)
        throw ConfigError("distance file describes " + std::to_string(g->n_nodes) +
                          " nodes but the speed data has " + std::to_string(n_nodes));
    return build_fixed_supports(&*g, rc.adjacency_options(), mode);
}

SplitSpan split_by_name(const Dataset& ds, const std::string& name) {
    if (name == "train") return ds.split.train;
    if (name == "val") return ds.split.val;
    if (name == "test") return ds.split.test;
    throw ConfigError("unknown split '" + name + "' (expected train, val, or test)");
}

void write_report_records(std::ostream& os, const std::string& split, const MetricReport& rep) {
    for (int64_t h = 0; h < rep.horizons(); ++h) {
        auto hi = static_cast<size_t>(h);
        os << split << ',' << (h + 1) << ",mae," << format_double(rep.mae[hi]) << '\n';
        os << split << ',' << (h + 1) << ",rmse," << format_double(rep.rmse[hi]) << '\n';
        os << split << ',' << (h + 1) << ",mape," << format_double(rep.mape[hi]) << '\n';
        os << split << ',' << (h + 1) << ",count," << rep.valid_count[hi] << '\n';
    }
    os << split << ",mean,mae," << format_double(rep.mean_mae) << '\n';
    os << split << ",mean,rmse," << format_double(rep.mean_rmse) << '\n';
    os << split << ",mean,mape," << format_double(rep.mean_mape) << '\n';
}

void append_report_table(std::string& out, const std::string& title, const MetricReport& rep) {
    char line[160];
    out += "== " + title + " ==\n";
    out += "horizon       MAE      RMSE     MAPE%        n\n";
    for (int64_t h = 0; h < rep.horizons(); ++h) {
        auto hi = static_cast<size_t>(h);
        std::snprintf(line, sizeof(line), "%7lld %9.4f %9.4f %9.4f %8lld\n",
                      static_cast<long long>(h + 1), rep.mae[hi], rep.rmse[hi],
                      rep.mape[hi] * 100.0, static_cast<long long>(rep.valid_count[hi]));
        out += line;
    }
    std::snprintf(line, sizeof(line), "   mean %9.4f %9.4f %9.4f\n", rep.mean_mae, rep.mean_rmse,
                  rep.mean_mape * 100.0);
    out += line;
    std::string summary = "summary:";
    for (int64_t k : {3, 6, 12}) {
        if (rep.horizons() >= k) {
            std::snprintf(line, sizeof(line), " MAE@%lld %.4f", static_cast<long long>(k),
                          rep.mae[static_cast<size_t>(k - 1)]);
            summary += line;
        }
    }
    std::snprintf(line, sizeof(line), " MeanMAE %.4f\n", rep.mean_mae);
    summary += line;
    out += summary;
    out += '\n';
}

// --- generate ---------------------------------------------------------------

int cmd_generate(const std::vector<std::string>& args) {
    CLI::App app{"synthesize a sensor network and speed series"};
    int64_t nodes = 10;
    int64_t days = 14;
    uint64_t seed = 1;
    double zero_rate = 0.05;
    std::string out;
    app.add_option("--nodes", nodes, "number of sensors (default 10)");
    app.add_option("--days", days, "number of days at 5-minute resolution (default 14)");
    app.add_option("--seed", seed, "generator seed (default 1)");
    app.add_option("--zero-rate", zero_rate, "fraction of readings zeroed out (default 0.05)");
    app.add_option("--out", out, "output directory")->required();
    try {
        parse_app(app, "generate", args);
    } catch (const CLI::ParseError& e) {
        return cli11_exit(app, e);
    }

    RunDir rd;
    return guarded(&rd, [&]() -> int {
        SyntheticConfig sc;
        sc.n_nodes = nodes;
        sc.n_days = days;
        sc.seed = seed;
        sc.zero_rate = zero_rate;
        SyntheticData data = generate_synthetic(sc);

        std::ostringstream cfg;
        cfg << "generate.nodes=" << nodes << '\n'
            << "generate.days=" << days << '\n'
            << "generate.interval_seconds=" << sc.interval_seconds << '\n'
            << "generate.seed=" << seed << '\n'
            << "generate.zero_rate=" << format_double(zero_rate) << '\n';
        rd.dir = out;
        rd.begin("generate", strip_dir_flags(args), cfg.str(), seed);

        write_speed_csv(rd.dir / "speeds.csv", data.series);
        write_distances(rd.dir / "distances.txt", data.graph);
        std::printf("generated %lld nodes x %lld steps (%lld days, %.1f%% zeroed)\n",
                    static_cast<long long>(nodes), static_cast<long long>(sc.n_steps()),
                    static_cast<long long>(days), zero_rate * 100.0);
        std::printf("wrote %s and %s\n", (rd.dir / "speeds.csv").string().c_str(),
                    (rd.dir / "distances.txt").string().c_str());
        return 0;
    });
}

// --- train ------------------------------------------------------------------

EpochCallback live_printer(const char* phase) {
    std::string p(phase);
    return [p](const EpochRecord& r) {
        std::printf("[%s] epoch %lld  lr %.6f  train_loss %.4f  val MeanMAE %.4f  (%.1fs)\n",
                    p.c_str(), static_cast<long long>(r.epoch), r.lr, r.train_loss, r.val_mean_mae,
                    r.seconds);
        std::fflush(stdout);
        return false;
    };
}

void log_phase(std::string& metrics, std::string& timing, const std::string& phase,
               const std::vector<EpochRecord>& hist) {
    for (const auto& r : hist) {
        metrics += phase;
        metrics += ',';
        metrics += std::to_string(r.epoch);
        metrics += ',';
        metrics += format_double(r.lr);
        metrics += ',';
        metrics += format_double(r.train_loss);
        metrics += ',';
        metrics += format_double(r.val_mean_mae);
        metrics += '\n';
        char tb[96];
        std::snprintf(tb, sizeof(tb), "%s,%lld,%.3f\n", phase.c_str(),
                      static_cast<long long>(r.epoch), r.seconds);
        timing += tb;
    }
}

int cmd_train(const std::vector<std::string>& args) {
    CLI::App app{"train a model"};
    std::string config_path, workdir;
    app.add_option("--config", config_path, "configuration file (key=value lines)");
    app.add_option("--workdir", workdir, "run directory (default runs/<auto>)");
    app.allow_extras();
    try {
        parse_app(app, "train", args);
    } catch (const CLI::ParseError& e) {
        return cli11_exit(app, e);
    }

    RunDir rd;
    return guarded(&rd, [&]() -> int {
        RunConfig rc = resolve_config(config_path, app.remaining());
        TrainConfig tcfg = train_config_from(rc);
        SpeedSeries series = load_series(rc);
        ModelConfig mcfg = rc.model_config(series.n_nodes);
        mcfg.validate();
        bool zr = rc.get_bool("data.zero_replacement");
        Dataset ds = prepare_dataset(series, mcfg.history, mcfg.horizons, zr);
        std::optional<SensorGraph> graph = maybe_graph(rc);
        FixedSupports<float> fixed = supports_for(rc, graph, mcfg.supports_mode, series.n_nodes);

        std::string cfg_text = rc.serialize();
        std::vector<std::string> margs = strip_dir_flags(args);
        rd.dir = workdir.empty() ? default_workdir("train", cfg_text, margs, tcfg.seed)
                                 : std::filesystem::path(workdir);
        std::error_code ec;
        std::filesystem::create_directories(rd.dir, ec);
        if (ec) throw IoError("cannot create '" + rd.dir.string() + "': " + ec.message());
        write_text_file(rd.dir / "config.snapshot", cfg_text);
        rd.begin("train", margs, cfg_text, tcfg.seed);

        std::printf("training on %lld nodes, %lld windows (train %lld / val %lld / test %lld)\n",
                    static_cast<long long>(series.n_nodes), static_cast<long long>(ds.n_windows()),
                    static_cast<long long>(ds.split.train.count),
                    static_cast<long long>(ds.split.val.count),
                    static_cast<long long>(ds.split.test.count));

        std::string metrics = "phase,epoch,lr,train_loss,val_mean_mae\n";
        std::string timing = "phase,epoch,seconds\n";
        const std::string mode = rc.get_string("train.mode");
        ParamStore<float> best;
        if (mode == "scratch") {
            TrainResult r = train_model(ds, mcfg, tcfg, fixed, nullptr, live_printer("train"));
            log_phase(metrics, timing, "train", r.history);
            best = r.best_params;
            std::printf("best val MeanMAE %.4f at epoch %lld\n", r.best_val_mae,
                        static_cast<long long>(r.best_epoch));
        } else if (mode == "pretrain_finetune") {
            int64_t ph = rc.get_int("train.pretrain_horizons");
            PretrainFinetuneResult pf = pretrain_finetune(
                ds, mcfg, tcfg, ph, fixed, (rd.dir / "pretrain.ckpt").string());
            log_phase(metrics, timing, "pretrain", pf.pretrain.history);
            log_phase(metrics, timing, "finetune", pf.finetune.history);
            best = pf.finetune.best_params;
            std::printf("pretrain best val MeanMAE %.4f at epoch %lld (horizons 1..%lld)\n",
                        pf.pretrain.best_val_mae, static_cast<long long>(pf.pretrain.best_epoch),
                        static_cast<long long>(ph));
            std::printf("finetune best val MeanMAE %.4f at epoch %lld\n", pf.finetune.best_val_mae,
                        static_cast<long long>(pf.finetune.best_epoch));
        } else {
            throw ConfigError("train.mode must be 'scratch' or 'pretrain_finetune', got '" + mode +
                              "'");
        }
        write_text_file(rd.dir / "metrics.log", metrics);
        write_text_file(rd.dir / "timing.log", timing);

        GraphWaveNet<float> best_model(mcfg, best);
        save_model((rd.dir / "best.ckpt").string(), best_model);

        MetricReport vrep = evaluate_model(ds, best_model, fixed, ds.split.val, tcfg.batch_size);
        MetricReport trep = evaluate_model(ds, best_model, fixed, ds.split.test, tcfg.batch_size);
        std::ostringstream rec;
        rec << "split,horizon,metric,value\n";
        write_report_records(rec, "val", vrep);
        write_report_records(rec, "test", trep);
        write_text_file(rd.dir / "final_report.csv", rec.str());
        std::string table;
        append_report_table(table, "val", vrep);
        append_report_table(table, "test", trep);
        write_text_file(rd.dir / "final_report.txt", table);
        std::fputs(table.c_str(), stdout);
        std::printf("run dir: %s\n", rd.dir.string().c_str());
        return 0;
    });
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const std::vector<std::string>& args) {
    CLI::App app{"evaluate a checkpoint on a dataset split"};
    std::string ckpt, split = "test", config_path, workdir;
    app.add_option("--checkpoint", ckpt, "model checkpoint to evaluate")->required();
    app.add_option("--split", split, "train, val, or test (default test)");
    app.add_option("--config", config_path, "configuration file");
    app.add_option("--workdir", workdir, "run directory (default runs/<auto>)");
    app.allow_extras();
    try {
        parse_app(app, "eval", args);
    } catch (const CLI::ParseError& e) {
        return cli11_exit(app, e);
    }

    RunDir rd;
    return guarded(&rd, [&]() -> int {
        RunConfig rc = resolve_config(config_path, app.remaining());
        GraphWaveNet<float> model = load_model<float>(ckpt);
        const ModelConfig& mcfg = model.config();
        SpeedSeries series = load_series(rc);
        if (series.n_nodes != mcfg.n_nodes)
            throw ConfigError("checkpoint was trained on " + std::to_string(mcfg.n_nodes) +
                              " nodes but the speed data has " + std::to_string(series.n_nodes));
        bool zr = rc.get_bool("data.zero_replacement");
        Dataset ds = prepare_dataset(series, mcfg.history, mcfg.horizons, zr);
        FixedSupports<float> fixed =
            supports_for(rc, maybe_graph(rc), mcfg.supports_mode, mcfg.n_nodes);
        SplitSpan span = split_by_name(ds, split);

        std::string cfg_text = rc.serialize();
        std::vector<std::string> margs = strip_dir_flags(args);
        uint64_t seed = static_cast<uint64_t>(rc.get_int("train.seed"));
        rd.dir = workdir.empty() ? default_workdir("eval", cfg_text, margs, seed)
                                 : std::filesystem::path(workdir);
        std::error_code ec;
        std::filesystem::create_directories(rd.dir, ec);
        if (ec) throw IoError("cannot create '" + rd.dir.string() + "': " + ec.message());
        write_text_file(rd.dir / "config.snapshot", cfg_text);
        rd.begin("eval", margs, cfg_text, seed);

        MetricReport rep =
            evaluate_model(ds, model, fixed, span, rc.get_int("train.batch_size"));

        std::ostringstream rec;
        rec << "split,horizon,metric,value\n";
        write_report_records(rec, split, rep);
        write_text_file(rd.dir / "final_report.csv", rec.str());
        std::ostringstream plot;
        plot << "horizon,mae\n";
        for (int64_t h = 0; h < rep.horizons(); ++h)
            plot << (h + 1) << ',' << format_double(rep.mae[static_cast<size_t>(h)]) << '\n';
        write_text_file(rd.dir / "horizon_mae.csv", plot.str());
        std::string table;
        append_report_table(table, split, rep);
        write_text_file(rd.dir / "final_report.txt", table);
        std::fputs(table.c_str(), stdout);
        std::printf("run dir: %s\n", rd.dir.string().c_str());
        return 0;
    });
}

// --- ensemble ---------------------------------------------------------------

int cmd_ensemble(const std::vector<std::string>& args) {
    CLI::App app{"splice two checkpoints at a horizon boundary and evaluate"};
    std::string short_ckpt, long_ckpt, split = "test", config_path, workdir;
    int64_t split_horizon = -1;
    app.add_option("--short", short_ckpt, "checkpoint covering the early horizons")->required();
    app.add_option("--long", long_ckpt, "checkpoint covering the late horizons")->required();
    app.add_option("--split-horizon", split_horizon,
                   "horizons 1..H from the short model (default: ensemble.split key)");
    app.add_option("--split", split, "dataset split (default test)");
    app.add_option("--config", config_path, "configuration file");
    app.add_option("--workdir", workdir, "run directory (default runs/<auto>)");
    app.allow_extras();
    try {
        parse_app(app, "ensemble", args);
    } catch (const CLI::ParseError& e) {
        return cli11_exit(app, e);
    }

    RunDir rd;
    return guarded(&rd, [&]() -> int {
        RunConfig rc = resolve_config(config_path, app.remaining());
        GraphWaveNet<float> ms = load_model<float>(short_ckpt);
        GraphWaveNet<float> ml = load_model<float>(long_ckpt);
        if (ms.config().horizons != ml.config().horizons)
            throw ConfigError("the two checkpoints emit different horizon counts (" +
                              std::to_string(ms.config().horizons) + " vs " +
                              std::to_string(ml.config().horizons) + ")");
        if (ms.config().n_nodes != ml.config().n_nodes)
            throw ConfigError("the two checkpoints were trained on different node counts");
        int64_t sh = split_horizon >= 0 ? split_horizon : rc.get_int("ensemble.split");

        SpeedSeries series = load_series(rc);
        if (series.n_nodes != ms.config().n_nodes)
            throw ConfigError("checkpoints were trained on " +
                              std::to_string(ms.config().n_nodes) +
                              " nodes but the speed data has " + std::to_string(series.n_nodes));
        bool zr = rc.get_bool("data.zero_replacement");
        int64_t t_in = std::max(ms.config().history, ml.config().history);
        Dataset ds = prepare_dataset(series, t_in, ms.config().horizons, zr);
        bool needs_fixed = ms.config().use_fixed_supports() || ml.config().use_fixed_supports();
        FixedSupports<float> fixed =
            needs_fixed ? supports_for(rc, maybe_graph(rc), SupportsMode::all, series.n_nodes)
                        : FixedSupports<float>{};
        SplitSpan span = split_by_name(ds, split);
        int64_t bs = rc.get_int("train.batch_size");

        std::string cfg_text = rc.serialize();
        std::vector<std::string> margs = strip_dir_flags(args);
        uint64_t seed = static_cast<uint64_t>(rc.get_int("train.seed"));
        rd.dir = workdir.empty() ? default_workdir("ensemble", cfg_text, margs, seed)
                                 : std::filesystem::path(workdir);
        std::error_code ec;
        std::filesystem::create_directories(rd.dir, ec);
        if (ec) throw IoError("cannot create '" + rd.dir.string() + "': " + ec.message());
        write_text_file(rd.dir / "config.snapshot", cfg_text);
        rd.begin("ensemble", margs, cfg_text, seed);

        MetricReport rs = evaluate_model(ds, ms, fixed, span, bs);
        MetricReport rl = evaluate_model(ds, ml, fixed, span, bs);
        MetricReport re = evaluate_ensemble(ds, ms, ml, fixed, sh, span, bs);

        std::ostringstream rec;
        rec << "split,horizon,metric,value\n";
        write_report_records(rec, split + ".short", rs);
        write_report_records(rec, split + ".long", rl);
        write_report_records(rec, split + ".ensemble", re);
        write_text_file(rd.dir / "final_report.csv", rec.str());
        std::string table;
        append_report_table(table, split + " / short model", rs);
        append_report_table(table, split + " / long model", rl);
        append_report_table(table,
                            split + " / ensemble (horizons 1.." + std::to_string(sh) +
                                " short, rest long)",
                            re);
        write_text_file(rd.dir / "final_report.txt", table);
        std::fputs(table.c_str(), stdout);
        std::printf("run dir: %s\n", rd.dir.string().c_str());
        return 0;
    });
}

// --- ablate -----------------------------------------------------------------

int cmd_ablate(const std::vector<std::string>& args) {
    CLI::App app{"run an ablation suite"};
    std::string suite, config_path, workdir;
    app.add_option("--suite", suite, "mods, graph, or history")->required();
    app.add_option("--config", config_path, "configuration file");
    app.add_option("--workdir", workdir, "run directory (default runs/<auto>)");
    app.allow_extras();
    try {
        parse_app(app, "ablate", args);
    } catch (const CLI::ParseError& e) {
        return cli11_exit(app, e);
    }

    RunDir rd;
    return guarded(&rd, [&]() -> int {
        RunConfig rc = resolve_config(config_path, app.remaining());
        TrainConfig tcfg = train_config_from(rc);
        SpeedSeries series = load_series(rc);
        ModelConfig mcfg = rc.model_config(series.n_nodes);
        mcfg.validate();
        bool zr = rc.get_bool("data.zero_replacement");
        int64_t seeds = rc.get_int("ablate.seeds");

        std::vector<AblationArm> arms;
        if (suite == "mods") {
            arms = mods_suite(mcfg, tcfg, zr);
        } else if (suite == "graph") {
            arms = graph_suite(mcfg, tcfg, zr);
        } else if (suite == "history") {
            arms = history_suite(mcfg, tcfg, zr);
        } else {
            throw ConfigError("unknown suite '" + suite + "' (expected mods, graph, or history)");
        }

        std::string cfg_text = rc.serialize();
        std::vector<std::string> margs = strip_dir_flags(args);
        rd.dir = workdir.empty() ? default_workdir("ablate", cfg_text, margs, tcfg.seed)
                                 : std::filesystem::path(workdir);
        std::error_code ec;
        std::filesystem::create_directories(rd.dir, ec);
        if (ec) throw IoError("cannot create '" + rd.dir.string() + "': " + ec.message());
        write_text_file(rd.dir / "config.snapshot", cfg_text);
        rd.begin("ablate", margs, cfg_text, tcfg.seed);

        std::optional<SensorGraph> graph = maybe_graph(rc);
        std::vector<AblationRow> rows =
            run_ablation(arms, series, graph ? &*graph : nullptr, rc.adjacency_options(), seeds,
                         [](const std::string& line) {
                             std::printf("  %s\n", line.c_str());
                             std::fflush(stdout);
                         });

        std::ostringstream rec;
        rec << "label,params,seed,val_mean_mae\n";
        for (const auto& row : rows) {
            for (size_t i = 0; i < row.per_seed_val_mae.size(); ++i)
                rec << row.label << ',' << row.params << ','
                    << (tcfg.seed + static_cast<uint64_t>(i)) << ','
                    << format_double(row.per_seed_val_mae[i]) << '\n';
            rec << row.label << ',' << row.params << ",mean," << format_double(row.mean_val_mae)
                << '\n';
        }
        write_text_file(rd.dir / "ablation.csv", rec.str());

        std::string table = "suite: " + suite + " (" + std::to_string(seeds) + " seed(s))\n";
        char line[256];
        std::snprintf(line, sizeof(line), "%-42s %10s %14s\n", "configuration", "params",
                      "val MeanMAE");
        table += line;
        for (const auto& row : rows) {
            std::snprintf(line, sizeof(line), "%-42s %10lld %14.4f\n", row.label.c_str(),
                          static_cast<long long>(row.params), row.mean_val_mae);
            table += line;
        }
        write_text_file(rd.dir / "ablation.txt", table);
        std::fputs(table.c_str(), stdout);
        std::printf("run dir: %s\n", rd.dir.string().c_str());
        return 0;
    });
}

// --- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const std::vector<std::string>& args) {
    CLI::App app{"finite-difference gradient verification"};
    std::string level, workdir;
    app.add_option("--level", level, "ops, layers, or model")->required();
    app.add_option("--workdir", workdir, "run directory (default runs/<auto>)");
    try {
        parse_app(app, "gradcheck", args);
    } catch (const CLI::ParseError& e) {
        return cli11_exit(app, e);
    }

    RunDir rd;
    return guarded(&rd, [&]() -> int {
        std::string cfg_text = "gradcheck.level=" + level + "\n";
        std::vector<std::string> margs = strip_dir_flags(args);
        rd.dir = workdir.empty() ? default_workdir("gradcheck", cfg_text, margs, 0)
                                 : std::filesystem::path(workdir);
        rd.begin("gradcheck", margs, cfg_text, 0);

        std::vector<CheckCase> cases = gradcheck_suite(level);
        std::string report;
        char line[256];
        for (const auto& c : cases) {
            std::snprintf(line, sizeof(line), "%-22s max_rel_err %.3e (tol %.0e) %s  [%s]\n",
                          c.name.c_str(), c.max_rel_err, c.tol, c.passed ? "PASS" : "FAIL",
                          c.detail.c_str());
            report += line;
            std::fputs(line, stdout);
        }
        bool ok = all_passed(cases);
        report += ok ? "all gradient checks passed\n" : "GRADIENT CHECKS FAILED\n";
        write_text_file(rd.dir / "gradcheck.txt", report);
        std::printf("%s", ok ? "all gradient checks passed\n" : "GRADIENT CHECKS FAILED\n");
        return ok ? 0 : 2;
    });
}

// --- rerun -------------------------------------------------------------------

int dispatch_command(const std::string& cmd, const std::vector<std::string>& args);

int cmd_rerun(const std::vector<std::string>& args) {
    CLI::App app{"re-execute a finished run from its manifest"};
    std::string manifest_path, workdir;
    app.add_option("--manifest", manifest_path, "manifest.json of the run to repeat")->required();
    app.add_option("--workdir", workdir, "target directory (default runs/<auto>)");
    try {
        parse_app(app, "rerun", args);
    } catch (const CLI::ParseError& e) {
        return cli11_exit(app, e);
    }

    return guarded(nullptr, [&]() -> int {
        Manifest m = load_manifest(manifest_path);
        if (m.command == "rerun") throw DataError("manifest describes a rerun; nothing to repeat");
        std::filesystem::path wd =
            workdir.empty() ? default_workdir("rerun-" + m.command, m.config_text, m.args, m.seed)
                            : std::filesystem::path(workdir);
        std::vector<std::string> args2 = m.args;
        args2.push_back(m.command == "generate" ? "--out" : "--workdir");
        args2.push_back(wd.string());
        std::printf("re-running '%s' into %s\n", m.command.c_str(), wd.string().c_str());
        return dispatch_command(m.command, args2);
    });
}

int dispatch_command(const std::string& cmd, const std::vector<std::string>& args) {
    if (cmd == "generate") return cmd_generate(args);
    if (cmd == "train") return cmd_train(args);
    if (cmd == "eval") return cmd_eval(args);
    if (cmd == "ensemble") return cmd_ensemble(args);
    if (cmd == "ablate") return cmd_ablate(args);
    if (cmd == "gradcheck") return cmd_gradcheck(args);
    if (cmd == "rerun") return cmd_rerun(args);
    std::fprintf(stderr, "error: unknown command '%s'\n\n%s", cmd.c_str(), kUsage);
    return 1;
}

} // namespace

int cli_main(int argc, const char* const* argv) {
    try {
        check_threads_env();
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    if (argc < 2) {
        std::fputs(kUsage, stderr);
        return 1;
    }
    std::string cmd = argv[1];
    if (cmd == "-h" || cmd == "--help" || cmd == "help") {
        std::fputs(kUsage, stdout);
        return 0;
    }
    if (cmd == "--version" || cmd == "version") {
        std::printf("%s\n", kToolVersion);
        return 0;
    }
    std::vector<std::string> args(argv + 2, argv + argc);
    return dispatch_command(cmd, args);
}

} // namespace stwave
