#include "stwave/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "stwave/io_util.hpp"

namespace stwave {

void SpeedSeries::validate() const {
    if (n_nodes <= 0) throw DataError("speed series: n_nodes must be positive");
    if (interval_seconds <= 0) throw DataError("speed series: interval_seconds must be positive");
    if (values.size() % static_cast<size_t>(n_nodes) != 0)
        throw DataError("speed series: " + std::to_string(values.size()) +
                        " values are not a whole number of rows of " + std::to_string(n_nodes));
    if (!sensor_names.empty() && static_cast<int64_t>(sensor_names.size()) != n_nodes)
        throw DataError("speed series: " + std::to_string(sensor_names.size()) +
                        " sensor names for " + std::to_string(n_nodes) + " sensors");
    for (size_t i = 0; i < values.size(); ++i) {
        double v = values[i];
        if (!std::isfinite(v) || v < 0.0)
            throw DataError("speed series: value at row " +
                            std::to_string(i / static_cast<size_t>(n_nodes)) + ", sensor " +
                            std::to_string(i % static_cast<size_t>(n_nodes)) +
                            " is not a finite non-negative speed: " + format_double(v));
    }
}

SpeedSeries load_speed_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open speed file '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    SpeedSeries s;
    {
        std::istringstream hdr(line);
        std::string field;
        bool first = true;
        while (std::getline(hdr, field, ',')) {
            if (first) {
                if (field != "timestamp")
                    throw DataError(path.string() + ": header must start with 'timestamp', got '" +
                                    field + "'");
                first = false;
            } else {
                s.sensor_names.push_back(field);
            }
        }
        if (first) throw DataError(path.string() + ": header must start with 'timestamp'");
    }
    s.n_nodes = static_cast<int64_t>(s.sensor_names.size());
    if (s.n_nodes == 0) throw DataError(path.string() + ": header lists no sensors");

    std::vector<int64_t> stamps;
    int64_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string where = path.string() + " line " + std::to_string(row + 2);
        std::istringstream fields(line);
        std::string field;
        if (!std::getline(fields, field, ',')) throw DataError(where + ": missing timestamp");
        stamps.push_back(parse_timestamp(field, where));
        int64_t got = 0;
        while (std::getline(fields, field, ',')) {
            double v = parse_double(field, where);
            if (!std::isfinite(v) || v < 0.0)
                throw DataError(where + ": speed must be a finite non-negative number, got '" +
                                field + "'");
            s.values.push_back(v);
            ++got;
        }
        if (got != s.n_nodes)
            throw DataError(where + ": expected " + std::to_string(s.n_nodes) + " speeds, got " +
                            std::to_string(got));
        ++row;
    }
    if (stamps.size() < 2)
        throw DataError(path.string() + ": need at least 2 rows to establish the interval, got " +
                        std::to_string(stamps.size()));
    s.start_epoch = stamps[0];
    s.interval_seconds = stamps[1] - stamps[0];
    if (s.interval_seconds <= 0)
        throw DataError(path.string() + " line 3: timestamps must be strictly increasing (row "
                        "repeats or precedes its predecessor)");
    for (size_t t = 1; t < stamps.size(); ++t) {
        int64_t gap = stamps[t] - stamps[t - 1];
        if (gap <= 0)
            throw DataError(path.string() + " line " + std::to_string(t + 2) +
                            ": timestamps must be strictly increasing (row repeats or precedes "
                            "its predecessor)");
        if (gap != s.interval_seconds)
            throw DataError(path.string() + " line " + std::to_string(t + 2) + ": gap of " +
                            std::to_string(gap) + "s breaks the " +
                            std::to_string(s.interval_seconds) + "s spacing (" +
                            std::to_string(gap / s.interval_seconds - 1) + " missing steps)");
    }
    s.validate();
    return s;
}

void write_speed_csv(const std::filesystem::path& path, const SpeedSeries& series) {
    series.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write speed file '" + path.string() + "'");
    out << "timestamp";
    for (int64_t n = 0; n < series.n_nodes; ++n) out << ',' << series.sensor_name(n);
    out << '\n';
    for (int64_t t = 0; t < series.n_steps(); ++t) {
        out << format_timestamp(series.timestamp(t));
        for (int64_t n = 0; n < series.n_nodes; ++n) out << ',' << format_double(series.at(t, n));
        out << '\n';
    }
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

int64_t window_count(int64_t n_steps, int64_t t_in, int64_t t_out) {
    return std::max<int64_t>(0, n_steps - t_in - t_out + 1);
}

SplitSpec chrono_split(int64_t n_windows) {
    if (n_windows < 3)
        throw DataError("need at least 3 sliding windows to split, got " +
                        std::to_string(n_windows));
    SplitSpec sp;
    sp.total = n_windows;
    sp.train = {0, static_cast<int64_t>(std::floor(0.7 * static_cast<double>(n_windows)))};
    sp.val = {sp.train.count,
              static_cast<int64_t>(std::floor(0.1 * static_cast<double>(n_windows)))};
    sp.test = {sp.val.first + sp.val.count, n_windows - sp.train.count - sp.val.count};
    return sp;
}

Dataset prepare_dataset(SpeedSeries series, int64_t t_in, int64_t t_out, bool zero_replacement) {
    series.validate();
    if (t_in <= 0 || t_out <= 0)
        throw ConfigError("prepare_dataset: t_in and t_out must be positive, got " +
                          std::to_string(t_in) + " and " + std::to_string(t_out));
    Dataset ds;
    ds.t_in = t_in;
    ds.t_out = t_out;
    ds.zero_replacement = zero_replacement;
    ds.split = chrono_split(window_count(series.n_steps(), t_in, t_out));

    // scaler statistics come only from observed (nonzero) speeds in rows a
    // training window can read; replaced zeros never enter the statistics
    int64_t fit_rows = ds.split.train.count + t_in - 1;
    double sum = 0.0;
    int64_t cnt = 0;
    for (int64_t t = 0; t < fit_rows; ++t)
        for (int64_t n = 0; n < series.n_nodes; ++n) {
            double v = series.at(t, n);
            if (v != 0.0) {
                sum += v;
                ++cnt;
            }
        }
    if (cnt == 0)
        throw DataError("prepare_dataset: the training region holds no observed (nonzero) speeds");
    double mean = sum / static_cast<double>(cnt);
    double ss = 0.0;
    for (int64_t t = 0; t < fit_rows; ++t)
        for (int64_t n = 0; n < series.n_nodes; ++n) {
            double v = series.at(t, n);
            if (v != 0.0) ss += (v - mean) * (v - mean);
        }
    double stdev = std::sqrt(ss / static_cast<double>(cnt));
    if (stdev <= 0.0)
        throw DataError("prepare_dataset: observed training speeds are all identical (" +
                        format_double(mean) + "); cannot normalize");
    ds.scaler.mean = mean;
    ds.scaler.stdev = stdev;

    // a missing reading enters the input features as the train-set mean
    // speed (0 after normalization); targets keep their raw zeros and are
    // masked out of every metric instead
    ds.filled = series.values;
    for (double& v : ds.filled)
        if (v == 0.0) v = mean;

    ds.series = std::move(series);
    return ds;
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.n_nodes < 2) throw ConfigError("synthetic: n_nodes must be at least 2");
    if (cfg.n_days < 1) throw ConfigError("synthetic: n_days must be at least 1");
    if (cfg.interval_seconds <= 0 || 86400 % cfg.interval_seconds != 0)
        throw ConfigError("synthetic: interval_seconds must be positive and divide a day");
    if (cfg.zero_rate < 0 || cfg.zero_rate >= 1)
        throw ConfigError("synthetic: zero_rate must be in [0, 1)");

    int64_t N = cfg.n_nodes;
    int64_t T = cfg.n_steps();
    SyntheticData out;

    // random geometric layout in a ~3 km square; driving distance is the
    // straight-line distance stretched by an independent per-direction factor
    Rng geo = Rng::stream(cfg.seed, "synthetic.geometry");
    std::vector<double> px(static_cast<size_t>(N)), py(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) {
        px[static_cast<size_t>(i)] = geo.uniform(0.0, 3000.0);
        py[static_cast<size_t>(i)] = geo.uniform(0.0, 3000.0);
    }
    out.graph.n_nodes = N;
    out.graph.distances.assign(static_cast<size_t>(N * N), 0.0);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < N; ++j) {
            if (i == j) continue;
            double dx = px[static_cast<size_t>(i)] - px[static_cast<size_t>(j)];
            double dy = py[static_cast<size_t>(i)] - py[static_cast<size_t>(j)];
            out.graph.distances[static_cast<size_t>(i * N + j)] =
                std::sqrt(dx * dx + dy * dy) * geo.uniform(1.0, 1.2);
        }
    out.graph.validate();

    // row-stochastic smoothing weights over the 3 nearest neighbors
    std::vector<double> smooth(static_cast<size_t>(N * N), 0.0);
    for (int64_t i = 0; i < N; ++i) {
        std::vector<std::pair<double, int64_t>> order;
        for (int64_t j = 0; j < N; ++j)
            if (j != i) order.emplace_back(out.graph.distance(i, j), j);
        std::sort(order.begin(), order.end());
        size_t k = std::min<size_t>(3, order.size());
        double wsum = 0.0;
        for (size_t q = 0; q < k; ++q) wsum += 1.0 / (1.0 + order[q].first / 1000.0);
        for (size_t q = 0; q < k; ++q)
            smooth[static_cast<size_t>(i * N + order[q].second)] =
                (1.0 / (1.0 + order[q].first / 1000.0)) / wsum;
    }

    // per-sensor regime; rush-hour phase drifts with map position so nearby
    // sensors congest at nearby times
    Rng regime = Rng::stream(cfg.seed, "synthetic.regime");
    std::vector<double> base(static_cast<size_t>(N)), amp_am(static_cast<size_t>(N)),
        amp_pm(static_cast<size_t>(N)), start_am(static_cast<size_t>(N)),
        start_pm(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) {
        base[static_cast<size_t>(i)] = regime.uniform(58.0, 70.0);
        amp_am[static_cast<size_t>(i)] = regime.uniform(16.0, 26.0);
        amp_pm[static_cast<size_t>(i)] = regime.uniform(14.0, 24.0);
        start_am[static_cast<size_t>(i)] = 6.5 + 2.0 * px[static_cast<size_t>(i)] / 3000.0;
        start_pm[static_cast<size_t>(i)] = 15.5 + 2.0 * py[static_cast<size_t>(i)] / 3000.0;
    }

    SpeedSeries& s = out.series;
    s.n_nodes = N;
    s.interval_seconds = cfg.interval_seconds;
    s.start_epoch = days_from_civil(2024, 1, 1) * 86400; // a Monday
    s.values.assign(static_cast<size_t>(T * N), 0.0);

    Rng noise = Rng::stream(cfg.seed, "synthetic.noise");
    Rng zero = Rng::stream(cfg.seed, "synthetic.zero");
    std::vector<double> ar(static_cast<size_t>(N), 0.0);
    std::vector<double> prev(static_cast<size_t>(N), 0.0), cur(static_cast<size_t>(N), 0.0);
    constexpr double kRho = 0.85;
    constexpr double kSigma = 0.8;
    constexpr double kAlpha = 0.35; // spatial smoothing strength

    // half-sine congestion dip: 0 outside [start, start+dur]
    auto dip = [](double tod_h, double start, double dur) {
        double u = tod_h - start;
        if (u < 0) u += 24.0;
        if (u >= dur) return 0.0;
        return std::sin(u / dur * 3.14159265358979323846);
    };

    for (int64_t t = 0; t < T; ++t) {
        int64_t ts = s.timestamp(t);
        double tod_h = s.time_of_day(t) * 24.0;
        int64_t dow = ((ts / 86400) % 7 + 7 + 4) % 7; // 0=Sunday
        double weekday = (dow == 0 || dow == 6) ? 0.3 : 1.0;
        for (int64_t n = 0; n < N; ++n) {
            ar[static_cast<size_t>(n)] = kRho * ar[static_cast<size_t>(n)] + noise.normal() * kSigma;
            double congestion =
                weekday *
                (amp_am[static_cast<size_t>(n)] * dip(tod_h, start_am[static_cast<size_t>(n)], 3.0) +
                 amp_pm[static_cast<size_t>(n)] * dip(tod_h, start_pm[static_cast<size_t>(n)], 3.5));
            double v = base[static_cast<size_t>(n)] - congestion + ar[static_cast<size_t>(n)];
            if (t > 0) {
                double nb = 0.0;
                for (int64_t j = 0; j < N; ++j)
                    nb += smooth[static_cast<size_t>(n * N + j)] *
                          (prev[static_cast<size_t>(j)] - base[static_cast<size_t>(j)]);
                v += kAlpha * nb; // neighbors' congestion state leaks in one step later
            }
            cur[static_cast<size_t>(n)] = v;
            double clamped = std::clamp(v, 3.0, 80.0);
            s.at(t, n) = zero.next_double() < cfg.zero_rate ? 0.0 : clamped;
        }
        std::swap(prev, cur);
    }
    s.validate();
    return out;
}

} // namespace stwave
