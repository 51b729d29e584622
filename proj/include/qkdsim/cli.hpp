#pragma once

#include "qkdsim/analytic.hpp"
#include "qkdsim/bbm92.hpp"
#include "qkdsim/errors.hpp"
#include "qkdsim/estimate.hpp"
#include "qkdsim/io.hpp"
#include "qkdsim/params.hpp"
#include "qkdsim/repeater.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace qkdsim::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3 };

/// Everything a subcommand needs. Populated from an optional JSON config file,
/// then overridden by flags.
struct RunConfig
{
    ExperimentParams experiment = ExperimentParams::table1();
    BellState state = BellState::PsiPlus;
    std::uint64_t seed = 1;
    std::optional<std::uint64_t> shots;
    unsigned threads = 0;
    std::string output;
    std::string format = "csv";

    std::vector<std::int64_t> t_c_grid_ps;
    bool coincidence_window_set = false;

    std::string timetags;    // simulate: dump path
    std::string correlation; // simulate/estimate: correlation-matrix CSV path

    std::string axis;
    std::vector<double> grid;

    std::vector<int> repeaters{0, 1, 2, 3};
    std::vector<double> end_to_end_loss_db{5.0, 20.0};
    std::vector<double> elementary_fidelity;
    double total_length_m = 100e3;
    double refractive_index = 1.0;
    bool charge_swap_signaling = false;

    double exposure_s = 0.0;
    std::int64_t po_window_ps = 1000;
};

enum class Kind { Number, Integer, String, NumberList, Flag };

struct Key
{
    const char* name;
    Kind kind;
    const char* help;
};

inline const std::vector<Key>& experiment_keys()
{
    static const std::vector<Key> keys{
        {"brightness_cps", Kind::Number, "source pair emission rate B (pairs/s)"},
        {"loss_alice_db", Kind::Number, "source-to-Alice loss (dB)"},
        {"loss_bob_db", Kind::Number, "source-to-Bob loss (dB)"},
        {"efficiency_alice", Kind::Number, "Alice detector efficiency"},
        {"efficiency_bob", Kind::Number, "Bob detector efficiency"},
        {"dead_time_alice_ps", Kind::Integer, "Alice detector dead time (ps)"},
        {"dead_time_bob_ps", Kind::Integer, "Bob detector dead time (ps)"},
        {"dark_rate_alice_cps", Kind::Number, "Alice dark count rate, all detectors (counts/s)"},
        {"dark_rate_bob_cps", Kind::Number, "Bob dark count rate, all detectors (counts/s)"},
        {"detection_resolution_ps", Kind::Number, "FWHM of the Alice-Bob time difference (ps)"},
        {"coincidence_window_ps", Kind::Integer, "coincidence window t_c (ps)"},
        {"visibility", Kind::Number, "visibility V; sets p_o = (1-V)/2 and F = 1 - 1.5 p_o"},
        {"source_fidelity", Kind::Number, "Werner fidelity of the source (overrides visibility)"},
        {"optics_error_prob", Kind::Number, "optical error probability p_o (overrides visibility)"},
        {"bell_state", Kind::String, "shared Bell state: psi+, psi-, phi+, phi-"},
    };
    return keys;
}

inline const std::vector<Key>& run_keys()
{
    static const std::vector<Key> keys{
        {"seed", Kind::Integer, "root RNG seed"},
        {"threads", Kind::Integer, "worker threads (0: hardware concurrency)"},
        {"output", Kind::String, "output path (default: stdout)"},
        {"format", Kind::String, "output format: csv or json"},
    };
    return keys;
}

inline const std::vector<Key>& command_keys(const std::string& command)
{
    static const std::vector<Key> theory{
        {"t_c_grid_ps", Kind::NumberList, "coincidence windows (ps)"},
    };
    static const std::vector<Key> simulate{
        {"t_c_grid_ps", Kind::NumberList, "coincidence windows (ps)"},
        {"shots", Kind::Integer, "emitted pairs to simulate"},
        {"timetags", Kind::String, "write the simulated timetags to this path"},
        {"correlation", Kind::String, "write the correlation matrix CSV to this path"},
    };
    static const std::vector<Key> sweep{
        {"axis", Kind::String, "loss, dead_time, resolution, dark_rate, brightness, visibility or t_c"},
        {"grid", Kind::NumberList, "axis values"},
        {"shots", Kind::Integer, "emitted pairs per grid point"},
    };
    static const std::vector<Key> repeater{
        {"repeaters", Kind::NumberList, "repeater counts r"},
        {"end_to_end_loss_db", Kind::NumberList, "end-to-end losses (dB), split evenly over links"},
        {"elementary_fidelity", Kind::NumberList, "elementary link Werner fidelities F_i"},
        {"total_length_m", Kind::Number, "end-to-end length (m)"},
        {"refractive_index", Kind::Number, "fiber refractive index"},
        {"shots", Kind::Integer, "chain runs per grid point"},
        {"charge_swap_signaling", Kind::Flag, "charge swap messages their propagation delay"},
    };
    static const std::vector<Key> estimate{
        {"exposure_s", Kind::Number, "acquisition time (s); default: span of the timestamps"},
        {"po_window_ps", Kind::Integer, "reference window for p_o (ps)"},
        {"correlation", Kind::String, "write the correlation matrix CSV to this path"},
    };
    static const std::vector<Key> none;
    if (command == "theory") {
        return theory;
    }
    if (command == "simulate") {
        return simulate;
    }
    if (command == "sweep") {
        return sweep;
    }
    if (command == "repeater") {
        return repeater;
    }
    if (command == "estimate") {
        return estimate;
    }
    return none;
}

namespace detail {

inline double number(const nlohmann::json& j, const std::string& key)
{
    if (!j.is_number()) {
        throw ConfigError(key, "must be a number");
    }
    return j.get<double>();
}

inline std::int64_t integer(const nlohmann::json& j, const std::string& key)
{
    if (j.is_number_integer()) {
        return j.get<std::int64_t>();
    }
    const double v = number(j, key);
    if (v != std::floor(v) || std::abs(v) > 9.2e18) {
        throw ConfigError(key, "must be an integer");
    }
    return static_cast<std::int64_t>(v);
}

inline std::vector<double> number_list(const nlohmann::json& j, const std::string& key)
{
    std::vector<double> out;
    if (j.is_array()) {
        for (const auto& v : j) {
            out.push_back(number(v, key));
        }
    } else {
        out.push_back(number(j, key));
    }
    if (out.empty()) {
        throw ConfigError(key, "must not be empty");
    }
    return out;
}

inline std::string string(const nlohmann::json& j, const std::string& key)
{
    if (!j.is_string()) {
        throw ConfigError(key, "must be a string");
    }
    return j.get<std::string>();
}

inline BellState parse_bell_state(const std::string& s)
{
    if (s == "psi+") {
        return BellState::PsiPlus;
    }
    if (s == "psi-") {
        return BellState::PsiMinus;
    }
    if (s == "phi+") {
        return BellState::PhiPlus;
    }
    if (s == "phi-") {
        return BellState::PhiMinus;
    }
    throw ConfigError("bell_state", "must be one of psi+, psi-, phi+, phi-");
}

inline std::uint64_t positive_count(std::int64_t v, const std::string& key)
{
    if (v < 1) {
        throw ConfigError(key, "must be at least 1");
    }
    return static_cast<std::uint64_t>(v);
}

} // namespace detail

/// Applies a flat JSON object to `cfg`. Unknown keys are rejected.
inline void apply_config(RunConfig& cfg, const nlohmann::json& j)
{
    if (!j.is_object()) {
        throw ConfigError("config", "must be a JSON object");
    }
    auto& p = cfg.experiment;
    // visibility first so explicit F / p_o win
    if (j.contains("visibility")) {
        const double v = detail::number(j["visibility"], "visibility");
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ConfigError("visibility", "must lie in [0, 1]");
        }
        p.set_visibility(v);
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "visibility") {
            continue;
        }
        if (key == "brightness_cps") {
            p.brightness_cps = detail::number(value, key);
        } else if (key == "loss_alice_db") {
            p.loss_alice_db = detail::number(value, key);
        } else if (key == "loss_bob_db") {
            p.loss_bob_db = detail::number(value, key);
        } else if (key == "efficiency_alice") {
            p.alice.efficiency = detail::number(value, key);
        } else if (key == "efficiency_bob") {
            p.bob.efficiency = detail::number(value, key);
        } else if (key == "dead_time_alice_ps") {
            p.alice.dead_time = SimTime{detail::integer(value, key)};
        } else if (key == "dead_time_bob_ps") {
            p.bob.dead_time = SimTime{detail::integer(value, key)};
        } else if (key == "dark_rate_alice_cps") {
            p.alice.dark_rate_cps = detail::number(value, key);
        } else if (key == "dark_rate_bob_cps") {
            p.bob.dark_rate_cps = detail::number(value, key);
        } else if (key == "detection_resolution_ps") {
            p.detection_resolution_fwhm_ps = detail::number(value, key);
        } else if (key == "coincidence_window_ps") {
            p.coincidence_window = SimTime{detail::integer(value, key)};
            cfg.coincidence_window_set = true;
        } else if (key == "source_fidelity") {
            p.source_fidelity = detail::number(value, key);
        } else if (key == "optics_error_prob") {
            p.optics_error_prob = detail::number(value, key);
        } else if (key == "bell_state") {
            cfg.state = detail::parse_bell_state(detail::string(value, key));
        } else if (key == "seed") {
            const auto s = detail::integer(value, key);
            if (s < 0) {
                throw ConfigError(key, "must be non-negative");
            }
            cfg.seed = static_cast<std::uint64_t>(s);
        } else if (key == "threads") {
            const auto t = detail::integer(value, key);
            if (t < 0) {
                throw ConfigError(key, "must be non-negative");
            }
            cfg.threads = static_cast<unsigned>(t);
        } else if (key == "output") {
            cfg.output = detail::string(value, key);
        } else if (key == "format") {
            cfg.format = detail::string(value, key);
            if (cfg.format != "csv" && cfg.format != "json") {
                throw ConfigError(key, "must be csv or json");
            }
        } else if (key == "shots") {
            cfg.shots = detail::positive_count(detail::integer(value, key), key);
        } else if (key == "t_c_grid_ps") {
            cfg.t_c_grid_ps.clear();
            for (double v : detail::number_list(value, key)) {
                if (!(v >= 1.0)) {
                    throw ConfigError(key, "windows must be at least 1 ps");
                }
                cfg.t_c_grid_ps.push_back(std::llround(v));
            }
        } else if (key == "timetags") {
            cfg.timetags = detail::string(value, key);
        } else if (key == "correlation") {
            cfg.correlation = detail::string(value, key);
        } else if (key == "axis") {
            cfg.axis = detail::string(value, key);
        } else if (key == "grid") {
            cfg.grid = detail::number_list(value, key);
        } else if (key == "repeaters") {
            cfg.repeaters.clear();
            for (double v : detail::number_list(value, key)) {
                if (v < 0.0 || v != std::floor(v) || v > 1023.0) {
                    throw ConfigError(key, "repeater counts must be integers in [0, 1023]");
                }
                cfg.repeaters.push_back(static_cast<int>(v));
            }
        } else if (key == "end_to_end_loss_db") {
            cfg.end_to_end_loss_db = detail::number_list(value, key);
        } else if (key == "elementary_fidelity") {
            cfg.elementary_fidelity = detail::number_list(value, key);
        } else if (key == "total_length_m") {
            cfg.total_length_m = detail::number(value, key);
        } else if (key == "refractive_index") {
            cfg.refractive_index = detail::number(value, key);
        } else if (key == "charge_swap_signaling") {
            if (!value.is_boolean()) {
                throw ConfigError(key, "must be true or false");
            }
            cfg.charge_swap_signaling = value.get<bool>();
        } else if (key == "exposure_s") {
            cfg.exposure_s = detail::number(value, key);
            if (!(cfg.exposure_s >= 0.0)) {
                throw ConfigError(key, "must be non-negative");
            }
        } else if (key == "po_window_ps") {
            cfg.po_window_ps = detail::integer(value, key);
            if (cfg.po_window_ps < 1) {
                throw ConfigError(key, "must be positive");
            }
        } else {
            throw ConfigError(key, "unknown configuration key");
        }
    }
    p.validate();
}

// ---------------------------------------------------------------------------
// Grids

inline std::vector<double> linspace(double lo, double hi, int n)
{
    std::vector<double> out;
    for (int k = 0; k < n; ++k) {
        out.push_back(n == 1 ? lo : lo + (hi - lo) * k / (n - 1));
    }
    return out;
}

inline std::vector<double> logspace(double lo, double hi, int n)
{
    std::vector<double> out;
    for (int k = 0; k < n; ++k) {
        out.push_back(n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(k) / (n - 1)));
    }
    return out;
}

/// 100 log-spaced windows from 10 ps to 10 us, rounded to whole picoseconds.
inline std::vector<std::int64_t> default_t_c_grid()
{
    std::vector<std::int64_t> out;
    for (double v : logspace(10.0, 1e7, 100)) {
        out.push_back(std::llround(v));
    }
    return out;
}

inline std::vector<std::int64_t> t_c_grid(const RunConfig& cfg)
{
    if (!cfg.t_c_grid_ps.empty()) {
        return cfg.t_c_grid_ps;
    }
    if (cfg.coincidence_window_set) {
        return {cfg.experiment.coincidence_window.ps};
    }
    return default_t_c_grid();
}

struct SweepAxis
{
    const char* name;
    const char* column;
    std::function<std::vector<double>()> default_grid;
    std::function<void(ExperimentParams&, double)> apply;
};

inline const std::vector<SweepAxis>& sweep_axes()
{
    static const std::vector<SweepAxis> axes{
        {"loss", "loss_db", [] { return linspace(0.0, 30.0, 16); },
         [](ExperimentParams& p, double v) { p.loss_alice_db = p.loss_bob_db = v; }},
        {"dead_time", "dead_time_ps", [] { return logspace(450.0, 4.5e6, 13); },
         [](ExperimentParams& p, double v) { p.alice.dead_time = p.bob.dead_time = SimTime{std::llround(v)}; }},
        {"resolution", "detection_resolution_ps", [] { return logspace(16.0, 1.6e5, 13); },
         [](ExperimentParams& p, double v) { p.detection_resolution_fwhm_ps = v; }},
        {"dark_rate", "dark_rate_cps", [] { return logspace(10.0, 1e6, 11); },
         [](ExperimentParams& p, double v) { p.alice.dark_rate_cps = p.bob.dark_rate_cps = v; }},
        {"brightness", "brightness_cps", [] { return logspace(1.5e4, 1.5e8, 9); },
         [](ExperimentParams& p, double v) { p.brightness_cps = v; }},
        {"visibility", "visibility", [] { return linspace(0.75, 1.0, 11); },
         [](ExperimentParams& p, double v) { p.set_visibility(v); }},
        {"t_c", "t_c_ps", [] { return logspace(10.0, 1e7, 19); },
         [](ExperimentParams& p, double v) { p.coincidence_window = SimTime{std::max<std::int64_t>(1, std::llround(v))}; }},
    };
    return axes;
}

inline const SweepAxis& find_axis(const std::string& name)
{
    for (const auto& a : sweep_axes()) {
        if (name == a.name) {
            return a;
        }
    }
    throw ConfigError("axis", "unknown sweep axis '" + name +
                                  "'; expected loss, dead_time, resolution, dark_rate, brightness, visibility or t_c");
}

// ---------------------------------------------------------------------------
// Commands

namespace detail {

inline void write_to(const std::string& path, std::ostream& fallback, const std::function<void(std::ostream&)>& body)
{
    if (path.empty() || path == "-") {
        body(fallback);
        return;
    }
    std::ofstream f(path);
    if (!f) {
        throw ConfigError("output", "cannot open '" + path + "' for writing");
    }
    body(f);
}

inline unsigned worker_count(unsigned requested, std::size_t jobs)
{
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(requested ? requested : hw, jobs)));
}

/// Runs job(i) for i in [0, n) on a small pool; results keep index order.
template <class Result, class Job>
std::vector<Result> parallel_map(std::size_t n, unsigned threads, Job job)
{
    std::vector<Result> out(n);
    const unsigned workers = worker_count(threads, n);
    auto work = [&](unsigned w) {
        for (std::size_t i = w; i < n; i += workers) {
            out[i] = job(i);
        }
    };
    if (workers <= 1) {
        work(0);
        return out;
    }
    std::vector<std::future<void>> pending;
    for (unsigned w = 0; w < workers; ++w) {
        pending.push_back(std::async(std::launch::async, work, w));
    }
    for (auto& f : pending) {
        f.get();
    }
    return out;
}

} // namespace detail

inline void cmd_theory(const RunConfig& cfg, const nlohmann::json& config, std::ostream& out)
{
    nlohmann::json rows = nlohmann::json::array();
    std::ostringstream csv;
    for (std::int64_t t_c : t_c_grid(cfg)) {
        ExperimentParams p = cfg.experiment;
        p.coincidence_window = SimTime{t_c};
        const auto m = analytic::full_model(p);
        write_key_rate_row(csv, t_c, m.raw_key_rate, 0.0, m.qber, 0.0, m.secure_key_rate);
        rows.push_back(to_json(m, p.coincidence_window));
    }
    detail::write_to(cfg.output, out, [&](std::ostream& os) {
        if (cfg.format == "json") {
            os << nlohmann::json{{"command", "theory"}, {"config", config}, {"metrics", rows}}.dump(2) << '\n';
        } else {
            write_provenance(os, "theory", config, cfg.seed);
            os << kKeyRateCsvHeader << '\n' << csv.str();
        }
    });
}

inline void cmd_simulate(const RunConfig& cfg, const nlohmann::json& config, std::ostream& out, std::ostream& err)
{
    bbm92::SimulationOptions opt;
    opt.threads = cfg.threads;
    const std::uint64_t shots = cfg.shots.value_or(4'000'000);
    const auto run = bbm92::run_protocol_multishot(cfg.experiment, shots, cfg.seed, opt);

    if (!cfg.timetags.empty()) {
        detail::write_to(cfg.timetags, out, [&](std::ostream& os) { write_timetags(os, run.alice, run.bob); });
    }
    if (!cfg.correlation.empty()) {
        const auto pairs = bbm92::match_coincidences(run.alice, run.bob, cfg.experiment.coincidence_window);
        detail::write_to(cfg.correlation, out, [&](std::ostream& os) {
            write_provenance(os, "simulate", config, cfg.seed);
            write_correlation_csv(os, bbm92::correlation_matrix(pairs));
        });
    }

    nlohmann::json rows = nlohmann::json::array();
    std::ostringstream csv;
    bool warned = false;
    for (std::int64_t t_c : t_c_grid(cfg)) {
        const auto m = bbm92::evaluate(run.alice, run.bob, SimTime{t_c}, {}, cfg.state);
        if (m.low_statistics && !warned) {
            err << "warning: fewer than " << bbm92::kLowStatisticsBits << " sifted bits at t_c = " << t_c
                << " ps; metrics are low-statistics\n";
            warned = true;
        }
        write_key_rate_row(csv, t_c, m.raw_key_rate, m.raw_key_rate_se, m.qber, m.qber_se, m.secure_key_rate);
        rows.push_back(to_json(m));
    }
    detail::write_to(cfg.output, out, [&](std::ostream& os) {
        if (cfg.format == "json") {
            os << nlohmann::json{{"command", "simulate"}, {"config", config}, {"shots", shots}, {"metrics", rows}}.dump(2)
               << '\n';
        } else {
            write_provenance(os, "simulate", config, cfg.seed);
            os << kKeyRateCsvHeader << '\n' << csv.str();
        }
    });
}

struct SweepRow
{
    double value = 0.0;
    analytic::KeyMetrics theory;
    bbm92::EmpiricalKeyMetrics sim;
};

inline void cmd_sweep(const RunConfig& cfg, const nlohmann::json& config, std::ostream& out)
{
    if (cfg.axis.empty()) {
        throw ConfigError("axis", "a sweep axis is required");
    }
    const SweepAxis& axis = find_axis(cfg.axis);
    const std::vector<double> grid = cfg.grid.empty() ? axis.default_grid() : cfg.grid;
    const std::uint64_t shots = cfg.shots.value_or(1'000'000);

    ExperimentParams base = cfg.experiment;
    if (!cfg.coincidence_window_set) {
        base.coincidence_window = SimTime{2000};
    }
    // validate every point before running any
    for (double v : grid) {
        ExperimentParams p = base;
        axis.apply(p, v);
        p.validate();
    }
    bbm92::SimulationOptions opt;
    opt.threads = 1;
    const auto rows = detail::parallel_map<SweepRow>(grid.size(), cfg.threads, [&](std::size_t i) {
        ExperimentParams p = base;
        axis.apply(p, grid[i]);
        const auto run = bbm92::run_protocol_multishot(p, shots, derive_seed(cfg.seed, "sweep.point", i), opt);
        return SweepRow{grid[i], analytic::full_model(p),
                        bbm92::evaluate(run.alice, run.bob, p.coincidence_window, {}, cfg.state)};
    });

    detail::write_to(cfg.output, out, [&](std::ostream& os) {
        if (cfg.format == "json") {
            nlohmann::json j = nlohmann::json::array();
            for (const auto& r : rows) {
                j.push_back({{axis.column, r.value},
                             {"theory", to_json(r.theory, SimTime{r.sim.t_c_ps})},
                             {"simulation", to_json(r.sim)}});
            }
            os << nlohmann::json{{"command", "sweep"}, {"axis", axis.name}, {"config", config}, {"rows", j}}.dump(2)
               << '\n';
            return;
        }
        write_provenance(os, "sweep", config, cfg.seed);
        os << axis.column
           << ",theory_raw_key_rate_cps,theory_qber,theory_secure_key_rate_cps,sim_raw_key_rate_cps,"
              "sim_raw_key_rate_se,sim_qber,sim_qber_se,sim_secure_key_rate_cps,sim_secure_key_rate_se\n";
        for (const auto& r : rows) {
            os << format_number(r.value) << ',' << format_number(r.theory.raw_key_rate) << ','
               << format_number(r.theory.qber) << ',' << format_number(r.theory.secure_key_rate) << ','
               << format_number(r.sim.raw_key_rate) << ',' << format_number(r.sim.raw_key_rate_se) << ','
               << format_number(r.sim.qber) << ',' << format_number(r.sim.qber_se) << ','
               << format_number(r.sim.secure_key_rate) << ',' << format_number(r.sim.secure_key_rate_se) << '\n';
        }
    });
}

inline void cmd_repeater(const RunConfig& cfg, const nlohmann::json& config, std::ostream& out)
{
    const std::vector<double> fidelities =
        cfg.elementary_fidelity.empty() ? linspace(0.8, 1.0, 21) : cfg.elementary_fidelity;
    const std::uint64_t shots = cfg.shots.value_or(1000);
    struct Point
    {
        int r;
        double loss;
        double f_i;
    };
    std::vector<Point> points;
    for (int r : cfg.repeaters) {
        for (double loss : cfg.end_to_end_loss_db) {
            for (double f : fidelities) {
                points.push_back(Point{r, loss, f});
            }
        }
    }
    auto chain = [&](const Point& pt) {
        auto p = repeater::RepeaterChainParams::for_end_to_end(pt.r, cfg.total_length_m, pt.loss, pt.f_i);
        p.refractive_index = cfg.refractive_index;
        p.charge_swap_signaling = cfg.charge_swap_signaling;
        return p;
    };
    for (const auto& pt : points) {
        chain(pt).validate();
    }
    const auto rows = detail::parallel_map<repeater::ChainKeyRate>(points.size(), cfg.threads, [&](std::size_t i) {
        return repeater::chain_secure_key_rate(chain(points[i]), shots, derive_seed(cfg.seed, "repeater.point", i));
    });

    detail::write_to(cfg.output, out, [&](std::ostream& os) {
        if (cfg.format == "json") {
            nlohmann::json j = nlohmann::json::array();
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const auto& k = rows[i];
                j.push_back({{"r", points[i].r},
                             {"end_to_end_loss_db", points[i].loss},
                             {"F_i", points[i].f_i},
                             {"ent_rate_c_over_L0", k.entanglement.rate_c_over_l0},
                             {"ent_rate_se", k.entanglement.rate_se},
                             {"fidelity", k.fidelity},
                             {"qber", k.qber},
                             {"secure_key_rate", k.secure_key_rate_c_over_l0},
                             {"secure_key_rate_se", k.secure_key_rate_se},
                             {"secure_key_rate_cps", k.secure_key_rate_cps},
                             {"secure_key_rate_cps_se", k.secure_key_rate_cps_se}});
            }
            os << nlohmann::json{{"command", "repeater"}, {"config", config}, {"shots", shots}, {"rows", j}}.dump(2)
               << '\n';
            return;
        }
        write_provenance(os, "repeater", config, cfg.seed);
        os << kRepeaterCsvHeader << '\n';
        for (std::size_t i = 0; i < rows.size(); ++i) {
            write_repeater_row(os, points[i].r, points[i].loss, points[i].f_i, rows[i]);
        }
    });
}

inline void cmd_estimate(const RunConfig& cfg, const nlohmann::json& config, const std::string& path,
                         std::ostream& out, std::ostream& err)
{
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("timetags", "cannot open '" + path + "'");
    }
    const auto [a, b] = read_timetags(f, cfg.exposure_s);
    if (a.tags.empty() || b.tags.empty()) {
        throw InsufficientStatistics("timetag file needs detections from both A and B");
    }
    estimate::EstimateOptions opt;
    opt.dark_rate_alice_cps = cfg.experiment.alice.dark_rate_cps;
    opt.dark_rate_bob_cps = cfg.experiment.bob.dark_rate_cps;
    opt.state = cfg.state;
    opt.po_window = SimTime{cfg.po_window_ps};
    const auto est = estimate::estimate_parameters(a, b, opt);
    for (const auto& w : est.warnings) {
        err << "warning: " << w << '\n';
    }
    const auto pairs = bbm92::match_coincidences(a, b, cfg.experiment.coincidence_window, est.delays);
    const auto cm = bbm92::correlation_matrix(pairs);
    if (!cfg.correlation.empty()) {
        detail::write_to(cfg.correlation, out, [&](std::ostream& os) {
            write_provenance(os, "estimate", config, cfg.seed);
            write_correlation_csv(os, cm);
        });
    }
    auto j = to_json(est);
    j["correlation_matrix"] = cm.probability;
    j["provenance"] = {{"version", kVersion}, {"config_hash", config_hash(config)}, {"input", path}};
    detail::write_to(cfg.output, out, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

// ---------------------------------------------------------------------------
// Entry point

namespace detail {

struct BoundFlag
{
    CLI::Option* option;
    const Key* key;
};

inline std::string long_name(const char* key)
{
    std::string s = std::string("--") + key;
    std::replace(s.begin(), s.end(), '_', '-');
    return s;
}

inline std::string flag_name(const char* key)
{
    const std::string s = long_name(key);
    return s == "--output" ? "-o," + s : s;
}

inline void bind(CLI::App* app, const std::vector<Key>& keys, std::vector<BoundFlag>& flags)
{
    for (const auto& k : keys) {
        if (app->get_option_no_throw(long_name(k.name)) != nullptr) {
            continue;
        }
        CLI::Option* o = nullptr;
        switch (k.kind) {
        case Kind::Flag: o = app->add_flag(flag_name(k.name), k.help); break;
        case Kind::NumberList:
            o = app->add_option(flag_name(k.name), k.help)->expected(1, -1)->delimiter(',')->type_name("NUM,...");
            break;
        case Kind::Number: o = app->add_option(flag_name(k.name), k.help)->type_name("NUM"); break;
        case Kind::Integer: o = app->add_option(flag_name(k.name), k.help)->type_name("INT"); break;
        case Kind::String: o = app->add_option(flag_name(k.name), k.help)->type_name("TEXT"); break;
        }
        flags.push_back(BoundFlag{o, &k});
    }
}

inline nlohmann::json flag_overrides(const std::vector<BoundFlag>& flags)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : flags) {
        if (f.option->count() == 0) {
            continue;
        }
        const std::string key = f.key->name;
        try {
            switch (f.key->kind) {
            case Kind::Flag: j[key] = true; break;
            case Kind::NumberList: j[key] = f.option->as<std::vector<double>>(); break;
            case Kind::Number: j[key] = f.option->as<double>(); break;
            case Kind::Integer: j[key] = f.option->as<std::int64_t>(); break;
            case Kind::String: j[key] = f.option->as<std::string>(); break;
            }
        } catch (const CLI::Error&) {
            throw ConfigError(key, "could not parse '" + f.option->results().front() + "'");
        }
    }
    return j;
}

inline nlohmann::json load_config(const std::string& path)
{
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("config", "cannot open '" + path + "'");
    }
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config", e.what());
    }
}

} // namespace detail

/// Parses arguments and dispatches; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"BBM92 QKD discrete-event simulator and analytical toolkit", "qkdsim"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    struct Sub
    {
        CLI::App* app;
        std::vector<detail::BoundFlag> flags;
        std::string config_path;
    };
    std::vector<std::pair<std::string, std::string>> commands{
        {"theory", "closed-form key metrics over a coincidence-window grid"},
        {"simulate", "multi-shot simulation; key metrics over a coincidence-window grid"},
        {"sweep", "theory and simulation side by side along one parameter axis"},
        {"repeater", "repeater-chain entanglement and secure key rates"},
        {"estimate", "estimate brightness, detection resolution and p_o from timetags"},
    };
    std::vector<Sub> subs(commands.size());
    std::string timetag_input;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        auto& s = subs[i];
        const auto& name = commands[i].first;
        s.app = app.add_subcommand(name, commands[i].second);
        s.app->add_option("--config", s.config_path, "JSON config file; flags override its values");
        detail::bind(s.app, run_keys(), s.flags);
        if (name == "estimate") {
            s.app->add_option("timetags", timetag_input, "timetag file")->required();
        }
        if (name != "repeater") {
            detail::bind(s.app, experiment_keys(), s.flags);
        }
        detail::bind(s.app, command_keys(name), s.flags);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (!subs[i].app->parsed()) {
                continue;
            }
            const std::string& name = commands[i].first;
            nlohmann::json config =
                subs[i].config_path.empty() ? nlohmann::json::object() : detail::load_config(subs[i].config_path);
            if (!config.is_object()) {
                throw ConfigError("config", "must be a JSON object");
            }
            config.update(detail::flag_overrides(subs[i].flags));
            RunConfig cfg;
            apply_config(cfg, config);
            if (name == "theory") {
                cmd_theory(cfg, config, out);
            } else if (name == "simulate") {
                cmd_simulate(cfg, config, out, err);
            } else if (name == "sweep") {
                cmd_sweep(cfg, config, out);
            } else if (name == "repeater") {
                cmd_repeater(cfg, config, out);
            } else if (name == "estimate") {
                cmd_estimate(cfg, config, timetag_input, out, err);
            }
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const DataFormatError& e) {
        err << "data format error: " << e.what() << '\n';
        return kDataError;
    } catch (const InsufficientStatistics& e) {
        err << "insufficient statistics: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}

} // namespace qkdsim::cli
