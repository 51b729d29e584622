#pragma once

#include "qkdsim/analytic.hpp"
#include "qkdsim/bbm92.hpp"
#include "qkdsim/errors.hpp"
#include "qkdsim/estimate.hpp"
#include "qkdsim/random.hpp"
#include "qkdsim/repeater.hpp"

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qkdsim {

inline constexpr std::string_view kVersion = "0.3.0";
inline constexpr std::string_view kTimetagHeader = "# qnet-timetags v1";

/// Shortest round-trippable-enough decimal form used in every CSV we write.
inline std::string format_number(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Timetag files: header line, then `node,detector,timestamp_ps` rows sorted by time.

inline void write_timetags(std::ostream& os, const bbm92::TimeTagStream& a, const bbm92::TimeTagStream& b)
{
    os << kTimetagHeader << '\n';
    std::size_t i = 0;
    std::size_t j = 0;
    auto emit = [&os](const TimeTag& t) {
        os << party_code(t.node) << ',' << static_cast<int>(t.detector) << ',' << t.timestamp.ps << '\n';
    };
    while (i < a.tags.size() || j < b.tags.size()) {
        if (j == b.tags.size() || (i < a.tags.size() && a.tags[i].timestamp <= b.tags[j].timestamp)) {
            emit(a.tags[i++]);
        } else {
            emit(b.tags[j++]);
        }
    }
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    return s;
}

} // namespace detail

/// Reads a timetag file. The acquisition duration is taken from
/// `exposure_s` when positive, else from the span of the timestamps.
inline std::pair<bbm92::TimeTagStream, bbm92::TimeTagStream> read_timetags(std::istream& is, double exposure_s = 0.0)
{
    std::pair<bbm92::TimeTagStream, bbm92::TimeTagStream> out;
    out.first.node = Party::Alice;
    out.second.node = Party::Bob;
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(is, line)) {
        throw DataFormatError(1, "empty file, expected header '" + std::string(kTimetagHeader) + "'");
    }
    ++line_no;
    if (detail::trim(line) != kTimetagHeader) {
        throw DataFormatError(1, "expected header '" + std::string(kTimetagHeader) + "'");
    }
    std::int64_t last = std::numeric_limits<std::int64_t>::min();
    std::int64_t first = 0;
    bool any = false;
    while (std::getline(is, line)) {
        ++line_no;
        const auto row = detail::trim(line);
        if (row.empty()) {
            continue;
        }
        const auto fields = detail::split(row, ',');
        if (fields.size() != 3) {
            throw DataFormatError(line_no, "expected 3 fields node,detector,timestamp_ps");
        }
        const auto node = detail::trim(fields[0]);
        if (node != "A" && node != "B") {
            throw DataFormatError(line_no, "node must be A or B");
        }
        const auto det_s = detail::trim(fields[1]);
        int det = -1;
        auto [pd, ed] = std::from_chars(det_s.data(), det_s.data() + det_s.size(), det);
        if (ed != std::errc{} || pd != det_s.data() + det_s.size() || det < 0 || det > 3) {
            throw DataFormatError(line_no, "detector must be an integer in 0..3");
        }
        const auto ts_s = detail::trim(fields[2]);
        std::int64_t ts = -1;
        auto [pt, et] = std::from_chars(ts_s.data(), ts_s.data() + ts_s.size(), ts);
        if (et != std::errc{} || pt != ts_s.data() + ts_s.size() || ts < 0) {
            throw DataFormatError(line_no, "timestamp_ps must be a non-negative integer");
        }
        if (ts < last) {
            throw DataFormatError(line_no, "rows are not sorted by timestamp");
        }
        if (!any) {
            first = ts;
            any = true;
        }
        last = ts;
        const Party p = node == "A" ? Party::Alice : Party::Bob;
        auto& stream = p == Party::Alice ? out.first : out.second;
        stream.tags.push_back(TimeTag{p, static_cast<std::uint8_t>(det), SimTime{ts}, 0});
    }
    const double duration = exposure_s > 0.0 ? exposure_s : (any ? static_cast<double>(last - first) * 1e-12 : 0.0);
    out.first.acquisition_duration_s = out.second.acquisition_duration_s = duration;
    return out;
}

// ---------------------------------------------------------------------------
// JSON views

inline nlohmann::json to_json(const bbm92::EmpiricalKeyMetrics& m)
{
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
    return {
        {"singles_alice", m.singles_alice},
        {"singles_bob", m.singles_bob},
        {"true_coincidence_rate", m.true_coincidence_rate},
        {"accidental_rate", m.accidental_rate},
        {"coincidence_rate", m.coincidence_rate},
        {"raw_key_rate", m.raw_key_rate},
        {"qber", num(m.qber)},
        {"secure_key_rate", m.secure_key_rate},
        {"raw_bit_count", m.raw_bit_count},
        {"error_bit_count", m.error_bit_count},
        {"coincidence_count", m.coincidence_count},
        {"raw_key_rate_se", m.raw_key_rate_se},
        {"coincidence_rate_se", m.coincidence_rate_se},
        {"qber_se", num(m.qber_se)},
        {"secure_key_rate_se", m.secure_key_rate_se},
        {"qber_defined", m.qber_defined},
        {"low_statistics", m.low_statistics},
        {"exposure_s", m.exposure_s},
        {"t_c_ps", m.t_c_ps},
    };
}

inline nlohmann::json to_json(const analytic::KeyMetrics& m, SimTime t_c)
{
    return {
        {"singles_alice", m.singles_alice},
        {"singles_bob", m.singles_bob},
        {"true_coincidence_rate", m.true_coincidence_rate},
        {"accidental_rate", m.accidental_rate},
        {"coincidence_rate", m.coincidence_rate},
        {"raw_key_rate", m.raw_key_rate},
        {"qber", m.qber},
        {"secure_key_rate", m.secure_key_rate},
        {"t_c_ps", t_c.ps},
    };
}

// ---------------------------------------------------------------------------
// Key-rate CSV shared by `theory` and `simulate` so the two overlay directly.

inline constexpr std::string_view kKeyRateCsvHeader =
    "t_c_ps,raw_key_rate_cps,raw_key_rate_se,qber,qber_se,secure_key_rate_cps";

inline void write_key_rate_row(std::ostream& os, std::int64_t t_c_ps, double raw, double raw_se, double qber,
                               double qber_se, double secure)
{
    os << t_c_ps << ',' << format_number(raw) << ',' << format_number(raw_se) << ',' << format_number(qber) << ','
       << format_number(qber_se) << ',' << format_number(secure) << '\n';
}

inline void write_correlation_csv(std::ostream& os, const bbm92::CorrelationMatrix& cm)
{
    os << "alice\\bob,H,V,D,A\n";
    for (int r = 0; r < 4; ++r) {
        os << detector_label(r);
        for (int c = 0; c < 4; ++c) {
            os << ',' << format_number(cm.probability[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
        }
        os << '\n';
    }
}

/// FNV-1a of the canonical JSON dump, as 16 hex digits.
inline std::string config_hash(const nlohmann::json& config)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(config.dump())));
    return buf;
}

inline void write_provenance(std::ostream& os, std::string_view command, const nlohmann::json& config,
                             std::uint64_t seed)
{
    os << "# qkdsim " << kVersion << " " << command << " seed=" << seed << " config_hash=" << config_hash(config)
       << '\n';
    os << "# config=" << config.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Estimates and repeater sweeps

inline nlohmann::json to_json(const estimate::Estimates& e)
{
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : e.brightness.points) {
        points.push_back({{"t_c_ps", p.t_c_ps},
                          {"brightness_cps", std::isfinite(p.brightness_cps) ? nlohmann::json(p.brightness_cps)
                                                                             : nlohmann::json(nullptr)},
                          {"coincidences", p.coincidences}});
    }
    nlohmann::json pairings = nlohmann::json::array();
    for (const auto& w : e.resolution.pairings) {
        pairings.push_back({{"alice", detector_label(w.alice_detector)},
                            {"bob", detector_label(w.bob_detector)},
                            {"fwhm_ps", w.fwhm_ps},
                            {"peak_counts", w.peak_counts}});
    }
    return {
        {"brightness_cps", e.brightness.brightness_cps},
        {"detection_resolution_ps", e.resolution.fwhm_ps},
        {"p_o", e.po.p_o},
        {"fit_diagnostics",
         {
             {"window_min_ps", e.brightness.window_min_ps},
             {"window_max_ps", e.brightness.window_max_ps},
             {"points_used", e.brightness.points_used},
             {"slope_cps_per_ps", e.brightness.slope_per_ps},
             {"intercept_cps", e.brightness.intercept},
             {"residual_rms_cps", e.brightness.residual_rms},
             {"relative_change", e.brightness.relative_change},
             {"points", points},
             {"pairings", pairings},
             {"p_o_se", e.po.se},
             {"p_o_sifted_bits", e.po.sifted_bits},
             {"p_o_accidental_share", e.po.accidental_share},
             {"delays_alice_ps", e.delays.alice},
             {"delays_bob_ps", e.delays.bob},
             {"delay_residual_rms_ps", e.delays.residual_rms_ps},
             {"delay_pairings_used", e.delays.pairings_used},
             {"warnings", e.warnings},
         }},
    };
}

inline constexpr std::string_view kRepeaterCsvHeader =
    "r,end_to_end_loss_db,F_i,ent_rate_c_over_L0,ent_rate_se,qber,secure_key_rate,secure_key_rate_se,"
    "secure_key_rate_cps,secure_key_rate_cps_se";

inline void write_repeater_row(std::ostream& os, int r, double loss_db, double f_i, const repeater::ChainKeyRate& k)
{
    os << r << ',' << format_number(loss_db) << ',' << format_number(f_i) << ','
       << format_number(k.entanglement.rate_c_over_l0) << ',' << format_number(k.entanglement.rate_se) << ','
       << format_number(k.qber) << ',' << format_number(k.secure_key_rate_c_over_l0) << ','
       << format_number(k.secure_key_rate_se) << ',' << format_number(k.secure_key_rate_cps) << ','
       << format_number(k.secure_key_rate_cps_se) << '\n';
}

} // namespace qkdsim
