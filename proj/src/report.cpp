#include "cp4vlm/report.hpp"

#include "cp4vlm/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace cp4vlm {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string level_key(double level) { return format_number(level); }

ordered_json quantiles_json(const std::map<double, double>& quantiles) {
    ordered_json out = ordered_json::object();
    for (const auto& [level, value] : quantiles) out[level_key(level)] = value;
    return out;
}

ordered_json histogram_json(const std::map<int, Index>& histogram) {
    ordered_json out = ordered_json::object();
    for (const auto& [size, count] : histogram) out[std::to_string(size)] = count;
    return out;
}

} // namespace

std::string format_number(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

ordered_json to_json(const ConformalCalibration& calibration) {
    ordered_json j;
    j["alpha"] = calibration.alpha;
    j["temperature"] = calibration.temperature;
    j["q_hat"] = calibration.q_hat;
    j["n_cal"] = calibration.n_cal;
    return j;
}

ConformalCalibration calibration_from_json(const json& j) {
    for (const char* key : {"alpha", "temperature", "q_hat", "n_cal"}) {
        if (!j.contains(key) || !j[key].is_number())
            fail(ErrorKind::Io, std::string("calibration JSON needs numeric field '") + key + "'");
    }
    ConformalCalibration c;
    c.alpha = j["alpha"].get<double>();
    c.temperature = j["temperature"].get<double>();
    c.q_hat = j["q_hat"].get<double>();
    c.n_cal = j["n_cal"].get<Index>();
    check_alpha(c.alpha);
    check_temperature(c.temperature);
    if (!(c.q_hat >= 0.0 && c.q_hat <= 1.0)) fail(ErrorKind::Io, "calibration q_hat must lie in [0, 1]");
    if (c.n_cal < 1) fail(ErrorKind::Io, "calibration n_cal must be positive");
    return c;
}

ConformalCalibration load_calibration(const std::filesystem::path& path) {
    try {
        return calibration_from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        fail(ErrorKind::Io, "'" + path.string() + "': " + e.what());
    }
}

ordered_json to_json(const FoldReport& fold) {
    ordered_json j;
    j["seed"] = fold.seed;
    j["alpha"] = fold.alpha;
    j["mode"] = fold.mode;
    j["tau_used"] = fold.tau_used;
    j["inv_temp"] = 1.0 / fold.tau_used;
    j["q_hat"] = fold.q_hat;
    j["n_cal"] = fold.n_cal;
    j["n_test"] = fold.n_test;
    j["coverage"] = fold.coverage;
    j["mean_size"] = fold.mean_size;
    j["size_quantiles"] = quantiles_json(fold.size_quantiles);
    j["empty_rate"] = fold.empty_rate;
    j["top1_accuracy"] = fold.top1_accuracy;
    j["size_histogram"] = histogram_json(fold.size_histogram);
    return j;
}

ordered_json to_json(const AggregateReport& aggregate) {
    ordered_json j;
    j["alpha"] = aggregate.alpha;
    j["mode"] = aggregate.mode;
    j["folds"] = aggregate.folds;
    ordered_json metrics = ordered_json::object();
    for (const std::string& name : aggregate_metric_names()) {
        const MetricSummary& m = aggregate.metrics.at(name);
        metrics[name] = {{"mean", m.mean}, {"std", m.std}};
    }
    j["metrics"] = metrics;
    j["size_quantiles"] = quantiles_json(aggregate.size_quantiles);
    j["size_histogram"] = histogram_json(aggregate.size_histogram);
    return j;
}

ordered_json to_json(const SweepReport& sweep) {
    ordered_json j;
    j["folds"] = ordered_json::array();
    for (const auto& f : sweep.folds) j["folds"].push_back(to_json(f));
    j["aggregates"] = ordered_json::array();
    for (const auto& a : sweep.aggregates) j["aggregates"].push_back(to_json(a));
    j["baseline_comparison"] = ordered_json::array();
    for (const auto& c : sweep.baseline_comparison) {
        ordered_json cj;
        cj["alpha"] = c.alpha;
        cj["baseline_mode"] = c.baseline_mode;
        cj["tuned_mode"] = c.tuned_mode;
        ordered_json metrics = ordered_json::object();
        for (const std::string& name : aggregate_metric_names()) {
            const auto& v = c.metrics.at(name);
            metrics[name] = {{"baseline", v[0]}, {"tuned", v[1]}, {"delta", v[2]}};
        }
        cj["metrics"] = metrics;
        cj["tail_gain"] = quantiles_json(c.tail_gain);
        j["baseline_comparison"].push_back(cj);
    }
    return j;
}

std::string folds_csv(const std::vector<FoldReport>& folds) {
    std::ostringstream out;
    out << "seed,alpha,mode,inv_temp,q_hat,coverage,mean_size,q90,q95,q975,empty_rate,accuracy\n";
    for (const auto& f : folds) {
        out << f.seed << ',' << format_number(f.alpha) << ',' << f.mode << ',' << format_number(1.0 / f.tau_used) << ','
            << format_number(f.q_hat) << ',' << format_number(f.coverage) << ',' << format_number(f.mean_size) << ','
            << format_number(f.size_quantiles.at(0.9)) << ',' << format_number(f.size_quantiles.at(0.95)) << ','
            << format_number(f.size_quantiles.at(0.975)) << ',' << format_number(f.empty_rate) << ','
            << format_number(f.top1_accuracy) << '\n';
    }
    return out.str();
}

std::string histogram_csv(const std::map<int, Index>& histogram) {
    std::ostringstream out;
    out << "size,count\n";
    for (const auto& [size, count] : histogram) out << size << ',' << count << '\n';
    return out.str();
}

std::string curve_csv(const QhatCurve& curve) {
    std::ostringstream out;
    out << "inv_temp,q_hat\n";
    for (const auto& p : curve) out << format_number(p.inverse_temp) << ',' << format_number(p.q_hat) << '\n';
    return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << contents;
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace cp4vlm
