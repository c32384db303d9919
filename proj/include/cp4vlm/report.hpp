#pragma once

#include "cp4vlm/conformal.hpp"
#include "cp4vlm/harness.hpp"
#include "cp4vlm/temperature.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace cp4vlm {

// Shortest decimal string that parses back to the same double.
std::string format_number(double value);

nlohmann::ordered_json to_json(const ConformalCalibration& calibration);
ConformalCalibration calibration_from_json(const nlohmann::json& j);
ConformalCalibration load_calibration(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const FoldReport& fold);
nlohmann::ordered_json to_json(const AggregateReport& aggregate);
nlohmann::ordered_json to_json(const SweepReport& sweep);

// seed,alpha,mode,inv_temp,q_hat,coverage,mean_size,q90,q95,q975,empty_rate,accuracy
std::string folds_csv(const std::vector<FoldReport>& folds);
// size,count
std::string histogram_csv(const std::map<int, Index>& histogram);
// inv_temp,q_hat
std::string curve_csv(const QhatCurve& curve);

void write_file(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

} // namespace cp4vlm
