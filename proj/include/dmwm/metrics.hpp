#pragma once

// Append-only training metrics with a fixed CSV schema and a JSON mirror.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmwm/logic.hpp"

namespace dmwm::metrics {

struct MetricsRow {
  std::size_t step = 0;        // gradient update rounds so far
  std::size_t env_steps = 0;   // decision steps × action repeat
  std::size_t env_trials = 0;  // real-environment episodes
  double loss_pred = 0.0;
  double loss_dyn = 0.0;
  double loss_rep = 0.0;
  double loss_logic_elbo = 0.0;
  double loss_s2 = 0.0;
  std::array<double, logic::kRuleCount> residuals{};
  std::optional<double> eval_return_mean;
  std::optional<double> eval_return_std;
  std::optional<double> consistency_mean;
  std::optional<double> consistency_std;

  bool operator==(const MetricsRow&) const = default;
};

// "step,env_steps,env_trials,loss_pred,…,r1,…,r14,eval_return_mean,…,consistency_std".
const std::string& csv_header();

// Throws NumericError naming the field when a loss component is not finite.
void require_finite(const MetricsRow& row);

void write_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
// Absent optional fields are empty cells.
std::string csv_line(const MetricsRow& row);
std::vector<MetricsRow> read_csv(std::istream& in);

nlohmann::json to_json(const MetricsRow& row);
MetricsRow from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> rows_from_json(const nlohmann::json& j);

enum class Format { kCsv, kJson };
Format parse_format(const std::string& name);
void export_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows, Format format);
std::vector<MetricsRow> import_metrics(const std::filesystem::path& path);

}  // namespace dmwm::metrics
