#include "dmwm/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "dmwm/error.hpp"

namespace dmwm::metrics {

namespace {

constexpr std::size_t kColumns = 8 + logic::kRuleCount + 4;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

double to_double(const std::string& s, std::size_t line) {
  double out = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("metrics CSV line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return out;
}

std::size_t to_size(const std::string& s, std::size_t line) {
  std::size_t out = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("metrics CSV line " + std::to_string(line) + ": bad integer '" + s + "'");
  }
  return out;
}

std::optional<double> to_optional(const std::string& s, std::size_t line) {
  if (s.empty()) return std::nullopt;
  return to_double(s, line);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

const std::string& csv_header() {
  static const std::string header = [] {
    std::string h = "step,env_steps,env_trials,loss_pred,loss_dyn,loss_rep,loss_logic_elbo,loss_s2";
    for (const std::string& r : logic::rule_names()) h += "," + r;
    return h + ",eval_return_mean,eval_return_std,consistency_mean,consistency_std";
  }();
  return header;
}

void require_finite(const MetricsRow& row) {
  auto check = [&](double v, const std::string& name) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite " + name + " at step " + std::to_string(row.step));
    }
  };
  check(row.loss_pred, "loss_pred");
  check(row.loss_dyn, "loss_dyn");
  check(row.loss_rep, "loss_rep");
  check(row.loss_logic_elbo, "loss_logic_elbo");
  check(row.loss_s2, "loss_s2");
  for (std::size_t i = 0; i < logic::kRuleCount; ++i) check(row.residuals[i], logic::rule_names()[i]);
}

std::string csv_line(const MetricsRow& r) {
  std::string out = std::to_string(r.step) + "," + std::to_string(r.env_steps) + "," + std::to_string(r.env_trials);
  for (double v : {r.loss_pred, r.loss_dyn, r.loss_rep, r.loss_logic_elbo, r.loss_s2}) out += "," + fmt(v);
  for (double v : r.residuals) out += "," + fmt(v);
  for (const auto* v : {&r.eval_return_mean, &r.eval_return_std, &r.consistency_mean, &r.consistency_std}) {
    out += "," + fmt(*v);
  }
  return out;
}

void write_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << csv_header() << '\n';
  for (const MetricsRow& r : rows) out << csv_line(r) << '\n';
}

std::vector<MetricsRow> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != csv_header()) throw FormatError("metrics CSV: header does not match schema");
  std::vector<MetricsRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != kColumns) {
      throw FormatError("metrics CSV line " + std::to_string(number) + ": expected " + std::to_string(kColumns) +
                        " cells");
    }
    MetricsRow r;
    r.step = to_size(cells[0], number);
    r.env_steps = to_size(cells[1], number);
    r.env_trials = to_size(cells[2], number);
    r.loss_pred = to_double(cells[3], number);
    r.loss_dyn = to_double(cells[4], number);
    r.loss_rep = to_double(cells[5], number);
    r.loss_logic_elbo = to_double(cells[6], number);
    r.loss_s2 = to_double(cells[7], number);
    for (std::size_t i = 0; i < logic::kRuleCount; ++i) r.residuals[i] = to_double(cells[8 + i], number);
    const std::size_t e = 8 + logic::kRuleCount;
    r.eval_return_mean = to_optional(cells[e], number);
    r.eval_return_std = to_optional(cells[e + 1], number);
    r.consistency_mean = to_optional(cells[e + 2], number);
    r.consistency_std = to_optional(cells[e + 3], number);
    rows.push_back(r);
  }
  return rows;
}

nlohmann::json to_json(const MetricsRow& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["env_steps"] = r.env_steps;
  j["env_trials"] = r.env_trials;
  j["loss_pred"] = r.loss_pred;
  j["loss_dyn"] = r.loss_dyn;
  j["loss_rep"] = r.loss_rep;
  j["loss_logic_elbo"] = r.loss_logic_elbo;
  j["loss_s2"] = r.loss_s2;
  for (std::size_t i = 0; i < logic::kRuleCount; ++i) j[logic::rule_names()[i]] = r.residuals[i];
  j["eval_return_mean"] = optional_json(r.eval_return_mean);
  j["eval_return_std"] = optional_json(r.eval_return_std);
  j["consistency_mean"] = optional_json(r.consistency_mean);
  j["consistency_std"] = optional_json(r.consistency_std);
  return j;
}

MetricsRow from_json(const nlohmann::json& j) {
  try {
    MetricsRow r;
    r.step = j.at("step").get<std::size_t>();
    r.env_steps = j.at("env_steps").get<std::size_t>();
    r.env_trials = j.at("env_trials").get<std::size_t>();
    r.loss_pred = j.at("loss_pred").get<double>();
    r.loss_dyn = j.at("loss_dyn").get<double>();
    r.loss_rep = j.at("loss_rep").get<double>();
    r.loss_logic_elbo = j.at("loss_logic_elbo").get<double>();
    r.loss_s2 = j.at("loss_s2").get<double>();
    for (std::size_t i = 0; i < logic::kRuleCount; ++i) r.residuals[i] = j.at(logic::rule_names()[i]).get<double>();
    r.eval_return_mean = optional_from(j, "eval_return_mean");
    r.eval_return_std = optional_from(j, "eval_return_std");
    r.consistency_mean = optional_from(j, "consistency_mean");
    r.consistency_std = optional_from(j, "consistency_std");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics JSON: ") + e.what());
  }
}

nlohmann::json to_json(const std::vector<MetricsRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const MetricsRow& r : rows) j.push_back(to_json(r));
  return j;
}

std::vector<MetricsRow> rows_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("metrics JSON: expected an array of rows");
  std::vector<MetricsRow> rows;
  for (const auto& item : j) rows.push_back(from_json(item));
  return rows;
}

Format parse_format(const std::string& name) {
  if (name == "csv") return Format::kCsv;
  if (name == "json") return Format::kJson;
  throw ConfigError("unknown metrics format '" + name + "' (valid: csv, json)");
}

void export_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows, Format format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write metrics to " + path.string());
  if (format == Format::kCsv) {
    write_csv(out, rows);
  } else {
    out << to_json(rows).dump(1) << '\n';
  }
  if (!out) throw IoError("failed writing metrics to " + path.string());
}

std::vector<MetricsRow> import_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open metrics file " + path.string());
  if (path.extension() == ".json") {
    try {
      return rows_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return read_csv(in);
}

}  // namespace dmwm::metrics
