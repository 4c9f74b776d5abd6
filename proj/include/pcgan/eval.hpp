#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace pcgan {

/// Exact-match fraction. UsageError on length mismatch or empty input.
double accuracy(std::span<const int> predicted, std::span<const int> truth);

/// Error function by power series (|x| < 2.5) or continued fraction, accurate to ~1e-14.
double erf_series(double x);
double erfc_series(double x);

/// Survival function of the chi-squared distribution with one degree of freedom.
double chi2_sf_df1(double x);

/// Joint correctness counts of classifiers a and b; index 1 = correct.
struct ContingencyTable {
  std::int64_t n00 = 0;  // both wrong
  std::int64_t n01 = 0;  // a wrong, b correct (c)
  std::int64_t n10 = 0;  // a correct, b wrong (b)
  std::int64_t n11 = 0;  // both right

  std::int64_t total() const { return n00 + n01 + n10 + n11; }
};

bool operator==(const ContingencyTable& a, const ContingencyTable& b);

struct McNemarResult {
  double chi2 = 0.0;
  double p = 1.0;
  ContingencyTable table;
};

/// Uncorrected chi2 = (b-c)^2/(b+c), df = 1; b+c == 0 gives chi2 = 0, p = 1.
McNemarResult mcnemar_from_table(const ContingencyTable& table);
McNemarResult mcnemar(std::span<const int> preds_a, std::span<const int> preds_b, std::span<const int> truth);

struct CurvePoint {
  int epoch = 0;
  double accuracy = 0.0;
};

bool operator==(const CurvePoint& a, const CurvePoint& b);

/// Sorted by epoch (stable for repeats). UsageError if empty.
std::vector<CurvePoint> epoch_curve(std::vector<CurvePoint> history);

struct EvalReport {
  std::string dataset;
  std::string noise;
  std::vector<CurvePoint> curve;
  double final_accuracy = 0.0;
  std::vector<std::int64_t> per_class_correct;
  std::vector<std::int64_t> per_class_total;
  std::optional<McNemarResult> mcnemar;

  /// Checks accuracy range and that per-class totals are consistent.
  void validate() const;
};

bool operator==(const EvalReport& a, const EvalReport& b);

/// Final accuracy and per-class counts from predictions; curve left empty.
EvalReport make_report(std::string dataset, std::string noise, std::span<const int> predicted,
                       std::span<const int> truth, int num_classes);

enum class ReportFormat { csv, json };

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
std::string report_csv(const EvalReport& report);

/// IoError naming the path on failure.
void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
EvalReport parse_report_json(const std::filesystem::path& path);

}  // namespace pcgan
