#include "pcgan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "pcgan/error.hpp"

namespace pcgan {
namespace {

// erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n 2^n x^(2n+1) / (1*3*...*(2n+1)); all terms positive.
double erf_power_series(double x) {
  const double x2 = x * x;
  double term = x, sum = x;
  for (int n = 1; n < 200; ++n) {
    term *= 2.0 * x2 / (2.0 * n + 1.0);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-x2) * sum;
}

// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), modified Lentz, x > 0.
double erfc_continued_fraction(double x) {
  constexpr double tiny = 1e-300;
  double f = x, c = x, d = 0.0;
  for (int n = 1; n < 500; ++n) {
    const double a = n * 0.5;
    d = x + a * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = x + a / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x * x) / std::sqrt(std::numbers::pi) / f;
}

constexpr double kSeriesLimit = 2.5;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw UsageError("accuracy: prediction and truth lengths differ");
  if (predicted.empty()) throw UsageError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return double(hits) / double(truth.size());
}

double erf_series(double x) {
  if (std::isnan(x)) return x;
  if (x < 0) return -erf_series(-x);
  if (x < kSeriesLimit) return erf_power_series(x);
  return 1.0 - erfc_continued_fraction(x);
}

double erfc_series(double x) {
  if (std::isnan(x)) return x;
  if (x < 0) return 2.0 - erfc_series(-x);
  if (x < kSeriesLimit) return 1.0 - erf_power_series(x);
  return erfc_continued_fraction(x);
}

double chi2_sf_df1(double x) {
  if (!(x > 0.0)) return 1.0;
  return erfc_series(std::sqrt(x / 2.0));
}

bool operator==(const ContingencyTable& a, const ContingencyTable& b) {
  return a.n00 == b.n00 && a.n01 == b.n01 && a.n10 == b.n10 && a.n11 == b.n11;
}

McNemarResult mcnemar_from_table(const ContingencyTable& t) {
  if (t.n00 < 0 || t.n01 < 0 || t.n10 < 0 || t.n11 < 0) throw UsageError("contingency counts must be non-negative");
  McNemarResult r;
  r.table = t;
  const double b = double(t.n10), c = double(t.n01);
  if (b + c == 0.0) return r;
  r.chi2 = (b - c) * (b - c) / (b + c);
  r.p = chi2_sf_df1(r.chi2);
  return r;
}

McNemarResult mcnemar(std::span<const int> preds_a, std::span<const int> preds_b, std::span<const int> truth) {
  if (preds_a.size() != truth.size() || preds_b.size() != truth.size()) {
    throw UsageError("mcnemar: prediction and truth lengths differ");
  }
  ContingencyTable t;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool a = preds_a[i] == truth[i], b = preds_b[i] == truth[i];
    (a ? (b ? t.n11 : t.n10) : (b ? t.n01 : t.n00))++;
  }
  return mcnemar_from_table(t);
}

bool operator==(const CurvePoint& a, const CurvePoint& b) { return a.epoch == b.epoch && a.accuracy == b.accuracy; }

std::vector<CurvePoint> epoch_curve(std::vector<CurvePoint> history) {
  if (history.empty()) throw UsageError("epoch curve needs at least one epoch");
  std::stable_sort(history.begin(), history.end(), [](const CurvePoint& a, const CurvePoint& b) { return a.epoch < b.epoch; });
  return history;
}

void EvalReport::validate() const {
  if (!(final_accuracy >= 0.0 && final_accuracy <= 1.0)) throw UsageError("accuracy outside [0,1]");
  for (const auto& p : curve) {
    if (!(p.accuracy >= 0.0 && p.accuracy <= 1.0)) throw UsageError("curve accuracy outside [0,1]");
  }
  if (per_class_correct.size() != per_class_total.size()) throw UsageError("per-class count lengths differ");
  for (std::size_t k = 0; k < per_class_total.size(); ++k) {
    if (per_class_correct[k] < 0 || per_class_correct[k] > per_class_total[k]) {
      throw UsageError("per-class correct count out of range");
    }
  }
}

bool operator==(const EvalReport& a, const EvalReport& b) {
  const bool mc = a.mcnemar.has_value() == b.mcnemar.has_value() &&
                  (!a.mcnemar || (a.mcnemar->chi2 == b.mcnemar->chi2 && a.mcnemar->p == b.mcnemar->p &&
                                  a.mcnemar->table == b.mcnemar->table));
  return mc && a.dataset == b.dataset && a.noise == b.noise && a.curve == b.curve &&
         a.final_accuracy == b.final_accuracy && a.per_class_correct == b.per_class_correct &&
         a.per_class_total == b.per_class_total;
}

EvalReport make_report(std::string dataset, std::string noise, std::span<const int> predicted,
                       std::span<const int> truth, int num_classes) {
  EvalReport r;
  r.dataset = std::move(dataset);
  r.noise = std::move(noise);
  r.final_accuracy = accuracy(predicted, truth);
  r.per_class_correct.assign(std::size_t(num_classes), 0);
  r.per_class_total.assign(std::size_t(num_classes), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes) throw UsageError("true label out of range");
    ++r.per_class_total[std::size_t(truth[i])];
    r.per_class_correct[std::size_t(truth[i])] += predicted[i] == truth[i];
  }
  return r;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.curve) curve.push_back({{"epoch", p.epoch}, {"accuracy", p.accuracy}});
  nlohmann::json j = {{"dataset", r.dataset},
                      {"noise", r.noise},
                      {"curve", curve},
                      {"final_accuracy", r.final_accuracy},
                      {"per_class_correct", r.per_class_correct},
                      {"per_class_total", r.per_class_total},
                      {"mcnemar", nullptr}};
  if (r.mcnemar) {
    const auto& m = *r.mcnemar;
    j["mcnemar"] = {{"chi2", m.chi2},
                    {"df", 1},
                    {"p", m.p},
                    {"n00", m.table.n00},
                    {"n01", m.table.n01},
                    {"n10", m.table.n10},
                    {"n11", m.table.n11}};
  }
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.noise = j.at("noise").get<std::string>();
    for (const auto& p : j.at("curve")) r.curve.push_back({p.at("epoch").get<int>(), p.at("accuracy").get<double>()});
    r.final_accuracy = j.at("final_accuracy").get<double>();
    r.per_class_correct = j.at("per_class_correct").get<std::vector<std::int64_t>>();
    r.per_class_total = j.at("per_class_total").get<std::vector<std::int64_t>>();
    if (j.contains("mcnemar") && !j.at("mcnemar").is_null()) {
      const auto& m = j.at("mcnemar");
      McNemarResult mr;
      mr.chi2 = m.at("chi2").get<double>();
      mr.p = m.at("p").get<double>();
      mr.table = {m.at("n00").get<std::int64_t>(), m.at("n01").get<std::int64_t>(), m.at("n10").get<std::int64_t>(),
                  m.at("n11").get<std::int64_t>()};
      r.mcnemar = mr;
    }
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::malformed, std::string("report JSON: ") + e.what());
  }
}

std::string report_csv(const EvalReport& r) {
  std::string out = "epoch,accuracy\n";
  for (const auto& p : r.curve) out += std::to_string(p.epoch) + "," + fmt("%.6f", p.accuracy) + "\n";
  out += "# dataset=" + r.dataset + "\n";
  out += "# noise=" + r.noise + "\n";
  out += "# final_accuracy=" + fmt("%.6f", r.final_accuracy) + "\n";
  std::int64_t total = 0;
  for (std::size_t k = 0; k < r.per_class_total.size(); ++k) {
    out += "# class " + std::to_string(k) + " correct=" + std::to_string(r.per_class_correct[k]) +
           " total=" + std::to_string(r.per_class_total[k]) + "\n";
    total += r.per_class_total[k];
  }
  out += "# test_size=" + std::to_string(total) + "\n";
  if (r.mcnemar) {
    out += "# mcnemar chi2=" + fmt("%.6g", r.mcnemar->chi2) + " df=1 p=" + fmt("%.6g", r.mcnemar->p) + "\n";
  }
  return out;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  report.validate();
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  if (format == ReportFormat::csv) {
    out << report_csv(report);
  } else {
    out << report_to_json(report).dump(2) << "\n";
  }
  if (!out) throw IoError("failed writing report " + path.string());
}

EvalReport parse_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::malformed, path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace pcgan
