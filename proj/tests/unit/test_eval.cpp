#include <cmath>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "pcgan/error.hpp"
#include "pcgan/eval.hpp"

using namespace pcgan;
namespace fs = std::filesystem;

namespace {

// Builds prediction vectors realizing a contingency table (truth all zero).
void realize(const ContingencyTable& t, std::vector<int>& a, std::vector<int>& b, std::vector<int>& truth) {
  a.clear();
  b.clear();
  truth.clear();
  auto add = [&](std::int64_t count, bool ac, bool bc) {
    for (std::int64_t i = 0; i < count; ++i) {
      a.push_back(ac ? 0 : 1);
      b.push_back(bc ? 0 : 2);
      truth.push_back(0);
    }
  };
  add(t.n00, false, false);
  add(t.n01, false, true);
  add(t.n10, true, false);
  add(t.n11, true, true);
}

EvalReport sample_report() {
  std::vector<int> pred{0, 1, 1, 2, 0, 2}, truth{0, 1, 2, 2, 1, 0};
  EvalReport r = make_report("glyphs", "awgn", pred, truth, 3);
  r.curve = epoch_curve({{2, 0.5}, {1, 0.25}, {3, 0.123456789}});
  r.mcnemar = mcnemar_from_table({3, 2, 10, 5});
  return r;
}

}  // namespace

TEST_CASE("accuracy examples") {
  std::vector<int> t{0, 1, 2, 0, 1, 2};
  CHECK(accuracy(t, t) == 1.0);
  std::vector<int> none{1, 2, 0, 1, 2, 0};
  CHECK(accuracy(none, t) == 0.0);
  std::vector<int> half{0, 1, 2, 1, 2, 0};
  CHECK(accuracy(half, t) == 0.5);
  std::vector<int> shorter{0, 1};
  CHECK_THROWS_AS(accuracy(shorter, t), UsageError);
  CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), UsageError);
}

TEST_CASE("erf matches the standard library") {
  for (double x = -6.0; x <= 6.0; x += 0.01) {
    CHECK(std::fabs(erf_series(x) - std::erf(x)) < 1e-13);
    CHECK(std::fabs(erfc_series(x) - std::erfc(x)) < 1e-13 * std::max(1.0, std::erfc(x)));
  }
  for (double x : {2.49999, 2.5, 2.50001, 8.0, 20.0}) {
    const double rel = std::fabs(erfc_series(x) - std::erfc(x)) / std::erfc(x);
    CHECK(rel < 1e-10);
  }
}

TEST_CASE("chi-squared survival function") {
  CHECK(chi2_sf_df1(0.0) == 1.0);
  CHECK(chi2_sf_df1(3.841458820694124) == doctest::Approx(0.05).epsilon(1e-9));
  for (double x = 0.01; x < 60.0; x *= 1.3) CHECK(std::fabs(chi2_sf_df1(x) - oracle::chi2_df1_sf(x)) < 1e-12);
}

TEST_CASE("mcnemar fixtures") {
  McNemarResult r = mcnemar_from_table({0, 2, 10, 0});
  CHECK(r.chi2 == doctest::Approx(64.0 / 12.0).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(0.0209).epsilon(0.01));
  CHECK(std::fabs(r.p - oracle::chi2_df1_sf(64.0 / 12.0)) < 1e-12);

  McNemarResult sym = mcnemar_from_table({4, 5, 5, 9});
  CHECK(sym.chi2 == 0.0);
  CHECK(sym.p == 1.0);
  McNemarResult none = mcnemar_from_table({4, 0, 0, 9});
  CHECK(none.chi2 == 0.0);
  CHECK(none.p == 1.0);
  CHECK_THROWS_AS(mcnemar_from_table({-1, 0, 0, 0}), UsageError);
}

TEST_CASE("mcnemar counts b as a-correct/b-wrong and is antisymmetric") {
  ContingencyTable t{7, 3, 11, 20};
  std::vector<int> a, b, truth;
  realize(t, a, b, truth);
  McNemarResult r = mcnemar(a, b, truth);
  CHECK(r.table == t);
  McNemarResult s = mcnemar(b, a, truth);
  CHECK(s.table.n10 == t.n01);
  CHECK(s.table.n01 == t.n10);
  CHECK(s.chi2 == r.chi2);
  CHECK(s.p == r.p);

  std::mt19937_64 rng(3);
  std::vector<std::size_t> idx(a.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<int> pa, pb, pt;
  for (auto i : idx) {
    pa.push_back(a[i]);
    pb.push_back(b[i]);
    pt.push_back(truth[i]);
  }
  McNemarResult p = mcnemar(pa, pb, pt);
  CHECK(p.table == t);
  CHECK(p.chi2 == r.chi2);
  std::vector<int> shorter(a.begin(), a.end() - 1);
  CHECK_THROWS_AS(mcnemar(shorter, b, truth), UsageError);
}

TEST_CASE("mcnemar agrees with the independent oracle on 1000 random tables") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> d(0, 400);
  double worst_chi = 0.0, worst_p = 0.0;
  for (int i = 0; i < 1000; ++i) {
    ContingencyTable t{d(rng), d(rng), d(rng), d(rng)};
    McNemarResult r = mcnemar_from_table(t);
    const double b = double(t.n10), c = double(t.n01);
    const double chi = b + c == 0 ? 0.0 : (b - c) * (b - c) / (b + c);
    worst_chi = std::max(worst_chi, std::fabs(r.chi2 - chi));
    worst_p = std::max(worst_p, std::fabs(r.p - oracle::chi2_df1_sf(chi)));
  }
  CHECK(worst_chi < 1e-9);
  CHECK(worst_p < 1e-6);
}

TEST_CASE("epoch curve ordering") {
  auto c = epoch_curve({{3, 0.3}, {1, 0.1}, {2, 0.2}});
  REQUIRE(c.size() == 3);
  CHECK(c[0].epoch == 1);
  CHECK(c[2].epoch == 3);
  CHECK(epoch_curve({{5, 0.5}}).size() == 1);
  auto rep = epoch_curve({{2, 0.4}, {1, 0.1}, {2, 0.6}});
  CHECK(rep[1].accuracy == 0.4);
  CHECK(rep[2].accuracy == 0.6);
  CHECK_THROWS_AS(epoch_curve({}), UsageError);
}

TEST_CASE("make_report counts per class") {
  std::vector<int> pred{0, 1, 1, 2, 0, 2}, truth{0, 1, 2, 2, 1, 0};
  EvalReport r = make_report("d", "n", pred, truth, 3);
  CHECK(r.final_accuracy == 0.5);
  CHECK(r.per_class_total == std::vector<std::int64_t>{2, 2, 2});
  CHECK(r.per_class_correct == std::vector<std::int64_t>{1, 1, 1});
  r.validate();
  EvalReport bad = r;
  bad.final_accuracy = 1.5;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("report json round trip is field-equal") {
  EvalReport r = sample_report();
  CHECK(report_from_json(report_to_json(r)) == r);
  fs::path dir = fs::temp_directory_path() / "pcgan_unit_eval";
  fs::remove_all(dir);
  emit_report(r, dir / "r.json", ReportFormat::json);
  CHECK(parse_report_json(dir / "r.json") == r);
  EvalReport plain = r;
  plain.mcnemar.reset();
  emit_report(plain, dir / "p.json", ReportFormat::json);
  CHECK(parse_report_json(dir / "p.json") == plain);
}

TEST_CASE("report csv schema") {
  EvalReport r = sample_report();
  const std::string csv = report_csv(r);
  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> data;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') data.push_back(line);
  REQUIRE(data.size() == r.curve.size() + 1);
  CHECK(data[0] == "epoch,accuracy");
  CHECK(data[1] == "1,0.250000");
  CHECK(data[3] == "3,0.123457");
  CHECK(csv.find("# final_accuracy=0.500000") != std::string::npos);
  CHECK(csv.find("# test_size=6") != std::string::npos);
  CHECK(csv.find("# mcnemar chi2=") != std::string::npos);
}

TEST_CASE("report io failures name the path") {
  EvalReport r = sample_report();
  fs::path dir = fs::temp_directory_path() / "pcgan_unit_eval_io";
  fs::remove_all(dir);
  fs::create_directories(dir / "blocker");
  try {
    emit_report(r, dir / "blocker", ReportFormat::csv);
    FAIL("expected an io error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("blocker") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_report_json(dir / "absent.json"), IoError);
  std::ofstream(dir / "junk.json") << "{not json";
  CHECK_THROWS_AS(parse_report_json(dir / "junk.json"), FormatError);
}
