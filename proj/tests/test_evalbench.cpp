#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "support.hpp"
#include "ttscore/evalbench.hpp"

using namespace ttscore;

namespace {

std::vector<double> voiced_values(const F0Contour& f0) {
  std::vector<double> v;
  for (Index i = 0; i < f0.size(); ++i) {
    if (f0.values()[i] > 0.0) v.push_back(f0.values()[i]);
  }
  return v;
}

F0Contour random_contour(std::mt19937_64& rng, int frames) {
  std::uniform_real_distribution<double> hz(80.0, 260.0), u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(frames));
  for (auto& x : v) x = u(rng) < 0.25 ? 0.0 : hz(rng);
  v[0] = hz(rng);
  v[1] = hz(rng);
  return F0Contour(v);
}

std::vector<std::pair<std::string, double>> labelled(std::mt19937_64& rng, std::size_t n, int groups) {
  std::uniform_int_distribution<int> g(0, groups - 1);
  std::normal_distribution<double> x(0.0, 2.0);
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back("g" + std::to_string(g(rng)), x(rng));
  // Every group present at least twice.
  for (int k = 0; k < groups; ++k) {
    out.emplace_back("g" + std::to_string(k), x(rng));
    out.emplace_back("g" + std::to_string(k), x(rng));
  }
  return out;
}

}  // namespace

TEST_SUITE("evalbench") {

TEST_CASE("pearson and spearman match the direct formulas") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> size(2, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(size(rng));
    auto x = support::random_vector(rng, n, -5, 5);
    auto y = support::random_vector(rng, n, -5, 5);
    if (trial % 3 == 0) {
      // Coarse values force ties.
      for (auto& v : x) v = std::round(v);
      for (auto& v : y) v = std::round(v);
      if (*std::max_element(x.begin(), x.end()) == *std::min_element(x.begin(), x.end())) x[0] += 1;
      if (*std::max_element(y.begin(), y.end()) == *std::min_element(y.begin(), y.end())) y[0] += 1;
    }
    CHECK(std::abs(pearson(x, y) - support::oracle_pearson(x, y)) <= 1e-10);
    CHECK(std::abs(spearman(x, y) - support::oracle_spearman(x, y)) <= 1e-10);
    CHECK(average_ranks(x) == support::oracle_ranks(x));
    CHECK(pearson(x, y) == doctest::Approx(pearson(y, x)).epsilon(1e-14));
  }
}

TEST_CASE("hand-ranked ties") {
  const std::vector<double> a = {1, 2, 2, 3}, b = {10, 20, 20, 30};
  CHECK(average_ranks(a) == std::vector<double>{1, 2.5, 2.5, 4});
  CHECK(spearman(a, b) == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> c = {3, 1, 3, 3};
  CHECK(average_ranks(c) == std::vector<double>{3, 1, 3, 3});
}

TEST_CASE("correlations are invariant to positive affine and monotone maps") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = support::random_vector(rng, 25, 0.1, 4);
    const auto y = support::random_vector(rng, 25, 0.1, 4);
    std::vector<double> affine, monotone;
    for (double v : x) {
      affine.push_back(3.5 * v - 7.0);
      monotone.push_back(std::exp(v) + v * v * v);
    }
    CHECK(pearson(affine, y) == doctest::Approx(pearson(x, y)).epsilon(1e-12));
    CHECK(spearman(monotone, y) == doctest::Approx(spearman(x, y)).epsilon(1e-12));
    CHECK(std::abs(pearson(x, y)) <= 1.0);
  }
}

TEST_CASE("correlation errors") {
  const std::vector<double> flat = {1, 1, 1}, ramp = {1, 2, 3}, two = {1, 2};
  CHECK_THROWS_AS(pearson(flat, ramp), NumericError);
  CHECK_THROWS_AS(pearson(two, ramp), ValidationError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{2}), ValidationError);
  CHECK(pearson(ramp, ramp) == 1.0);
}

TEST_CASE("system means match grouped averages") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto values = labelled(rng, 20, 4);
    std::map<std::string, std::vector<double>> groups;
    for (const auto& [id, v] : values) groups[id].push_back(v);
    const auto agg = system_aggregate(values);
    REQUIRE(agg.size() == groups.size());
    std::size_t i = 0;
    for (const auto& [id, vs] : groups) {
      CHECK(agg[i].system_id == id);
      CHECK(agg[i].count == vs.size());
      CHECK(std::abs(agg[i].mean - support::oracle_mean(vs)) <= 1e-10);
      ++i;
    }
  }
}

TEST_CASE("distribution summaries match the direct formulas") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto values = labelled(rng, 30, 3);
    const std::vector<std::pair<std::string, std::string>> cmp = {{"g0", "g1"}};
    const auto report = distribution_summary(values, 8, cmp);
    std::size_t total = 0;
    for (const auto& s : report.groups) {
      std::vector<double> vs;
      for (const auto& [id, v] : values) {
        if (id == s.group) vs.push_back(v);
      }
      CHECK(s.n == vs.size());
      CHECK(std::abs(s.mean - support::oracle_mean(vs)) <= 1e-10);
      CHECK(std::abs(s.std - support::oracle_sample_std(vs)) <= 1e-10);
      const double qs[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
      for (int q = 0; q < 5; ++q) CHECK(std::abs(s.quantiles[q] - support::oracle_quantile(vs, qs[q])) <= 1e-10);
      CHECK(std::is_sorted(s.quantiles.begin(), s.quantiles.end()));
      std::size_t counted = 0;
      for (auto c : s.histogram.counts) counted += c;
      CHECK(counted == s.n);
      total += s.n;
    }
    CHECK(total == values.size());
    REQUIRE(report.shifts.size() == 1);
    std::vector<double> a, b;
    for (const auto& [id, v] : values) {
      if (id == "g0") a.push_back(v);
      if (id == "g1") b.push_back(v);
    }
    const double ma = support::oracle_mean(a), mb = support::oracle_mean(b);
    const double sa = support::oracle_sample_std(a), sb = support::oracle_sample_std(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double pooled = std::sqrt(((na - 1) * sa * sa + (nb - 1) * sb * sb) / (na + nb - 2));
    CHECK(std::abs(report.shifts[0].mean_difference - (ma - mb)) <= 1e-10);
    REQUIRE(report.shifts[0].cohens_d.has_value());
    CHECK(std::abs(*report.shifts[0].cohens_d - (ma - mb) / pooled) <= 1e-10);
  }
}

TEST_CASE("histogram edges and degenerate spreads") {
  const std::vector<std::pair<std::string, double>> v = {{"a", 0}, {"a", 1}, {"a", 2}, {"a", 4}};
  const auto r = distribution_summary(v, 4);
  REQUIRE(r.groups.size() == 1);
  CHECK(r.groups[0].histogram.edges == std::vector<double>{0, 1, 2, 3, 4});
  CHECK(r.groups[0].histogram.counts == std::vector<std::size_t>{1, 1, 1, 1});

  const std::vector<double> same = {2, 2}, other = {3, 3};
  CHECK(cohens_d(same, same) == 0.0);
  CHECK_FALSE(cohens_d(same, other).has_value());
  const std::vector<std::pair<std::string, double>> lonely = {{"a", 1}, {"a", 2}, {"b", 3}};
  CHECK_THROWS_AS(distribution_summary(lonely, 4), ValidationError);
}

TEST_CASE("edit distances") {
  const std::string kitten = "kitten", sitting = "sitting";
  CHECK(edit_distance(std::span<const char>(kitten), std::span<const char>(sitting)) == 3);
  CHECK(word_error_rate("the cat sat down", "the cat sat up") == 0.25);
  CHECK(word_error_rate("a b", "a b") == 0.0);
  CHECK(word_error_rate("a b", "") == 1.0);
  CHECK(char_error_rate("ab  c", "ab c") == 0.0);
  CHECK(char_error_rate("héllo", "hello") == doctest::Approx(0.2));
  CHECK_THROWS_AS(word_error_rate("", "x"), ValidationError);

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 12), sym(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (auto& x : a) x = sym(rng);
    for (auto& x : b) x = sym(rng);
    CHECK(edit_distance(std::span<const int>(a), std::span<const int>(b)) == support::oracle_edit_distance(a, b));
  }
}

TEST_CASE("F0 metrics on hand contours") {
  const F0Contour ref(std::vector<double>{100, 200, 0, 150});
  const F0Contour hyp(std::vector<double>{100, 100, 120, 0});
  // Co-voiced frames are 0 and 1.
  CHECK(f0_rmse(ref, hyp, false) == doctest::Approx(100.0 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(f0_rmse(ref, hyp, true) == doctest::Approx(std::log(2.0) / std::sqrt(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(f0_rmse(F0Contour(std::vector<double>{0, 100}), F0Contour(std::vector<double>{100, 0}), false),
                  NumericError);
  CHECK_THROWS_AS(f0_rmse(ref, F0Contour(std::vector<double>{1, 2}), false), ValidationError);
}

TEST_CASE("F0 perturbations") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f0 = random_contour(rng, 40);
    CHECK(perturb_flip(perturb_flip(f0)) == f0);
    const auto inv = perturb_inverse(f0);
    const auto before = voiced_values(f0), after = voiced_values(inv);
    REQUIRE(before.size() == after.size());
    // Values stay well above the floor here, so the voiced mean is kept.
    CHECK(std::abs(support::oracle_mean(after) - support::oracle_mean(before)) <= 1e-9);
    CHECK(std::abs(f0_corr(f0, inv) + 1.0) <= 1e-9);
    CHECK(f0_corr(f0, f0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  const F0Contour skewed(std::vector<double>{100, 100, 100, 1000, 0});
  const auto clamped = perturb_inverse(skewed);
  CHECK(clamped.values()[3] == kInverseF0FloorHz);
  CHECK(clamped.values()[4] == 0.0);
  CHECK_THROWS_AS(perturb_inverse(F0Contour(std::vector<double>{0, 0})), ValidationError);
}

TEST_CASE("correlation runs join scores with the manifest") {
  std::mt19937_64 rng(7);
  std::vector<EvalRecord> manifest;
  std::vector<ScoreResult> scores;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 40; ++i) {
    EvalRecord r;
    r.utt_id = "u" + std::to_string(i);
    r.system_id = "s" + std::to_string(i % 4);
    const double s = -2.0 + 0.3 * n(rng) + 0.1 * (i % 4);
    r.mos = 1.0 + std::exp(s);
    r.wer = -s;
    manifest.push_back(r);
    scores.push_back({r.utt_id, r.system_id, Metric::ttscore_int, s, 5});
  }
  const std::vector<std::pair<std::string, std::string>> targets = {{"ttscore_int", "mos"},
                                                                    {"ttscore_int", "wer"}};
  const std::vector<Level> levels = {Level::utterance, Level::system};
  const auto reports = correlation_run(scores, manifest, targets, levels);
  REQUIRE(reports.size() == 4);
  CHECK(reports[0].metric_b == "mos");
  CHECK(reports[0].level == Level::utterance);
  CHECK(reports[0].n == 40);
  CHECK(reports[0].srcc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(reports[2].lcc == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(reports[3].n == 4);
  CHECK(reports[3].lcc == doctest::Approx(-1.0).epsilon(1e-12));

  support::TempDir dir("corr");
  write_correlation_reports(dir / "c.jsonl", reports);
  std::ifstream in(dir / "c.jsonl");
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("lcc"));
    CHECK(j.at("level").get<std::string>() == (count % 2 == 0 ? "utterance" : "system"));
    ++count;
  }
  CHECK(count == 4);
  CHECK(render_correlation_table(reports).find("ttscore_int") != std::string::npos);

  const std::vector<std::pair<std::string, std::string>> unknown = {{"ttscore_int", "elo"}};
  CHECK_THROWS_AS(correlation_run(scores, manifest, unknown, levels), ValidationError);
}

TEST_CASE("levels parse from short and long names") {
  CHECK(parse_level("utt") == Level::utterance);
  CHECK(parse_level("system") == Level::system);
  CHECK(level_name(Level::system) == "system");
  CHECK_THROWS(parse_level("corpus"));
}

}  // TEST_SUITE
