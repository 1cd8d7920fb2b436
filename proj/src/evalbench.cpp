#include "ttscore/evalbench.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"

namespace ttscore {

using nlohmann::json;

namespace {

void check_pair(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw ValidationError("correlation inputs differ in length (" + std::to_string(xs.size()) + " vs " +
                          std::to_string(ys.size()) + ")");
  }
  if (xs.size() < 2) throw ValidationError("correlation needs at least 2 pairs");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw ValidationError("correlation input not finite");
  }
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double pearson(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const double mx = mean_of(xs), my = mean_of(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("correlation undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of positions i+1..j
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = rank;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

std::vector<SystemMean> system_aggregate(std::span<const std::pair<std::string, double>> values) {
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (const auto& [system, v] : values) {
    auto& s = sums[system];
    s.first += v;
    ++s.second;
  }
  std::vector<SystemMean> out;
  out.reserve(sums.size());
  for (const auto& [system, s] : sums) out.push_back({system, s.first / static_cast<double>(s.second), s.second});
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::vector<std::string> split_chars(const std::string& text) {
  std::vector<std::string> out;
  bool pending_space = false;
  for (std::size_t i = 0; i < text.size();) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = 3;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    len = std::min(len, text.size() - i);
    if (len == 1 && std::isspace(lead)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.emplace_back(" ");
      pending_space = false;
      out.push_back(text.substr(i, len));
    }
    i += len;
  }
  return out;
}

double word_error_rate(const std::string& reference, const std::string& hypothesis) {
  const auto ref = split_words(reference), hyp = split_words(hypothesis);
  return error_rate<std::string>(ref, hyp);
}

double char_error_rate(const std::string& reference, const std::string& hypothesis) {
  const auto ref = split_chars(reference), hyp = split_chars(hypothesis);
  return error_rate<std::string>(ref, hyp);
}

// ---------------------------------------------------------------------------

namespace {

std::pair<std::vector<double>, std::vector<double>> co_voiced(const F0Contour& a, const F0Contour& b) {
  if (a.size() != b.size()) {
    throw ValidationError("F0 contours differ in length (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
  std::pair<std::vector<double>, std::vector<double>> out;
  for (Index i = 0; i < a.size(); ++i) {
    if (a.voiced(i) && b.voiced(i)) {
      out.first.push_back(a.values()[i]);
      out.second.push_back(b.values()[i]);
    }
  }
  return out;
}

}  // namespace

double f0_rmse(const F0Contour& reference, const F0Contour& hypothesis, bool log_domain) {
  auto [ref, hyp] = co_voiced(reference, hypothesis);
  if (ref.empty()) throw NumericError("F0 RMSE undefined: no frame is voiced in both contours");
  double sq = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    double r = ref[i], h = hyp[i];
    if (log_domain) {
      r = std::log(std::max(r, kLogF0FloorHz));
      h = std::log(std::max(h, kLogF0FloorHz));
    }
    sq += (r - h) * (r - h);
  }
  return std::sqrt(sq / static_cast<double>(ref.size()));
}

double f0_corr(const F0Contour& reference, const F0Contour& hypothesis) {
  auto [ref, hyp] = co_voiced(reference, hypothesis);
  if (ref.size() < 2) throw NumericError("F0 correlation undefined: fewer than 2 co-voiced frames");
  return pearson(ref, hyp);
}

F0Contour perturb_inverse(const F0Contour& f0) {
  const Index voiced = f0.voiced_count();
  if (voiced == 0) throw ValidationError("inverse perturbation needs at least one voiced frame");
  const auto& v = f0.values();
  double sum = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] > 0.0) sum += v[i];
  }
  const double mean = sum / static_cast<double>(voiced);
  Eigen::VectorXd out = v;
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] > 0.0) out[i] = std::max(2.0 * mean - v[i], kInverseF0FloorHz);
  }
  return F0Contour(std::move(out));
}

F0Contour perturb_flip(const F0Contour& f0) { return F0Contour(Eigen::VectorXd(f0.values().reverse())); }

// ---------------------------------------------------------------------------

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double sample_variance(std::span<const double> v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

}  // namespace

std::optional<double> cohens_d(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ValidationError("Cohen's d needs at least 2 values per group");
  const double diff = mean_of(a) - mean_of(b);
  const double pooled = std::sqrt(((static_cast<double>(a.size()) - 1.0) * sample_variance(a) +
                                   (static_cast<double>(b.size()) - 1.0) * sample_variance(b)) /
                                  static_cast<double>(a.size() + b.size() - 2));
  if (pooled == 0.0) return diff == 0.0 ? std::optional<double>(0.0) : std::nullopt;
  return diff / pooled;
}

DistributionReport distribution_summary(std::span<const std::pair<std::string, double>> scores, std::size_t bins,
                                        std::span<const std::pair<std::string, std::string>> comparisons) {
  if (bins < 1) throw ValidationError("histogram needs at least one bin");
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> groups;
  for (const auto& [g, v] : scores) {
    if (!std::isfinite(v)) throw ValidationError("non-finite value in group " + g);
    auto [it, inserted] = groups.try_emplace(g);
    if (inserted) order.push_back(g);
    it->second.push_back(v);
  }
  if (groups.empty()) throw ValidationError("no scores to summarize");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [g, values] : groups) {
    if (values.size() < 2) throw ValidationError("group '" + g + "' has fewer than 2 values");
    for (double v : values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  edges.back() = hi;

  DistributionReport report;
  for (const auto& g : order) {
    const auto& values = groups[g];
    DistributionSummary s;
    s.group = g;
    s.n = values.size();
    s.mean = mean_of(values);
    s.std = std::sqrt(sample_variance(values));
    auto sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const double qs[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int i = 0; i < 5; ++i) s.quantiles[static_cast<std::size_t>(i)] = quantile_sorted(sorted, qs[i]);
    s.histogram.edges = edges;
    s.histogram.counts.assign(bins, 0);
    for (double v : values) {
      auto bin = static_cast<std::size_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
      ++s.histogram.counts[std::min(bin, bins - 1)];
    }
    report.groups.push_back(std::move(s));
  }
  for (const auto& [a, b] : comparisons) {
    auto ia = groups.find(a), ib = groups.find(b);
    if (ia == groups.end() || ib == groups.end()) {
      throw ValidationError("comparison references unknown group " + (ia == groups.end() ? a : b));
    }
    DistributionShift shift;
    shift.group_a = a;
    shift.group_b = b;
    shift.mean_difference = mean_of(ia->second) - mean_of(ib->second);
    shift.cohens_d = cohens_d(ia->second, ib->second);
    report.shifts.push_back(std::move(shift));
  }
  return report;
}

void write_distribution_report(const std::filesystem::path& path, const DistributionReport& report) {
  auto out = detail::create_text(path);
  for (const auto& s : report.groups) {
    json j = {{"type", "group"},     {"group", s.group},
              {"n", s.n},            {"mean", s.mean},
              {"std", s.std},        {"quantiles", s.quantiles},
              {"bin_edges", s.histogram.edges}, {"bin_counts", s.histogram.counts}};
    out << j.dump() << '\n';
  }
  for (const auto& s : report.shifts) {
    json j = {{"type", "shift"},
              {"group_a", s.group_a},
              {"group_b", s.group_b},
              {"mean_difference", s.mean_difference},
              {"cohens_d", s.cohens_d ? json(*s.cohens_d) : json(nullptr)}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------

std::string level_name(Level level) { return level == Level::utterance ? "utterance" : "system"; }

Level parse_level(const std::string& name) {
  if (name == "utterance" || name == "utt") return Level::utterance;
  if (name == "system" || name == "sys") return Level::system;
  throw UsageError("unknown level '" + name + "' (expected utterance or system)");
}

std::vector<std::optional<double>> metric_column(const std::string& name, std::span<const ScoreResult> scores,
                                                 std::span<const EvalRecord> manifest) {
  std::vector<std::optional<double>> out(manifest.size());
  std::optional<Metric> score_metric;
  try {
    score_metric = parse_metric(name);
  } catch (const UsageError&) {
  }
  if (score_metric) {
    std::map<std::string, double> by_utt;
    for (const auto& s : scores) {
      if (s.metric == *score_metric) by_utt[s.utt_id] = s.value;
    }
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      auto it = by_utt.find(manifest[i].utt_id);
      if (it != by_utt.end()) out[i] = it->second;
    }
    return out;
  }
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& r = manifest[i];
    if (name == "mos") {
      out[i] = r.mos;
    } else if (name == "wer") {
      out[i] = r.wer;
    } else if (name == "cer") {
      out[i] = r.cer;
    } else if (auto it = r.metrics.find(name); it != r.metrics.end()) {
      out[i] = it->second;
    }
  }
  return out;
}

std::vector<CorrelationReport> correlation_run(std::span<const ScoreResult> scores,
                                               std::span<const EvalRecord> manifest,
                                               std::span<const std::pair<std::string, std::string>> targets,
                                               std::span<const Level> levels) {
  std::vector<CorrelationReport> reports;
  for (const auto& [name_a, name_b] : targets) {
    const auto col_a = metric_column(name_a, scores, manifest);
    const auto col_b = metric_column(name_b, scores, manifest);
    std::vector<double> xs, ys;
    std::vector<std::pair<std::string, double>> sys_a, sys_b;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      if (!col_a[i] || !col_b[i]) continue;
      xs.push_back(*col_a[i]);
      ys.push_back(*col_b[i]);
      sys_a.emplace_back(manifest[i].system_id, *col_a[i]);
      sys_b.emplace_back(manifest[i].system_id, *col_b[i]);
    }
    if (xs.size() < 2) {
      throw ValidationError("joining " + name_a + " with " + name_b + " yields " + std::to_string(xs.size()) +
                            " rows; at least 2 are needed");
    }
    for (Level level : levels) {
      CorrelationReport r;
      r.metric_a = name_a;
      r.metric_b = name_b;
      r.level = level;
      if (level == Level::utterance) {
        r.lcc = pearson(xs, ys);
        r.srcc = spearman(xs, ys);
        r.n = xs.size();
      } else {
        const auto agg_a = system_aggregate(sys_a);
        const auto agg_b = system_aggregate(sys_b);
        std::vector<double> ma, mb;
        for (std::size_t i = 0; i < agg_a.size(); ++i) {
          ma.push_back(agg_a[i].mean);
          mb.push_back(agg_b[i].mean);
        }
        if (ma.size() < 2) {
          throw ValidationError("system-level correlation of " + name_a + " with " + name_b +
                                " needs at least 2 systems");
        }
        r.lcc = pearson(ma, mb);
        r.srcc = spearman(ma, mb);
        r.n = ma.size();
      }
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

void write_correlation_reports(const std::filesystem::path& path, std::span<const CorrelationReport> reports) {
  auto out = detail::create_text(path);
  for (const auto& r : reports) {
    json j = {{"metric_a", r.metric_a}, {"metric_b", r.metric_b}, {"level", level_name(r.level)},
              {"lcc", r.lcc},           {"srcc", r.srcc},         {"n", r.n}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::string render_correlation_table(std::span<const CorrelationReport> reports) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::map<std::pair<std::string, std::string>, std::map<Level, const CorrelationReport*>> cells;
  for (const auto& r : reports) {
    auto key = std::make_pair(r.metric_a, r.metric_b);
    if (!cells.count(key)) pairs.push_back(key);
    cells[key][r.level] = &r;
  }
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s | %8s %8s | %8s %8s\n", "metric pair", "utt LCC", "utt SRCC", "sys LCC",
                "sys SRCC");
  out << line << std::string(70, '-') << '\n';
  auto cell = [](const std::map<Level, const CorrelationReport*>& m, Level l, bool lcc) {
    auto it = m.find(l);
    if (it == m.end()) return std::string("       -");
    char buf[16];
    std::snprintf(buf, sizeof buf, "%8.3f", lcc ? it->second->lcc : it->second->srcc);
    return std::string(buf);
  };
  for (const auto& key : pairs) {
    const auto& m = cells[key];
    const auto name = key.first + " ~ " + key.second;
    std::snprintf(line, sizeof line, "%-28s | %s %s | %s %s\n", name.c_str(), cell(m, Level::utterance, true).c_str(),
                  cell(m, Level::utterance, false).c_str(), cell(m, Level::system, true).c_str(),
                  cell(m, Level::system, false).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace ttscore
