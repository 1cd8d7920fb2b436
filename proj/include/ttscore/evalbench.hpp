#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ttscore/corpus.hpp"
#include "ttscore/error.hpp"
#include "ttscore/scoring.hpp"

namespace ttscore {

// ---------------------------------------------------------------------------
// Correlation

/// Product-moment correlation. Throws NumericError on a constant series and
/// ValidationError on unequal or too-short inputs.
double pearson(std::span<const double> xs, std::span<const double> ys);

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of average ranks.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct SystemMean {
  std::string system_id;
  double mean = 0.0;
  std::size_t count = 0;

  bool operator==(const SystemMean&) const = default;
};

/// Per-system arithmetic means, sorted by system id.
std::vector<SystemMean> system_aggregate(std::span<const std::pair<std::string, double>> values);

// ---------------------------------------------------------------------------
// Error rates

/// Unit-cost Levenshtein distance (single-row dynamic program).
template <typename T>
std::size_t edit_distance(std::span<const T> reference, std::span<const T> hypothesis) {
  std::vector<std::size_t> row(hypothesis.size() + 1);
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= reference.size(); ++i) {
    std::size_t diagonal = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= hypothesis.size(); ++j) {
      const std::size_t above = row[j];
      const std::size_t substitute = diagonal + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      row[j] = std::min({above + 1, row[j - 1] + 1, substitute});
      diagonal = above;
    }
  }
  return row.back();
}

/// Edit distance normalized by reference length. Throws on an empty reference.
template <typename T>
double error_rate(std::span<const T> reference, std::span<const T> hypothesis) {
  if (reference.empty()) throw ValidationError("error rate needs a non-empty reference");
  return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

std::vector<std::string> split_words(const std::string& text);
/// UTF-8 code points with whitespace runs collapsed to one space and trimmed.
std::vector<std::string> split_chars(const std::string& text);

double word_error_rate(const std::string& reference, const std::string& hypothesis);
double char_error_rate(const std::string& reference, const std::string& hypothesis);

// ---------------------------------------------------------------------------
// F0 metrics and perturbations

/// Natural-log floor applied before taking log F0.
inline constexpr double kLogF0FloorHz = 1e-8;
/// Lower clamp for reflected voiced values, keeping them voiced.
inline constexpr double kInverseF0FloorHz = 1.0;

/// RMSE over frames voiced in both contours, in Hz or in natural-log Hz.
double f0_rmse(const F0Contour& reference, const F0Contour& hypothesis, bool log_domain);
/// Pearson correlation over co-voiced frames.
double f0_corr(const F0Contour& reference, const F0Contour& hypothesis);

/// Voiced frames reflected around the voiced mean: f -> 2*mean - f, clamped
/// at kInverseF0FloorHz. Unvoiced frames stay 0.
F0Contour perturb_inverse(const F0Contour& f0);
/// Time reversal of the whole contour.
F0Contour perturb_flip(const F0Contour& f0);

// ---------------------------------------------------------------------------
// Distributions

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<std::size_t> counts;
};

struct DistributionSummary {
  std::string group;
  std::size_t n = 0;
  double mean = 0.0;
  /// Sample standard deviation (n - 1 denominator).
  double std = 0.0;
  /// min, 25%, median, 75%, max with linear interpolation.
  std::array<double, 5> quantiles{};
  Histogram histogram;
};

struct DistributionShift {
  std::string group_a, group_b;
  /// mean(a) - mean(b)
  double mean_difference = 0.0;
  /// Pooled-SD effect size; empty when both groups have zero spread but
  /// different means.
  std::optional<double> cohens_d;
};

struct DistributionReport {
  std::vector<DistributionSummary> groups;
  std::vector<DistributionShift> shifts;
};

std::optional<double> cohens_d(std::span<const double> a, std::span<const double> b);

/// Summaries per group (in first-appearance order) over a shared histogram
/// range, plus shift statistics for each requested (a, b) group pair.
DistributionReport distribution_summary(std::span<const std::pair<std::string, double>> scores, std::size_t bins,
                                        std::span<const std::pair<std::string, std::string>> comparisons = {});

void write_distribution_report(const std::filesystem::path& path, const DistributionReport& report);

// ---------------------------------------------------------------------------
// Correlation runs

enum class Level { utterance, system };

std::string level_name(Level level);
Level parse_level(const std::string& name);

struct CorrelationReport {
  std::string metric_a, metric_b;
  Level level = Level::utterance;
  double lcc = 0.0;
  double srcc = 0.0;
  std::size_t n = 0;
};

/// Values of a named column per utterance: score metrics come from
/// `scores`, anything else (mos, wer, cer, extra numeric fields) from the
/// manifest.
std::vector<std::optional<double>> metric_column(const std::string& name, std::span<const ScoreResult> scores,
                                                 std::span<const EvalRecord> manifest);

/// One report per (pair, level). Utterance level correlates raw joined
/// values; system level correlates per-system means of both series.
std::vector<CorrelationReport> correlation_run(std::span<const ScoreResult> scores,
                                               std::span<const EvalRecord> manifest,
                                               std::span<const std::pair<std::string, std::string>> targets,
                                               std::span<const Level> levels);

void write_correlation_reports(const std::filesystem::path& path, std::span<const CorrelationReport> reports);
/// Fixed-width table, one row per metric pair, LCC/SRCC columns per level.
std::string render_correlation_table(std::span<const CorrelationReport> reports);

}  // namespace ttscore
