#pragma once

// Independent reference computations and fixtures shared by the test files.
// The oracles deliberately avoid the library's own helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "ttscore/corpus.hpp"
#include "ttscore/generator.hpp"
#include "ttscore/log.hpp"

namespace support {

namespace fs = std::filesystem;

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("ttscore-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// Captures warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture() {
    previous_ = ttscore::set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { ttscore::set_warning_sink(std::move(previous_)); }

  std::vector<std::string> messages;

 private:
  ttscore::WarningSink previous_;
};

inline ttscore::RowMatrix<double> random_matrix(std::mt19937_64& rng, ttscore::Index rows, ttscore::Index cols,
                                                double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  ttscore::RowMatrix<double> m(rows, cols);
  for (ttscore::Index i = 0; i < rows; ++i) {
    for (ttscore::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// ---------------------------------------------------------------------------
// Statistics, written from the textbook formulas.

inline double oracle_mean(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  return static_cast<double>(s / v.size());
}

inline double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  // Raw-moment form, evaluated in long double.
  const long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  const long double num = n * sxy - sx * sy;
  const long double den = std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  return static_cast<double>(num / den);
}

/// Average ranks by counting: rank = #less + (#equal + 1) / 2.
inline std::vector<double> oracle_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

inline double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return oracle_pearson(oracle_ranks(x), oracle_ranks(y));
}

inline double oracle_sample_std(const std::vector<double>& v) {
  const double m = oracle_mean(v);
  long double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return static_cast<double>(std::sqrt(ss / (v.size() - 1)));
}

/// Type-7 quantile straight from its definition: h = (n - 1) q.
inline double oracle_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

// ---------------------------------------------------------------------------
// Edit distance: full quadratic table.

template <typename T>
std::size_t oracle_edit_distance(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
    }
  }
  return d[a.size()][b.size()];
}

// ---------------------------------------------------------------------------
// Clustering.

/// Minimum 2-means objective over every labelling of the rows.
inline double oracle_two_partition_optimum(const ttscore::RowMatrix<double>& pts) {
  const auto n = static_cast<std::size_t>(pts.rows());
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 1; mask + 1 < (std::uint64_t{1} << n); ++mask) {
    double total = 0.0;
    for (int side = 0; side < 2; ++side) {
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(pts.cols());
      double count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1u) == static_cast<std::uint64_t>(side)) {
          mean += pts.row(static_cast<ttscore::Index>(i));
          ++count;
        }
      }
      mean /= count;
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1u) == static_cast<std::uint64_t>(side)) {
          total += (pts.row(static_cast<ttscore::Index>(i)) - mean).squaredNorm();
        }
      }
    }
    best = std::min(best, total);
  }
  return best;
}

/// Linear scan, strict comparison so the first minimum wins.
inline std::int32_t oracle_nearest(const Eigen::RowVectorXd& x, const ttscore::RowMatrix<double>& c) {
  std::int32_t best = -1;
  double best_d = 0;
  for (ttscore::Index k = 0; k < c.rows(); ++k) {
    double d = 0;
    for (ttscore::Index j = 0; j < c.cols(); ++j) d += (x[j] - c(k, j)) * (x[j] - c(k, j));
    if (best < 0 || d < best_d) {
      best = static_cast<std::int32_t>(k);
      best_d = d;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Generators.

/// Decoder embedding and logit bias zeroed: every position predicts a flat
/// distribution over the tgt_vocab ids.
template <typename Scalar>
void make_uniform(ttscore::Generator<Scalar>& g) {
  auto& p = g.params();
  p[*p.find("decoder.embed.tokens")].setZero();
  p[*p.find("output.logit_bias")].setZero();
}

/// Relative-error floor for the gradient check; parameters whose true
/// gradient is zero (embedding rows never looked up) compare against it.
inline constexpr double kGradientErrorFloor = 1e-6;

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over every
/// parameter, with central differences of step h.
inline double max_gradient_error(ttscore::Generator<double>& g, const ttscore::SequenceExample& ex,
                                 double h = 1e-5) {
  auto grad = g.params().zeros_like();
  g.loss_and_gradient(ex, &grad, 1.0, nullptr);
  double worst = 0.0;
  for (std::size_t t = 0; t < g.params().size(); ++t) {
    auto& p = g.params()[t];
    for (ttscore::Index i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + h;
      const double up = g.loss_and_gradient(ex, nullptr, 1.0, nullptr);
      p.data()[i] = saved - h;
      const double down = g.loss_and_gradient(ex, nullptr, 1.0, nullptr);
      p.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grad[t].data()[i];
      const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradientErrorFloor});
      worst = std::max(worst, std::abs(analytic - numeric) / scale);
    }
  }
  return worst;
}

inline ttscore::PhonemeSequence phonemes(const std::string& text) { return ttscore::PhonemeSequence::parse(text); }

}  // namespace support
