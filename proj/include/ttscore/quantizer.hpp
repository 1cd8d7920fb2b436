#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ttscore/corpus.hpp"

namespace ttscore {

/// k-means centroids (k x dims, float32 as persisted) plus fit metadata.
struct Codebook {
  RowMatrix<float> centroids;
  double inertia = 0.0;
  std::uint64_t seed = 0;

  Index k() const { return centroids.rows(); }
  Index dims() const { return centroids.cols(); }

  bool operator==(const Codebook& o) const {
    return centroids == o.centroids && inertia == o.inertia && seed == o.seed;
  }
};

struct KMeansOptions {
  Index k = 50;
  int max_iters = 100;
  /// Stop once the relative inertia decrease falls below this.
  double tol = 1e-6;
  std::uint64_t seed = 0;
  /// Fit on at most this many frames, sampled with the seed. 0 = all.
  Index max_frames = 0;
};

/// Per-iteration record of a Lloyd run. inertia[i] is the objective after
/// the assignment step of iteration i.
struct KMeansTrace {
  std::vector<double> inertia;
  int iterations = 0;
  bool converged = false;
  int empty_cluster_repairs = 0;
};

/// Index of the nearest row of `centroids` under squared Euclidean distance,
/// lowest index on ties. Accumulates in double.
template <typename RowDerived, typename CentroidDerived>
Index nearest_centroid(const Eigen::MatrixBase<RowDerived>& row,
                       const Eigen::MatrixBase<CentroidDerived>& centroids,
                       double* distance = nullptr) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centroids.rows(); ++c) {
    const double d =
        (row.template cast<double>() - centroids.row(c).template cast<double>()).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (distance) *distance = best_d;
  return best;
}

/// Nearest-centroid labels for every row.
template <typename PointDerived, typename CentroidDerived>
std::vector<std::int32_t> assign_rows(const Eigen::MatrixBase<PointDerived>& points,
                                      const Eigen::MatrixBase<CentroidDerived>& centroids) {
  std::vector<std::int32_t> labels(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) {
    labels[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(nearest_centroid(points.row(i), centroids));
  }
  return labels;
}

/// Lloyd's algorithm from k-means++ seeding on the rows of `points`.
/// Throws ValidationError if there are fewer distinct rows than k.
Codebook kmeans_fit_points(const RowMatrix<double>& points, const KMeansOptions& options,
                           KMeansTrace* trace = nullptr);

/// Fits on the concatenated frames of all matrices (which must share dims).
Codebook kmeans_fit(std::span<const FeatureMatrix> features, const KMeansOptions& options,
                    KMeansTrace* trace = nullptr);

/// Content tokens: one id per frame, vocab_size == k.
TokenSequence kmeans_assign(const FeatureMatrix& features, const Codebook& codebook);

/// Stacks the frames of several matrices into one double matrix.
RowMatrix<double> stack_frames(std::span<const FeatureMatrix> features);

/// Codebook persisted as a JSON header at `path` plus a .ttsf centroid matrix
/// next to it (same stem, .ttsf extension).
void save_codebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace ttscore
