#include "ttscore/quantizer.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <json.hpp>

#include "binary_io.hpp"
#include "ttscore/error.hpp"

namespace ttscore {

using nlohmann::json;

namespace {

Index count_distinct_rows(const RowMatrix<double>& points) {
  std::vector<Index> order(static_cast<std::size_t>(points.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  auto less = [&](Index a, Index b) {
    for (Index d = 0; d < points.cols(); ++d) {
      if (points(a, d) != points(b, d)) return points(a, d) < points(b, d);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  Index distinct = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (less(order[i - 1], order[i])) ++distinct;
  }
  return distinct;
}

RowMatrix<double> kmeanspp_init(const RowMatrix<double>& points, Index k, std::mt19937_64& rng) {
  const Index n = points.rows();
  RowMatrix<double> centroids(k, points.cols());
  std::uniform_int_distribution<Index> pick(0, n - 1);
  centroids.row(0) = points.row(pick(rng));

  Eigen::VectorXd nearest(n);
  for (Index i = 0; i < n; ++i) nearest[i] = (points.row(i) - centroids.row(0)).squaredNorm();

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Index chosen = -1;
    if (total > 0.0) {
      const double r = unit(rng) * total;
      double cumulative = 0.0;
      for (Index i = 0; i < n; ++i) {
        cumulative += nearest[i];
        if (nearest[i] > 0.0 && cumulative > r) {
          chosen = i;
          break;
        }
      }
      if (chosen < 0) {
        for (Index i = n - 1; i >= 0; --i) {
          if (nearest[i] > 0.0) {
            chosen = i;
            break;
          }
        }
      }
    }
    if (chosen < 0) throw ValidationError("k-means++: fewer distinct points than k");
    centroids.row(c) = points.row(chosen);
    for (Index i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], (points.row(i) - centroids.row(c)).squaredNorm());
    }
  }
  return centroids;
}

double assign_all(const RowMatrix<double>& points, const RowMatrix<double>& centroids,
                  std::vector<Index>& labels, Eigen::VectorXd& distances) {
  double inertia = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    double d = 0.0;
    labels[static_cast<std::size_t>(i)] = nearest_centroid(points.row(i), centroids, &d);
    distances[i] = d;
    inertia += d;
  }
  return inertia;
}

}  // namespace

RowMatrix<double> stack_frames(std::span<const FeatureMatrix> features) {
  if (features.empty()) throw ValidationError("no feature matrices given");
  const Index dims = features.front().dims();
  Index total = 0;
  for (const auto& f : features) {
    if (f.dims() != dims) {
      throw ValidationError("feature dims mismatch: " + std::to_string(f.dims()) + " vs " +
                            std::to_string(dims));
    }
    total += f.frames();
  }
  RowMatrix<double> out(total, dims);
  Index row = 0;
  for (const auto& f : features) {
    out.middleRows(row, f.frames()) = f.values().cast<double>();
    row += f.frames();
  }
  return out;
}

Codebook kmeans_fit_points(const RowMatrix<double>& all_points, const KMeansOptions& options,
                           KMeansTrace* trace) {
  const Index k = options.k;
  if (k < 1) throw ValidationError("k-means: k must be >= 1");
  if (options.max_iters < 1) throw ValidationError("k-means: max_iters must be >= 1");
  if (all_points.rows() < k) {
    throw ValidationError("k-means: " + std::to_string(all_points.rows()) + " points for k=" +
                          std::to_string(k));
  }
  std::mt19937_64 rng(options.seed);

  RowMatrix<double> subsample;
  const RowMatrix<double>* points_ptr = &all_points;
  if (options.max_frames > 0 && all_points.rows() > options.max_frames) {
    std::vector<Index> idx(static_cast<std::size_t>(all_points.rows()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(options.max_frames));
    std::sort(idx.begin(), idx.end());
    subsample.resize(options.max_frames, all_points.cols());
    for (Index i = 0; i < options.max_frames; ++i) subsample.row(i) = all_points.row(idx[static_cast<std::size_t>(i)]);
    points_ptr = &subsample;
  }
  const RowMatrix<double>& points = *points_ptr;
  const Index n = points.rows();

  const Index distinct = count_distinct_rows(points);
  if (distinct < k) {
    throw ValidationError("k-means: only " + std::to_string(distinct) + " distinct points for k=" +
                          std::to_string(k));
  }

  RowMatrix<double> centroids = kmeanspp_init(points, k, rng);
  std::vector<Index> labels(static_cast<std::size_t>(n));
  Eigen::VectorXd distances(n);
  KMeansTrace local;
  double previous = std::numeric_limits<double>::infinity();
  bool updated_since_assign = false;

  for (int iter = 0; iter < options.max_iters; ++iter) {
    double inertia = assign_all(points, centroids, labels, distances);
    updated_since_assign = false;
    local.inertia.push_back(inertia);
    local.iterations = iter + 1;

    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index l : labels) ++counts[static_cast<std::size_t>(l)];
    bool repaired = false;
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Index far = 0;
      distances.maxCoeff(&far);
      centroids.row(c) = points.row(far);
      distances[far] = 0.0;
      ++local.empty_cluster_repairs;
      repaired = true;
    }
    if (repaired) {
      // Labels are stale; the next assignment can only lower the objective.
      previous = inertia;
      updated_since_assign = true;
      continue;
    }

    if (inertia == 0.0 || (std::isfinite(previous) && previous - inertia <= options.tol * previous)) {
      local.converged = true;
      break;
    }
    previous = inertia;

    RowMatrix<double> sums = RowMatrix<double>::Zero(k, points.cols());
    for (Index i = 0; i < n; ++i) sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
    for (Index c = 0; c < k; ++c) centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    updated_since_assign = true;
  }
  if (updated_since_assign) {
    local.inertia.push_back(assign_all(points, centroids, labels, distances));
  }

  Codebook cb;
  cb.centroids = centroids.cast<float>();
  cb.seed = options.seed;
  if (!cb.centroids.allFinite()) throw NumericError("k-means produced non-finite centroids");
  double inertia = 0.0;
  for (Index i = 0; i < n; ++i) {
    double d = 0.0;
    nearest_centroid(points.row(i), cb.centroids, &d);
    inertia += d;
  }
  cb.inertia = inertia;
  if (trace) *trace = std::move(local);
  return cb;
}

Codebook kmeans_fit(std::span<const FeatureMatrix> features, const KMeansOptions& options,
                    KMeansTrace* trace) {
  return kmeans_fit_points(stack_frames(features), options, trace);
}

TokenSequence kmeans_assign(const FeatureMatrix& features, const Codebook& codebook) {
  if (features.dims() != codebook.dims()) {
    throw ValidationError("kmeans_assign: feature dims " + std::to_string(features.dims()) +
                          " != codebook dims " + std::to_string(codebook.dims()));
  }
  return TokenSequence(assign_rows(features.values(), codebook.centroids),
                       static_cast<std::int32_t>(codebook.k()));
}

void save_codebook(const std::filesystem::path& path, const Codebook& codebook) {
  auto matrix_path = path;
  matrix_path.replace_extension(".ttsf");
  write_features(matrix_path, FeatureMatrix(codebook.centroids));
  json j = {{"format", "ttscore-codebook"},
            {"version", 1},
            {"k", codebook.k()},
            {"dims", codebook.dims()},
            {"inertia", codebook.inertia},
            {"seed", codebook.seed},
            {"centroids", matrix_path.filename().string()}};
  auto out = detail::create_text(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

Codebook load_codebook(const std::filesystem::path& path) {
  auto in = detail::open_text(path);
  json j;
  try {
    j = json::parse(in);
    if (j.at("format").get<std::string>() != "ttscore-codebook") {
      throw ValidationError(path.string() + ": not a codebook header");
    }
    Codebook cb;
    const auto k = j.at("k").get<Index>();
    const auto dims = j.at("dims").get<Index>();
    cb.inertia = j.at("inertia").get<double>();
    cb.seed = j.at("seed").get<std::uint64_t>();
    auto m = read_features(path.parent_path() / j.at("centroids").get<std::string>());
    if (m.frames() != k || m.dims() != dims) {
      throw ValidationError(path.string() + ": centroid matrix shape does not match header");
    }
    cb.centroids = m.values();
    if (cb.inertia < 0.0) throw ValidationError(path.string() + ": negative inertia");
    return cb;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": malformed codebook header (" + e.what() + ")");
  }
}

}  // namespace ttscore
