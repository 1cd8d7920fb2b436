#include "ttscore/prosody.hpp"

#include <json.hpp>

#include "binary_io.hpp"
#include "ttscore/error.hpp"

namespace ttscore {

using nlohmann::json;

FeatureMatrix pool_phoneme(const FeatureMatrix& features, std::span<const AlignmentSegment> segments,
                           PoolMode mode) {
  auto valid = validate_alignment(std::vector<AlignmentSegment>(segments.begin(), segments.end()),
                                  static_cast<Index>(segments.size()), features.frames());
  const auto& v = features.values();
  RowMatrix<double> out(static_cast<Index>(valid.size()), features.dims());
  for (std::size_t i = 0; i < valid.size(); ++i) {
    const auto& s = valid[i];
    auto block = v.middleRows(s.start_frame, s.end_frame - s.start_frame).cast<double>();
    if (mode == PoolMode::mean) {
      out.row(static_cast<Index>(i)) = block.colwise().sum() / static_cast<double>(block.rows());
    } else {
      out.row(static_cast<Index>(i)) = block.colwise().maxCoeff();
    }
  }
  return FeatureMatrix::from(out);
}

std::vector<std::vector<std::int32_t>> rvq_assign(RowMatrix<double>& residual, const RvqCodebook& codebook,
                                                  Index stage_limit) {
  const Index stages = stage_limit < 0 ? codebook.stages() : std::min(stage_limit, codebook.stages());
  std::vector<std::vector<std::int32_t>> labels;
  for (Index s = 0; s < stages; ++s) {
    const auto& centroids = codebook.stage_centroids[static_cast<std::size_t>(s)];
    auto stage_labels = assign_rows(residual, centroids);
    for (Index i = 0; i < residual.rows(); ++i) {
      residual.row(i) -= centroids.row(stage_labels[static_cast<std::size_t>(i)]).cast<double>();
    }
    labels.push_back(std::move(stage_labels));
  }
  return labels;
}

RvqCodebook rvq_fit(std::span<const FeatureMatrix> pooled, const RvqOptions& options) {
  if (options.stages < 1) throw ValidationError("rvq: stages must be >= 1");
  RowMatrix<double> residual = stack_frames(pooled);
  RvqCodebook cb;
  cb.seed = options.seed;
  for (Index s = 0; s < options.stages; ++s) {
    KMeansOptions km;
    km.k = options.k_per_stage;
    km.max_iters = options.max_iters;
    km.tol = options.tol;
    km.seed = options.seed + static_cast<std::uint64_t>(s);
    Codebook stage;
    try {
      stage = kmeans_fit_points(residual, km);
    } catch (const ValidationError& e) {
      throw ValidationError("rvq stage " + std::to_string(s) + ": insufficient data (" + e.what() + ")");
    }
    const auto labels = assign_rows(residual, stage.centroids);
    for (Index i = 0; i < residual.rows(); ++i) {
      residual.row(i) -= stage.centroids.row(labels[static_cast<std::size_t>(i)]).cast<double>();
    }
    cb.stage_centroids.push_back(std::move(stage.centroids));
  }
  return cb;
}

StackedTokens rvq_encode(const FeatureMatrix& pooled, const RvqCodebook& codebook) {
  if (pooled.dims() != codebook.dims()) {
    throw ValidationError("rvq_encode: dims " + std::to_string(pooled.dims()) + " != codebook dims " +
                          std::to_string(codebook.dims()));
  }
  RowMatrix<double> residual = pooled.values().cast<double>();
  StackedTokens out;
  for (auto& labels : rvq_assign(residual, codebook)) {
    out.stages.emplace_back(std::move(labels), static_cast<std::int32_t>(codebook.k_per_stage()));
  }
  return out;
}

FeatureMatrix rvq_decode(const StackedTokens& tokens, const RvqCodebook& codebook) {
  if (static_cast<Index>(tokens.stages.size()) != codebook.stages()) {
    throw ValidationError("rvq_decode: token stage count does not match codebook");
  }
  const Index length = tokens.length();
  RowMatrix<double> out = RowMatrix<double>::Zero(length, codebook.dims());
  for (Index s = 0; s < codebook.stages(); ++s) {
    const auto& seq = tokens.stages[static_cast<std::size_t>(s)];
    const auto& centroids = codebook.stage_centroids[static_cast<std::size_t>(s)];
    if (static_cast<Index>(seq.size()) != length) throw ValidationError("rvq_decode: stage lengths differ");
    for (Index i = 0; i < length; ++i) {
      const auto id = seq.ids()[static_cast<std::size_t>(i)];
      if (id < 0 || id >= centroids.rows()) {
        throw ValidationError("rvq_decode: id " + std::to_string(id) + " out of range at stage " +
                              std::to_string(s));
      }
      out.row(i) += centroids.row(id).cast<double>();
    }
  }
  return FeatureMatrix::from(out);
}

double rvq_reconstruction_mse(std::span<const FeatureMatrix> data, const RvqCodebook& codebook) {
  RowMatrix<double> residual = stack_frames(data);
  rvq_assign(residual, codebook);
  return residual.rowwise().squaredNorm().mean();
}

void save_rvq_codebook(const std::filesystem::path& path, const RvqCodebook& codebook) {
  json files = json::array();
  for (Index s = 0; s < codebook.stages(); ++s) {
    auto stage_path = path;
    stage_path.replace_extension(".s" + std::to_string(s) + ".ttsf");
    write_features(stage_path, FeatureMatrix(codebook.stage_centroids[static_cast<std::size_t>(s)]));
    files.push_back(stage_path.filename().string());
  }
  json j = {{"format", "ttscore-rvq-codebook"},
            {"version", 1},
            {"stages", codebook.stages()},
            {"k_per_stage", codebook.k_per_stage()},
            {"dims", codebook.dims()},
            {"seed", codebook.seed},
            {"stage_centroids", files}};
  auto out = detail::create_text(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

RvqCodebook load_rvq_codebook(const std::filesystem::path& path) {
  auto in = detail::open_text(path);
  try {
    auto j = json::parse(in);
    if (j.at("format").get<std::string>() != "ttscore-rvq-codebook") {
      throw ValidationError(path.string() + ": not an RVQ codebook header");
    }
    RvqCodebook cb;
    cb.seed = j.at("seed").get<std::uint64_t>();
    const auto stages = j.at("stages").get<Index>();
    const auto k = j.at("k_per_stage").get<Index>();
    const auto dims = j.at("dims").get<Index>();
    const auto& files = j.at("stage_centroids");
    if (stages < 1 || static_cast<Index>(files.size()) != stages) {
      throw ValidationError(path.string() + ": stage count does not match centroid file list");
    }
    for (const auto& f : files) {
      auto m = read_features(path.parent_path() / f.get<std::string>());
      if (m.frames() != k || m.dims() != dims) {
        throw ValidationError(path.string() + ": stage centroid shape does not match header");
      }
      cb.stage_centroids.push_back(m.values());
    }
    return cb;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed RVQ header (" + e.what() + ")");
  }
}

std::filesystem::path stage_token_path(const std::filesystem::path& base, Index stage) {
  auto p = base;
  p.replace_extension(".s" + std::to_string(stage) + ".tok");
  return p;
}

}  // namespace ttscore
