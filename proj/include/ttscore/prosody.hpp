#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ttscore/corpus.hpp"
#include "ttscore/quantizer.hpp"

namespace ttscore {

enum class PoolMode { mean, max };

/// One output row per alignment segment: the mean (or max) of frames
/// [start, end) of that segment.
FeatureMatrix pool_phoneme(const FeatureMatrix& features, std::span<const AlignmentSegment> segments,
                           PoolMode mode = PoolMode::mean);

/// Residual vector quantizer: stage s quantizes what stages 0..s-1 left over.
struct RvqCodebook {
  std::vector<RowMatrix<float>> stage_centroids;
  std::uint64_t seed = 0;

  Index stages() const { return static_cast<Index>(stage_centroids.size()); }
  Index k_per_stage() const { return stage_centroids.empty() ? 0 : stage_centroids.front().rows(); }
  Index dims() const { return stage_centroids.empty() ? 0 : stage_centroids.front().cols(); }

  bool operator==(const RvqCodebook&) const = default;
};

/// Per-stage token sequences of equal length. Stage 0 is the scored sequence.
struct StackedTokens {
  std::vector<TokenSequence> stages;

  Index length() const { return stages.empty() ? 0 : static_cast<Index>(stages.front().size()); }
  bool operator==(const StackedTokens&) const = default;
};

struct RvqOptions {
  Index stages = 1;
  Index k_per_stage = 64;
  std::uint64_t seed = 0;
  int max_iters = 100;
  double tol = 1e-6;
};

/// Stage s uses seed + s, so a single-stage fit equals kmeans_fit with the
/// same seed.
RvqCodebook rvq_fit(std::span<const FeatureMatrix> pooled, const RvqOptions& options);

StackedTokens rvq_encode(const FeatureMatrix& pooled, const RvqCodebook& codebook);
FeatureMatrix rvq_decode(const StackedTokens& tokens, const RvqCodebook& codebook);

/// Greedy residual assignment on double rows. Returns labels per stage and
/// leaves the final residual in `residual`.
std::vector<std::vector<std::int32_t>> rvq_assign(RowMatrix<double>& residual, const RvqCodebook& codebook,
                                                  Index stage_limit = -1);

/// Mean squared reconstruction error per row (sum over dims, averaged over rows).
double rvq_reconstruction_mse(std::span<const FeatureMatrix> data, const RvqCodebook& codebook);

/// JSON header at `path` with one sibling .ttsf centroid file per stage.
void save_rvq_codebook(const std::filesystem::path& path, const RvqCodebook& codebook);
RvqCodebook load_rvq_codebook(const std::filesystem::path& path);

/// One .tok file per stage: <stem>.s<stage>.tok next to `base`.
std::filesystem::path stage_token_path(const std::filesystem::path& base, Index stage);

}  // namespace ttscore
