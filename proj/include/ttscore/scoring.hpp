#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttscore/corpus.hpp"
#include "ttscore/generator.hpp"
#include "ttscore/prosody.hpp"
#include "ttscore/quantizer.hpp"

namespace ttscore {

enum class Metric { ttscore_int, ttscore_pro, ulm_score };

std::string metric_name(Metric metric);
/// Accepts "ttscore_int", "ttscore-int", "int", "ttscore_pro", ..., "ulm", "ulm_score".
Metric parse_metric(const std::string& name);

/// Mean per-token natural-log probability of one utterance's tokens.
struct ScoreResult {
  std::string utt_id;
  std::string system_id;
  Metric metric = Metric::ttscore_int;
  double value = 0.0;
  std::size_t token_count = 0;

  bool operator==(const ScoreResult&) const = default;
};

/// Teacher-forced log p(token_i | tokens_<i, phonemes) for every data token
/// followed by EOS, with dropout off. Conditional models need phonemes,
/// decoder-only models reject them. Throws ValidationError on vocabulary
/// mismatch or over-length input.
std::vector<double> token_logprobs(const AnyGenerator& model, const std::optional<PhonemeSequence>& phonemes,
                                   const TokenSequence& tokens);

struct ScoreRequest {
  std::optional<PhonemeSequence> phonemes;
  TokenSequence tokens;
};

/// Same as token_logprobs for each request, evaluated on up to `workers` threads.
std::vector<std::vector<double>> token_logprobs_batch(const AnyGenerator& model,
                                                      std::span<const ScoreRequest> requests,
                                                      std::size_t workers = 1);

/// Averages per-position log-probabilities into a score.
ScoreResult summarize(std::span<const double> logprobs, Metric metric, std::string utt_id = {},
                      std::string system_id = {});

ScoreResult ttscore_int(const AnyGenerator& content_model, const PhonemeSequence& phonemes,
                        const TokenSequence& content_tokens);

enum class LengthPolicy { reject, warn };

/// Prosody tokens are phoneme-level, so their length must equal the phoneme
/// count; a mismatch is rejected unless `policy` is warn.
ScoreResult ttscore_pro(const AnyGenerator& prosody_model, const PhonemeSequence& phonemes,
                        const TokenSequence& prosody_tokens, LengthPolicy policy = LengthPolicy::reject);

ScoreResult ulm_score(const AnyGenerator& ulm, const TokenSequence& tokens);

// ---------------------------------------------------------------------------
// Manifest-driven scoring

/// Models and quantizers a batch run may need. Token files given here are
/// multi-utterance .tok tables consulted when a record carries no path of
/// its own.
struct ScoringAssets {
  const AnyGenerator* content_model = nullptr;
  const AnyGenerator* prosody_model = nullptr;
  const AnyGenerator* ulm_model = nullptr;
  std::optional<Codebook> codebook;
  std::optional<RvqCodebook> rvq;
  std::optional<std::filesystem::path> content_tokens;
  std::optional<std::filesystem::path> prosody_tokens;
  std::optional<std::filesystem::path> alignments;
  PoolMode pool_mode = PoolMode::mean;
  LengthPolicy length_policy = LengthPolicy::reject;
};

struct ScoreFailure {
  std::string utt_id;
  Metric metric = Metric::ttscore_int;
  std::string message;
};

struct BatchScores {
  std::vector<ScoreResult> results;
  std::vector<ScoreFailure> failures;
};

/// One result per (record, metric) in manifest order. Records whose inputs
/// cannot be resolved or validated are reported in `failures` (with a
/// warning) and skipped. Missing or incompatible models/quantizers are fatal.
BatchScores batch_score(const std::filesystem::path& manifest_path, std::span<const EvalRecord> records,
                        std::span<const Metric> metrics, const ScoringAssets& assets, std::size_t workers = 1);

/// Line-delimited {utt_id, system_id, metric, value, token_count}.
void write_scores(const std::filesystem::path& path, std::span<const ScoreResult> results, bool append = false);
std::vector<ScoreResult> read_scores(const std::filesystem::path& path);

}  // namespace ttscore
