#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ttscore/corpus.hpp"
#include "ttscore/generator.hpp"

namespace ttscore {

/// Seeded desk-scale stand-in for a rated TTS corpus. Everything derives from
/// `seed`; the same options always give the same corpus.
struct SynthOptions {
  std::uint64_t seed = 0;
  /// Natural ("real") utterances used to fit quantizers and train generators.
  int train_utterances = 200;
  /// Utterances per synthetic system in the evaluation split.
  int eval_utterances = 20;
  int systems = 4;
  int content_dims = 16;
  int min_words = 3;
  int max_words = 6;
};

struct SynthUtterance {
  EvalRecord record;
  FeatureMatrix features;
  F0Contour f0;
  std::vector<AlignmentSegment> alignment;
};

struct SynthCorpus {
  std::vector<SynthUtterance> train;
  std::vector<SynthUtterance> eval;
  /// Quality in (0, 1] of each evaluation system, indexed like "sys<i>".
  std::vector<double> system_quality;
};

/// The ARPAbet subset the generator draws from.
const std::vector<std::string>& synth_phonemes();
bool synth_is_voiced(const std::string& phoneme);

SynthCorpus synth_corpus(const SynthOptions& options);

/// Writes train.jsonl, eval.jsonl, alignments.jsonl and the per-utterance
/// feats/, f0/ and prosody/ files under `dir`. Manifest paths are relative.
void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

/// Frame-level prosody features from an F0 contour: voiced flag, log2 of F0
/// over the contour's mean voiced F0, and its frame delta (0 where either
/// frame is unvoiced).
FeatureMatrix prosody_features(const F0Contour& f0);

struct MappedPairOptions {
  std::uint64_t seed = 0;
  int count = 600;
  std::int32_t vocab = 50;
  double noise = 0.1;
  int min_phonemes = 4;
  int max_phonemes = 12;
};

/// (phonemes, tokens) pairs where each phoneme maps to a fixed pair of data
/// tokens; every token is then substituted with probability `noise`. Pairs
/// with equal seeds share the phoneme-to-token map regardless of `count`.
std::vector<TrainPair> mapped_token_pairs(const MappedPairOptions& options);

}  // namespace ttscore
