#include "ttscore/scoring.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "binary_io.hpp"
#include "ttscore/error.hpp"
#include "ttscore/log.hpp"
#include "ttscore/parallel.hpp"

namespace ttscore {

using nlohmann::json;

std::string metric_name(Metric metric) {
  switch (metric) {
    case Metric::ttscore_int:
      return "ttscore_int";
    case Metric::ttscore_pro:
      return "ttscore_pro";
    case Metric::ulm_score:
      return "ulm_score";
  }
  return "unknown";
}

Metric parse_metric(const std::string& name) {
  std::string n = name;
  for (auto& ch : n) {
    if (ch == '-') ch = '_';
  }
  if (n == "ttscore_int" || n == "int") return Metric::ttscore_int;
  if (n == "ttscore_pro" || n == "pro") return Metric::ttscore_pro;
  if (n == "ulm" || n == "ulm_score") return Metric::ulm_score;
  throw UsageError("unknown metric '" + name + "' (expected ttscore-int, ttscore-pro or ulm)");
}

namespace {

SequenceExample scoring_example(const AnyGenerator& model, const std::optional<PhonemeSequence>& phonemes,
                                const TokenSequence& tokens) {
  const auto& cfg = config_of(model);
  if (tokens.vocab_size() + kNumSpecialIds != cfg.tgt_vocab) {
    throw ValidationError("vocabulary mismatch: tokens use " + std::to_string(tokens.vocab_size()) +
                          " ids but the model predicts " + std::to_string(cfg.tgt_vocab - kNumSpecialIds));
  }
  std::vector<std::int32_t> source;
  if (cfg.conditional) {
    if (!phonemes) throw ValidationError("conditional model requires a phoneme sequence");
    source = inventory_of(model).encode(*phonemes);
  } else if (phonemes) {
    throw ValidationError("decoder-only model does not take a phoneme sequence");
  }
  return make_example(cfg, source, tokens.ids(), /*truncate=*/false);
}

}  // namespace

std::vector<double> token_logprobs(const AnyGenerator& model, const std::optional<PhonemeSequence>& phonemes,
                                   const TokenSequence& tokens) {
  const auto example = scoring_example(model, phonemes, tokens);
  return std::visit([&](const auto& m) { return m.example_logprobs(example); }, model);
}

std::vector<std::vector<double>> token_logprobs_batch(const AnyGenerator& model,
                                                      std::span<const ScoreRequest> requests,
                                                      std::size_t workers) {
  std::vector<std::vector<double>> out(requests.size());
  parallel_for(requests.size(), workers, [&](std::size_t i) {
    out[i] = token_logprobs(model, requests[i].phonemes, requests[i].tokens);
  });
  return out;
}

ScoreResult summarize(std::span<const double> logprobs, Metric metric, std::string utt_id, std::string system_id) {
  if (logprobs.empty()) throw ValidationError("no scored positions");
  double sum = 0.0;
  for (double v : logprobs) sum += v;
  ScoreResult r;
  r.utt_id = std::move(utt_id);
  r.system_id = std::move(system_id);
  r.metric = metric;
  r.token_count = logprobs.size();
  r.value = sum / static_cast<double>(logprobs.size());
  if (!std::isfinite(r.value)) throw NumericError("non-finite score for " + r.utt_id);
  return r;
}

ScoreResult ttscore_int(const AnyGenerator& content_model, const PhonemeSequence& phonemes,
                        const TokenSequence& content_tokens) {
  if (!config_of(content_model).conditional) throw ValidationError("ttscore_int requires a conditional model");
  return summarize(token_logprobs(content_model, phonemes, content_tokens), Metric::ttscore_int);
}

namespace {
void check_prosody_length(const PhonemeSequence& phonemes, const TokenSequence& tokens, LengthPolicy policy) {
  if (phonemes.size() == tokens.size()) return;
  const auto msg = "prosody token length " + std::to_string(tokens.size()) + " != phoneme count " +
                   std::to_string(phonemes.size());
  if (policy == LengthPolicy::reject) throw ValidationError(msg);
  warn(msg);
}
}  // namespace

ScoreResult ttscore_pro(const AnyGenerator& prosody_model, const PhonemeSequence& phonemes,
                        const TokenSequence& prosody_tokens, LengthPolicy policy) {
  if (!config_of(prosody_model).conditional) throw ValidationError("ttscore_pro requires a conditional model");
  check_prosody_length(phonemes, prosody_tokens, policy);
  return summarize(token_logprobs(prosody_model, phonemes, prosody_tokens), Metric::ttscore_pro);
}

ScoreResult ulm_score(const AnyGenerator& ulm, const TokenSequence& tokens) {
  if (config_of(ulm).conditional) throw ValidationError("ulm_score requires a decoder-only model");
  return summarize(token_logprobs(ulm, std::nullopt, tokens), Metric::ulm_score);
}

// ---------------------------------------------------------------------------
// Batch scoring

namespace {

using TokenTable = std::map<std::string, TokenSequence>;

class TokenCache {
 public:
  const TokenTable& table(const std::filesystem::path& path, std::int32_t vocab) {
    const auto key = path.string() + "#" + std::to_string(vocab);
    auto it = tables_.find(key);
    if (it == tables_.end()) {
      TokenTable t;
      for (auto& e : read_tokens(path, vocab)) t.emplace(e.utt_id, std::move(e.tokens));
      it = tables_.emplace(key, std::move(t)).first;
    }
    return it->second;
  }

  TokenSequence lookup(const std::filesystem::path& path, const std::string& utt, std::int32_t vocab) {
    const auto& t = table(path, vocab);
    auto it = t.find(utt);
    if (it == t.end()) throw ValidationError(path.string() + ": no tokens for " + utt);
    return it->second;
  }

 private:
  std::map<std::string, TokenTable> tables_;
};

const AnyGenerator* model_for(const ScoringAssets& a, Metric m) {
  switch (m) {
    case Metric::ttscore_int:
      return a.content_model;
    case Metric::ttscore_pro:
      return a.prosody_model;
    case Metric::ulm_score:
      return a.ulm_model;
  }
  return nullptr;
}

void preflight(const ScoringAssets& assets, std::span<const Metric> metrics) {
  for (Metric m : metrics) {
    const AnyGenerator* model = model_for(assets, m);
    if (!model) throw ValidationError("no model supplied for metric " + metric_name(m));
    const auto& cfg = config_of(*model);
    const bool want_conditional = m != Metric::ulm_score;
    if (cfg.conditional != want_conditional) {
      throw ValidationError(metric_name(m) + (want_conditional ? " requires a conditional model"
                                                                : " requires a decoder-only model"));
    }
    const int data_vocab = cfg.tgt_vocab - kNumSpecialIds;
    if (m != Metric::ttscore_pro && assets.codebook && assets.codebook->k() != data_vocab) {
      throw ValidationError("codebook k=" + std::to_string(assets.codebook->k()) + " does not match " +
                            metric_name(m) + " model vocabulary " + std::to_string(data_vocab));
    }
    if (m == Metric::ttscore_pro && assets.rvq && assets.rvq->k_per_stage() != data_vocab) {
      throw ValidationError("RVQ k_per_stage=" + std::to_string(assets.rvq->k_per_stage()) +
                            " does not match prosody model vocabulary " + std::to_string(data_vocab));
    }
  }
}

}  // namespace

BatchScores batch_score(const std::filesystem::path& manifest_path, std::span<const EvalRecord> records,
                        std::span<const Metric> metrics, const ScoringAssets& assets, std::size_t workers) {
  preflight(assets, metrics);
  BatchScores out;
  if (records.empty()) return out;

  struct Job {
    std::size_t record;
    Metric metric;
    ScoreRequest request;
  };
  std::vector<Job> jobs;
  TokenCache cache;
  std::optional<AlignmentTable> shared_alignments;

  auto content_tokens = [&](const EvalRecord& r, std::int32_t vocab) -> TokenSequence {
    if (r.token_path) return cache.lookup(resolve_path(manifest_path, *r.token_path), r.utt_id, vocab);
    if (assets.content_tokens) return cache.lookup(*assets.content_tokens, r.utt_id, vocab);
    if (r.feature_path && assets.codebook) {
      return kmeans_assign(read_features(resolve_path(manifest_path, *r.feature_path)), *assets.codebook);
    }
    throw ValidationError("no content tokens (token_path, token table or feature_path + codebook)");
  };
  auto prosody_tokens = [&](const EvalRecord& r, std::int32_t vocab) -> TokenSequence {
    if (r.prosody_token_path) {
      return cache.lookup(resolve_path(manifest_path, *r.prosody_token_path), r.utt_id, vocab);
    }
    if (assets.prosody_tokens) return cache.lookup(*assets.prosody_tokens, r.utt_id, vocab);
    if (r.prosody_feature_path && assets.rvq) {
      auto phonemes = record_phonemes(manifest_path, r);
      if (!phonemes) throw ValidationError("record has no phonemes");
      auto features = read_features(resolve_path(manifest_path, *r.prosody_feature_path));
      std::vector<AlignmentSegment> segments;
      if (r.alignment_path) {
        segments = read_alignment(resolve_path(manifest_path, *r.alignment_path), r.utt_id, *phonemes,
                                  features.frames());
      } else if (assets.alignments) {
        if (!shared_alignments) shared_alignments = read_alignment_table(*assets.alignments);
        auto it = shared_alignments->find(r.utt_id);
        if (it == shared_alignments->end()) throw ValidationError("no alignment for " + r.utt_id);
        segments = validate_alignment(it->second, static_cast<Index>(phonemes->size()), features.frames());
      } else {
        throw ValidationError("prosody features need an alignment");
      }
      auto pooled = pool_phoneme(features, segments, assets.pool_mode);
      return rvq_encode(pooled, *assets.rvq).stages.front();
    }
    throw ValidationError("no prosody tokens (prosody_token_path, token table or prosody features + RVQ)");
  };

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    for (Metric m : metrics) {
      const auto& cfg = config_of(*model_for(assets, m));
      const std::int32_t vocab = cfg.tgt_vocab - kNumSpecialIds;
      try {
        std::optional<PhonemeSequence> phonemes;
        if (m != Metric::ulm_score) {
          phonemes = record_phonemes(manifest_path, r);
          if (!phonemes) throw ValidationError("record has no phonemes");
        }
        TokenSequence tokens = m == Metric::ttscore_pro ? prosody_tokens(r, vocab) : content_tokens(r, vocab);
        if (m == Metric::ttscore_pro) check_prosody_length(*phonemes, tokens, assets.length_policy);
        // Validate eagerly so failures are attributed before the parallel pass.
        scoring_example(*model_for(assets, m), phonemes, tokens);
        jobs.push_back({i, m, ScoreRequest{std::move(phonemes), std::move(tokens)}});
      } catch (const Error& e) {
        warn(r.utt_id + " [" + metric_name(m) + "]: " + e.what());
        out.failures.push_back({r.utt_id, m, e.what()});
      }
    }
  }

  std::vector<std::optional<ScoreResult>> scored(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto& r = records[job.record];
    try {
      auto lp = token_logprobs(*model_for(assets, job.metric), job.request.phonemes, job.request.tokens);
      scored[j] = summarize(lp, job.metric, r.utt_id, r.system_id);
    } catch (const Error& e) {
      errors[j] = e.what();
    }
  });
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (scored[j]) {
      out.results.push_back(std::move(*scored[j]));
    } else {
      const auto& utt = records[jobs[j].record].utt_id;
      warn(utt + " [" + metric_name(jobs[j].metric) + "]: " + errors[j]);
      out.failures.push_back({utt, jobs[j].metric, errors[j]});
    }
  }
  return out;
}

void write_scores(const std::filesystem::path& path, std::span<const ScoreResult> results, bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  for (const auto& r : results) {
    json j = {{"utt_id", r.utt_id},
              {"system_id", r.system_id},
              {"metric", metric_name(r.metric)},
              {"value", r.value},
              {"token_count", r.token_count}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<ScoreResult> read_scores(const std::filesystem::path& path) {
  auto in = detail::open_text(path);
  std::vector<ScoreResult> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      ScoreResult r;
      r.utt_id = j.at("utt_id").get<std::string>();
      r.system_id = j.value("system_id", std::string{});
      r.metric = parse_metric(j.at("metric").get<std::string>());
      r.value = j.at("value").get<double>();
      r.token_count = j.at("token_count").get<std::size_t>();
      if (!std::isfinite(r.value) || r.value > 0.0 || r.token_count < 1) {
        throw ValidationError("score must be finite, <= 0, with token_count >= 1");
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_number) + ": " + e.what());
    } catch (const Error& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ttscore
