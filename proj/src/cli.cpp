#include "ttscore/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "binary_io.hpp"
#include "ttscore/corpus.hpp"
#include "ttscore/error.hpp"
#include "ttscore/evalbench.hpp"
#include "ttscore/generator.hpp"
#include "ttscore/log.hpp"
#include "ttscore/parallel.hpp"
#include "ttscore/prosody.hpp"
#include "ttscore/quantizer.hpp"
#include "ttscore/scoring.hpp"
#include "ttscore/synth.hpp"

#ifndef TTSCORE_VERSION
#define TTSCORE_VERSION "0.0.0"
#endif

namespace ttscore {

namespace fs = std::filesystem;
using nlohmann::json;

std::string toolkit_version() { return TTSCORE_VERSION; }

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

// Resolved option values of the running subcommand, plus whatever the
// command wants to add (losses, counts), written next to its main output.
void write_run_record(const fs::path& artifact, const CLI::App& cmd, const Common& common,
                      const json& extra = json::object()) {
  json options = json::object();
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name.empty() || name == "--help" || name == "-h") continue;
    const auto key = opt->get_lnames().empty() ? name : opt->get_lnames().front();
    const auto results = opt->reduced_results();
    if (!results.empty()) {
      options[key] = results.size() == 1 ? json(results.front()) : json(results);
    } else if (!opt->get_default_str().empty()) {
      options[key] = opt->get_default_str();
    }
  }
  json record = {{"command", cmd.get_name()},
                 {"version", toolkit_version()},
                 {"seed", common.seed},
                 {"workers", common.workers},
                 {"options", options},
                 {"result", extra}};
  auto path = artifact;
  path += ".run.json";
  auto out = detail::create_text(path);
  out << record.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// Rewrites a record's relative paths so they stay valid from another manifest.
EvalRecord rebase(EvalRecord r, const fs::path& from_manifest, const fs::path& to_manifest) {
  const auto to_dir = fs::absolute(to_manifest).parent_path();
  for (auto* field : {&r.phoneme_path, &r.feature_path, &r.token_path, &r.alignment_path, &r.f0_path,
                      &r.prosody_feature_path, &r.prosody_token_path}) {
    if (!*field || fs::path(**field).is_absolute()) continue;
    const auto target = fs::absolute(resolve_path(from_manifest, **field)).lexically_normal();
    *field = target.lexically_relative(to_dir).generic_string();
  }
  return r;
}

std::pair<std::string, std::string> split_pair(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw UsageError("expected NAME_A:NAME_B, got '" + text + "'");
  }
  return {text.substr(0, colon), text.substr(colon + 1)};
}

PoolMode parse_pool_mode(const std::string& s) {
  if (s == "mean") return PoolMode::mean;
  if (s == "max") return PoolMode::max;
  throw UsageError("unknown pool mode '" + s + "' (expected mean or max)");
}

fs::path require_feature(const fs::path& manifest, const EvalRecord& r, const std::optional<std::string>& ref,
                         const char* field) {
  if (!ref) throw ValidationError(r.utt_id + ": record has no " + std::string(field));
  return resolve_path(manifest, *ref);
}

std::vector<AlignmentSegment> record_alignment(const fs::path& manifest, const EvalRecord& r,
                                               const std::optional<AlignmentTable>& shared, Index frames) {
  const auto phonemes = record_phonemes(manifest, r);
  if (!phonemes) throw ValidationError(r.utt_id + ": record has no phonemes");
  if (r.alignment_path) {
    return read_alignment(resolve_path(manifest, *r.alignment_path), r.utt_id, *phonemes, frames);
  }
  if (shared) {
    auto it = shared->find(r.utt_id);
    if (it == shared->end()) throw ValidationError("no alignment for " + r.utt_id);
    return validate_alignment(it->second, static_cast<Index>(phonemes->size()), frames);
  }
  throw ValidationError(r.utt_id + ": no alignment (alignment_path or --alignments)");
}

// Pooled matrices of every record, read from <dir>/<utt_id>.ttsf.
std::vector<FeatureMatrix> read_pooled(const std::vector<EvalRecord>& records, const fs::path& dir) {
  std::vector<FeatureMatrix> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(read_features(dir / (r.utt_id + ".ttsf")));
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out_dir;
  int train = 200, eval = 20, systems = 4, dims = 16;
};

void cmd_synth(const SynthArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  SynthOptions o;
  o.seed = c.seed;
  o.train_utterances = a.train;
  o.eval_utterances = a.eval;
  o.systems = a.systems;
  o.content_dims = a.dims;
  const auto corpus = synth_corpus(o);
  write_synth_corpus(a.out_dir, corpus);
  write_run_record(a.out_dir / "corpus", cmd, c, {{"system_quality", corpus.system_quality}});
  out << "wrote " << corpus.train.size() << " train and " << corpus.eval.size() << " eval utterances to "
      << a.out_dir.string() << '\n';
}

struct FitKMeansArgs {
  fs::path manifest, out;
  Index k = 50;
  int max_iters = 100;
  double tol = 1e-6;
  Index max_frames = 0;
};

void cmd_fit_kmeans(const FitKMeansArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  const auto records = parse_manifest(a.manifest);
  std::vector<FeatureMatrix> features;
  for (const auto& r : records) features.push_back(read_features(require_feature(a.manifest, r, r.feature_path, "feature_path")));
  KMeansOptions o;
  o.k = a.k;
  o.max_iters = a.max_iters;
  o.tol = a.tol;
  o.seed = c.seed;
  o.max_frames = a.max_frames;
  KMeansTrace trace;
  const auto codebook = kmeans_fit(features, o, &trace);
  save_codebook(a.out, codebook);
  write_run_record(a.out, cmd, c,
                   {{"inertia", codebook.inertia}, {"iterations", trace.iterations}, {"converged", trace.converged}});
  out << "k=" << codebook.k() << " inertia=" << codebook.inertia << " iterations=" << trace.iterations << '\n';
}

struct TokenizeArgs {
  fs::path manifest, codebook, out;
};

void cmd_tokenize(const TokenizeArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  const auto records = parse_manifest(a.manifest);
  const auto codebook = load_codebook(a.codebook);
  std::vector<std::optional<TokenSequence>> tokens(records.size());
  parallel_for(records.size(), c.workers, [&](std::size_t i) {
    const auto& r = records[i];
    tokens[i] = kmeans_assign(read_features(require_feature(a.manifest, r, r.feature_path, "feature_path")), codebook);
  });
  std::vector<UttTokens> entries;
  for (std::size_t i = 0; i < records.size(); ++i) entries.push_back({records[i].utt_id, std::move(*tokens[i])});
  write_tokens(a.out, entries);
  write_run_record(a.out, cmd, c, {{"utterances", entries.size()}});
  out << "tokenized " << entries.size() << " utterances\n";
}

struct PoolArgs {
  fs::path manifest, out_dir;
  std::optional<fs::path> alignments;
  std::string source = "prosody", mode = "mean";
};

void cmd_pool(const PoolArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  const auto mode = parse_pool_mode(a.mode);
  if (a.source != "prosody" && a.source != "content") {
    throw UsageError("--source must be prosody or content");
  }
  const auto records = parse_manifest(a.manifest);
  std::optional<AlignmentTable> shared;
  if (a.alignments) shared = read_alignment_table(*a.alignments);
  fs::create_directories(a.out_dir);
  parallel_for(records.size(), c.workers, [&](std::size_t i) {
    const auto& r = records[i];
    const auto& ref = a.source == "prosody" ? r.prosody_feature_path : r.feature_path;
    const auto features = read_features(require_feature(a.manifest, r, ref, "feature file"));
    const auto segments = record_alignment(a.manifest, r, shared, features.frames());
    write_features(a.out_dir / (r.utt_id + ".ttsf"), pool_phoneme(features, segments, mode));
  });
  write_run_record(a.out_dir / "pool", cmd, c, {{"utterances", records.size()}});
  out << "pooled " << records.size() << " utterances\n";
}

struct FitRvqArgs {
  fs::path manifest, pooled_dir, out;
  Index stages = 1, k = 64;
  int max_iters = 100;
  double tol = 1e-6;
};

void cmd_fit_rvq(const FitRvqArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  const auto records = parse_manifest(a.manifest);
  const auto pooled = read_pooled(records, a.pooled_dir);
  RvqOptions o;
  o.stages = a.stages;
  o.k_per_stage = a.k;
  o.seed = c.seed;
  o.max_iters = a.max_iters;
  o.tol = a.tol;
  const auto codebook = rvq_fit(pooled, o);
  save_rvq_codebook(a.out, codebook);
  const double mse = rvq_reconstruction_mse(pooled, codebook);
  write_run_record(a.out, cmd, c, {{"reconstruction_mse", mse}});
  out << "stages=" << codebook.stages() << " k=" << codebook.k_per_stage() << " mse=" << mse << '\n';
}

struct EncodeRvqArgs {
  fs::path manifest, pooled_dir, rvq, out;
};

void cmd_encode_rvq(const EncodeRvqArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  const auto records = parse_manifest(a.manifest);
  const auto codebook = load_rvq_codebook(a.rvq);
  std::vector<std::optional<StackedTokens>> stacked(records.size());
  parallel_for(records.size(), c.workers, [&](std::size_t i) {
    stacked[i] = rvq_encode(read_features(a.pooled_dir / (records[i].utt_id + ".ttsf")), codebook);
  });
  json files = json::array();
  for (Index s = 0; s < codebook.stages(); ++s) {
    std::vector<UttTokens> entries;
    for (std::size_t i = 0; i < records.size(); ++i) {
      entries.push_back({records[i].utt_id, stacked[i]->stages[static_cast<std::size_t>(s)]});
    }
    const auto path = stage_token_path(a.out, s);
    write_tokens(path, entries);
    files.push_back(path.generic_string());
  }
  write_run_record(a.out, cmd, c, {{"stage_files", files}});
  out << "encoded " << records.size() << " utterances into " << codebook.stages() << " stage file(s)\n";
}

struct TrainArgs {
  std::optional<fs::path> manifest;
  fs::path tokens, out;
  std::string kind = "conditional", preset = "toy", precision = "single";
  int vocab = 0;
  std::optional<int> enc_layers, dec_layers, model_dim, embed_dim, heads, ffn_dim, max_len;
  std::optional<double> dropout;
  TrainConfig train;
  bool truncate = true;
};

void cmd_train(const TrainArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  if (a.kind != "conditional" && a.kind != "ulm") throw UsageError("--kind must be conditional or ulm");
  if (a.vocab < 1) throw UsageError("--vocab (number of data tokens) is required");
  if (a.preset != "toy" && a.preset != "full") throw UsageError("--preset must be toy or full");
  if (a.precision != "single" && a.precision != "double") throw UsageError("--precision must be single or double");
  const bool conditional = a.kind == "conditional";
  const auto table = read_tokens(a.tokens, a.vocab);
  std::vector<TrainPair> pairs;
  if (a.manifest) {
    std::map<std::string, const TokenSequence*> by_utt;
    for (const auto& e : table) by_utt[e.utt_id] = &e.tokens;
    for (const auto& r : parse_manifest(*a.manifest)) {
      auto it = by_utt.find(r.utt_id);
      if (it == by_utt.end()) throw ValidationError(r.utt_id + ": no tokens in " + a.tokens.string());
      std::optional<PhonemeSequence> phonemes;
      if (conditional) {
        phonemes = record_phonemes(*a.manifest, r);
        if (!phonemes) throw ValidationError(r.utt_id + ": record has no phonemes");
      }
      pairs.push_back({std::move(phonemes), *it->second});
    }
  } else if (conditional) {
    throw UsageError("conditional training needs --manifest for phonemes");
  } else {
    for (const auto& e : table) pairs.push_back({std::nullopt, e.tokens});
  }

  PhonemeInventory inventory;
  if (conditional) {
    std::vector<PhonemeSequence> seqs;
    for (const auto& p : pairs) seqs.push_back(*p.phonemes);
    inventory = PhonemeInventory::collect(seqs);
  }
  const int src_vocab = conditional ? inventory.model_vocab_size() : 0;
  const int tgt_vocab = a.vocab + kNumSpecialIds;
  GeneratorConfig g;
  if (a.preset == "toy") {
    g = GeneratorConfig::toy(src_vocab, tgt_vocab);
  } else if (a.preset == "full") {
    g = GeneratorConfig::full(src_vocab, tgt_vocab);
  } else {
    throw UsageError("--preset must be toy or full");
  }
  g.conditional = conditional;
  if (!conditional) g.enc_layers = 0;
  if (a.enc_layers) g.enc_layers = *a.enc_layers;
  if (a.dec_layers) g.dec_layers = *a.dec_layers;
  if (a.model_dim) g.model_dim = *a.model_dim;
  if (a.embed_dim) g.embed_dim = *a.embed_dim;
  if (a.heads) g.heads = *a.heads;
  if (a.ffn_dim) g.ffn_dim = *a.ffn_dim;
  if (a.max_len) g.max_len = *a.max_len;
  if (a.dropout) g.dropout = *a.dropout;
  g.validate();
  if (!a.truncate) {
    for (const auto& p : pairs) {
      const std::size_t src = p.phonemes ? p.phonemes->size() + 1 : 0;
      if (static_cast<int>(std::max(src, p.tokens.size() + 1)) > g.max_len) {
        throw ValidationError("a training sequence exceeds max_len and --no-truncate is set");
      }
    }
  }

  TrainConfig t = a.train;
  t.seed = c.seed;
  t.workers = c.workers;
  if (a.precision == "single") {
    t.precision = Precision::single_precision;
  } else if (a.precision == "double") {
    t.precision = Precision::double_precision;
  } else {
    throw UsageError("--precision must be single or double");
  }

  TrainReport report;
  AnyGenerator model = t.precision == Precision::double_precision
                           ? AnyGenerator(Generator<double>::build(g, c.seed, inventory))
                           : AnyGenerator(Generator<float>::build(g, c.seed, inventory));
  std::visit([&](auto& m) { report = train(m, pairs, t); }, model);
  save_checkpoint(a.out, model);
  write_run_record(a.out, cmd, c, {{"epoch_loss", report.epoch_loss}, {"steps", report.steps}, {"pairs", pairs.size()}});
  out << "trained on " << pairs.size() << " pairs for " << report.steps << " steps";
  if (!report.epoch_loss.empty()) out << ", final loss " << report.epoch_loss.back();
  out << '\n';
}

struct ScoreArgs {
  fs::path manifest, out;
  std::vector<std::string> metrics{"ttscore_int"};
  std::optional<fs::path> content_model, prosody_model, ulm_model, codebook, rvq, content_tokens, prosody_tokens,
      alignments;
  std::string pool_mode = "mean", length_policy = "reject";
  bool append = false;
};

void cmd_score(const ScoreArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  // Option values first so usage mistakes are reported before any file is read.
  std::vector<Metric> metrics;
  for (const auto& m : a.metrics) metrics.push_back(parse_metric(m));
  ScoringAssets assets;
  assets.pool_mode = parse_pool_mode(a.pool_mode);
  if (a.length_policy == "reject") {
    assets.length_policy = LengthPolicy::reject;
  } else if (a.length_policy == "warn") {
    assets.length_policy = LengthPolicy::warn;
  } else {
    throw UsageError("--length-policy must be reject or warn");
  }

  const auto records = parse_manifest(a.manifest);
  std::optional<AnyGenerator> content, prosody, ulm;
  if (a.content_model) {
    content = load_checkpoint(*a.content_model, {std::nullopt, std::nullopt, true});
    assets.content_model = &*content;
  }
  if (a.prosody_model) {
    prosody = load_checkpoint(*a.prosody_model, {std::nullopt, std::nullopt, true});
    assets.prosody_model = &*prosody;
  }
  if (a.ulm_model) {
    ulm = load_checkpoint(*a.ulm_model, {std::nullopt, std::nullopt, false});
    assets.ulm_model = &*ulm;
  }
  if (a.codebook) assets.codebook = load_codebook(*a.codebook);
  if (a.rvq) assets.rvq = load_rvq_codebook(*a.rvq);
  assets.content_tokens = a.content_tokens;
  assets.prosody_tokens = a.prosody_tokens;
  assets.alignments = a.alignments;

  const auto scores = batch_score(a.manifest, records, metrics, assets, c.workers);
  write_scores(a.out, scores.results, a.append);
  json failures = json::array();
  for (const auto& f : scores.failures) {
    failures.push_back({{"utt_id", f.utt_id}, {"metric", metric_name(f.metric)}, {"message", f.message}});
  }
  write_run_record(a.out, cmd, c, {{"scored", scores.results.size()}, {"failures", failures}});
  out << "scored " << scores.results.size() << " (utterance, metric) pairs, " << scores.failures.size()
      << " failure(s)\n";
}

struct WerArgs {
  fs::path manifest, out;
};

void cmd_wer(const WerArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  const auto records = parse_manifest(a.manifest);
  std::vector<EvalRecord> updated;
  double wer_sum = 0.0, cer_sum = 0.0;
  for (const auto& r : records) {
    if (!r.hyp_text) throw ValidationError(r.utt_id + ": record has no hyp_text");
    EvalRecord u = rebase(r, a.manifest, a.out);
    u.wer = word_error_rate(r.text, *r.hyp_text);
    u.cer = char_error_rate(r.text, *r.hyp_text);
    wer_sum += *u.wer;
    cer_sum += *u.cer;
    updated.push_back(std::move(u));
  }
  write_manifest(a.out, updated);
  const double n = std::max<double>(1.0, static_cast<double>(records.size()));
  write_run_record(a.out, cmd, c, {{"mean_wer", wer_sum / n}, {"mean_cer", cer_sum / n}});
  out << "mean WER " << wer_sum / n << ", mean CER " << cer_sum / n << " over " << records.size()
      << " utterances\n";
}

struct F0MetricsArgs {
  fs::path manifest, reference, out;
};

void cmd_f0_metrics(const F0MetricsArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  const auto records = parse_manifest(a.manifest);
  std::map<std::string, EvalRecord> refs;
  for (auto& r : parse_manifest(a.reference)) refs.emplace(r.utt_id, std::move(r));
  std::vector<EvalRecord> updated;
  std::size_t skipped = 0;
  for (const auto& r : records) {
    EvalRecord u = rebase(r, a.manifest, a.out);
    try {
      auto it = refs.find(r.utt_id);
      if (it == refs.end()) throw ValidationError("no reference utterance");
      const auto hyp = read_f0(require_feature(a.manifest, r, r.f0_path, "f0_path"));
      const auto ref = read_f0(require_feature(a.reference, it->second, it->second.f0_path, "f0_path"));
      u.metrics["f0_rmse"] = f0_rmse(ref, hyp, false);
      u.metrics["log_f0_rmse"] = f0_rmse(ref, hyp, true);
      u.metrics["f0_corr"] = f0_corr(ref, hyp);
    } catch (const Error& e) {
      warn(r.utt_id + " [f0-metrics]: " + e.what());
      ++skipped;
    }
    updated.push_back(std::move(u));
  }
  write_manifest(a.out, updated);
  write_run_record(a.out, cmd, c, {{"utterances", records.size()}, {"skipped", skipped}});
  out << "F0 metrics for " << records.size() - skipped << " of " << records.size() << " utterances\n";
}

struct PerturbArgs {
  fs::path manifest, out_dir;
  std::string mode = "inverse";
};

void cmd_perturb(const PerturbArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  if (a.mode != "inverse" && a.mode != "flip") throw UsageError("--mode must be inverse or flip");
  const auto records = parse_manifest(a.manifest);
  const auto manifest_out = a.out_dir / "manifest.jsonl";
  std::vector<EvalRecord> updated;
  for (const auto& r : records) {
    const auto f0 = read_f0(require_feature(a.manifest, r, r.f0_path, "f0_path"));
    const auto perturbed = a.mode == "inverse" ? perturb_inverse(f0) : perturb_flip(f0);
    EvalRecord u = rebase(r, a.manifest, manifest_out);
    u.system_id = r.system_id + "+" + a.mode;
    u.f0_path = "f0/" + r.utt_id + ".ttsf";
    u.prosody_feature_path = "prosody/" + r.utt_id + ".ttsf";
    u.prosody_token_path.reset();
    write_f0(a.out_dir / *u.f0_path, perturbed);
    write_features(a.out_dir / *u.prosody_feature_path, prosody_features(perturbed));
    updated.push_back(std::move(u));
  }
  write_manifest(manifest_out, updated);
  write_run_record(manifest_out, cmd, c, {{"utterances", records.size()}});
  out << "perturbed (" << a.mode << ") " << records.size() << " contours\n";
}

struct CorrelateArgs {
  fs::path scores, manifest, out;
  std::vector<std::string> pairs;
  std::vector<std::string> levels{"utterance", "system"};
  std::optional<fs::path> table;
};

void cmd_correlate(const CorrelateArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  std::vector<std::pair<std::string, std::string>> targets;
  for (const auto& p : a.pairs) targets.push_back(split_pair(p));
  std::vector<Level> levels;
  for (const auto& l : a.levels) levels.push_back(parse_level(l));
  const auto scores = read_scores(a.scores);
  const auto records = parse_manifest(a.manifest);
  const auto reports = correlation_run(scores, records, targets, levels);
  write_correlation_reports(a.out, reports);
  const auto table = render_correlation_table(reports);
  if (a.table) {
    auto t = detail::create_text(*a.table);
    t << table;
  }
  write_run_record(a.out, cmd, c, {{"reports", reports.size()}});
  out << table;
}

struct DistributionsArgs {
  std::vector<fs::path> scores;
  fs::path out;
  std::string metric = "ttscore_pro";
  std::size_t bins = 20;
  std::vector<std::string> compare;
};

void cmd_distributions(const DistributionsArgs& a, const Common& c, const CLI::App& cmd, std::ostream& out) {
  const Metric metric = parse_metric(a.metric);
  std::vector<std::pair<std::string, std::string>> comparisons;
  for (const auto& p : a.compare) comparisons.push_back(split_pair(p));
  std::vector<std::pair<std::string, double>> values;
  for (const auto& path : a.scores) {
    for (const auto& s : read_scores(path)) {
      if (s.metric == metric) values.emplace_back(s.system_id, s.value);
    }
  }
  const auto report = distribution_summary(values, a.bins, comparisons);
  write_distribution_report(a.out, report);
  write_run_record(a.out, cmd, c, {{"groups", report.groups.size()}});
  for (const auto& g : report.groups) {
    out << g.group << ": n=" << g.n << " mean=" << g.mean << " std=" << g.std << '\n';
  }
  for (const auto& s : report.shifts) {
    out << s.group_a << " - " << s.group_b << ": mean difference " << s.mean_difference << ", d=";
    if (s.cohens_d) {
      out << *s.cohens_d;
    } else {
      out << "undefined";
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reference-free speech evaluation: TTScore-int, TTScore-pro and their benchmarks", "ttscore"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI/TOML file with option values ([subcommand] sections)");
  app.set_version_flag("--version", toolkit_version());

  Common common;
  app.add_option("--seed", common.seed, "Seed for every random choice")->envname("TTSCORE_SEED");
  app.add_option("--workers", common.workers, "Parallel utterance workers (1 = bitwise deterministic)")
      ->envname("TTSCORE_WORKERS")
      ->check(CLI::PositiveNumber);

  std::function<void()> action;
  auto bind = [&](CLI::App* cmd, auto* args, auto fn) {
    cmd->callback([&, cmd, args, fn] { action = [&, cmd, args, fn] { fn(*args, common, *cmd, out); }; });
  };

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-corpus", "Generate the deterministic synthetic corpus");
  c_synth->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  c_synth->add_option("--train", synth.train, "Natural training utterances");
  c_synth->add_option("--eval", synth.eval, "Utterances per evaluated system");
  c_synth->add_option("--systems", synth.systems, "Number of synthetic systems");
  c_synth->add_option("--dims", synth.dims, "Content feature dimensions");
  bind(c_synth, &synth, cmd_synth);

  FitKMeansArgs km;
  auto* c_km = app.add_subcommand("fit-kmeans", "Fit a k-means content codebook on manifest features");
  c_km->add_option("--manifest", km.manifest, "Manifest with feature_path entries")->required();
  c_km->add_option("--out", km.out, "Codebook header (.json)")->required();
  c_km->add_option("--k", km.k, "Number of clusters");
  c_km->add_option("--max-iters", km.max_iters, "Lloyd iteration cap");
  c_km->add_option("--tol", km.tol, "Relative inertia decrease that stops training");
  c_km->add_option("--max-frames", km.max_frames, "Frame budget sampled for fitting (0 = all)");
  bind(c_km, &km, cmd_fit_kmeans);

  TokenizeArgs tok;
  auto* c_tok = app.add_subcommand("tokenize", "Assign content tokens with a codebook");
  c_tok->add_option("--manifest", tok.manifest, "Manifest with feature_path entries")->required();
  c_tok->add_option("--codebook", tok.codebook, "Codebook header")->required();
  c_tok->add_option("--out", tok.out, "Token table (.tok)")->required();
  bind(c_tok, &tok, cmd_tokenize);

  PoolArgs pool;
  auto* c_pool = app.add_subcommand("pool", "Pool frame features to phoneme level");
  c_pool->add_option("--manifest", pool.manifest, "Manifest")->required();
  c_pool->add_option("--out-dir", pool.out_dir, "Directory for <utt_id>.ttsf outputs")->required();
  c_pool->add_option("--alignments", pool.alignments, "Shared alignment table for records without alignment_path");
  c_pool->add_option("--source", pool.source, "Features to pool: prosody or content");
  c_pool->add_option("--mode", pool.mode, "Pooling function: mean or max");
  bind(c_pool, &pool, cmd_pool);

  FitRvqArgs fr;
  auto* c_fr = app.add_subcommand("fit-rvq", "Fit a residual vector quantizer on pooled features");
  c_fr->add_option("--manifest", fr.manifest, "Manifest naming the utterances")->required();
  c_fr->add_option("--pooled-dir", fr.pooled_dir, "Output directory of `pool`")->required();
  c_fr->add_option("--out", fr.out, "RVQ header (.json)")->required();
  c_fr->add_option("--stages", fr.stages, "Quantizer stages");
  c_fr->add_option("--k", fr.k, "Codebook size per stage");
  c_fr->add_option("--max-iters", fr.max_iters, "Lloyd iteration cap per stage");
  c_fr->add_option("--tol", fr.tol, "Relative inertia tolerance");
  bind(c_fr, &fr, cmd_fit_rvq);

  EncodeRvqArgs er;
  auto* c_er = app.add_subcommand("encode-rvq", "Encode pooled features into prosody tokens");
  c_er->add_option("--manifest", er.manifest, "Manifest naming the utterances")->required();
  c_er->add_option("--pooled-dir", er.pooled_dir, "Output directory of `pool`")->required();
  c_er->add_option("--rvq", er.rvq, "RVQ header")->required();
  c_er->add_option("--out", er.out, "Token base path; stage s goes to <stem>.s<s>.tok")->required();
  bind(c_er, &er, cmd_encode_rvq);

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train-gen", "Train a conditional token generator or a decoder-only uLM");
  c_tr->add_option("--manifest", tr.manifest, "Manifest with phonemes (required for conditional models)");
  c_tr->add_option("--tokens", tr.tokens, "Target token table")->required();
  c_tr->add_option("--vocab", tr.vocab, "Number of data tokens (codebook size)")->required();
  c_tr->add_option("--out", tr.out, "Checkpoint path")->required();
  c_tr->add_option("--kind", tr.kind, "conditional or ulm");
  c_tr->add_option("--preset", tr.preset, "toy (2+2 layers, width 64) or full (6+6, width 512)");
  c_tr->add_option("--precision", tr.precision, "single or double");
  c_tr->add_option("--enc-layers", tr.enc_layers, "Override encoder depth");
  c_tr->add_option("--dec-layers", tr.dec_layers, "Override decoder depth");
  c_tr->add_option("--model-dim", tr.model_dim, "Override layer width");
  c_tr->add_option("--embed-dim", tr.embed_dim, "Override embedding width");
  c_tr->add_option("--heads", tr.heads, "Override attention heads");
  c_tr->add_option("--ffn-dim", tr.ffn_dim, "Override feed-forward width (0 = 4 x model dim)");
  c_tr->add_option("--max-len", tr.max_len, "Override maximum sequence length");
  c_tr->add_option("--dropout", tr.dropout, "Override dropout");
  c_tr->add_option("--batch", tr.train.batch_size, "Sequences per optimizer step");
  c_tr->add_option("--lr", tr.train.learning_rate, "Peak learning rate");
  c_tr->add_option("--weight-decay", tr.train.weight_decay, "AdamW decoupled weight decay");
  c_tr->add_option("--epochs", tr.train.epochs, "Training epochs");
  c_tr->add_option("--warmup", tr.train.warmup_fraction, "Warmup length as a fraction of all steps");
  c_tr->add_option("--clip-norm", tr.train.clip_norm, "Global gradient-norm clip (<= 0 disables)");
  c_tr->add_flag("!--no-truncate", tr.truncate, "Reject over-length sequences instead of truncating");
  bind(c_tr, &tr, cmd_train);

  ScoreArgs sc;
  auto* c_sc = app.add_subcommand("score", "Score a manifest with TTScore-int, TTScore-pro or the uLM");
  c_sc->add_option("--manifest", sc.manifest, "Manifest to score")->required();
  c_sc->add_option("--out", sc.out, "Scores file (.jsonl)")->required();
  c_sc->add_option("--metric", sc.metrics, "ttscore-int, ttscore-pro and/or ulm (repeatable)");
  c_sc->add_option("--content-model", sc.content_model, "Content generator checkpoint");
  c_sc->add_option("--prosody-model", sc.prosody_model, "Prosody generator checkpoint");
  c_sc->add_option("--ulm-model", sc.ulm_model, "Decoder-only checkpoint");
  c_sc->add_option("--codebook", sc.codebook, "Content codebook for records with only features");
  c_sc->add_option("--rvq", sc.rvq, "Prosody RVQ for records with only prosody features");
  c_sc->add_option("--content-tokens", sc.content_tokens, "Content token table");
  c_sc->add_option("--prosody-tokens", sc.prosody_tokens, "Stage-0 prosody token table");
  c_sc->add_option("--alignments", sc.alignments, "Shared alignment table");
  c_sc->add_option("--pool-mode", sc.pool_mode, "mean or max");
  c_sc->add_option("--length-policy", sc.length_policy, "Prosody length mismatch: reject or warn");
  c_sc->add_flag("--append", sc.append, "Append to the scores file");
  bind(c_sc, &sc, cmd_score);

  WerArgs wer;
  auto* c_wer = app.add_subcommand("wer", "Fill wer/cer from text and hyp_text");
  c_wer->add_option("--manifest", wer.manifest, "Manifest with hyp_text")->required();
  c_wer->add_option("--out", wer.out, "Updated manifest")->required();
  bind(c_wer, &wer, cmd_wer);

  F0MetricsArgs f0m;
  auto* c_f0m = app.add_subcommand("f0-metrics", "F0 RMSE (Hz and log) and F0 correlation against references");
  c_f0m->add_option("--manifest", f0m.manifest, "Hypothesis manifest with f0_path")->required();
  c_f0m->add_option("--reference", f0m.reference, "Reference manifest (joined on utt_id)")->required();
  c_f0m->add_option("--out", f0m.out, "Updated manifest with f0_rmse, log_f0_rmse, f0_corr")->required();
  bind(c_f0m, &f0m, cmd_f0_metrics);

  PerturbArgs pf;
  auto* c_pf = app.add_subcommand("perturb-f0", "Invert or time-flip F0 contours and rebuild prosody features");
  c_pf->add_option("--manifest", pf.manifest, "Manifest with f0_path")->required();
  c_pf->add_option("--out-dir", pf.out_dir, "Output directory (manifest.jsonl, f0/, prosody/)")->required();
  c_pf->add_option("--mode", pf.mode, "inverse or flip");
  bind(c_pf, &pf, cmd_perturb);

  CorrelateArgs co;
  auto* c_co = app.add_subcommand("correlate", "LCC/SRCC between score and manifest columns");
  c_co->add_option("--scores", co.scores, "Scores file")->required();
  c_co->add_option("--manifest", co.manifest, "Manifest with mos/wer/cer or extra columns")->required();
  c_co->add_option("--pair", co.pairs, "A:B column pair, e.g. ttscore_int:mos (repeatable)")->required();
  c_co->add_option("--level", co.levels, "utterance and/or system");
  c_co->add_option("--out", co.out, "Report file (.jsonl)")->required();
  c_co->add_option("--table", co.table, "Also write the rendered table here");
  bind(c_co, &co, cmd_correlate);

  DistributionsArgs di;
  auto* c_di = app.add_subcommand("distributions", "Per-system score distributions and shift statistics");
  c_di->add_option("--scores", di.scores, "Scores file(s)")->required();
  c_di->add_option("--out", di.out, "Report file (.jsonl)")->required();
  c_di->add_option("--metric", di.metric, "Metric to summarize");
  c_di->add_option("--bins", di.bins, "Histogram bins")->check(CLI::PositiveNumber);
  c_di->add_option("--compare", di.compare, "A:B system pair for mean difference and Cohen's d (repeatable)");
  bind(c_di, &di, cmd_distributions);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    err << "Run 'ttscore --help' for usage.\n";
    return kExitUsage;
  }
  if (!action) throw UsageError("no subcommand given");
  action();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto previous = set_warning_sink([&err](const std::string& m) { err << "ttscore: warning: " << m << '\n'; });
  struct Restore {
    WarningSink sink;
    ~Restore() { set_warning_sink(std::move(sink)); }
  } restore{std::move(previous)};
  try {
    return dispatch(args, out, err);
  } catch (const UsageError& e) {
    err << "ttscore: usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "ttscore: invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const IoError& e) {
    err << "ttscore: I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "ttscore: I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    err << "ttscore: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "ttscore: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace ttscore
