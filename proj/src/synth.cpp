#include "ttscore/synth.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "ttscore/error.hpp"

namespace ttscore {

namespace {

const std::vector<std::string> kVowels = {"AA", "AE", "AH", "EH", "IH", "IY", "OW", "UW", "ER", "AY"};
const std::vector<std::string> kVoicedConsonants = {"B", "D", "G", "M", "N", "L", "R", "V", "Z", "W"};
const std::vector<std::string> kUnvoicedConsonants = {"P", "T", "K", "S", "F", "SH", "HH", "CH", "TH"};

// Independent streams keyed by purpose, so growing one split never shifts another.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

enum Tag : std::uint64_t { kLexicon = 1, kVoice = 2, kTrain = 3, kEval = 4, kSystems = 5, kMap = 6, kPairs = 7 };

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
bool chance(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

struct Word {
  std::string spelling;
  std::vector<std::string> phonemes;
};

struct Voice {
  RowMatrix<double> prototypes;    // one content prototype per phoneme
  std::vector<double> pitch;       // per-phoneme pitch target, semitones
  std::vector<double> slope;       // per-phoneme within-segment glide, semitones
  std::vector<Word> lexicon;
};

std::size_t phoneme_index(const std::string& p) {
  const auto& all = synth_phonemes();
  return static_cast<std::size_t>(std::find(all.begin(), all.end(), p) - all.begin());
}

Voice make_voice(const SynthOptions& o) {
  Voice v;
  const auto& all = synth_phonemes();
  auto rng = stream(o.seed, kVoice);
  std::normal_distribution<double> normal;
  v.prototypes.resize(static_cast<Index>(all.size()), o.content_dims);
  for (Index i = 0; i < v.prototypes.rows(); ++i) {
    for (Index j = 0; j < v.prototypes.cols(); ++j) v.prototypes(i, j) = normal(rng);
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    v.pitch.push_back(uniform(rng, -4.0, 4.0));
    v.slope.push_back(uniform(rng, -1.5, 1.5));
  }
  auto lex = stream(o.seed, kLexicon);
  std::set<std::string> seen;
  while (v.lexicon.size() < 80) {
    Word w;
    const int syllables = std::uniform_int_distribution<int>(1, 2)(lex);
    for (int s = 0; s < syllables; ++s) {
      const auto& consonants = chance(lex, 0.5) ? kVoicedConsonants : kUnvoicedConsonants;
      w.phonemes.push_back(pick(consonants, lex));
      w.phonemes.push_back(pick(kVowels, lex));
      if (chance(lex, 0.3)) w.phonemes.push_back(pick(kVoicedConsonants, lex));
    }
    for (const auto& p : w.phonemes) {
      for (char c : p) w.spelling += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (seen.insert(w.spelling).second) v.lexicon.push_back(std::move(w));
  }
  return v;
}

double clamp_mos(double m) { return std::round(std::clamp(m, 1.0, 5.0) * 100.0) / 100.0; }

// quality 1 is natural speech; lower quality mispronounces phonemes, adds
// feature noise, scrambles pitch targets and degrades the transcript.
SynthUtterance make_utterance(const SynthOptions& o, const Voice& voice, std::mt19937_64& rng, std::string utt_id,
                              std::string system_id, double quality) {
  std::normal_distribution<double> normal;
  const auto& all = synth_phonemes();
  const double mis_rate = 0.35 * (1.0 - quality);
  const double noise = 0.15 + 0.6 * (1.0 - quality);
  const double pitch_scramble = 0.6 * (1.0 - quality);

  const int words = std::uniform_int_distribution<int>(o.min_words, o.max_words)(rng);
  std::vector<std::string> text, hyp, symbols;
  std::size_t mispronounced = 0;
  std::vector<bool> phone_bad;
  for (int w = 0; w < words; ++w) {
    const Word& word = pick(voice.lexicon, rng);
    text.push_back(word.spelling);
    bool word_bad = false;
    for (const auto& p : word.phonemes) {
      symbols.push_back(p);
      const bool bad = chance(rng, mis_rate);
      phone_bad.push_back(bad);
      word_bad = word_bad || bad;
      mispronounced += bad ? 1 : 0;
    }
    const bool asr_error = word_bad ? chance(rng, 0.8) : chance(rng, 0.02);
    if (!asr_error) {
      hyp.push_back(word.spelling);
    } else if (!chance(rng, 0.15)) {  // otherwise the word is dropped
      std::string other = word.spelling;
      while (other == word.spelling) other = pick(voice.lexicon, rng).spelling;
      hyp.push_back(other);
    }
  }

  const double base_hz = uniform(rng, 95.0, 210.0);
  const Index L = static_cast<Index>(symbols.size());
  std::vector<AlignmentSegment> segments;
  std::vector<double> f0;
  std::vector<std::vector<double>> frames;
  Index frame = 0;
  for (Index i = 0; i < L; ++i) {
    const std::size_t p = phoneme_index(symbols[static_cast<std::size_t>(i)]);
    const int duration = std::uniform_int_distribution<int>(2, 6)(rng);
    const std::size_t spoken = phone_bad[static_cast<std::size_t>(i)]
                                   ? std::uniform_int_distribution<std::size_t>(0, all.size() - 1)(rng)
                                   : p;
    double target = voice.pitch[p];
    if (chance(rng, pitch_scramble)) target = uniform(rng, -4.0, 4.0);
    const double declination = -2.0 * static_cast<double>(i) / static_cast<double>(std::max<Index>(L - 1, 1));
    for (int t = 0; t < duration; ++t) {
      std::vector<double> row(static_cast<std::size_t>(o.content_dims));
      for (Index d = 0; d < o.content_dims; ++d) {
        row[static_cast<std::size_t>(d)] = voice.prototypes(static_cast<Index>(spoken), d) + noise * normal(rng);
      }
      frames.push_back(std::move(row));
      if (synth_is_voiced(all[p])) {
        const double pos = (static_cast<double>(t) + 0.5) / duration - 0.5;
        const double st = target + declination + voice.slope[p] * pos + 0.1 * normal(rng);
        f0.push_back(base_hz * std::exp2(st / 12.0));
      } else {
        f0.push_back(0.0);
      }
    }
    segments.push_back({i, frame, frame + duration});
    frame += duration;
  }

  RowMatrix<float> values(static_cast<Index>(frames.size()), o.content_dims);
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      values(r, c) = static_cast<float>(frames[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
    }
  }

  auto join = [](const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : " ") + s;
    return out;
  };
  SynthUtterance u{EvalRecord{}, FeatureMatrix(std::move(values)), F0Contour(f0), std::move(segments)};
  auto& r = u.record;
  r.utt_id = std::move(utt_id);
  r.system_id = std::move(system_id);
  r.text = join(text);
  r.hyp_text = join(hyp);
  r.phonemes = PhonemeSequence(symbols);
  const double mis_fraction = static_cast<double>(mispronounced) / static_cast<double>(L);
  r.mos = clamp_mos(1.2 + 3.4 * quality - 2.0 * mis_fraction + 0.3 * normal(rng));
  return u;
}

}  // namespace

const std::vector<std::string>& synth_phonemes() {
  static const std::vector<std::string> all = [] {
    std::vector<std::string> v = kVowels;
    v.insert(v.end(), kVoicedConsonants.begin(), kVoicedConsonants.end());
    v.insert(v.end(), kUnvoicedConsonants.begin(), kUnvoicedConsonants.end());
    return v;
  }();
  return all;
}

bool synth_is_voiced(const std::string& phoneme) {
  return std::find(kUnvoicedConsonants.begin(), kUnvoicedConsonants.end(), phoneme) == kUnvoicedConsonants.end();
}

SynthCorpus synth_corpus(const SynthOptions& o) {
  if (o.train_utterances < 0 || o.eval_utterances < 0 || o.systems < 0) {
    throw ValidationError("synthetic corpus sizes must be non-negative");
  }
  if (o.content_dims < 1) throw ValidationError("content_dims must be at least 1");
  if (o.min_words < 1 || o.max_words < o.min_words) throw ValidationError("need 1 <= min_words <= max_words");
  const Voice voice = make_voice(o);
  SynthCorpus corpus;
  for (int i = 0; i < o.train_utterances; ++i) {
    auto rng = stream(o.seed, kTrain, static_cast<std::uint64_t>(i));
    char id[32];
    std::snprintf(id, sizeof id, "real_%04d", i);
    corpus.train.push_back(make_utterance(o, voice, rng, id, "real", 1.0));
  }
  auto sys_rng = stream(o.seed, kSystems);
  for (int s = 0; s < o.systems; ++s) {
    // Spread qualities over [0.3, 1] with a little jitter.
    const double spread = o.systems > 1 ? static_cast<double>(s) / (o.systems - 1) : 1.0;
    corpus.system_quality.push_back(std::clamp(0.3 + 0.65 * spread + uniform(sys_rng, -0.03, 0.03), 0.05, 1.0));
  }
  std::normal_distribution<double> normal;
  for (int s = 0; s < o.systems; ++s) {
    for (int i = 0; i < o.eval_utterances; ++i) {
      auto rng = stream(o.seed, kEval, static_cast<std::uint64_t>(s) * 1000003u + static_cast<std::uint64_t>(i));
      const double q = std::clamp(corpus.system_quality[static_cast<std::size_t>(s)] + 0.08 * normal(rng), 0.05, 1.0);
      char id[48];
      std::snprintf(id, sizeof id, "sys%d_%04d", s, i);
      corpus.eval.push_back(make_utterance(o, voice, rng, id, "sys" + std::to_string(s), q));
    }
  }
  return corpus;
}

void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  std::filesystem::create_directories(dir);
  AlignmentTable alignments;
  auto emit = [&](const std::vector<SynthUtterance>& split, const std::string& name) {
    std::vector<EvalRecord> records;
    for (const auto& u : split) {
      EvalRecord r = u.record;
      r.feature_path = "feats/" + r.utt_id + ".ttsf";
      r.f0_path = "f0/" + r.utt_id + ".ttsf";
      r.prosody_feature_path = "prosody/" + r.utt_id + ".ttsf";
      r.alignment_path = "alignments.jsonl";
      write_features(dir / *r.feature_path, u.features);
      write_f0(dir / *r.f0_path, u.f0);
      write_features(dir / *r.prosody_feature_path, prosody_features(u.f0));
      alignments[r.utt_id] = u.alignment;
      records.push_back(std::move(r));
    }
    write_manifest(dir / name, records);
  };
  emit(corpus.train, "train.jsonl");
  emit(corpus.eval, "eval.jsonl");
  write_alignment_table(dir / "alignments.jsonl", alignments);
}

FeatureMatrix prosody_features(const F0Contour& f0) {
  const auto& hz = f0.values();
  const Index voiced = f0.voiced_count();
  double mean = 0.0;
  for (Index t = 0; t < hz.size(); ++t) mean += f0.voiced(t) ? hz[t] : 0.0;
  mean = voiced > 0 ? mean / static_cast<double>(voiced) : 1.0;
  RowMatrix<double> out = RowMatrix<double>::Zero(hz.size(), 3);
  for (Index t = 0; t < hz.size(); ++t) {
    if (!f0.voiced(t)) continue;
    out(t, 0) = 1.0;
    out(t, 1) = std::log2(hz[t] / mean);
    if (t > 0 && f0.voiced(t - 1)) out(t, 2) = out(t, 1) - out(t - 1, 1);
  }
  return FeatureMatrix::from(out);
}

std::vector<TrainPair> mapped_token_pairs(const MappedPairOptions& o) {
  if (o.count < 0 || o.vocab < 2 || o.min_phonemes < 1 || o.max_phonemes < o.min_phonemes) {
    throw ValidationError("invalid mapped-pair options");
  }
  if (o.noise < 0.0 || o.noise > 1.0) throw ValidationError("noise must lie in [0, 1]");
  const auto& all = synth_phonemes();
  auto map_rng = stream(o.seed, kMap);
  std::uniform_int_distribution<std::int32_t> token(0, o.vocab - 1);
  std::vector<std::array<std::int32_t, 2>> map(all.size());
  for (auto& m : map) m = {token(map_rng), token(map_rng)};

  std::vector<TrainPair> pairs;
  pairs.reserve(static_cast<std::size_t>(o.count));
  for (int n = 0; n < o.count; ++n) {
    auto rng = stream(o.seed, kPairs, static_cast<std::uint64_t>(n));
    const int L = std::uniform_int_distribution<int>(o.min_phonemes, o.max_phonemes)(rng);
    std::vector<std::string> symbols;
    std::vector<std::int32_t> ids;
    for (int i = 0; i < L; ++i) {
      const auto p = std::uniform_int_distribution<std::size_t>(0, all.size() - 1)(rng);
      symbols.push_back(all[p]);
      for (std::int32_t t : map[p]) {
        if (chance(rng, o.noise)) {
          std::int32_t other = t;
          while (other == t) other = token(rng);
          t = other;
        }
        ids.push_back(t);
      }
    }
    pairs.push_back({PhonemeSequence(std::move(symbols)), TokenSequence(std::move(ids), o.vocab)});
  }
  return pairs;
}

}  // namespace ttscore
