#include <doctest.h>

#include "support.hpp"
#include "ttscore/synth.hpp"

using namespace ttscore;

TEST_SUITE("synth") {

TEST_CASE("the same options give the same corpus") {
  SynthOptions o;
  o.seed = 5;
  o.train_utterances = 10;
  o.eval_utterances = 3;
  const auto a = synth_corpus(o);
  const auto b = synth_corpus(o);
  REQUIRE(a.train.size() == 10);
  REQUIRE(a.eval.size() == 12);
  for (std::size_t i = 0; i < a.eval.size(); ++i) {
    CHECK(a.eval[i].record == b.eval[i].record);
    CHECK(a.eval[i].features == b.eval[i].features);
    CHECK(a.eval[i].f0 == b.eval[i].f0);
  }
  o.seed = 6;
  CHECK_FALSE(synth_corpus(o).train[0].record == a.train[0].record);
}

TEST_CASE("utterances do not depend on how many others are generated") {
  SynthOptions small, large;
  small.seed = large.seed = 9;
  small.train_utterances = 5;
  large.train_utterances = 50;
  small.eval_utterances = 2;
  large.eval_utterances = 7;
  const auto a = synth_corpus(small), b = synth_corpus(large);
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].record == b.train[i].record);
  CHECK(a.eval[0].record == b.eval[0].record);
  CHECK(a.system_quality == b.system_quality);
}

TEST_CASE("generated utterances satisfy the corpus invariants") {
  SynthOptions o;
  o.seed = 3;
  o.train_utterances = 20;
  o.eval_utterances = 5;
  const auto corpus = synth_corpus(o);
  for (const auto* split : {&corpus.train, &corpus.eval}) {
    for (const auto& u : *split) {
      REQUIRE(u.record.phonemes.has_value());
      const auto frames = u.features.frames();
      CHECK(u.features.dims() == o.content_dims);
      CHECK(u.f0.size() == frames);
      CHECK_NOTHROW(validate_alignment(u.alignment, static_cast<Index>(u.record.phonemes->size()), frames));
      for (const auto& s : u.alignment) {
        const bool voiced = synth_is_voiced(u.record.phonemes->symbols()[static_cast<std::size_t>(s.phoneme_index)]);
        for (Index t = s.start_frame; t < s.end_frame; ++t) CHECK(u.f0.voiced(t) == voiced);
      }
      CHECK(u.record.mos.has_value());
      CHECK(*u.record.mos >= 1.0);
      CHECK(*u.record.mos <= 5.0);
    }
  }
  // Systems are spread from poor to good.
  CHECK(std::is_sorted(corpus.system_quality.begin(), corpus.system_quality.end()));
}

TEST_CASE("prosody features") {
  const F0Contour f0(std::vector<double>{100, 200, 0, 100});
  const auto p = prosody_features(f0);
  REQUIRE(p.dims() == 3);
  const double mean = 400.0 / 3.0;
  CHECK(p.values()(0, 0) == 1.0f);
  CHECK(p.values()(2, 0) == 0.0f);
  CHECK(p.values()(1, 1) == doctest::Approx(std::log2(200.0 / mean)).epsilon(1e-6));
  CHECK(p.values()(1, 2) == doctest::Approx(1.0).epsilon(1e-6));  // one octave up
  CHECK(p.values()(3, 2) == 0.0f);                               // previous frame unvoiced
}

TEST_CASE("mapped pairs share their map across corpus sizes") {
  MappedPairOptions o;
  o.seed = 4;
  o.count = 20;
  o.noise = 0.0;
  const auto a = mapped_token_pairs(o);
  o.count = 40;
  const auto b = mapped_token_pairs(o);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tokens == b[i].tokens);
  for (const auto& p : a) {
    REQUIRE(p.phonemes.has_value());
    CHECK(p.tokens.size() == 2 * p.phonemes->size());
    CHECK(p.tokens.vocab_size() == o.vocab);
  }
}

}  // TEST_SUITE
