#include <doctest.h>

#include <cstring>
#include <fstream>

#include "support.hpp"
#include "ttscore/corpus.hpp"
#include "ttscore/error.hpp"
#include "ttscore/synth.hpp"

using namespace ttscore;
using support::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void append_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("manifest keeps file order") {
  TempDir dir("manifest");
  write_text(dir / "m.jsonl",
             "{\"utt_id\":\"b\",\"system_id\":\"s1\",\"text\":\"hi\",\"mos\":3.5}\n"
             "\n"
             "{\"utt_id\":\"a\",\"system_id\":\"s2\",\"text\":\"yo\",\"phonemes\":\"HH AY\",\"elo\":1012.5}\n");
  const auto records = parse_manifest(dir / "m.jsonl");
  REQUIRE(records.size() == 2);
  CHECK(records[0].utt_id == "b");
  CHECK(records[0].mos == 3.5);
  CHECK(records[1].utt_id == "a");
  CHECK(records[1].phonemes == PhonemeSequence({"HH", "AY"}));
  CHECK(records[1].metrics.at("elo") == 1012.5);
}

TEST_CASE("manifest errors name the offending line") {
  TempDir dir("manifest-bad");
  write_text(dir / "m.jsonl", "{\"utt_id\":\"a\",\"system_id\":\"s\"}\n{\"system_id\":\"s\"}\n");
  try {
    parse_manifest(dir / "m.jsonl");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  write_text(dir / "dup.jsonl", "{\"utt_id\":\"a\",\"system_id\":\"s\"}\n{\"utt_id\":\"a\",\"system_id\":\"t\"}\n");
  CHECK_THROWS_AS(parse_manifest(dir / "dup.jsonl"), ValidationError);
  write_text(dir / "junk.jsonl", "{not json\n");
  CHECK_THROWS_AS(parse_manifest(dir / "junk.jsonl"), ValidationError);
  CHECK_THROWS_AS(parse_manifest(dir / "missing.jsonl"), IoError);
}

TEST_CASE("synthetic manifest round-trips field by field") {
  SynthOptions o;
  o.seed = 11;
  o.train_utterances = 30;
  o.eval_utterances = 5;
  o.systems = 4;
  const auto corpus = synth_corpus(o);
  std::vector<EvalRecord> records;
  for (const auto& u : corpus.train) records.push_back(u.record);
  for (const auto& u : corpus.eval) records.push_back(u.record);
  REQUIRE(records.size() == 50);
  records[3].wer = 0.25;
  records[4].cer = 0.125;
  records[5].metrics["elo"] = 1100.0;
  records[6].f0_path = "f0/x.ttsf";

  TempDir dir("roundtrip");
  write_manifest(dir / "m.jsonl", records);
  const auto back = parse_manifest(dir / "m.jsonl");
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].utt_id == records[i].utt_id);
    CHECK(back[i].system_id == records[i].system_id);
    CHECK(back[i].text == records[i].text);
    CHECK(back[i].hyp_text == records[i].hyp_text);
    CHECK(back[i].phonemes == records[i].phonemes);
    CHECK(back[i].mos == records[i].mos);
    CHECK(back[i] == records[i]);
  }
}

TEST_CASE("record phonemes come from the manifest or a phoneme file") {
  TempDir dir("phonemes");
  write_text(dir / "p.txt", "K AE T\n");
  EvalRecord r;
  r.utt_id = "u";
  r.system_id = "s";
  CHECK_FALSE(record_phonemes(dir / "m.jsonl", r).has_value());
  r.phoneme_path = "p.txt";
  CHECK(record_phonemes(dir / "m.jsonl", r) == PhonemeSequence({"K", "AE", "T"}));
  r.phonemes = PhonemeSequence({"D", "AO", "G"});
  CHECK(record_phonemes(dir / "m.jsonl", r) == PhonemeSequence({"D", "AO", "G"}));
}

TEST_CASE("1x1 feature matrix round-trips") {
  TempDir dir("feat1");
  RowMatrix<float> m(1, 1);
  m(0, 0) = 0.0f;
  const FeatureMatrix f(m);
  write_features(dir / "a.ttsf", f);
  CHECK(read_features(dir / "a.ttsf") == f);
}

TEST_CASE("3x4 feature file matches hand-built bytes") {
  std::mt19937_64 rng(5);
  const auto values = support::random_matrix(rng, 3, 4);
  const auto f = FeatureMatrix::from(values);

  std::vector<char> expected = {'T', 'T', 'S', 'F'};
  append_u32(expected, 1);
  append_u32(expected, 3);
  append_u32(expected, 4);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      const float v = static_cast<float>(values(r, c));
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      append_u32(expected, bits);
    }
  }

  TempDir dir("feat3");
  write_features(dir / "a.ttsf", f);
  CHECK(slurp(dir / "a.ttsf") == expected);
  const auto back = read_features(dir / "a.ttsf");
  CHECK(back == f);
  CHECK(std::memcmp(back.values().data(), f.values().data(), 12 * sizeof(float)) == 0);
}

TEST_CASE("feature decoding rejects malformed files") {
  RowMatrix<float> m = RowMatrix<float>::Constant(2, 2, 1.5f);
  auto bytes = encode_features(FeatureMatrix(m));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_features(bad_magic), ValidationError);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_features(truncated), ValidationError);
  CHECK_THROWS_AS(decode_features(std::span<const char>(bytes.data(), 10)), ValidationError);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_features(trailing), ValidationError);

  auto nan = bytes;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + 16, &q, 4);
  CHECK_THROWS_AS(decode_features(nan), ValidationError);

  auto version = bytes;
  version[4] = 2;
  CHECK_THROWS_AS(decode_features(version), ValidationError);

  CHECK_THROWS_AS(read_features("/nonexistent/x.ttsf"), IoError);
}

TEST_CASE("feature matrices enforce their invariants") {
  CHECK_THROWS_AS(FeatureMatrix(RowMatrix<float>(0, 3)), ValidationError);
  RowMatrix<float> inf = RowMatrix<float>::Zero(2, 2);
  inf(1, 1) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(FeatureMatrix{inf}, ValidationError);
}

TEST_CASE("token files round-trip and validate ids") {
  TempDir dir("tok");
  const std::vector<UttTokens> entries = {{"one", TokenSequence({0}, 6)}, {"pi", TokenSequence({3, 1, 4, 1, 5}, 6)}};
  write_tokens(dir / "t.tok", entries);
  CHECK(read_tokens(dir / "t.tok", 6) == entries);
  CHECK(read_tokens_for(dir / "t.tok", "pi", 6) == entries[1].tokens);
  CHECK_THROWS_AS(read_tokens_for(dir / "t.tok", "absent", 6), ValidationError);
  // Ids must stay below the vocabulary the reader is told about.
  CHECK_THROWS_AS(read_tokens(dir / "t.tok", 5), ValidationError);
  write_text(dir / "bad.tok", "u\t1 x 2\n");
  CHECK_THROWS_AS(read_tokens(dir / "bad.tok", 6), ValidationError);
  CHECK_THROWS_AS(TokenSequence({}, 4), ValidationError);
  CHECK_THROWS_AS(TokenSequence({-1}, 4), ValidationError);
}

TEST_CASE("alignment validation") {
  using S = AlignmentSegment;
  CHECK(validate_alignment({S{0, 0, 7}}, 1, 7).size() == 1);
  const auto sorted = validate_alignment({S{1, 5, 10}, S{0, 0, 5}}, 2, 10);
  CHECK(sorted[0] == S{0, 0, 5});
  CHECK(sorted[1] == S{1, 5, 10});

  CHECK_THROWS_AS(validate_alignment({S{0, 0, 5}, S{1, 4, 10}}, 2, 10), ValidationError);   // overlap
  CHECK_THROWS_AS(validate_alignment({S{0, 0, 5}}, 2, 10), ValidationError);                // missing phoneme
  CHECK_THROWS_AS(validate_alignment({S{0, 0, 5}, S{0, 5, 10}}, 2, 10), ValidationError);   // duplicate index
  CHECK_THROWS_AS(validate_alignment({S{0, 3, 3}}, 1, 10), ValidationError);                // zero length
  CHECK_THROWS_AS(validate_alignment({S{0, 0, 11}}, 1, 10), ValidationError);               // past the end
  CHECK_THROWS_AS(validate_alignment({S{0, -1, 4}}, 1, 10), ValidationError);               // negative start
}

TEST_CASE("alignment tables round-trip and read per utterance") {
  TempDir dir("align");
  AlignmentTable t;
  t["u1"] = {{0, 0, 5}, {1, 5, 10}};
  t["u2"] = {{0, 0, 3}};
  write_alignment_table(dir / "a.jsonl", t);
  CHECK(read_alignment_table(dir / "a.jsonl") == t);
  CHECK(read_alignment(dir / "a.jsonl", "u1", support::phonemes("K AE"), 10) == t["u1"]);
  CHECK_THROWS_AS(read_alignment(dir / "a.jsonl", "u1", support::phonemes("K AE"), 9), ValidationError);
  CHECK_THROWS_AS(read_alignment(dir / "a.jsonl", "u3", support::phonemes("K"), 3), ValidationError);
}

TEST_CASE("unknown phonemes map to UNK with a warning") {
  const PhonemeInventory inv({"AA", "B"});
  support::WarningCapture warnings;
  const auto ids = inv.encode(support::phonemes("B ZZ AA"));
  CHECK(ids == std::vector<std::int32_t>{kFirstDataId + 1, kUnkId, kFirstDataId});
  CHECK(warnings.messages.size() == 1);
  CHECK(inv.model_vocab_size() == 6);
}

TEST_CASE("F0 contours reject negative values and round-trip") {
  CHECK_THROWS_AS(F0Contour(std::vector<double>{100.0, -1.0}), ValidationError);
  TempDir dir("f0");
  const F0Contour f0(std::vector<double>{0.0, 110.0, 123.5, 0.0});
  write_f0(dir / "f.ttsf", f0);
  CHECK(read_f0(dir / "f.ttsf") == f0);
  CHECK(f0.voiced_count() == 2);
}

}  // TEST_SUITE
