#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "ttscore/error.hpp"
#include "ttscore/generator.hpp"

using namespace ttscore;

namespace {

// Shape inventory written out independently of the model code: every linear
// layer is a weight plus a bias, every norm a gain plus a bias.
Index expected_param_count(const GeneratorConfig& c) {
  const Index d = c.model_dim, e = c.embed_dim, f = c.inner_dim();
  const Index linear_dd = d * d + d;
  const Index norm = 2 * d;
  const Index attention = 4 * linear_dd;
  const Index ffn = (d * f + f) + (f * d + d);
  const Index projection = c.projected() ? e * d + d : 0;
  Index n = 0;
  if (c.conditional) {
    n += c.src_vocab * e + c.max_len * e + projection;
    n += c.enc_layers * (norm + attention + norm + ffn) + norm;
  }
  n += c.tgt_vocab * e + c.max_len * e + projection;
  n += c.dec_layers * (norm + attention + (c.conditional ? norm + attention : 0) + norm + ffn) + norm;
  if (c.projected()) n += d * e + e;
  n += c.tgt_vocab;
  return n;
}

GeneratorConfig tiny(int src, int tgt) {
  GeneratorConfig c;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.model_dim = 4;
  c.embed_dim = 4;
  c.heads = 2;
  c.ffn_dim = 8;
  c.dropout = 0.0;
  c.max_len = 8;
  c.src_vocab = src;
  c.tgt_vocab = tgt;
  return c;
}

std::vector<std::string> letters(int n) {
  std::vector<std::string> v;
  for (int i = 0; i < n; ++i) v.push_back(std::string(1, static_cast<char>('a' + i)));
  return v;
}

// Copy task: phoneme i is followed by data token i.
std::vector<TrainPair> copy_pairs(int count, int symbols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> sym(0, symbols - 1), len(3, 7);
  const auto names = letters(symbols);
  std::vector<TrainPair> pairs;
  for (int n = 0; n < count; ++n) {
    std::vector<std::string> ph;
    std::vector<std::int32_t> ids;
    for (int i = len(rng); i > 0; --i) {
      const int s = sym(rng);
      ph.push_back(names[static_cast<std::size_t>(s)]);
      ids.push_back(s);
    }
    pairs.push_back({PhonemeSequence(ph), TokenSequence(ids, symbols)});
  }
  return pairs;
}

}  // namespace

TEST_SUITE("generator") {

TEST_CASE("same seed, same parameters") {
  const auto c = GeneratorConfig::toy(20, 30);
  const auto a = Generator<float>::build(c, 5);
  const auto b = Generator<float>::build(c, 5);
  const auto other = Generator<float>::build(c, 6);
  CHECK(a.params() == b.params());
  CHECK_FALSE(a.params() == other.params());
}

TEST_CASE("invalid shapes are rejected") {
  auto c = GeneratorConfig::toy(20, 30);
  c.heads = 5;
  CHECK_THROWS_AS(Generator<float>::build(c, 0), ValidationError);
  c = GeneratorConfig::toy(20, 4);
  CHECK_THROWS_AS(Generator<float>::build(c, 0), ValidationError);
  c = GeneratorConfig::toy(20, 30);
  c.max_len = 1;
  CHECK_THROWS_AS(Generator<float>::build(c, 0), ValidationError);
  c = GeneratorConfig::toy(20, 30);
  c.conditional = false;
  CHECK_THROWS_AS(Generator<float>::build(c, 0), ValidationError);  // still has encoder layers
}

TEST_CASE("parameter counts follow the shape inventory") {
  GeneratorConfig c;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.model_dim = 8;
  c.embed_dim = 8;
  c.heads = 2;
  c.max_len = 16;
  c.src_vocab = 10;
  c.tgt_vocab = 12;
  // 1096 encoder + 1416 decoder + 12 logit bias.
  CHECK(expected_param_count(c) == 2524);
  CHECK(Generator<double>::build(c, 0).params().count() == 2524);

  c.embed_dim = 4;
  CHECK(Generator<double>::build(c, 0).params().count() == expected_param_count(c));
  c.conditional = false;
  c.enc_layers = 0;
  CHECK(Generator<double>::build(c, 0).params().count() == expected_param_count(c));
  const auto full = GeneratorConfig::full(80, 1028);
  CHECK(Generator<float>::build(full, 0).params().count() == expected_param_count(full));
}

TEST_CASE("analytic gradients match central differences") {
  const auto c = tiny(7, 6);
  auto g = Generator<double>::build(c, 3);
  REQUIRE(g.params().count() <= 1000);
  const std::vector<std::int32_t> src = {4, 6, 5, 4};
  const std::vector<std::int32_t> tgt = {0, 1, 1, 0};
  const auto ex = make_example(c, src, tgt, false);
  CHECK(support::max_gradient_error(g, ex) < 1e-3);

  auto projected = tiny(7, 6);
  projected.embed_dim = 3;
  auto gp = Generator<double>::build(projected, 4);
  REQUIRE(gp.params().count() <= 1000);
  CHECK(support::max_gradient_error(gp, make_example(projected, src, tgt, false)) < 1e-3);

  auto ulm = tiny(0, 6);
  ulm.conditional = false;
  ulm.enc_layers = 0;
  auto gu = Generator<double>::build(ulm, 5);
  CHECK(support::max_gradient_error(gu, make_example(ulm, {}, tgt, false)) < 1e-3);
}

TEST_CASE("per-position distributions are normalized") {
  const auto c = GeneratorConfig::toy(12, 20);
  const auto g = Generator<double>::build(c, 8);
  const std::vector<std::int32_t> src = {4, 5, 9, 11, 2};
  const std::vector<std::int32_t> dec = {kBosId, 7, 8, 9};
  const auto lp = g.log_distributions(src, dec);
  REQUIRE(lp.rows() == 4);
  REQUIRE(lp.cols() == 20);
  CHECK((lp.array() <= 0.0).all());
  for (Index i = 0; i < lp.rows(); ++i) CHECK(std::abs(lp.row(i).array().exp().sum() - 1.0) < 1e-6);
}

TEST_CASE("closed-form log-softmax") {
  Eigen::RowVector3d logits(2.0, 0.0, 0.0);
  const auto lp = log_softmax_rows(logits);
  const double expected = 2.0 - std::log(std::exp(2.0) + 2.0);
  CHECK(lp(0, 0) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(lp(0, 1) == doctest::Approx(-std::log(std::exp(2.0) + 2.0)).epsilon(1e-15));
  // Large logits stay finite.
  Eigen::RowVector2d big(1000.0, 0.0);
  CHECK(std::isfinite(log_softmax_rows(big)(0, 1)));
}

TEST_CASE("examples add specials and truncate or reject long inputs") {
  auto c = GeneratorConfig::toy(10, 10);
  c.max_len = 4;
  const std::vector<std::int32_t> src = {4, 5};
  const auto ex = make_example(c, src, std::vector<std::int32_t>{0, 1}, false);
  CHECK(ex.source == std::vector<std::int32_t>{4, 5, kEosId});
  CHECK(ex.decoder_input == std::vector<std::int32_t>{kBosId, 4, 5});
  CHECK(ex.targets == std::vector<std::int32_t>{4, 5, kEosId});

  const std::vector<std::int32_t> long_tokens = {0, 1, 2, 3, 4};
  CHECK_THROWS_AS(make_example(c, src, long_tokens, false), ValidationError);
  support::WarningCapture warnings;
  const auto cut = make_example(c, src, long_tokens, true);
  CHECK(cut.decoder_input.size() == 4);
  CHECK(cut.targets.back() == kEosId);
  CHECK(warnings.messages.size() == 1);
}

TEST_CASE("copy task is learned") {
  const auto pairs = copy_pairs(200, 6, 1);
  GeneratorConfig c;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.model_dim = 32;
  c.embed_dim = 32;
  c.heads = 4;
  c.dropout = 0.0;
  c.max_len = 16;
  c.src_vocab = 6 + kNumSpecialIds;
  c.tgt_vocab = 6 + kNumSpecialIds;
  auto g = Generator<float>::build(c, 2, PhonemeInventory(letters(6)));
  TrainConfig t;
  t.epochs = 25;
  t.learning_rate = 3e-3;
  t.seed = 2;
  const auto report = train(g, pairs, t);
  REQUIRE(report.epoch_loss.size() == 25);
  MESSAGE("copy-task loss: first " << report.epoch_loss.front() << ", last " << report.epoch_loss.back());
  CHECK(report.epoch_loss.back() < 0.1);
  for (std::size_t e = 1; e < report.epoch_loss.size(); ++e) CHECK(report.epoch_loss[e] <= report.epoch_loss[0]);
  CHECK(g.trained_steps() == report.steps);
  CHECK(evaluation_loss(g, training_examples(g, std::span<const TrainPair>(pairs))) < 0.1);
}

TEST_CASE("training with zero epochs leaves parameters unchanged") {
  const auto pairs = copy_pairs(10, 4, 3);
  auto c = tiny(8, 8);
  auto g = Generator<float>::build(c, 1, PhonemeInventory(letters(4)));
  const auto before = g.params();
  TrainConfig t;
  t.epochs = 0;
  train(g, pairs, t);
  CHECK(g.params() == before);
}

TEST_CASE("training is deterministic and independent of pair order") {
  auto pairs = copy_pairs(24, 4, 4);
  auto c = tiny(8, 8);
  c.model_dim = 8;
  c.embed_dim = 8;
  c.dropout = 0.1;
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 5;
  t.seed = 10;
  auto run = [&](const std::vector<TrainPair>& data, std::size_t workers) {
    auto g = Generator<double>::build(c, 1, PhonemeInventory(letters(4)));
    auto cfg = t;
    cfg.workers = workers;
    train(g, data, cfg);
    return g.params();
  };
  const auto a = run(pairs, 1);
  CHECK(run(pairs, 1) == a);
  CHECK(run(pairs, 3) == a);
  std::reverse(pairs.begin(), pairs.end());
  std::swap(pairs[0], pairs[7]);
  CHECK(run(pairs, 1) == a);
}

TEST_CASE("training fails loudly on bad input") {
  auto c = tiny(8, 8);
  auto g = Generator<float>::build(c, 1, PhonemeInventory(letters(4)));
  CHECK_THROWS_AS(train(g, std::vector<TrainPair>{}, TrainConfig{}), ValidationError);
  g.params()[*g.params().find("output.logit_bias")](0, 2) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train(g, copy_pairs(4, 4, 1), TrainConfig{}), NumericError);
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(g, copy_pairs(4, 4, 1), bad), ValidationError);
}

TEST_CASE("checkpoints reproduce scores exactly") {
  support::TempDir dir("ckpt");
  const auto pairs = copy_pairs(12, 5, 6);
  auto c = tiny(9, 9);
  c.max_len = 16;
  auto gf = Generator<float>::build(c, 1, PhonemeInventory(letters(5)));
  TrainConfig t;
  t.epochs = 2;
  train(gf, pairs, t);
  auto gd = Generator<double>::build(c, 1, PhonemeInventory(letters(5)));
  train(gd, pairs, t);

  const auto probe = training_examples(gf, std::span<const TrainPair>(pairs));
  for (const AnyGenerator& model : {AnyGenerator(gf), AnyGenerator(gd)}) {
    save_checkpoint(dir / "m.ttsc", model);
    const auto back = load_checkpoint(dir / "m.ttsc", {c.src_vocab, c.tgt_vocab, true});
    REQUIRE(back.index() == model.index());
    std::visit(
        [&](const auto& orig) {
          using G = std::decay_t<decltype(orig)>;
          const auto& loaded = std::get<G>(back);
          CHECK(loaded.params() == orig.params());
          CHECK(loaded.config() == orig.config());
          CHECK(loaded.inventory() == orig.inventory());
          CHECK(loaded.trained_steps() == orig.trained_steps());
          for (const auto& ex : probe) CHECK(loaded.example_logprobs(ex) == orig.example_logprobs(ex));
        },
        model);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ttsc", {std::nullopt, 50, std::nullopt}), ValidationError);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ttsc", {std::nullopt, std::nullopt, false}), ValidationError);
  }

  {
    std::fstream f(dir / "m.ttsc", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ttsc"), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ttsc"), IoError);
}

}  // TEST_SUITE
