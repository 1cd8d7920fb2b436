#include <algorithm>
#include <cmath>
#include <numeric>

#include "ttscore/error.hpp"
#include "ttscore/generator.hpp"
#include "ttscore/log.hpp"
#include "ttscore/parallel.hpp"

namespace ttscore {

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

template <typename Scalar>
struct AdamW {
  ParamSet<Scalar> m, v;
  std::vector<bool> decay;
  std::int64_t t = 0;

  explicit AdamW(const ParamSet<Scalar>& params) : m(params.zeros_like()), v(params.zeros_like()) {
    // Biases and LayerNorm gains (row vectors) are not decayed.
    for (std::size_t i = 0; i < params.size(); ++i) decay.push_back(params[i].rows() > 1);
  }

  void step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grad, const TrainConfig& cfg, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const auto b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      const auto& g = grad[i];
      m[i] = b1 * m[i] + (Scalar(1) - b1) * g;
      v[i] = b2 * v[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      if (decay[i] && cfg.weight_decay > 0.0) p *= static_cast<Scalar>(1.0 - lr * cfg.weight_decay);
      const auto step_size = static_cast<Scalar>(lr / c1);
      const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
      const auto eps = static_cast<Scalar>(cfg.adam_eps);
      p.array() -= step_size * m[i].array() / ((v[i].array() * inv_c2).sqrt() + eps);
    }
  }
};

}  // namespace

template <typename Scalar>
std::vector<SequenceExample> training_examples(const Generator<Scalar>& model, std::span<const TrainPair> pairs) {
  std::vector<SequenceExample> out;
  out.reserve(pairs.size());
  const auto& cfg = model.config();
  for (const auto& pair : pairs) {
    if (pair.tokens.vocab_size() + kNumSpecialIds != cfg.tgt_vocab) {
      throw ValidationError("token vocabulary size " + std::to_string(pair.tokens.vocab_size()) +
                            " does not match model tgt_vocab " + std::to_string(cfg.tgt_vocab) + " - 4");
    }
    std::vector<std::int32_t> source;
    if (cfg.conditional) {
      if (!pair.phonemes) throw ValidationError("conditional model requires phonemes for every pair");
      source = model.inventory().encode(*pair.phonemes);
    } else if (pair.phonemes) {
      throw ValidationError("decoder-only model does not take phonemes");
    }
    out.push_back(make_example(cfg, source, pair.tokens.ids(), /*truncate=*/true));
  }
  return out;
}

template <typename Scalar>
double evaluation_loss(const Generator<Scalar>& model, std::span<const SequenceExample> examples) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    total += model.loss_and_gradient(ex, nullptr, Scalar(0), nullptr);
    tokens += ex.targets.size();
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

template <typename Scalar>
TrainReport train(Generator<Scalar>& model, std::span<const TrainPair> pairs, const TrainConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw ValidationError("training corpus is empty");
  auto examples = training_examples(model, pairs);
  std::sort(examples.begin(), examples.end());

  const std::size_t n = examples.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  const double warmup = std::max(1.0, std::round(cfg.warmup_fraction * static_cast<double>(total_steps)));

  TrainReport report;
  AdamW<Scalar> optimizer(model.params());
  std::vector<ParamSet<Scalar>> grads(std::min(batch, n), model.params().zeros_like());
  ParamSet<Scalar> total_grad = model.params().zeros_like();
  std::vector<double> losses(grads.size());
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(stream_seed(cfg.seed, 0x5348554646ULL, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::size_t count = std::min(batch, n - start);
      std::size_t tokens = 0;
      for (std::size_t i = 0; i < count; ++i) tokens += examples[order[start + i]].targets.size();
      const auto scale = static_cast<Scalar>(1.0 / static_cast<double>(tokens));

      parallel_for(count, cfg.workers, [&](std::size_t i) {
        grads[i].set_zero();
        std::mt19937_64 rng(stream_seed(cfg.seed, step, i));
        losses[i] = model.loss_and_gradient(examples[order[start + i]], &grads[i], scale, &rng);
      });

      total_grad.set_zero();
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        batch_loss += losses[i];
        for (std::size_t t = 0; t < total_grad.size(); ++t) total_grad[t] += grads[i][t];
      }
      if (!std::isfinite(batch_loss) || !total_grad.all_finite()) {
        throw NumericError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + " (loss " + std::to_string(batch_loss) +
                           "); lower the learning rate or check the inputs");
      }
      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (std::size_t t = 0; t < total_grad.size(); ++t) sq += static_cast<double>(total_grad[t].squaredNorm());
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
          const auto factor = static_cast<Scalar>(cfg.clip_norm / norm);
          for (std::size_t t = 0; t < total_grad.size(); ++t) total_grad[t] *= factor;
        }
      }
      const double lr = cfg.learning_rate * std::min(1.0, static_cast<double>(step + 1) / warmup);
      optimizer.step(model.params(), total_grad, cfg, lr);
      model.set_trained_steps(model.trained_steps() + 1);
      ++report.steps;

      epoch_loss += batch_loss;
      epoch_tokens += tokens;
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_tokens));
  }
  return report;
}

template std::vector<SequenceExample> training_examples(const Generator<float>&, std::span<const TrainPair>);
template std::vector<SequenceExample> training_examples(const Generator<double>&, std::span<const TrainPair>);
template double evaluation_loss(const Generator<float>&, std::span<const SequenceExample>);
template double evaluation_loss(const Generator<double>&, std::span<const SequenceExample>);
template TrainReport train(Generator<float>&, std::span<const TrainPair>, const TrainConfig&);
template TrainReport train(Generator<double>&, std::span<const TrainPair>, const TrainConfig&);

}  // namespace ttscore
