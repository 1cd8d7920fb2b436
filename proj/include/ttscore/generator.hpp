#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ttscore/corpus.hpp"

namespace ttscore {

/// Shape of a text-to-token (or decoder-only) transformer. Vocabulary sizes
/// include the four reserved special ids.
struct GeneratorConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int model_dim = 64;
  /// Token/position embedding width; projected to model_dim when different.
  int embed_dim = 64;
  int heads = 4;
  /// Feed-forward inner width; 0 means 4 * model_dim.
  int ffn_dim = 0;
  double dropout = 0.1;
  int max_len = 256;
  int src_vocab = 0;
  int tgt_vocab = 0;
  /// false: decoder-only language model over target tokens (no encoder).
  bool conditional = true;

  int inner_dim() const { return ffn_dim > 0 ? ffn_dim : 4 * model_dim; }
  bool projected() const { return embed_dim != model_dim; }
  /// Throws ValidationError on an inconsistent shape.
  void validate() const;

  /// Desk-scale default: 2+2 layers, width 64, 4 heads, max_len 256.
  static GeneratorConfig toy(int src_vocab, int tgt_vocab);
  /// 6+6 layers, width 512, embeddings 256, 8 heads, dropout 0.1, max_len 1024.
  static GeneratorConfig full(int src_vocab, int tgt_vocab);

  bool operator==(const GeneratorConfig&) const = default;
};

enum class Precision { single_precision, double_precision };

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  int epochs = 10;
  std::uint64_t seed = 0;
  Precision precision = Precision::single_precision;
  /// Linear warmup length as a fraction of all optimizer steps.
  double warmup_fraction = 0.01;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t workers = 1;

  void validate() const;
};

/// Named dense tensors in insertion order.
template <typename Scalar>
class ParamSet {
 public:
  using Matrix = RowMatrix<Scalar>;

  std::size_t add(std::string name, Index rows, Index cols) {
    names_.push_back(std::move(name));
    tensors_.push_back(Matrix::Zero(rows, cols));
    return tensors_.size() - 1;
  }

  std::size_t size() const { return tensors_.size(); }
  Matrix& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix& operator[](std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    return std::nullopt;
  }

  Index count() const {
    Index n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet out;
    out.names_ = names_;
    for (const auto& t : tensors_) out.tensors_.push_back(Matrix::Zero(t.rows(), t.cols()));
    return out;
  }

  void set_zero() {
    for (auto& t : tensors_) t.setZero();
  }

  bool all_finite() const {
    for (const auto& t : tensors_) {
      if (!t.allFinite()) return false;
    }
    return true;
  }

  bool operator==(const ParamSet& o) const { return names_ == o.names_ && tensors_ == o.tensors_; }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
};

/// One teacher-forced training/scoring instance in model id space.
/// decoder_input = [BOS, t_1..t_N], targets = [t_1..t_N, EOS].
struct SequenceExample {
  std::vector<std::int32_t> source;  // empty for decoder-only models
  std::vector<std::int32_t> decoder_input;
  std::vector<std::int32_t> targets;

  auto operator<=>(const SequenceExample&) const = default;
};

/// Builds a teacher-forced example. source_ids are model ids (EOS is appended);
/// target_data_ids are raw token ids (offset by kFirstDataId here). Over-length
/// sequences are truncated from the right with a warning when `truncate`,
/// otherwise rejected with ValidationError.
SequenceExample make_example(const GeneratorConfig& config, std::span<const std::int32_t> source_ids,
                             std::span<const std::int32_t> target_data_ids, bool truncate);

namespace detail {

struct LinearSlots {
  std::size_t weight = 0, bias = 0;
};
struct NormSlots {
  std::size_t gain = 0, bias = 0;
};
struct AttentionSlots {
  LinearSlots query, key, value, out;
};
struct FeedForwardSlots {
  LinearSlots up, down;
};
struct EncoderLayerSlots {
  NormSlots attn_norm;
  AttentionSlots self_attn;
  NormSlots ffn_norm;
  FeedForwardSlots ffn;
};
struct DecoderLayerSlots {
  NormSlots self_norm;
  AttentionSlots self_attn;
  NormSlots cross_norm;
  AttentionSlots cross_attn;
  NormSlots ffn_norm;
  FeedForwardSlots ffn;
};
struct EmbeddingSlots {
  std::size_t tokens = 0, positions = 0;
  std::optional<LinearSlots> projection;
};

}  // namespace detail

/// Pre-LayerNorm transformer encoder-decoder (or decoder-only stack) with
/// learned absolute positions and an output layer tied to the target
/// embedding table.
template <typename Scalar>
class Generator {
 public:
  using Matrix = RowMatrix<Scalar>;

  /// Seeded initialization; identical seeds give bitwise-identical parameters.
  static Generator build(const GeneratorConfig& config, std::uint64_t seed,
                         PhonemeInventory inventory = {});

  const GeneratorConfig& config() const { return config_; }
  const PhonemeInventory& inventory() const { return inventory_; }
  ParamSet<Scalar>& params() { return params_; }
  const ParamSet<Scalar>& params() const { return params_; }
  std::int64_t trained_steps() const { return trained_steps_; }
  void set_trained_steps(std::int64_t steps) { trained_steps_ = steps; }

  /// Log-softmax rows over the target vocabulary, one per decoder position,
  /// evaluated with dropout disabled.
  Matrix log_distributions(std::span<const std::int32_t> source,
                           std::span<const std::int32_t> decoder_input) const;

  /// log p(target_i | targets_<i, source) for every position of the example.
  std::vector<double> example_logprobs(const SequenceExample& example) const;

  /// Summed negative log-likelihood of the example's targets. When `grad` is
  /// given, adds grad_scale * d(loss)/d(params) into it. A non-null `rng`
  /// enables dropout.
  double loss_and_gradient(const SequenceExample& example, ParamSet<Scalar>* grad, Scalar grad_scale,
                           std::mt19937_64* rng) const;

 private:
  Generator() = default;
  void register_parameters();
  void check_example(const SequenceExample& example) const;

  GeneratorConfig config_;
  PhonemeInventory inventory_;
  ParamSet<Scalar> params_;
  std::int64_t trained_steps_ = 0;

  detail::EmbeddingSlots src_embed_, tgt_embed_;
  std::vector<detail::EncoderLayerSlots> encoder_;
  std::vector<detail::DecoderLayerSlots> decoder_;
  detail::NormSlots encoder_norm_, decoder_norm_;
  std::optional<detail::LinearSlots> output_projection_;
  std::size_t logit_bias_ = 0;
};

extern template class Generator<float>;
extern template class Generator<double>;

/// A generator in either storage precision.
using AnyGenerator = std::variant<Generator<float>, Generator<double>>;

const GeneratorConfig& config_of(const AnyGenerator& model);
const PhonemeInventory& inventory_of(const AnyGenerator& model);

/// Numerically stable row-wise log-softmax.
template <typename Derived>
RowMatrix<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  RowMatrix<S> out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const S m = logits.row(i).maxCoeff();
    const S lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainPair {
  std::optional<PhonemeSequence> phonemes;  // absent for decoder-only models
  TokenSequence tokens;
};

struct TrainReport {
  /// Mean per-token training loss (nats) of each epoch.
  std::vector<double> epoch_loss;
  std::int64_t steps = 0;
};

/// Teacher-forced cross-entropy training with AdamW. Pairs are put in a
/// canonical order before the seed-driven per-epoch shuffle, so the result
/// depends only on the pair multiset, the config and the seed.
template <typename Scalar>
TrainReport train(Generator<Scalar>& model, std::span<const TrainPair> pairs, const TrainConfig& config);

/// Converts pairs to examples with the model's inventory (truncating).
template <typename Scalar>
std::vector<SequenceExample> training_examples(const Generator<Scalar>& model, std::span<const TrainPair> pairs);

/// Mean per-token loss with dropout disabled.
template <typename Scalar>
double evaluation_loss(const Generator<Scalar>& model, std::span<const SequenceExample> examples);

// ---------------------------------------------------------------------------
// Checkpoints

/// "TTSC", u32 version, u64 header length, JSON header (config, precision,
/// trained_steps, inventory, tensor shapes), then little-endian tensor data
/// (float32 or float64 according to precision) in header order.
void save_checkpoint(const std::filesystem::path& path, const AnyGenerator& model);

struct CheckpointExpectation {
  std::optional<int> src_vocab;
  std::optional<int> tgt_vocab;
  std::optional<bool> conditional;
};

AnyGenerator load_checkpoint(const std::filesystem::path& path, const CheckpointExpectation& expect = {});

}  // namespace ttscore
