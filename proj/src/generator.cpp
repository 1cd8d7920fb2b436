#include "ttscore/generator.hpp"

#include <cmath>
#include <limits>

#include "ttscore/error.hpp"
#include "ttscore/log.hpp"

namespace ttscore {

// ---------------------------------------------------------------------------
// Configuration

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("generator config: " + m); };
  if (model_dim < 1 || embed_dim < 1) fail("dimensions must be positive");
  if (heads < 1 || model_dim % heads != 0) {
    fail("heads (" + std::to_string(heads) + ") must divide model_dim (" + std::to_string(model_dim) + ")");
  }
  if (dec_layers < 1) fail("dec_layers must be >= 1");
  if (conditional && enc_layers < 1) fail("enc_layers must be >= 1 for a conditional model");
  if (!conditional && enc_layers != 0) fail("decoder-only models have enc_layers = 0");
  if (ffn_dim < 0) fail("ffn_dim must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (max_len < 2) fail("max_len must be >= 2");
  if (tgt_vocab <= kNumSpecialIds) fail("tgt_vocab must include the 4 reserved ids plus data tokens");
  if (conditional && src_vocab <= kNumSpecialIds) {
    fail("src_vocab must include the 4 reserved ids plus phonemes");
  }
}

GeneratorConfig GeneratorConfig::toy(int src_vocab, int tgt_vocab) {
  GeneratorConfig c;
  c.src_vocab = src_vocab;
  c.tgt_vocab = tgt_vocab;
  return c;
}

GeneratorConfig GeneratorConfig::full(int src_vocab, int tgt_vocab) {
  GeneratorConfig c;
  c.enc_layers = 6;
  c.dec_layers = 6;
  c.model_dim = 512;
  c.embed_dim = 256;
  c.heads = 8;
  c.dropout = 0.1;
  c.max_len = 1024;
  c.src_vocab = src_vocab;
  c.tgt_vocab = tgt_vocab;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("train config: batch_size must be positive");
  if (epochs < 0) throw ValidationError("train config: epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ValidationError("train config: learning_rate must be positive");
  if (weight_decay < 0.0) throw ValidationError("train config: weight_decay must be >= 0");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) {
    throw ValidationError("train config: warmup_fraction must be in [0, 1]");
  }
}

SequenceExample make_example(const GeneratorConfig& config, std::span<const std::int32_t> source_ids,
                             std::span<const std::int32_t> target_data_ids, bool truncate) {
  const auto max_len = static_cast<std::size_t>(config.max_len);
  SequenceExample ex;
  if (config.conditional) {
    if (source_ids.empty()) throw ValidationError("conditional model requires a phoneme sequence");
    std::size_t keep = source_ids.size();
    if (keep + 1 > max_len) {
      if (!truncate) {
        throw ValidationError("phoneme sequence of length " + std::to_string(keep) + " exceeds max_len " +
                              std::to_string(max_len) + " (including EOS)");
      }
      warn("phoneme sequence truncated from " + std::to_string(keep) + " to " + std::to_string(max_len - 1));
      keep = max_len - 1;
    }
    ex.source.assign(source_ids.begin(), source_ids.begin() + static_cast<std::ptrdiff_t>(keep));
    for (auto id : ex.source) {
      if (id < 0 || id >= config.src_vocab) throw ValidationError("source id outside src_vocab");
    }
    ex.source.push_back(kEosId);
  } else if (!source_ids.empty()) {
    throw ValidationError("decoder-only model does not take a phoneme sequence");
  }

  std::size_t keep = target_data_ids.size();
  if (keep + 1 > max_len) {
    if (!truncate) {
      throw ValidationError("token sequence of length " + std::to_string(keep) + " exceeds max_len " +
                            std::to_string(max_len) + " (including BOS/EOS)");
    }
    warn("token sequence truncated from " + std::to_string(keep) + " to " + std::to_string(max_len - 1));
    keep = max_len - 1;
  }
  ex.decoder_input.reserve(keep + 1);
  ex.targets.reserve(keep + 1);
  ex.decoder_input.push_back(kBosId);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::int32_t id = target_data_ids[i] + kFirstDataId;
    if (target_data_ids[i] < 0 || id >= config.tgt_vocab) {
      throw ValidationError("token id " + std::to_string(target_data_ids[i]) + " outside the model vocabulary");
    }
    ex.decoder_input.push_back(id);
    ex.targets.push_back(id);
  }
  ex.targets.push_back(kEosId);
  return ex;
}

// ---------------------------------------------------------------------------
// Layer kernels

namespace {

using detail::AttentionSlots;
using detail::EmbeddingSlots;
using detail::FeedForwardSlots;
using detail::LinearSlots;
using detail::NormSlots;

constexpr double kNormEps = 1e-5;

template <typename S>
using Mat = RowMatrix<S>;
template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
Mat<S> linear(const Mat<S>& x, const ParamSet<S>& p, LinearSlots s) {
  Mat<S> y = x * p[s.weight];
  y.rowwise() += p[s.bias].row(0);
  return y;
}

template <typename S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& dy, const ParamSet<S>& p, ParamSet<S>& g, LinearSlots s) {
  g[s.weight].noalias() += x.transpose() * dy;
  g[s.bias].row(0) += dy.colwise().sum();
  return dy * p[s.weight].transpose();
}

template <typename S>
struct NormCache {
  Mat<S> xhat;
  ColVec<S> inv_std;
};

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const ParamSet<S>& p, NormSlots s, NormCache<S>& c) {
  const Index d = x.cols();
  c.xhat.resize(x.rows(), d);
  c.inv_std.resize(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const S mean = x.row(i).mean();
    auto centered = (x.row(i).array() - mean).eval();
    const S var = centered.square().mean();
    c.inv_std[i] = S(1) / std::sqrt(var + S(kNormEps));
    c.xhat.row(i) = centered * c.inv_std[i];
  }
  Mat<S> y = (c.xhat.array().rowwise() * p[s.gain].row(0).array()).matrix();
  y.rowwise() += p[s.bias].row(0);
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const NormCache<S>& c, const ParamSet<S>& p, ParamSet<S>& g,
                           NormSlots s) {
  const auto d = static_cast<S>(dy.cols());
  g[s.gain].row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g[s.bias].row(0) += dy.colwise().sum();
  Mat<S> dxhat = (dy.array().rowwise() * p[s.gain].row(0).array()).matrix();
  Mat<S> dx(dy.rows(), dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    const S sum = dxhat.row(i).sum();
    const S dot = dxhat.row(i).dot(c.xhat.row(i));
    dx.row(i) = (c.inv_std[i] / d) * (d * dxhat.row(i).array() - sum - c.xhat.row(i).array() * dot).matrix();
  }
  return dx;
}

template <typename S>
struct AttentionCache {
  Mat<S> q, k, v, context;
  std::vector<Mat<S>> probs;
};

template <typename S>
Mat<S> attention(const Mat<S>& xq, const Mat<S>& xkv, bool causal, int heads, const ParamSet<S>& p,
                 const AttentionSlots& s, AttentionCache<S>& c) {
  c.q = linear(xq, p, s.query);
  c.k = linear(xkv, p, s.key);
  c.v = linear(xkv, p, s.value);
  const Index d = c.q.cols();
  const Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  c.context.resize(xq.rows(), d);
  c.probs.resize(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Mat<S> scores = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
    for (Index i = 0; i < scores.rows(); ++i) {
      const Index visible = causal ? std::min<Index>(i + 1, scores.cols()) : scores.cols();
      const S m = scores.row(i).head(visible).maxCoeff();
      scores.row(i).head(visible) = (scores.row(i).head(visible).array() - m).exp().matrix();
      scores.row(i).tail(scores.cols() - visible).setZero();
      scores.row(i) /= scores.row(i).sum();
    }
    c.context.middleCols(h * dh, dh).noalias() = scores * c.v.middleCols(h * dh, dh);
    c.probs[static_cast<std::size_t>(h)] = std::move(scores);
  }
  return linear(c.context, p, s.out);
}

/// Returns (d xq, d xkv).
template <typename S>
std::pair<Mat<S>, Mat<S>> attention_backward(const Mat<S>& dy, const Mat<S>& xq, const Mat<S>& xkv, int heads,
                                             const AttentionCache<S>& c, const ParamSet<S>& p, ParamSet<S>& g,
                                             const AttentionSlots& s) {
  Mat<S> dcontext = linear_backward(c.context, dy, p, g, s.out);
  const Index d = c.q.cols();
  const Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto& probs = c.probs[static_cast<std::size_t>(h)];
    auto dctx = dcontext.middleCols(h * dh, dh);
    Mat<S> dprobs = dctx * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dctx;
    ColVec<S> row_dot = (dprobs.array() * probs.array()).rowwise().sum();
    Mat<S> dscores = (probs.array() * (dprobs.array().colwise() - row_dot.array())).matrix() * scale;
    dq.middleCols(h * dh, dh).noalias() = dscores * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * c.q.middleCols(h * dh, dh);
  }
  Mat<S> dxq = linear_backward(xq, dq, p, g, s.query);
  Mat<S> dxkv = linear_backward(xkv, dk, p, g, s.key);
  dxkv += linear_backward(xkv, dv, p, g, s.value);
  return {std::move(dxq), std::move(dxkv)};
}

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2))));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * S(3.14159265358979323846));
  return cdf + x * pdf;
}

template <typename S>
struct FeedForwardCache {
  Mat<S> input, pre, act;
};

template <typename S>
Mat<S> feed_forward(const Mat<S>& x, const ParamSet<S>& p, const FeedForwardSlots& s, FeedForwardCache<S>& c) {
  c.input = x;
  c.pre = linear(x, p, s.up);
  c.act = c.pre.unaryExpr([](S v) { return gelu(v); });
  return linear(c.act, p, s.down);
}

template <typename S>
Mat<S> feed_forward_backward(const Mat<S>& dy, const FeedForwardCache<S>& c, const ParamSet<S>& p, ParamSet<S>& g,
                             const FeedForwardSlots& s) {
  Mat<S> dact = linear_backward(c.act, dy, p, g, s.down);
  Mat<S> dpre = (dact.array() * c.pre.unaryExpr([](S v) { return gelu_grad(v); }).array()).matrix();
  return linear_backward(c.input, dpre, p, g, s.up);
}

/// Inverted dropout. An empty mask means identity.
template <typename S>
void dropout(Mat<S>& x, double rate, std::mt19937_64* rng, Mat<S>& mask) {
  if (!rng || rate <= 0.0) {
    mask.resize(0, 0);
    return;
  }
  std::bernoulli_distribution keep(1.0 - rate);
  const S scale = S(1) / static_cast<S>(1.0 - rate);
  mask.resize(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? scale : S(0);
  x.array() *= mask.array();
}

template <typename S>
void dropout_backward(Mat<S>& dy, const Mat<S>& mask) {
  if (mask.size() > 0) dy.array() *= mask.array();
}

template <typename S>
struct EmbeddingCache {
  Mat<S> summed;  // before projection
  Mat<S> mask;
};

template <typename S>
Mat<S> embed(std::span<const std::int32_t> ids, const ParamSet<S>& p, const EmbeddingSlots& s, double rate,
             std::mt19937_64* rng, EmbeddingCache<S>& c) {
  const auto& table = p[s.tokens];
  const auto& pos = p[s.positions];
  c.summed.resize(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    c.summed.row(static_cast<Index>(t)) = table.row(ids[t]) + pos.row(static_cast<Index>(t));
  }
  Mat<S> x = s.projection ? linear(c.summed, p, *s.projection) : c.summed;
  dropout(x, rate, rng, c.mask);
  return x;
}

template <typename S>
void embed_backward(Mat<S> dx, std::span<const std::int32_t> ids, const EmbeddingCache<S>& c, const ParamSet<S>& p,
                    ParamSet<S>& g, const EmbeddingSlots& s) {
  dropout_backward(dx, c.mask);
  Mat<S> dsum = s.projection ? linear_backward(c.summed, dx, p, g, *s.projection) : std::move(dx);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    g[s.tokens].row(ids[t]) += dsum.row(static_cast<Index>(t));
    g[s.positions].row(static_cast<Index>(t)) += dsum.row(static_cast<Index>(t));
  }
}

template <typename S>
struct EncoderLayerCache {
  Mat<S> input, normed_attn, attn_mask, mid, normed_ffn, ffn_mask;
  NormCache<S> attn_norm, ffn_norm;
  AttentionCache<S> attn;
  FeedForwardCache<S> ffn;
};

template <typename S>
struct DecoderLayerCache {
  Mat<S> input, normed_self, self_mask, after_self, normed_cross, cross_mask, after_cross, normed_ffn, ffn_mask;
  NormCache<S> self_norm, cross_norm, ffn_norm;
  AttentionCache<S> self_attn, cross_attn;
  FeedForwardCache<S> ffn;
};

template <typename S>
struct ForwardState {
  EmbeddingCache<S> src_embed, tgt_embed;
  std::vector<EncoderLayerCache<S>> encoder;
  NormCache<S> encoder_norm;
  Mat<S> memory;  // final encoder output
  std::vector<DecoderLayerCache<S>> decoder;
  Mat<S> decoder_out;
  NormCache<S> decoder_norm;
  Mat<S> normed;     // decoder_norm output
  Mat<S> head_in;    // input of the tied output layer (after optional projection)
  Mat<S> logits;
};

}  // namespace

// ---------------------------------------------------------------------------
// Generator

template <typename Scalar>
void Generator<Scalar>::register_parameters() {
  const auto& c = config_;
  auto linear_slots = [&](const std::string& name, int in, int out) {
    detail::LinearSlots s;
    s.weight = params_.add(name + ".weight", in, out);
    s.bias = params_.add(name + ".bias", 1, out);
    return s;
  };
  auto norm_slots = [&](const std::string& name) {
    detail::NormSlots s;
    s.gain = params_.add(name + ".gain", 1, c.model_dim);
    s.bias = params_.add(name + ".bias", 1, c.model_dim);
    return s;
  };
  auto attention_slots = [&](const std::string& name) {
    detail::AttentionSlots s;
    s.query = linear_slots(name + ".query", c.model_dim, c.model_dim);
    s.key = linear_slots(name + ".key", c.model_dim, c.model_dim);
    s.value = linear_slots(name + ".value", c.model_dim, c.model_dim);
    s.out = linear_slots(name + ".out", c.model_dim, c.model_dim);
    return s;
  };
  auto ffn_slots = [&](const std::string& name) {
    detail::FeedForwardSlots s;
    s.up = linear_slots(name + ".up", c.model_dim, c.inner_dim());
    s.down = linear_slots(name + ".down", c.inner_dim(), c.model_dim);
    return s;
  };
  auto embedding_slots = [&](const std::string& name, int vocab) {
    detail::EmbeddingSlots s;
    s.tokens = params_.add(name + ".tokens", vocab, c.embed_dim);
    s.positions = params_.add(name + ".positions", c.max_len, c.embed_dim);
    if (c.projected()) s.projection = linear_slots(name + ".projection", c.embed_dim, c.model_dim);
    return s;
  };

  if (c.conditional) {
    src_embed_ = embedding_slots("encoder.embed", c.src_vocab);
    for (int l = 0; l < c.enc_layers; ++l) {
      const auto prefix = "encoder.layers." + std::to_string(l);
      detail::EncoderLayerSlots layer;
      layer.attn_norm = norm_slots(prefix + ".attn_norm");
      layer.self_attn = attention_slots(prefix + ".self_attn");
      layer.ffn_norm = norm_slots(prefix + ".ffn_norm");
      layer.ffn = ffn_slots(prefix + ".ffn");
      encoder_.push_back(layer);
    }
    encoder_norm_ = norm_slots("encoder.final_norm");
  }
  tgt_embed_ = embedding_slots("decoder.embed", c.tgt_vocab);
  for (int l = 0; l < c.dec_layers; ++l) {
    const auto prefix = "decoder.layers." + std::to_string(l);
    detail::DecoderLayerSlots layer;
    layer.self_norm = norm_slots(prefix + ".self_norm");
    layer.self_attn = attention_slots(prefix + ".self_attn");
    if (c.conditional) {
      layer.cross_norm = norm_slots(prefix + ".cross_norm");
      layer.cross_attn = attention_slots(prefix + ".cross_attn");
    }
    layer.ffn_norm = norm_slots(prefix + ".ffn_norm");
    layer.ffn = ffn_slots(prefix + ".ffn");
    decoder_.push_back(layer);
  }
  decoder_norm_ = norm_slots("decoder.final_norm");
  if (c.projected()) output_projection_ = linear_slots("output.projection", c.model_dim, c.embed_dim);
  logit_bias_ = params_.add("output.logit_bias", 1, c.tgt_vocab);
}

template <typename Scalar>
Generator<Scalar> Generator<Scalar>::build(const GeneratorConfig& config, std::uint64_t seed,
                                           PhonemeInventory inventory) {
  config.validate();
  if (config.conditional && !inventory.symbols().empty() && inventory.model_vocab_size() != config.src_vocab) {
    throw ValidationError("phoneme inventory size does not match src_vocab");
  }
  Generator g;
  g.config_ = config;
  g.inventory_ = std::move(inventory);
  g.register_parameters();

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < g.params_.size(); ++i) {
    const auto& name = g.params_.name(i);
    auto& t = g.params_[i];
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    double stddev = 0.0;
    if (ends_with(".gain")) {
      t.setOnes();
    } else if (ends_with(".weight")) {
      stddev = std::sqrt(2.0 / static_cast<double>(t.rows() + t.cols()));
    } else if (ends_with(".tokens") || ends_with(".positions")) {
      stddev = 1.0 / std::sqrt(static_cast<double>(config.embed_dim));
    }
    if (stddev > 0.0) {
      std::normal_distribution<double> normal(0.0, stddev);
      for (Index j = 0; j < t.size(); ++j) t.data()[j] = static_cast<Scalar>(normal(rng));
    }
  }
  return g;
}

template <typename Scalar>
void Generator<Scalar>::check_example(const SequenceExample& ex) const {
  const auto& c = config_;
  if (ex.decoder_input.empty() || ex.decoder_input.size() != ex.targets.size()) {
    throw ValidationError("decoder input and targets must be non-empty and of equal length");
  }
  if (ex.decoder_input.size() > static_cast<std::size_t>(c.max_len) ||
      ex.source.size() > static_cast<std::size_t>(c.max_len)) {
    throw ValidationError("sequence exceeds max_len " + std::to_string(c.max_len));
  }
  if (c.conditional == ex.source.empty()) {
    throw ValidationError(c.conditional ? "conditional model requires a source sequence"
                                        : "decoder-only model does not take a source sequence");
  }
  for (auto id : ex.source) {
    if (id < 0 || id >= c.src_vocab) throw ValidationError("source id outside src_vocab");
  }
  for (std::size_t i = 0; i < ex.targets.size(); ++i) {
    if (ex.targets[i] < 0 || ex.targets[i] >= c.tgt_vocab || ex.decoder_input[i] < 0 ||
        ex.decoder_input[i] >= c.tgt_vocab) {
      throw ValidationError("target id outside tgt_vocab");
    }
  }
}

namespace {

template <typename Scalar>
struct Runner {
  const GeneratorConfig& c;
  const ParamSet<Scalar>& p;
  const std::vector<detail::EncoderLayerSlots>& encoder;
  const std::vector<detail::DecoderLayerSlots>& decoder;
  const detail::EmbeddingSlots& src_embed;
  const detail::EmbeddingSlots& tgt_embed;
  detail::NormSlots encoder_norm, decoder_norm;
  const std::optional<detail::LinearSlots>& output_projection;
  std::size_t logit_bias;

  void forward(std::span<const std::int32_t> source, std::span<const std::int32_t> decoder_input,
               std::mt19937_64* rng, ForwardState<Scalar>& st) const {
    const double rate = c.dropout;
    if (c.conditional) {
      Mat<Scalar> x = embed(source, p, src_embed, rate, rng, st.src_embed);
      st.encoder.resize(encoder.size());
      for (std::size_t l = 0; l < encoder.size(); ++l) {
        auto& lc = st.encoder[l];
        const auto& ls = encoder[l];
        lc.input = x;
        lc.normed_attn = layer_norm(x, p, ls.attn_norm, lc.attn_norm);
        Mat<Scalar> a = attention(lc.normed_attn, lc.normed_attn, false, c.heads, p, ls.self_attn, lc.attn);
        dropout(a, rate, rng, lc.attn_mask);
        lc.mid = lc.input + a;
        lc.normed_ffn = layer_norm(lc.mid, p, ls.ffn_norm, lc.ffn_norm);
        Mat<Scalar> f = feed_forward(lc.normed_ffn, p, ls.ffn, lc.ffn);
        dropout(f, rate, rng, lc.ffn_mask);
        x = lc.mid + f;
      }
      st.memory = layer_norm(x, p, encoder_norm, st.encoder_norm);
    }

    Mat<Scalar> y = embed(decoder_input, p, tgt_embed, rate, rng, st.tgt_embed);
    st.decoder.resize(decoder.size());
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      auto& lc = st.decoder[l];
      const auto& ls = decoder[l];
      lc.input = y;
      lc.normed_self = layer_norm(y, p, ls.self_norm, lc.self_norm);
      Mat<Scalar> a = attention(lc.normed_self, lc.normed_self, true, c.heads, p, ls.self_attn, lc.self_attn);
      dropout(a, rate, rng, lc.self_mask);
      lc.after_self = lc.input + a;
      if (c.conditional) {
        lc.normed_cross = layer_norm(lc.after_self, p, ls.cross_norm, lc.cross_norm);
        Mat<Scalar> x = attention(lc.normed_cross, st.memory, false, c.heads, p, ls.cross_attn, lc.cross_attn);
        dropout(x, rate, rng, lc.cross_mask);
        lc.after_cross = lc.after_self + x;
      } else {
        lc.after_cross = lc.after_self;
      }
      lc.normed_ffn = layer_norm(lc.after_cross, p, ls.ffn_norm, lc.ffn_norm);
      Mat<Scalar> f = feed_forward(lc.normed_ffn, p, ls.ffn, lc.ffn);
      dropout(f, rate, rng, lc.ffn_mask);
      y = lc.after_cross + f;
    }
    st.decoder_out = std::move(y);
    st.normed = layer_norm(st.decoder_out, p, decoder_norm, st.decoder_norm);
    st.head_in = output_projection ? linear(st.normed, p, *output_projection) : st.normed;
    st.logits = st.head_in * p[tgt_embed.tokens].transpose();
    st.logits.rowwise() += p[logit_bias].row(0);
  }

  void backward(const SequenceExample& ex, Mat<Scalar> dlogits, const ForwardState<Scalar>& st,
                ParamSet<Scalar>& g) const {
    g[logit_bias].row(0) += dlogits.colwise().sum();
    g[tgt_embed.tokens].noalias() += dlogits.transpose() * st.head_in;
    Mat<Scalar> dhead = dlogits * p[tgt_embed.tokens];
    Mat<Scalar> dnormed = output_projection ? linear_backward(st.normed, dhead, p, g, *output_projection)
                                            : std::move(dhead);
    Mat<Scalar> dy = layer_norm_backward(dnormed, st.decoder_norm, p, g, decoder_norm);

    Mat<Scalar> dmemory;
    if (c.conditional) dmemory = Mat<Scalar>::Zero(st.memory.rows(), st.memory.cols());

    for (std::size_t l = decoder.size(); l-- > 0;) {
      const auto& lc = st.decoder[l];
      const auto& ls = decoder[l];
      // y = after_cross + dropout(ffn(norm(after_cross)))
      Mat<Scalar> df = dy;
      dropout_backward(df, lc.ffn_mask);
      Mat<Scalar> dnf = feed_forward_backward(df, lc.ffn, p, g, ls.ffn);
      Mat<Scalar> dcross = dy + layer_norm_backward(dnf, lc.ffn_norm, p, g, ls.ffn_norm);
      Mat<Scalar> dself = dcross;
      if (c.conditional) {
        Mat<Scalar> dx = dcross;
        dropout_backward(dx, lc.cross_mask);
        auto [dq, dkv] = attention_backward(dx, lc.normed_cross, st.memory, c.heads, lc.cross_attn, p, g,
                                            ls.cross_attn);
        dmemory += dkv;
        dself += layer_norm_backward(dq, lc.cross_norm, p, g, ls.cross_norm);
      }
      Mat<Scalar> da = dself;
      dropout_backward(da, lc.self_mask);
      auto [dq, dkv] = attention_backward(da, lc.normed_self, lc.normed_self, c.heads, lc.self_attn, p, g,
                                          ls.self_attn);
      dq += dkv;
      dy = dself + layer_norm_backward(dq, lc.self_norm, p, g, ls.self_norm);
    }
    embed_backward(std::move(dy), ex.decoder_input, st.tgt_embed, p, g, tgt_embed);

    if (c.conditional) {
      Mat<Scalar> dx = layer_norm_backward(dmemory, st.encoder_norm, p, g, encoder_norm);
      for (std::size_t l = encoder.size(); l-- > 0;) {
        const auto& lc = st.encoder[l];
        const auto& ls = encoder[l];
        Mat<Scalar> df = dx;
        dropout_backward(df, lc.ffn_mask);
        Mat<Scalar> dnf = feed_forward_backward(df, lc.ffn, p, g, ls.ffn);
        Mat<Scalar> dmid = dx + layer_norm_backward(dnf, lc.ffn_norm, p, g, ls.ffn_norm);
        Mat<Scalar> da = dmid;
        dropout_backward(da, lc.attn_mask);
        auto [dq, dkv] = attention_backward(da, lc.normed_attn, lc.normed_attn, c.heads, lc.attn, p, g,
                                            ls.self_attn);
        dq += dkv;
        dx = dmid + layer_norm_backward(dq, lc.attn_norm, p, g, ls.attn_norm);
      }
      embed_backward(std::move(dx), ex.source, st.src_embed, p, g, src_embed);
    }
  }
};

}  // namespace

#define TTSCORE_RUNNER                                                                                  \
  Runner<Scalar> runner{config_,   params_,      encoder_,      decoder_,           src_embed_, tgt_embed_, \
                        encoder_norm_, decoder_norm_, output_projection_, logit_bias_}

template <typename Scalar>
typename Generator<Scalar>::Matrix Generator<Scalar>::log_distributions(
    std::span<const std::int32_t> source, std::span<const std::int32_t> decoder_input) const {
  SequenceExample probe;
  probe.source.assign(source.begin(), source.end());
  probe.decoder_input.assign(decoder_input.begin(), decoder_input.end());
  probe.targets.assign(decoder_input.size(), kEosId);
  check_example(probe);
  TTSCORE_RUNNER;
  ForwardState<Scalar> st;
  runner.forward(source, decoder_input, nullptr, st);
  return log_softmax_rows(st.logits);
}

template <typename Scalar>
std::vector<double> Generator<Scalar>::example_logprobs(const SequenceExample& example) const {
  Matrix logp = log_distributions(example.source, example.decoder_input);
  std::vector<double> out(example.targets.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(logp(static_cast<Index>(i), example.targets[i]));
  }
  return out;
}

template <typename Scalar>
double Generator<Scalar>::loss_and_gradient(const SequenceExample& example, ParamSet<Scalar>* grad,
                                            Scalar grad_scale, std::mt19937_64* rng) const {
  check_example(example);
  TTSCORE_RUNNER;
  ForwardState<Scalar> st;
  runner.forward(example.source, example.decoder_input, rng, st);
  Matrix logp = log_softmax_rows(st.logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < example.targets.size(); ++i) {
    loss -= static_cast<double>(logp(static_cast<Index>(i), example.targets[i]));
  }
  if (grad) {
    Matrix dlogits = logp.array().exp().matrix();
    for (std::size_t i = 0; i < example.targets.size(); ++i) {
      dlogits(static_cast<Index>(i), example.targets[i]) -= Scalar(1);
    }
    dlogits *= grad_scale;
    runner.backward(example, std::move(dlogits), st, *grad);
  }
  return loss;
}

#undef TTSCORE_RUNNER

template class Generator<float>;
template class Generator<double>;

const GeneratorConfig& config_of(const AnyGenerator& model) {
  return std::visit([](const auto& m) -> const GeneratorConfig& { return m.config(); }, model);
}

const PhonemeInventory& inventory_of(const AnyGenerator& model) {
  return std::visit([](const auto& m) -> const PhonemeInventory& { return m.inventory(); }, model);
}

}  // namespace ttscore
