#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tslm/input_builder.hpp"
#include "tslm/numcore.hpp"

namespace tslm {

struct EncoderConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t ff_width = 64;
  std::size_t vocab_size = 0;
  std::size_t max_length = 128;
  std::size_t timestamp_vocab = kTimestampVocab;
  double dropout = 0.0;
  // Standard deviation of the token and position embedding init.
  double embedding_init_std = 0.5;

  /// Everything except vocab_size, which is only known once a corpus is read.
  void validate_architecture() const {
    if (d_model == 0 || n_heads == 0 || n_layers == 0 || ff_width == 0) {
      throw ConfigError("encoder: d_model, n_heads, n_layers and ff_width must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("encoder: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                        std::to_string(n_heads));
    }
    if (max_length == 0) throw ConfigError("encoder: max_length must be positive");
    if (timestamp_vocab != kTimestampVocab) throw ConfigError("encoder: timestamp table must have exactly 4 rows");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder: dropout must lie in [0, 1)");
    if (!(embedding_init_std > 0.0)) throw ConfigError("encoder: embedding_init_std must be positive");
  }

  void validate() const {
    validate_architecture();
    if (vocab_size <= kReservedCount) throw ConfigError("encoder: vocab_size must exceed the reserved tokens");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EncoderConfig, d_model, n_heads, n_layers, ff_width, vocab_size, max_length,
                                   timestamp_vocab, dropout, embedding_init_std)

namespace param {
inline constexpr const char* kTokenEmbedding = "embed.token";
inline constexpr const char* kPositionEmbedding = "embed.position";
inline constexpr const char* kTimestampEmbedding = "embed.timestamp";
inline constexpr const char* kFinalGain = "final_ln.gain";
inline constexpr const char* kFinalBias = "final_ln.bias";
inline constexpr const char* kStatusWeight = "head.status";
inline constexpr const char* kStartWeight = "head.start";
inline constexpr const char* kEndWeight = "head.end";

inline std::string layer(std::size_t i, const char* leaf) { return "layer" + std::to_string(i) + "." + leaf; }
}  // namespace param

/// Creates every encoder and head parameter.
///
/// The timestamp table starts at zero so an untrained model is step-agnostic.
inline ParamStore init_parameters(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParamStore ps;
  const std::size_t d = config.d_model, f = config.ff_width;

  auto normal = [&](std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data()) v = dist(rng);
    return t;
  };
  auto xavier = [&](std::size_t rows, std::size_t cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data()) v = dist(rng);
    return t;
  };

  ps.add(param::kTokenEmbedding, normal(config.vocab_size, d, config.embedding_init_std));
  ps.add(param::kPositionEmbedding, normal(config.max_length, d, config.embedding_init_std));
  ps.add(param::kTimestampEmbedding, Tensor::zeros({config.timestamp_vocab, d}));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    ps.add(param::layer(l, "ln1.gain"), Tensor::filled({d}, 1.0));
    ps.add(param::layer(l, "ln1.bias"), Tensor::zeros({d}));
    ps.add(param::layer(l, "attn.wq"), xavier(d, d));
    ps.add(param::layer(l, "attn.wk"), xavier(d, d));
    ps.add(param::layer(l, "attn.wv"), xavier(d, d));
    ps.add(param::layer(l, "attn.wo"), xavier(d, d));
    ps.add(param::layer(l, "ln2.gain"), Tensor::filled({d}, 1.0));
    ps.add(param::layer(l, "ln2.bias"), Tensor::zeros({d}));
    ps.add(param::layer(l, "ff.w1"), xavier(d, f));
    ps.add(param::layer(l, "ff.b1"), Tensor::zeros({f}));
    ps.add(param::layer(l, "ff.w2"), xavier(f, d));
    ps.add(param::layer(l, "ff.b2"), Tensor::zeros({d}));
  }
  ps.add(param::kFinalGain, Tensor::filled({d}, 1.0));
  ps.add(param::kFinalBias, Tensor::zeros({d}));
  ps.add(param::kStatusWeight, xavier(d, kStatusCount));
  ps.add(param::kStartWeight, xavier(d, 1));
  ps.add(param::kEndWeight, xavier(d, 1));
  return ps;
}

/// Zeroes the timestamp table and stops it from training.
inline void freeze_zero_timestamp(ParamStore& ps) {
  Var& table = ps.at(param::kTimestampEmbedding);
  table.mutable_value().fill(0.0);
  table.zero_grad();
  table.set_requires_grad(false);
}

/// Per-pass switches. Dropout only applies when `training` is set.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  // When set, receives one attention matrix per (layer, head).
  std::vector<Tensor>* attention_sink = nullptr;
};

struct EncoderOutput {
  Var hidden;  // T x d_model

  std::size_t length() const { return hidden.rows(); }
  Var cls() const { return row(hidden, 0); }
};

/// token_emb[id] + pos_emb[t] + timestamp_emb[ts], summed in that order.
inline Var embed(const TimestampedInput& input, const ParamStore& ps) {
  const auto& ids = input.layout.token_ids;
  const auto& pos = input.layout.position_ids;
  const auto& ts = input.timestamp_ids;
  if (ids.size() != pos.size() || ids.size() != ts.size()) {
    throw DimensionError("embed: token, position and timestamp id counts differ");
  }
  const Var tok = gather_rows(ps.at(param::kTokenEmbedding), ids);
  const Var posv = gather_rows(ps.at(param::kPositionEmbedding), pos);
  const Var tsv = gather_rows(ps.at(param::kTimestampEmbedding), ts);
  return add(add(tok, posv), tsv);
}

inline Var self_attention(const Var& x, const ParamStore& ps, std::size_t layer, std::size_t n_heads,
                          const ForwardContext& ctx) {
  const std::size_t d = x.cols();
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Var q = matmul(x, ps.at(param::layer(layer, "attn.wq")));
  const Var k = matmul(x, ps.at(param::layer(layer, "attn.wk")));
  const Var v = matmul(x, ps.at(param::layer(layer, "attn.wv")));
  std::vector<Var> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    const Var probs = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    if (ctx.attention_sink) ctx.attention_sink->push_back(probs.value());
    heads.push_back(matmul(probs, vh));
  }
  const Var merged = n_heads == 1 ? heads.front() : concat_cols(heads);
  return matmul(merged, ps.at(param::layer(layer, "attn.wo")));
}

/// Pre-norm transformer stack followed by a final layer norm.
inline EncoderOutput encode(const Var& embedded, const ParamStore& ps, const EncoderConfig& config,
                            const ForwardContext& ctx = {}) {
  if (embedded.rows() > config.max_length) {
    throw DimensionError("encode: sequence of " + std::to_string(embedded.rows()) + " tokens exceeds max length " +
                         std::to_string(config.max_length));
  }
  if (embedded.cols() != config.d_model) {
    throw DimensionError("encode: embedding width " + std::to_string(embedded.cols()) + " != d_model " +
                         std::to_string(config.d_model));
  }
  const bool drop = ctx.training && config.dropout > 0.0 && ctx.rng != nullptr;
  Var x = embedded;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const Var h1 = layer_norm(x, ps.at(param::layer(l, "ln1.gain")), ps.at(param::layer(l, "ln1.bias")));
    Var attn = self_attention(h1, ps, l, config.n_heads, ctx);
    if (drop) attn = dropout(attn, config.dropout, *ctx.rng);
    x = add(x, attn);

    const Var h2 = layer_norm(x, ps.at(param::layer(l, "ln2.gain")), ps.at(param::layer(l, "ln2.bias")));
    Var ff = gelu(add_row(matmul(h2, ps.at(param::layer(l, "ff.w1"))), ps.at(param::layer(l, "ff.b1"))));
    ff = add_row(matmul(ff, ps.at(param::layer(l, "ff.w2"))), ps.at(param::layer(l, "ff.b2")));
    if (drop) ff = dropout(ff, config.dropout, *ctx.rng);
    x = add(x, ff);
  }
  return {layer_norm(x, ps.at(param::kFinalGain), ps.at(param::kFinalBias))};
}

}  // namespace tslm
