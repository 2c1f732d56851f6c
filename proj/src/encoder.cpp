#include "stare/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stare/error.hpp"
#include "stare/hashing.hpp"
#include "stare/log.hpp"
#include "stare/rng.hpp"

namespace stare {

std::string_view to_string(Property property) noexcept {
  switch (property) {
    case Property::POS: return "POS";
    case Property::DEPS: return "DEPS";
    case Property::PT: return "PT";
  }
  return "?";
}

Property parse_property(std::string_view name) {
  std::string up;
  for (char c : name) up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "POS") return Property::POS;
  if (up == "DEPS") return Property::DEPS;
  if (up == "PT") return Property::PT;
  throw Error(ErrorCode::InvalidArgument,
              "unknown property '" + std::string(name) + "' (expected POS, DEPS or PT)");
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) {
      flush();
    } else if (uc < 0x80 && std::ispunct(uc)) {
      flush();
      out.emplace_back(1, c);
    } else {
      current += static_cast<char>(std::tolower(uc));
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{std::string(kUnkToken)}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty() || tokens_.front() != kUnkToken) {
    throw Error(ErrorCode::Format, "vocabulary must start with the <unk> token");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw Error(ErrorCode::Format, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  Vocabulary vocab;
  for (const auto& text : texts) {
    for (const auto& token : split_tokens(text)) vocab.add(token);
  }
  return vocab;
}

void Vocabulary::add(std::string_view token) {
  std::string key(token);
  if (ids_.count(key) != 0) return;
  ids_.emplace(key, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(std::move(key));
}

std::int32_t Vocabulary::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::int32_t> tokenize(std::string_view text, const Vocabulary& vocab,
                                   std::size_t max_len) {
  const auto tokens = split_tokens(text);
  if (tokens.empty()) throw Error(ErrorCode::EmptyInput, "text has no tokens");
  if (tokens.size() > max_len) {
    logger()->debug("truncating {} tokens to {}", tokens.size(), max_len);
  }
  std::vector<std::int32_t> ids;
  ids.reserve(std::min(tokens.size(), max_len));
  for (std::size_t i = 0; i < tokens.size() && i < max_len; ++i) ids.push_back(vocab.id(tokens[i]));
  return ids;
}

// ---------------------------------------------------------------------------
// Configuration and layout

void EncoderConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::InvalidConfig, "encoder." + field + " " + why);
  };
  if (dim == 0) bad("dim", "must be positive");
  if (heads == 0) bad("heads", "must be positive");
  if (dim % heads != 0) bad("heads", "must divide dim");
  if (layers < 2) bad("layers", "must be at least 2");
  if (max_len == 0) bad("max_len", "must be positive");
  if (ffn_dim == 0) bad("ffn_dim", "must be positive");
}

ParamLayout::ParamLayout(const EncoderConfig& config, std::size_t vocab_size) {
  const std::size_t d = config.dim;
  const std::size_t f = config.ffn_dim;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t start = at;
    at += n;
    return start;
  };
  token_embedding = take(vocab_size * d);
  position_embedding = take(config.max_len * d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    Block b{};
    b.ln1_gain = take(d);
    b.ln1_bias = take(d);
    b.wq = take(d * d);
    b.bq = take(d);
    b.wk = take(d * d);
    b.bk = take(d);
    b.wv = take(d * d);
    b.bv = take(d);
    b.wo = take(d * d);
    b.bo = take(d);
    b.ln2_gain = take(d);
    b.ln2_bias = take(d);
    b.w1 = take(d * f);
    b.b1 = take(f);
    b.w2 = take(f * d);
    b.b2 = take(d);
    blocks.push_back(b);
  }
  final_gain = take(d);
  final_bias = take(d);
  total = at;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

// y = x W + b for x [T x n], W [n x m].
void affine(const Matrix& x, const double* w, const double* b, std::size_t m, Matrix& y) {
  const std::size_t n = x.cols;
  y = Matrix(x.rows, m);
  for (std::size_t t = 0; t < x.rows; ++t) {
    double* out = y.data.data() + t * m;
    std::copy(b, b + m, out);
    const double* in = x.data.data() + t * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = in[i];
      const double* wrow = w + i * m;
      for (std::size_t j = 0; j < m; ++j) out[j] += xi * wrow[j];
    }
  }
}

// Accumulates dx += dy W^T, dW += x^T dy, db += colsum(dy).
void affine_backward(const Matrix& x, const double* w, const Matrix& dy, Matrix& dx, double* dw,
                     double* db) {
  const std::size_t n = x.cols;
  const std::size_t m = dy.cols;
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double* g = dy.data.data() + t * m;
    const double* in = x.data.data() + t * n;
    double* dxr = dx.data.data() + t * n;
    for (std::size_t j = 0; j < m; ++j) db[j] += g[j];
    for (std::size_t i = 0; i < n; ++i) {
      const double* wrow = w + i * m;
      double* dwrow = dw + i * m;
      const double xi = in[i];
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        acc += g[j] * wrow[j];
        dwrow[j] += xi * g[j];
      }
      dxr[i] += acc;
    }
  }
}

struct NormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

void layer_norm(const Matrix& x, const double* gain, const double* bias, Matrix& y,
                NormCache& cache) {
  const std::size_t d = x.cols;
  y = Matrix(x.rows, d);
  cache.xhat = Matrix(x.rows, d);
  cache.rstd.assign(x.rows, 0.0);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const auto row = x.row(t);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[t] = rstd;
    for (std::size_t i = 0; i < d; ++i) {
      const double xh = (row[i] - mean) * rstd;
      cache.xhat(t, i) = xh;
      y(t, i) = gain[i] * xh + bias[i];
    }
  }
}

void layer_norm_backward(const Matrix& dy, const NormCache& cache, const double* gain, Matrix& dx,
                         double* dgain, double* dbias) {
  const std::size_t d = dy.cols;
  std::vector<double> dxhat(d);
  for (std::size_t t = 0; t < dy.rows; ++t) {
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double g = dy(t, i);
      const double xh = cache.xhat(t, i);
      dgain[i] += g * xh;
      dbias[i] += g;
      dxhat[i] = g * gain[i];
      mean_dxhat += dxhat[i];
      mean_dxhat_xhat += dxhat[i] * xh;
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
      dx(t, i) += cache.rstd[t] * (dxhat[i] - mean_dxhat - cache.xhat(t, i) * mean_dxhat_xhat);
    }
  }
}

double gelu(double z) {
  return 0.5 * z * (1.0 + std::tanh(kGeluScale * (z + kGeluCubic * z * z * z)));
}

double gelu_grad(double z) {
  const double t = std::tanh(kGeluScale * (z + kGeluCubic * z * z * z));
  return 0.5 * (1.0 + t) +
         0.5 * z * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * z * z);
}

struct BlockTrace {
  Matrix input;
  NormCache ln1;
  Matrix normed1;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, [T x T]
  Matrix context;
  Matrix mid;
  NormCache ln2;
  Matrix normed2;
  Matrix pre_act;
  Matrix act;
};

struct Trace {
  std::vector<BlockTrace> blocks;
  NormCache final_norm;
};

}  // namespace

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(EncoderConfig config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)), layout_(config_, vocab_.size()) {
  config_.validate();
  params_.assign(layout_.total, 0.0);
  Rng rng(config_.seed);
  const std::size_t d = config_.dim;
  const std::size_t f = config_.ffn_dim;
  auto fill = [&](std::size_t offset, std::size_t count, double bound) {
    for (std::size_t i = 0; i < count; ++i) params_[offset + i] = rng.uniform(-bound, bound);
  };
  fill(layout_.token_embedding, vocab_.size() * d, 1.0);
  fill(layout_.position_embedding, config_.max_len * d, 1.0);
  const double in_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double in_f = 1.0 / std::sqrt(static_cast<double>(f));
  for (const auto& b : layout_.blocks) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(b.ln1_gain), d, 1.0);
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(b.ln2_gain), d, 1.0);
    fill(b.wq, d * d, in_d);
    fill(b.wk, d * d, in_d);
    fill(b.wv, d * d, in_d);
    fill(b.wo, d * d, in_d);
    fill(b.w1, d * f, in_d);
    fill(b.w2, f * d, in_f);
  }
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(layout_.final_gain), d, 1.0);
}

void Encoder::check_injection(const InjectionDirection& injection) const {
  if (injection.layer < 1 || injection.layer > config_.layers) {
    throw Error(ErrorCode::LayerOutOfRange,
                "injection layer " + std::to_string(injection.layer) + " outside [1, " +
                    std::to_string(config_.layers) + "]");
  }
  if (injection.u.size() != config_.dim) {
    throw Error(ErrorCode::DimensionMismatch,
                "injection direction has dimension " + std::to_string(injection.u.size()) +
                    ", encoder width is " + std::to_string(config_.dim));
  }
}

namespace {

HiddenStates run_forward(const EncoderConfig& cfg, const ParamLayout& layout,
                         std::span<const double> params, std::span<const std::int32_t> ids,
                         const InjectionDirection* injection, Trace* trace) {
  const std::size_t d = cfg.dim;
  const std::size_t heads = cfg.heads;
  const std::size_t dh = d / heads;
  const std::size_t T = std::min(ids.size(), cfg.max_len);
  const double* p = params.data();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  HiddenStates states;
  Matrix x(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const double* tok = p + layout.token_embedding + static_cast<std::size_t>(ids[t]) * d;
    const double* pos = p + layout.position_embedding + t * d;
    for (std::size_t i = 0; i < d; ++i) x(t, i) = tok[i] + pos[i];
  }
  states.layers.push_back(x);
  if (trace) trace->blocks.resize(cfg.layers);

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& b = layout.blocks[l];
    BlockTrace local;
    BlockTrace& bt = trace ? trace->blocks[l] : local;
    bt.input = x;

    layer_norm(x, p + b.ln1_gain, p + b.ln1_bias, bt.normed1, bt.ln1);
    affine(bt.normed1, p + b.wq, p + b.bq, d, bt.q);
    affine(bt.normed1, p + b.wk, p + b.bk, d, bt.k);
    affine(bt.normed1, p + b.wv, p + b.bv, d, bt.v);

    bt.context = Matrix(T, d);
    bt.probs.assign(heads, Matrix(T, T));
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix& P = bt.probs[h];
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < T; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += bt.q(i, off + c) * bt.k(j, off + c);
          P(i, j) = s * scale;
          mx = std::max(mx, P(i, j));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          P(i, j) = std::exp(P(i, j) - mx);
          z += P(i, j);
        }
        for (std::size_t j = 0; j < T; ++j) P(i, j) /= z;
        for (std::size_t j = 0; j < T; ++j) {
          const double w = P(i, j);
          for (std::size_t c = 0; c < dh; ++c) bt.context(i, off + c) += w * bt.v(j, off + c);
        }
      }
    }
    Matrix attn_out;
    affine(bt.context, p + b.wo, p + b.bo, d, attn_out);
    bt.mid = x;
    for (std::size_t i = 0; i < bt.mid.data.size(); ++i) bt.mid.data[i] += attn_out.data[i];

    layer_norm(bt.mid, p + b.ln2_gain, p + b.ln2_bias, bt.normed2, bt.ln2);
    affine(bt.normed2, p + b.w1, p + b.b1, cfg.ffn_dim, bt.pre_act);
    bt.act = bt.pre_act;
    for (double& v : bt.act.data) v = gelu(v);
    Matrix ffn_out;
    affine(bt.act, p + b.w2, p + b.b2, d, ffn_out);
    x = bt.mid;
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += ffn_out.data[i];

    if (injection && injection->layer == l + 1 && injection->lambda != 0.0) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < d; ++i) x(t, i) += injection->lambda * injection->u[i];
      }
    }
    states.layers.push_back(x);
  }

  NormCache local_final;
  layer_norm(x, p + layout.final_gain, p + layout.final_bias, states.output,
             trace ? trace->final_norm : local_final);
  return states;
}

}  // namespace

HiddenStates Encoder::forward_ids(std::span<const std::int32_t> ids,
                                  const InjectionDirection* injection) const {
  if (ids.empty()) throw Error(ErrorCode::EmptyInput, "no tokens to encode");
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
      throw Error(ErrorCode::InvalidArgument, "token id " + std::to_string(id) + " out of range");
    }
  }
  if (injection) check_injection(*injection);
  return run_forward(config_, layout_, params_, ids, injection, nullptr);
}

HiddenStates Encoder::forward(std::string_view text, const InjectionDirection* injection) const {
  const auto ids = tokenize(text, vocab_, config_.max_len);
  return forward_ids(ids, injection);
}

std::vector<double> Encoder::embed(std::string_view text,
                                   const InjectionDirection* injection) const {
  const HiddenStates states = forward(text, injection);
  const std::size_t T = states.output.rows;
  std::vector<double> out(config_.dim, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < config_.dim; ++i) out[i] += states.output(t, i);
  }
  for (double& v : out) v /= static_cast<double>(T);
  return out;
}

std::vector<double> Encoder::embed_backward(std::string_view text,
                                            std::span<const double> d_embedding,
                                            std::span<double> grad) const {
  if (grad.size() != params_.size() || d_embedding.size() != config_.dim) {
    throw Error(ErrorCode::DimensionMismatch, "gradient buffers do not match the encoder");
  }
  const auto ids = tokenize(text, vocab_, config_.max_len);
  Trace trace;
  const HiddenStates states = run_forward(config_, layout_, params_, ids, nullptr, &trace);

  const std::size_t d = config_.dim;
  const std::size_t heads = config_.heads;
  const std::size_t dh = d / heads;
  const std::size_t T = states.output.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* p = params_.data();
  double* g = grad.data();

  std::vector<double> embedding(d, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) embedding[i] += states.output(t, i);
  }
  for (double& v : embedding) v /= static_cast<double>(T);

  Matrix d_out(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) d_out(t, i) = d_embedding[i] / static_cast<double>(T);
  }
  Matrix dx(T, d);
  layer_norm_backward(d_out, trace.final_norm, p + layout_.final_gain, dx, g + layout_.final_gain,
                      g + layout_.final_bias);

  for (std::size_t l = config_.layers; l-- > 0;) {
    const auto& b = layout_.blocks[l];
    const BlockTrace& bt = trace.blocks[l];

    // Feed-forward sublayer: x = mid + W2 gelu(W1 ln2(mid)).
    Matrix d_act(T, config_.ffn_dim);
    affine_backward(bt.act, p + b.w2, dx, d_act, g + b.w2, g + b.b2);
    Matrix d_pre = d_act;
    for (std::size_t i = 0; i < d_pre.data.size(); ++i) d_pre.data[i] *= gelu_grad(bt.pre_act.data[i]);
    Matrix d_normed2(T, d);
    affine_backward(bt.normed2, p + b.w1, d_pre, d_normed2, g + b.w1, g + b.b1);
    Matrix d_mid = dx;
    layer_norm_backward(d_normed2, bt.ln2, p + b.ln2_gain, d_mid, g + b.ln2_gain, g + b.ln2_bias);

    // Attention sublayer: mid = input + Wo attn(ln1(input)).
    Matrix d_context(T, d);
    affine_backward(bt.context, p + b.wo, d_mid, d_context, g + b.wo, g + b.bo);
    Matrix dq(T, d), dk(T, d), dv(T, d);
    std::vector<double> dP(T);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& P = bt.probs[h];
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < T; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += d_context(i, off + c) * bt.v(j, off + c);
          dP[j] = s;
          dot += s * P(i, j);
          for (std::size_t c = 0; c < dh; ++c) dv(j, off + c) += P(i, j) * d_context(i, off + c);
        }
        for (std::size_t j = 0; j < T; ++j) {
          const double dS = P(i, j) * (dP[j] - dot) * scale;
          for (std::size_t c = 0; c < dh; ++c) {
            dq(i, off + c) += dS * bt.k(j, off + c);
            dk(j, off + c) += dS * bt.q(i, off + c);
          }
        }
      }
    }
    Matrix d_normed1(T, d);
    affine_backward(bt.normed1, p + b.wq, dq, d_normed1, g + b.wq, g + b.bq);
    affine_backward(bt.normed1, p + b.wk, dk, d_normed1, g + b.wk, g + b.bk);
    affine_backward(bt.normed1, p + b.wv, dv, d_normed1, g + b.wv, g + b.bv);
    Matrix d_input = d_mid;
    layer_norm_backward(d_normed1, bt.ln1, p + b.ln1_gain, d_input, g + b.ln1_gain,
                        g + b.ln1_bias);
    dx = std::move(d_input);
  }

  for (std::size_t t = 0; t < T; ++t) {
    double* tok = g + layout_.token_embedding + static_cast<std::size_t>(ids[t]) * d;
    double* pos = g + layout_.position_embedding + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      tok[i] += dx(t, i);
      pos[i] += dx(t, i);
    }
  }
  return embedding;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[8] = {'S', 'T', 'A', 'R', 'E', 'E', 'N', 'C'};

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorCode::Format, "truncated encoder file");
  return value;
}

std::string header_json(const EncoderConfig& c, const Vocabulary& v) {
  const nlohmann::json header = {
      {"dim", c.dim},         {"layers", c.layers},   {"heads", c.heads},
      {"max_len", c.max_len}, {"ffn_dim", c.ffn_dim}, {"seed", c.seed},
      {"vocab", v.tokens()},
  };
  return header.dump();
}

}  // namespace

void Encoder::save(std::ostream& out) const {
  const std::string header = header_json(config_, vocab_);
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kEncoderFormatVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_le<std::uint64_t>(out, params_.size());
  out.write(reinterpret_cast<const char*>(params_.data()),
            static_cast<std::streamsize>(params_.size() * sizeof(double)));
}

void Encoder::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  save(out);
}

Encoder Encoder::load(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::Format, "not an encoder parameter file");
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kEncoderFormatVersion) {
    throw Error(ErrorCode::Format, "unsupported encoder file version " + std::to_string(version));
  }
  const auto header_len = read_le<std::uint32_t>(in);
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw Error(ErrorCode::Format, "truncated encoder header");

  EncoderConfig config;
  std::vector<std::string> tokens;
  try {
    const auto j = nlohmann::json::parse(header);
    config.dim = j.at("dim").get<std::size_t>();
    config.layers = j.at("layers").get<std::size_t>();
    config.heads = j.at("heads").get<std::size_t>();
    config.max_len = j.at("max_len").get<std::size_t>();
    config.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    config.seed = j.at("seed").get<std::uint64_t>();
    tokens = j.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("bad encoder header: ") + e.what());
  }
  Encoder encoder(config, Vocabulary(std::move(tokens)));
  const auto count = read_le<std::uint64_t>(in);
  if (count != encoder.params_.size()) {
    throw Error(ErrorCode::Format, "parameter count " + std::to_string(count) +
                                       " does not match the configured layout (" +
                                       std::to_string(encoder.params_.size()) + ")");
  }
  in.read(reinterpret_cast<char*>(encoder.params_.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw Error(ErrorCode::Format, "truncated encoder parameters");
  return encoder;
}

Encoder Encoder::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return load(in);
}

std::string Encoder::fingerprint() const {
  std::uint64_t h = hash_bytes(header_json(config_, vocab_));
  for (double v : params_) h = hash_combine(h, std::bit_cast<std::uint64_t>(v));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Contrastive loss

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_nonzero(std::span<const double> v, const char* what) {
  if (norm(v) == 0.0) throw Error(ErrorCode::ZeroVector, std::string(what) + " has zero norm");
}

// Accumulates scale * d cos(a, b) / da into out.
void add_cosine_grad(std::span<const double> a, std::span<const double> b, double scale,
                     std::vector<double>& out) {
  const double na = norm(a);
  const double nb = norm(b);
  const double c = dot(a, b) / (na * nb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] += scale * (b[i] / (na * nb) - c * a[i] / (na * na));
  }
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "vector sizes differ");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return dot(a, b) / (na * nb);
}

InfoNceResult infonce_loss_and_grad(std::span<const double> anchor,
                                    std::span<const double> positive,
                                    std::span<const std::vector<double>> negatives,
                                    double temperature) {
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  }
  require_nonzero(anchor, "anchor embedding");
  require_nonzero(positive, "positive embedding");
  for (const auto& n : negatives) require_nonzero(n, "negative embedding");

  const double s_pos = cosine(anchor, positive) / temperature;
  std::vector<double> gaps(negatives.size());
  double max_gap = 0.0;  // the positive's own gap
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    gaps[i] = cosine(anchor, negatives[i]) / temperature - s_pos;
    max_gap = std::max(max_gap, gaps[i]);
  }
  // loss = log(1 + sum exp(gap_i)), evaluated around the largest logit.
  double tail = 0.0;
  for (double gap : gaps) tail += std::exp(gap - max_gap);

  InfoNceResult r;
  if (max_gap == 0.0) {
    r.loss = std::log1p(tail);
  } else {
    r.loss = max_gap + std::log(std::exp(-max_gap) + tail);
  }

  // Softmax weights over {positive} ∪ negatives.
  const double z = std::exp(-max_gap) + tail;
  const double p_pos = std::exp(-max_gap) / z;
  const std::size_t d = anchor.size();
  r.d_anchor.assign(d, 0.0);
  r.d_positive.assign(d, 0.0);
  const double w_pos = (p_pos - 1.0) / temperature;
  add_cosine_grad(anchor, positive, w_pos, r.d_anchor);
  add_cosine_grad(positive, anchor, w_pos, r.d_positive);
  r.d_negatives.reserve(negatives.size());
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const double w = std::exp(gaps[i] - max_gap) / z / temperature;
    add_cosine_grad(anchor, negatives[i], w, r.d_anchor);
    std::vector<double> dn(d, 0.0);
    add_cosine_grad(negatives[i], anchor, w, dn);
    r.d_negatives.push_back(std::move(dn));
  }
  return r;
}

double infonce_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const std::vector<double>> negatives, double temperature) {
  return infonce_loss_and_grad(anchor, positive, negatives, temperature).loss;
}

}  // namespace stare
