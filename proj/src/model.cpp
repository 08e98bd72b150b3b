#include "alchemy/model.hpp"

#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "alchemy/error.hpp"
#include "alchemy/random.hpp"

namespace alchemy {

namespace {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;
using RowVec = Eigen::Matrix<float, 1, Eigen::Dynamic>;
using MapV = Eigen::Map<RowVec>;
using CMapV = Eigen::Map<const RowVec>;
using ColVec = Eigen::VectorXf;

constexpr float kLayerNormEps = 1e-5F;

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2;
};

struct Layout {
  std::size_t tok_emb = 0;
  std::size_t pos_emb = 0;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_g = 0, lnf_b = 0, w_head = 0, b_head = 0;
  std::size_t total = 0;

  explicit Layout(const ModelConfig& c) {
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto f = static_cast<std::size_t>(c.d_ff);
    std::size_t at = 0;
    auto take = [&](std::size_t n) {
      const std::size_t o = at;
      at += n;
      return o;
    };
    tok_emb = take(static_cast<std::size_t>(c.vocab_size) * d);
    pos_emb = take(c.positional == PositionalEncoding::kLearned ? static_cast<std::size_t>(c.max_seq_len) * d : 0);
    for (int l = 0; l < c.n_layers; ++l) {
      LayerOffsets o{};
      o.ln1_g = take(d);
      o.ln1_b = take(d);
      o.w_qkv = take(d * 3 * d);
      o.b_qkv = take(3 * d);
      o.w_o = take(d * d);
      o.b_o = take(d);
      o.ln2_g = take(d);
      o.ln2_b = take(d);
      o.w_1 = take(d * f);
      o.b_1 = take(f);
      o.w_2 = take(f * d);
      o.b_2 = take(d);
      layers.push_back(o);
    }
    lnf_g = take(d);
    lnf_b = take(d);
    w_head = take(d * static_cast<std::size_t>(c.n_classes));
    b_head = take(static_cast<std::size_t>(c.n_classes));
    total = at;
  }
};

/// Maps a flat buffer (parameters or gradients) onto named tensors.
template <class Ptr>
struct View {
  Ptr base;
  const Layout* layout;
  int d, f, classes;

  auto mat(std::size_t off, int rows, int cols) const {
    if constexpr (std::is_const_v<std::remove_pointer_t<Ptr>>) {
      return CMapM(base + off, rows, cols);
    } else {
      return MapM(base + off, rows, cols);
    }
  }
  auto vec(std::size_t off, int n) const {
    if constexpr (std::is_const_v<std::remove_pointer_t<Ptr>>) {
      return CMapV(base + off, n);
    } else {
      return MapV(base + off, n);
    }
  }
};

/// Counter-based dropout masks: SplitMix64 over a running counter, 16 bits
/// per decision.
class DropoutStream {
 public:
  DropoutStream(std::uint64_t seed, float rate)
      : state_(mix_seed(seed)),
        threshold_(static_cast<std::uint32_t>(std::lround(static_cast<double>(rate) * 65536.0))),
        keep_scale_(1.0F / (1.0F - rate)) {}

  void fill(Mat& mask, Eigen::Index rows, Eigen::Index cols) {
    mask.resize(rows, cols);
    float* p = mask.data();
    const Eigen::Index n = rows * cols;
    Eigen::Index i = 0;
    while (i < n) {
      std::uint64_t bits = mix_seed(state_++);
      for (int lane = 0; lane < 4 && i < n; ++lane, ++i) {
        const auto u = static_cast<std::uint32_t>(bits & 0xffffU);
        bits >>= 16;
        p[i] = u < threshold_ ? 0.0F : keep_scale_;
      }
    }
  }

 private:
  std::uint64_t state_;
  std::uint32_t threshold_;
  float keep_scale_;
};

struct Segment {
  const TokenId* tokens = nullptr;
  int len = 0;
  int pos0 = 0;
  bool has_pad = false;
};

struct LayerCache {
  bool last_only = false;
  Mat x_in;
  Mat xhat1;
  ColVec rstd1;
  Mat h1;
  Mat q;
  Mat kv;
  std::vector<Mat> probs;
  std::vector<Mat> probs_mask;
  Mat att;
  Mat drop_attn;
  Mat x1;
  Mat xhat2;
  ColVec rstd2;
  Mat h2;
  Mat f1;
  Mat g;
  Mat drop_ff;
};

struct Workspace {
  std::vector<Segment> segs;
  std::vector<int> row_start;
  int rows = 0;
  Mat drop_emb;
  std::vector<LayerCache> layers;
  Mat xhatf;
  ColVec rstdf;
  Mat hf;
  Mat logits;
};

void layer_norm_forward(const Mat& x, const CMapV& gamma, const CMapV& beta, Mat& xhat, ColVec& rstd, Mat& y) {
  const ColVec mean = x.rowwise().mean();
  xhat = x.colwise() - mean;
  rstd = (xhat.array().square().rowwise().mean() + kLayerNormEps).rsqrt().matrix();
  xhat.array().colwise() *= rstd.array();
  y = xhat;
  y.array().rowwise() *= gamma.array();
  y.rowwise() += beta;
}

/// Returns dx; accumulates dgamma/dbeta.
Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const ColVec& rstd, const CMapV& gamma, MapV dgamma,
                        MapV dbeta) {
  dgamma.noalias() += dy.cwiseProduct(xhat).colwise().sum();
  dbeta.noalias() += dy.colwise().sum();
  Mat dxhat = dy;
  dxhat.array().rowwise() *= gamma.array();
  const ColVec m1 = dxhat.rowwise().mean();
  const ColVec m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
  Mat dx = dxhat.colwise() - m1;
  dx.array() -= xhat.array().colwise() * m2.array();
  dx.array().colwise() *= rstd.array();
  return dx;
}

inline float gelu(float x) { return 0.5F * x * (1.0F + std::erf(x * std::numbers::sqrt2_v<float> * 0.5F)); }

inline float gelu_grad(float x) {
  const float cdf = 0.5F * (1.0F + std::erf(x * std::numbers::sqrt2_v<float> * 0.5F));
  const float pdf = std::exp(-0.5F * x * x) * (std::numbers::inv_sqrtpi_v<float> * std::numbers::sqrt2_v<float> * 0.5F);
  return cdf + x * pdf;
}

}  // namespace

struct Transformer::Impl {
  Layout layout;
  Mat sinusoid;  // max_seq_len x d, only for sinusoidal encodings
  std::mutex mutex;
  Workspace ws;
  AlignedFloats grad;  // per-call accumulator, added into the caller's buffer

  explicit Impl(const ModelConfig& c) : layout(c) {
    if (c.positional == PositionalEncoding::kSinusoidal) {
      sinusoid.resize(c.max_seq_len, c.d_model);
      for (int p = 0; p < c.max_seq_len; ++p) {
        for (int i = 0; i < c.d_model; i += 2) {
          const double freq = std::pow(10000.0, -static_cast<double>(i) / c.d_model);
          sinusoid(p, i) = static_cast<float>(std::sin(p * freq));
          if (i + 1 < c.d_model) sinusoid(p, i + 1) = static_cast<float>(std::cos(p * freq));
        }
      }
    }
  }
};

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, "model." + what); };
  if (n_layers < 1) bad("n_layers must be >= 1");
  if (d_model < 1) bad("d_model must be >= 1");
  if (d_ff < 1) bad("d_ff must be >= 1");
  if (n_heads < 1 || d_model % n_heads != 0) bad("n_heads must divide d_model");
  if (!(dropout >= 0.0F && dropout < 1.0F)) bad("dropout must be in [0, 1)");
  if (vocab_size < 1) bad("vocab_size must be >= 1");
  if (n_classes < 1) bad("n_classes must be >= 1");
  if (max_seq_len < 1) bad("max_seq_len must be >= 1");
}

std::size_t ModelConfig::parameter_count() const {
  const auto d = static_cast<std::size_t>(d_model);
  const auto f = static_cast<std::size_t>(d_ff);
  std::size_t n = static_cast<std::size_t>(vocab_size) * d;
  if (positional == PositionalEncoding::kLearned) n += static_cast<std::size_t>(max_seq_len) * d;
  const std::size_t per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
  n += static_cast<std::size_t>(n_layers) * per_layer;
  n += 2 * d + d * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(n_classes);
  return n;
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["n_layers"] = n_layers;
  j["d_model"] = d_model;
  j["d_ff"] = d_ff;
  j["n_heads"] = n_heads;
  j["dropout"] = std::round(static_cast<double>(dropout) * 1e6) / 1e6;
  j["vocab_size"] = vocab_size;
  j["n_classes"] = n_classes;
  j["max_seq_len"] = max_seq_len;
  j["positional"] = positional == PositionalEncoding::kLearned ? "learned" : "sinusoidal";
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "model: expected an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_layers") c.n_layers = value.get<int>();
      else if (key == "d_model") c.d_model = value.get<int>();
      else if (key == "d_ff") c.d_ff = value.get<int>();
      else if (key == "n_heads") c.n_heads = value.get<int>();
      else if (key == "dropout") c.dropout = value.get<float>();
      else if (key == "vocab_size") c.vocab_size = value.get<int>();
      else if (key == "n_classes") c.n_classes = value.get<int>();
      else if (key == "max_seq_len") c.max_seq_len = value.get<int>();
      else if (key == "positional") {
        const auto s = value.get<std::string>();
        if (s == "learned") c.positional = PositionalEncoding::kLearned;
        else if (s == "sinusoidal") c.positional = PositionalEncoding::kSinusoidal;
        else throw Error(ErrorCode::kInvalidConfig, "model.positional: unknown kind '" + s + "'");
      } else {
        throw Error(ErrorCode::kInvalidConfig, "model." + key + ": unknown key");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("model: ") + e.what());
  }
  c.validate();
  return c;
}

Transformer::Transformer(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  impl_ = std::make_unique<Impl>(config_);
  const Layout& L = impl_->layout;
  params_.assign(L.total, 0.0F);

  std::mt19937_64 engine(derive_seed(seed, {0x1417}));
  auto fill_normal = [&](std::size_t off, std::size_t n, float stddev) {
    std::normal_distribution<float> dist(0.0F, stddev);
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = dist(engine);
  };
  auto fill_const = [&](std::size_t off, std::size_t n, float v) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(off), n, v);
  };

  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto f = static_cast<std::size_t>(config_.d_ff);
  const float base_std = 0.02F;
  const float resid_std = base_std / std::sqrt(2.0F * static_cast<float>(config_.n_layers));
  fill_normal(L.tok_emb, static_cast<std::size_t>(config_.vocab_size) * d, base_std);
  if (config_.positional == PositionalEncoding::kLearned) {
    fill_normal(L.pos_emb, static_cast<std::size_t>(config_.max_seq_len) * d, base_std);
  }
  for (const auto& o : L.layers) {
    fill_const(o.ln1_g, d, 1.0F);
    fill_normal(o.w_qkv, d * 3 * d, base_std);
    fill_normal(o.w_o, d * d, resid_std);
    fill_const(o.ln2_g, d, 1.0F);
    fill_normal(o.w_1, d * f, base_std);
    fill_normal(o.w_2, f * d, resid_std);
  }
  fill_const(L.lnf_g, d, 1.0F);
  // Small head keeps the initial logits near uniform (loss ~ ln n_classes).
  fill_normal(L.w_head, d * static_cast<std::size_t>(config_.n_classes),
              0.1F / std::sqrt(static_cast<float>(config_.d_model)));
}

Transformer::~Transformer() = default;
Transformer::Transformer(Transformer&&) noexcept = default;
Transformer& Transformer::operator=(Transformer&&) noexcept = default;

std::vector<Transformer::TensorInfo> Transformer::tensors() const {
  const Layout& L = impl_->layout;
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto f = static_cast<std::size_t>(config_.d_ff);
  const auto c = static_cast<std::size_t>(config_.n_classes);
  std::vector<TensorInfo> out;
  out.push_back({"tok_emb", L.tok_emb, static_cast<std::size_t>(config_.vocab_size) * d});
  if (config_.positional == PositionalEncoding::kLearned) {
    out.push_back({"pos_emb", L.pos_emb, static_cast<std::size_t>(config_.max_seq_len) * d});
  }
  for (std::size_t l = 0; l < L.layers.size(); ++l) {
    const auto& o = L.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "ln1_g", o.ln1_g, d});
    out.push_back({p + "ln1_b", o.ln1_b, d});
    out.push_back({p + "w_qkv", o.w_qkv, d * 3 * d});
    out.push_back({p + "b_qkv", o.b_qkv, 3 * d});
    out.push_back({p + "w_o", o.w_o, d * d});
    out.push_back({p + "b_o", o.b_o, d});
    out.push_back({p + "ln2_g", o.ln2_g, d});
    out.push_back({p + "ln2_b", o.ln2_b, d});
    out.push_back({p + "w_1", o.w_1, d * f});
    out.push_back({p + "b_1", o.b_1, f});
    out.push_back({p + "w_2", o.w_2, f * d});
    out.push_back({p + "b_2", o.b_2, d});
  }
  out.push_back({"lnf_g", L.lnf_g, d});
  out.push_back({"lnf_b", L.lnf_b, d});
  out.push_back({"w_head", L.w_head, d * c});
  out.push_back({"b_head", L.b_head, c});
  return out;
}

namespace {

struct ForwardArgs {
  const ModelConfig* cfg;
  const Layout* layout;
  const Mat* sinusoid;
  const float* params;
  bool final_only;
  std::optional<std::uint64_t> dropout_seed;
};

void run_forward(const ForwardArgs& a, Workspace& ws) {
  const ModelConfig& cfg = *a.cfg;
  const int d = cfg.d_model;
  const int f = cfg.d_ff;
  const int H = cfg.n_heads;
  const int dh = d / H;
  const float attn_scale = 1.0F / std::sqrt(static_cast<float>(dh));
  const View<const float*> P{a.params, a.layout, d, f, cfg.n_classes};
  const bool dropout = a.dropout_seed.has_value() && cfg.dropout > 0.0F;
  DropoutStream stream(a.dropout_seed.value_or(0), dropout ? cfg.dropout : 0.0F);
  const auto nseg = static_cast<int>(ws.segs.size());

  ws.row_start.resize(ws.segs.size());
  int rows = 0;
  for (int s = 0; s < nseg; ++s) {
    ws.row_start[s] = rows;
    rows += ws.segs[s].len;
  }
  ws.rows = rows;

  // Embeddings.
  Mat x(rows, d);
  {
    const auto tok = P.mat(a.layout->tok_emb, cfg.vocab_size, d);
    for (int s = 0; s < nseg; ++s) {
      const Segment& seg = ws.segs[s];
      for (int i = 0; i < seg.len; ++i) {
        const int r = ws.row_start[s] + i;
        const int pos = seg.pos0 + i;
        if (cfg.positional == PositionalEncoding::kLearned) {
          x.row(r) = tok.row(seg.tokens[i]) + P.mat(a.layout->pos_emb, cfg.max_seq_len, d).row(pos);
        } else {
          x.row(r) = tok.row(seg.tokens[i]) + a.sinusoid->row(pos);
        }
      }
    }
    if (dropout) {
      stream.fill(ws.drop_emb, rows, d);
      x.array() *= ws.drop_emb.array();
    } else {
      ws.drop_emb.resize(0, 0);
    }
  }

  ws.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerCache& c = ws.layers[static_cast<std::size_t>(l)];
    const LayerOffsets& o = a.layout->layers[static_cast<std::size_t>(l)];
    c.last_only = a.final_only && l == cfg.n_layers - 1;
    const int m = c.last_only ? nseg : rows;

    c.x_in = std::move(x);
    layer_norm_forward(c.x_in, P.vec(o.ln1_g, d), P.vec(o.ln1_b, d), c.xhat1, c.rstd1, c.h1);

    const auto w_qkv = P.mat(o.w_qkv, d, 3 * d);
    const auto b_qkv = P.vec(o.b_qkv, 3 * d);
    c.kv.noalias() = c.h1 * w_qkv.rightCols(2 * d);
    c.kv.rowwise() += b_qkv.tail(2 * d);
    if (c.last_only) {
      Mat hq(m, d);
      for (int s = 0; s < nseg; ++s) hq.row(s) = c.h1.row(ws.row_start[s] + ws.segs[s].len - 1);
      c.q.noalias() = hq * w_qkv.leftCols(d);
    } else {
      c.q.noalias() = c.h1 * w_qkv.leftCols(d);
    }
    c.q.rowwise() += b_qkv.head(d);

    c.att.setZero(m, d);
    c.probs.resize(static_cast<std::size_t>(nseg * H));
    c.probs_mask.resize(dropout ? static_cast<std::size_t>(nseg * H) : 0);
    for (int s = 0; s < nseg; ++s) {
      const Segment& seg = ws.segs[s];
      const int T = seg.len;
      const int mq = c.last_only ? 1 : T;
      const int qb = T - mq;
      const int rs = ws.row_start[s];
      const int ms = c.last_only ? s : rs;
      for (int h = 0; h < H; ++h) {
        Mat& p = c.probs[static_cast<std::size_t>(s * H + h)];
        p.noalias() = c.q.block(ms, h * dh, mq, dh) * c.kv.block(rs, h * dh, T, dh).transpose();
        for (int i = 0; i < mq; ++i) {
          const int qi = qb + i;
          const bool qpad = seg.has_pad && seg.tokens[qi] == tok::kPad;
          float mx = -std::numeric_limits<float>::infinity();
          for (int j = 0; j <= qi; ++j) {
            if (seg.has_pad && (seg.tokens[j] == tok::kPad) != qpad) continue;
            mx = std::max(mx, p(i, j));
          }
          float sum = 0.0F;
          for (int j = 0; j < T; ++j) {
            const bool allowed = j <= qi && (!seg.has_pad || (seg.tokens[j] == tok::kPad) == qpad);
            const float e = allowed ? std::exp((p(i, j) - mx) * attn_scale) : 0.0F;
            p(i, j) = e;
            sum += e;
          }
          p.row(i) /= sum;
        }
        if (dropout) {
          Mat& mask = c.probs_mask[static_cast<std::size_t>(s * H + h)];
          stream.fill(mask, mq, T);
          c.att.block(ms, h * dh, mq, dh).noalias() = p.cwiseProduct(mask) * c.kv.block(rs, d + h * dh, T, dh);
        } else {
          c.att.block(ms, h * dh, mq, dh).noalias() = p * c.kv.block(rs, d + h * dh, T, dh);
        }
      }
    }

    // Attention output projection and residual.
    Mat proj(m, d);
    proj.noalias() = c.att * P.mat(o.w_o, d, d);
    proj.rowwise() += P.vec(o.b_o, d);
    if (dropout) {
      stream.fill(c.drop_attn, m, d);
      proj.array() *= c.drop_attn.array();
    }
    if (c.last_only) {
      c.x1.resize(m, d);
      for (int s = 0; s < nseg; ++s) c.x1.row(s) = c.x_in.row(ws.row_start[s] + ws.segs[s].len - 1);
      c.x1 += proj;
    } else {
      c.x1 = c.x_in + proj;
    }

    // Feed-forward.
    layer_norm_forward(c.x1, P.vec(o.ln2_g, d), P.vec(o.ln2_b, d), c.xhat2, c.rstd2, c.h2);
    c.f1.noalias() = c.h2 * P.mat(o.w_1, d, f);
    c.f1.rowwise() += P.vec(o.b_1, f);
    c.g = c.f1.unaryExpr([](float v) { return gelu(v); });
    Mat f2(m, d);
    f2.noalias() = c.g * P.mat(o.w_2, f, d);
    f2.rowwise() += P.vec(o.b_2, d);
    if (dropout) {
      stream.fill(c.drop_ff, m, d);
      f2.array() *= c.drop_ff.array();
    }
    x = c.x1 + f2;
  }

  Mat final_rows;
  if (a.final_only && !ws.layers.back().last_only) {
    final_rows.resize(nseg, d);
    for (int s = 0; s < nseg; ++s) final_rows.row(s) = x.row(ws.row_start[s] + ws.segs[s].len - 1);
  } else {
    final_rows = std::move(x);
  }
  layer_norm_forward(final_rows, P.vec(a.layout->lnf_g, d), P.vec(a.layout->lnf_b, d), ws.xhatf, ws.rstdf, ws.hf);
  ws.logits.noalias() = ws.hf * P.mat(a.layout->w_head, d, cfg.n_classes);
  ws.logits.rowwise() += P.vec(a.layout->b_head, cfg.n_classes);
}

/// dlogits is (nseg x classes) for final-only forward passes.
void run_backward(const ForwardArgs& a, Workspace& ws, const Mat& dlogits, float* grad) {
  const ModelConfig& cfg = *a.cfg;
  const int d = cfg.d_model;
  const int f = cfg.d_ff;
  const int H = cfg.n_heads;
  const int dh = d / H;
  const float attn_scale = 1.0F / std::sqrt(static_cast<float>(dh));
  const View<const float*> P{a.params, a.layout, d, f, cfg.n_classes};
  const View<float*> G{grad, a.layout, d, f, cfg.n_classes};
  const auto nseg = static_cast<int>(ws.segs.size());
  const int rows = ws.rows;
  const bool dropout = ws.drop_emb.size() != 0;

  G.mat(a.layout->w_head, d, cfg.n_classes).noalias() += ws.hf.transpose() * dlogits;
  G.vec(a.layout->b_head, cfg.n_classes).noalias() += dlogits.colwise().sum();
  Mat dhf = dlogits * P.mat(a.layout->w_head, d, cfg.n_classes).transpose();
  Mat dx = layer_norm_backward(dhf, ws.xhatf, ws.rstdf, P.vec(a.layout->lnf_g, d), G.vec(a.layout->lnf_g, d),
                               G.vec(a.layout->lnf_b, d));

  if (!ws.layers.back().last_only) {
    // Final rows were gathered after the last layer; scatter back.
    Mat full = Mat::Zero(rows, d);
    for (int s = 0; s < nseg; ++s) full.row(ws.row_start[s] + ws.segs[s].len - 1) = dx.row(s);
    dx = std::move(full);
  }

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    LayerCache& c = ws.layers[static_cast<std::size_t>(l)];
    const LayerOffsets& o = a.layout->layers[static_cast<std::size_t>(l)];
    const int m = c.last_only ? nseg : rows;

    // Feed-forward.
    Mat df2 = dx;
    if (dropout) df2.array() *= c.drop_ff.array();
    G.mat(o.w_2, f, d).noalias() += c.g.transpose() * df2;
    G.vec(o.b_2, d).noalias() += df2.colwise().sum();
    Mat df1 = df2 * P.mat(o.w_2, f, d).transpose();
    df1.array() *= c.f1.unaryExpr([](float v) { return gelu_grad(v); }).array();
    G.mat(o.w_1, d, f).noalias() += c.h2.transpose() * df1;
    G.vec(o.b_1, f).noalias() += df1.colwise().sum();
    Mat dh2 = df1 * P.mat(o.w_1, d, f).transpose();
    Mat dx1 = dx + layer_norm_backward(dh2, c.xhat2, c.rstd2, P.vec(o.ln2_g, d), G.vec(o.ln2_g, d),
                                       G.vec(o.ln2_b, d));

    // Attention projection.
    Mat dproj = dx1;
    if (dropout) dproj.array() *= c.drop_attn.array();
    G.mat(o.w_o, d, d).noalias() += c.att.transpose() * dproj;
    G.vec(o.b_o, d).noalias() += dproj.colwise().sum();
    Mat datt = dproj * P.mat(o.w_o, d, d).transpose();

    Mat dq = Mat::Zero(m, d);
    Mat dkv = Mat::Zero(rows, 2 * d);
    for (int s = 0; s < nseg; ++s) {
      const int T = ws.segs[s].len;
      const int mq = c.last_only ? 1 : T;
      const int rs = ws.row_start[s];
      const int ms = c.last_only ? s : rs;
      for (int h = 0; h < H; ++h) {
        const Mat& p = c.probs[static_cast<std::size_t>(s * H + h)];
        const auto d_out = datt.block(ms, h * dh, mq, dh);
        const auto v = c.kv.block(rs, d + h * dh, T, dh);
        Mat dp;
        if (dropout) {
          const Mat& mask = c.probs_mask[static_cast<std::size_t>(s * H + h)];
          dkv.block(rs, d + h * dh, T, dh).noalias() += p.cwiseProduct(mask).transpose() * d_out;
          dp.noalias() = d_out * v.transpose();
          dp.array() *= mask.array();
        } else {
          dkv.block(rs, d + h * dh, T, dh).noalias() += p.transpose() * d_out;
          dp.noalias() = d_out * v.transpose();
        }
        const ColVec dot = dp.cwiseProduct(p).rowwise().sum();
        Mat ds = p.cwiseProduct(dp.colwise() - dot) * attn_scale;
        dq.block(ms, h * dh, mq, dh).noalias() = ds * c.kv.block(rs, h * dh, T, dh);
        dkv.block(rs, h * dh, T, dh).noalias() += ds.transpose() * c.q.block(ms, h * dh, mq, dh);
      }
    }

    const auto w_qkv = P.mat(o.w_qkv, d, 3 * d);
    auto gw_qkv = G.mat(o.w_qkv, d, 3 * d);
    auto gb_qkv = G.vec(o.b_qkv, 3 * d);
    gw_qkv.rightCols(2 * d).noalias() += c.h1.transpose() * dkv;
    gb_qkv.tail(2 * d).noalias() += dkv.colwise().sum();
    gb_qkv.head(d).noalias() += dq.colwise().sum();
    Mat dh1 = dkv * w_qkv.rightCols(2 * d).transpose();
    if (c.last_only) {
      Mat hq(m, d);
      for (int s = 0; s < nseg; ++s) hq.row(s) = c.h1.row(ws.row_start[s] + ws.segs[s].len - 1);
      gw_qkv.leftCols(d).noalias() += hq.transpose() * dq;
      const Mat dhq = dq * w_qkv.leftCols(d).transpose();
      for (int s = 0; s < nseg; ++s) dh1.row(ws.row_start[s] + ws.segs[s].len - 1) += dhq.row(s);
    } else {
      gw_qkv.leftCols(d).noalias() += c.h1.transpose() * dq;
      dh1.noalias() += dq * w_qkv.leftCols(d).transpose();
    }

    Mat dx_in = layer_norm_backward(dh1, c.xhat1, c.rstd1, P.vec(o.ln1_g, d), G.vec(o.ln1_g, d), G.vec(o.ln1_b, d));
    if (c.last_only) {
      for (int s = 0; s < nseg; ++s) dx_in.row(ws.row_start[s] + ws.segs[s].len - 1) += dx1.row(s);
    } else {
      dx_in += dx1;
    }
    dx = std::move(dx_in);
  }

  if (dropout) dx.array() *= ws.drop_emb.array();
  auto gtok = G.mat(a.layout->tok_emb, cfg.vocab_size, d);
  for (int s = 0; s < nseg; ++s) {
    const Segment& seg = ws.segs[s];
    for (int i = 0; i < seg.len; ++i) {
      const int r = ws.row_start[s] + i;
      gtok.row(seg.tokens[i]) += dx.row(r);
      if (cfg.positional == PositionalEncoding::kLearned) {
        G.mat(a.layout->pos_emb, cfg.max_seq_len, d).row(seg.pos0 + i) += dx.row(r);
      }
    }
  }
}

void check_tokens(const ModelConfig& cfg, const TokenId* tokens, int len) {
  for (int i = 0; i < len; ++i) {
    if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size) {
      throw Error(ErrorCode::kShapeMismatch, "token id " + std::to_string(tokens[i]) + " outside the vocabulary");
    }
  }
}

std::vector<Segment> content_segments(const ModelConfig& cfg, std::span<const EncodedEpisode* const> batch) {
  std::vector<Segment> segs;
  segs.reserve(batch.size());
  for (const EncodedEpisode* e : batch) {
    const int total = static_cast<int>(e->tokens.size());
    if (total > cfg.max_seq_len) throw Error(ErrorCode::kShapeMismatch, "sequence longer than max_seq_len");
    if (e->length < 1 || e->length > total) throw Error(ErrorCode::kShapeMismatch, "invalid encoded length");
    const int first = total - e->length;
    check_tokens(cfg, e->tokens.data() + first, e->length);
    segs.push_back(Segment{e->tokens.data() + first, e->length, first, false});
  }
  return segs;
}

int argmax_lowest(const float* row, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

}  // namespace

std::vector<float> Transformer::forward(const std::vector<std::vector<TokenId>>& batch) const {
  if (batch.empty()) return {};
  const auto T = static_cast<int>(batch.front().size());
  if (T < 1 || T > config_.max_seq_len) throw Error(ErrorCode::kShapeMismatch, "sequence length out of range");
  std::lock_guard lock(impl_->mutex);
  Workspace& ws = impl_->ws;
  ws.segs.clear();
  for (const auto& seq : batch) {
    if (static_cast<int>(seq.size()) != T) throw Error(ErrorCode::kShapeMismatch, "ragged batch");
    check_tokens(config_, seq.data(), T);
    const bool has_pad = std::find(seq.begin(), seq.end(), tok::kPad) != seq.end();
    ws.segs.push_back(Segment{seq.data(), T, 0, has_pad});
  }
  ForwardArgs args{&config_, &impl_->layout, &impl_->sinusoid, params_.data(), false, std::nullopt};
  run_forward(args, ws);
  return std::vector<float>(ws.logits.data(), ws.logits.data() + ws.logits.size());
}

std::vector<float> Transformer::final_logits(std::span<const EncodedEpisode* const> batch) const {
  if (batch.empty()) return {};
  std::lock_guard lock(impl_->mutex);
  Workspace& ws = impl_->ws;
  ws.segs = content_segments(config_, batch);
  ForwardArgs args{&config_, &impl_->layout, &impl_->sinusoid, params_.data(), true, std::nullopt};
  run_forward(args, ws);
  return std::vector<float>(ws.logits.data(), ws.logits.data() + ws.logits.size());
}

BatchResult Transformer::evaluate(std::span<const EncodedEpisode* const> batch) const {
  const auto logits = final_logits(batch);
  BatchResult r;
  const int C = config_.n_classes;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const float* row = logits.data() + b * static_cast<std::size_t>(C);
    r.predictions.push_back(argmax_lowest(row, C));
    float mx = row[0];
    for (int i = 1; i < C; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (int i = 0; i < C; ++i) sum += std::exp(static_cast<double>(row[i] - mx));
    const double loss = std::log(sum) + mx - row[batch[b]->label];
    r.loss_sum += loss;
    if (!std::isfinite(loss)) r.finite = false;
  }
  return r;
}

BatchResult Transformer::loss_and_gradient(std::span<const EncodedEpisode* const> batch, std::span<float> grad,
                                           float scale, std::optional<std::uint64_t> dropout_seed) const {
  if (grad.size() != params_.size()) throw Error(ErrorCode::kShapeMismatch, "gradient buffer size mismatch");
  BatchResult r;
  if (batch.empty()) return r;
  std::lock_guard lock(impl_->mutex);
  Workspace& ws = impl_->ws;
  ws.segs = content_segments(config_, batch);
  ForwardArgs args{&config_, &impl_->layout, &impl_->sinusoid, params_.data(), true, dropout_seed};
  run_forward(args, ws);

  const int C = config_.n_classes;
  Mat dlogits(static_cast<Eigen::Index>(batch.size()), C);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto row = ws.logits.row(static_cast<Eigen::Index>(b));
    const int label = batch[b]->label;
    if (label < 0 || label >= C) throw Error(ErrorCode::kShapeMismatch, "label out of range");
    r.predictions.push_back(argmax_lowest(row.data(), C));
    const float mx = row.maxCoeff();
    double sum = 0.0;
    for (int i = 0; i < C; ++i) sum += std::exp(static_cast<double>(row(i) - mx));
    const double lse = std::log(sum) + mx;
    const double loss = lse - row(label);
    if (!std::isfinite(loss)) r.finite = false;
    r.loss_sum += loss;
    for (int i = 0; i < C; ++i) {
      dlogits(static_cast<Eigen::Index>(b), i) = static_cast<float>(std::exp(static_cast<double>(row(i)) - lse)) * scale;
    }
    dlogits(static_cast<Eigen::Index>(b), label) -= scale;
  }
  if (!r.finite) return r;
  impl_->grad.assign(params_.size(), 0.0F);
  run_backward(args, ws, dlogits, impl_->grad.data());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += impl_->grad[i];
  return r;
}

}  // namespace alchemy
