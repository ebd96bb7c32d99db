#include "transformer.hpp"

#include <cmath>
#include <limits>

#include "convrisk/error.hpp"

namespace convrisk::microlm::detail {

namespace {

using Eigen::Index;
using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluScale * (u + kGeluCubic * u * u * u))); }

double gelu_grad(double u) {
  const double th = std::tanh(kGeluScale * (u + kGeluCubic * u * u * u));
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluScale * (1.0 + 3.0 * kGeluCubic * u * u);
}

void layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& xhat, Vector& rstd,
                        Matrix& y) {
  const Index T = x.rows(), D = x.cols();
  xhat.resize(T, D);
  rstd.resize(T);
  for (Index t = 0; t < T; ++t) {
    const double mean = x.row(t).mean();
    const RowArray centered = x.row(t).array() - mean;
    const double r = 1.0 / std::sqrt(centered.square().mean() + kLayerNormEps);
    xhat.row(t) = centered * r;
    rstd(t) = r;
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// Adds d(loss)/dx into `dx`.
void layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& rstd, const Matrix& gain, Matrix& dx,
                         Matrix* dgain, Matrix* dbias) {
  for (Index t = 0; t < dy.rows(); ++t) {
    const RowArray dxhat = dy.row(t).array() * gain.row(0).array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * xhat.row(t).array()).mean();
    dx.row(t).array() += rstd(t) * (dxhat - m1 - xhat.row(t).array() * m2);
  }
  if (dgain) dgain->row(0).array() += (dy.array() * xhat.array()).colwise().sum();
  if (dbias) dbias->row(0) += dy.colwise().sum();
}

// y = x W^T, plus (alpha/r) (x A^T) B^T when adapted.
Matrix project(const Matrix& x, const Matrix& w, const LoraPair* lora, double scale, Matrix& z) {
  Matrix y = x * w.transpose();
  if (lora) {
    z = x * lora->a.transpose();
    y.noalias() += scale * (z * lora->b.transpose());
  }
  return y;
}

void project_backward(const Matrix& dy, const Matrix& x, const Matrix& w, const LoraPair* lora, double scale,
                      const Matrix& z, Matrix& dx, Matrix* dw, LoraPair* dlora) {
  dx.noalias() += dy * w;
  if (dw) dw->noalias() += dy.transpose() * x;
  if (lora) {
    const Matrix dz = scale * (dy * lora->b);
    dx.noalias() += dz * lora->a;
    if (dlora) {
      dlora->b.noalias() += scale * (dy.transpose() * z);
      dlora->a.noalias() += dz.transpose() * x;
    }
  }
}

const LoraPair* pair_at(const LoraAdapter* adapter, const AdapterIndex& idx, std::size_t layer, Projection p) {
  if (!adapter) return nullptr;
  const int i = idx[layer][static_cast<std::size_t>(p)];
  return i < 0 ? nullptr : &adapter->pairs[static_cast<std::size_t>(i)];
}

LoraPair* pair_at(LoraAdapter* adapter, const AdapterIndex& idx, std::size_t layer, Projection p) {
  if (!adapter) return nullptr;
  const int i = idx[layer][static_cast<std::size_t>(p)];
  return i < 0 ? nullptr : &adapter->pairs[static_cast<std::size_t>(i)];
}

}  // namespace

AdapterIndex index_adapter(const LoraAdapter* adapter, std::size_t n_layers) {
  AdapterIndex idx(n_layers, std::array<int, 4>{-1, -1, -1, -1});
  if (!adapter) return idx;
  for (std::size_t i = 0; i < adapter->pairs.size(); ++i) {
    const auto& p = adapter->pairs[i];
    if (p.layer >= n_layers) throw ArgumentError("adapter targets layer " + std::to_string(p.layer) + " beyond model depth");
    idx[p.layer][static_cast<std::size_t>(p.target)] = static_cast<int>(i);
  }
  return idx;
}

void check_tokens(const MicroLMConfig& config, std::span<const TokenId> ids) {
  if (ids.empty()) throw ContextLengthError("empty token sequence");
  if (ids.size() > config.context_length)
    throw ContextLengthError("sequence of " + std::to_string(ids.size()) + " tokens exceeds context length " +
                             std::to_string(config.context_length));
  for (auto id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
      throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(config.vocab_size));
}

Vector run_forward(const MicroLMWeights& w, const LoraAdapter* adapter, std::span<const TokenId> ids,
                   ForwardCache& cache, Matrix* all_logits) {
  const auto& cfg = w.config;
  check_tokens(cfg, ids);
  const Index T = static_cast<Index>(ids.size());
  const Index D = static_cast<Index>(cfg.d_model);
  const Index H = static_cast<Index>(cfg.n_heads);
  const Index hd = static_cast<Index>(cfg.head_dim());
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const double scale = adapter ? adapter->scale() : 0.0;
  const auto aidx = index_adapter(adapter, cfg.n_layers);

  cache.ids.assign(ids.begin(), ids.end());
  cache.layers.resize(cfg.n_layers);

  Matrix x(T, D);
  for (Index t = 0; t < T; ++t) x.row(t) = w.token_embedding.row(ids[static_cast<std::size_t>(t)]) + w.position_embedding.row(t);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto& c = cache.layers[l];
    const auto& W = w.layers[l];
    c.x_in = x;
    layer_norm_forward(x, W.ln1_gain, W.ln1_bias, c.xhat1, c.rstd1, c.h1);
    c.q = project(c.h1, W.wq, pair_at(adapter, aidx, l, Projection::Query), scale, c.zq);
    c.k = project(c.h1, W.wk, pair_at(adapter, aidx, l, Projection::Key), scale, c.zk);
    c.v = project(c.h1, W.wv, pair_at(adapter, aidx, l, Projection::Value), scale, c.zv);

    c.probs.resize(static_cast<std::size_t>(H));
    c.attn.resize(T, D);
    for (Index h = 0; h < H; ++h) {
      const Matrix scores = (c.q.middleCols(h * hd, hd) * c.k.middleCols(h * hd, hd).transpose()) * inv_sqrt;
      Matrix P = Matrix::Zero(T, T);
      for (Index i = 0; i < T; ++i) {
        const double m = scores.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (Index j = 0; j <= i; ++j) {
          const double e = std::exp(scores(i, j) - m);
          P(i, j) = e;
          sum += e;
        }
        P.row(i).head(i + 1) /= sum;
      }
      c.attn.middleCols(h * hd, hd) = P * c.v.middleCols(h * hd, hd);
      c.probs[static_cast<std::size_t>(h)] = std::move(P);
    }
    c.x_mid = x + project(c.attn, W.wo, pair_at(adapter, aidx, l, Projection::Output), scale, c.zo);

    layer_norm_forward(c.x_mid, W.ln2_gain, W.ln2_bias, c.xhat2, c.rstd2, c.h2);
    c.u = (c.h2 * W.w1.transpose()).rowwise() + W.b1.row(0);
    c.act = c.u.unaryExpr(&gelu);
    x = c.x_mid;
    x.noalias() += c.act * W.w2.transpose();
    x.rowwise() += W.b2.row(0);
  }

  const Matrix last = x.bottomRows(1);
  layer_norm_forward(last, w.lnf_gain, w.lnf_bias, cache.xhat_final, cache.rstd_final, cache.h_final);
  Vector logits = (cache.h_final * w.head.transpose() + w.head_bias).transpose();

  if (all_logits) {
    Matrix xhat, h;
    Vector rstd;
    layer_norm_forward(x, w.lnf_gain, w.lnf_bias, xhat, rstd, h);
    *all_logits = (h * w.head.transpose()).rowwise() + w.head_bias.row(0);
  }
  return logits;
}

void run_backward(const MicroLMWeights& w, const LoraAdapter* adapter, const ForwardCache& cache,
                  const Vector& dlogits, MicroLMWeights* g, LoraAdapter* ga) {
  const auto& cfg = w.config;
  const Index T = static_cast<Index>(cache.ids.size());
  const Index D = static_cast<Index>(cfg.d_model);
  const Index H = static_cast<Index>(cfg.n_heads);
  const Index hd = static_cast<Index>(cfg.head_dim());
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const double scale = adapter ? adapter->scale() : 0.0;
  const auto aidx = index_adapter(adapter, cfg.n_layers);
  if (ga && adapter && ga->pairs.size() != adapter->pairs.size())
    throw ArgumentError("adapter gradient buffer does not match adapter layout");

  const Matrix dl = dlogits.transpose();
  if (g) {
    g->head.noalias() += dl.transpose() * cache.h_final;
    g->head_bias += dl;
  }
  const Matrix dhf = dl * w.head;
  Matrix dlast = Matrix::Zero(1, D);
  layer_norm_backward(dhf, cache.xhat_final, cache.rstd_final, w.lnf_gain, dlast, g ? &g->lnf_gain : nullptr,
                      g ? &g->lnf_bias : nullptr);
  Matrix dx = Matrix::Zero(T, D);
  dx.row(T - 1) = dlast.row(0);

  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& c = cache.layers[li];
    const auto& W = w.layers[li];
    LayerWeights* gl = g ? &g->layers[li] : nullptr;

    // Feed-forward block.
    const Matrix dact = dx * W.w2;
    if (gl) {
      gl->w2.noalias() += dx.transpose() * c.act;
      gl->b2.row(0) += dx.colwise().sum();
    }
    const Matrix du = dact.cwiseProduct(c.u.unaryExpr(&gelu_grad));
    if (gl) {
      gl->w1.noalias() += du.transpose() * c.h2;
      gl->b1.row(0) += du.colwise().sum();
    }
    const Matrix dh2 = du * W.w1;
    Matrix dmid = dx;
    layer_norm_backward(dh2, c.xhat2, c.rstd2, W.ln2_gain, dmid, gl ? &gl->ln2_gain : nullptr,
                        gl ? &gl->ln2_bias : nullptr);

    // Attention block.
    Matrix dattn = Matrix::Zero(T, D);
    project_backward(dmid, c.attn, W.wo, pair_at(adapter, aidx, li, Projection::Output), scale, c.zo, dattn,
                     gl ? &gl->wo : nullptr, pair_at(ga, aidx, li, Projection::Output));

    Matrix dq = Matrix::Zero(T, D), dk = Matrix::Zero(T, D), dv = Matrix::Zero(T, D);
    for (Index h = 0; h < H; ++h) {
      const Matrix& P = c.probs[static_cast<std::size_t>(h)];
      const auto dOh = dattn.middleCols(h * hd, hd);
      const Matrix dP = dOh * c.v.middleCols(h * hd, hd).transpose();
      dv.middleCols(h * hd, hd).noalias() += P.transpose() * dOh;
      const Vector row_dot = P.cwiseProduct(dP).rowwise().sum();
      const Matrix dS = P.cwiseProduct(dP.colwise() - row_dot) * inv_sqrt;
      dq.middleCols(h * hd, hd).noalias() += dS * c.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd).noalias() += dS.transpose() * c.q.middleCols(h * hd, hd);
    }

    Matrix dh1 = Matrix::Zero(T, D);
    project_backward(dq, c.h1, W.wq, pair_at(adapter, aidx, li, Projection::Query), scale, c.zq, dh1,
                     gl ? &gl->wq : nullptr, pair_at(ga, aidx, li, Projection::Query));
    project_backward(dk, c.h1, W.wk, pair_at(adapter, aidx, li, Projection::Key), scale, c.zk, dh1,
                     gl ? &gl->wk : nullptr, pair_at(ga, aidx, li, Projection::Key));
    project_backward(dv, c.h1, W.wv, pair_at(adapter, aidx, li, Projection::Value), scale, c.zv, dh1,
                     gl ? &gl->wv : nullptr, pair_at(ga, aidx, li, Projection::Value));

    Matrix dxin = dmid;
    layer_norm_backward(dh1, c.xhat1, c.rstd1, W.ln1_gain, dxin, gl ? &gl->ln1_gain : nullptr,
                        gl ? &gl->ln1_bias : nullptr);
    dx = std::move(dxin);
  }

  if (g) {
    for (Index t = 0; t < T; ++t) {
      g->token_embedding.row(cache.ids[static_cast<std::size_t>(t)]) += dx.row(t);
      g->position_embedding.row(t) += dx.row(t);
    }
  }
}

}  // namespace convrisk::microlm::detail
