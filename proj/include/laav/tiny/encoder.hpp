#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "laav/backend.hpp"
#include "laav/error.hpp"
#include "laav/random.hpp"

namespace laav::tiny {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn = 128;
  std::size_t max_positions = 192;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Post-LayerNorm transformer encoder with a BERT-style masked-LM head (dense,
/// GELU, LayerNorm, decoder tied to the input embeddings) and an optional
/// linear classification head over the [CLS] position.
///
/// All parameters live in one flat list of matrices so the optimizer,
/// serialization and gradient buffers can treat them uniformly. Gradients are
/// computed by hand; tests check them against central finite differences.
template <class S>
class Encoder {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;
  using Col = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using Params = std::vector<Mat>;

  // Flat parameter layout.
  enum Global : std::size_t { kTokEmb, kPosEmb, kEmbLnG, kEmbLnB, kGlobalCount };
  enum Layer : std::size_t { kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo, kLn1G, kLn1B, kW1, kB1, kW2, kB2, kLn2G, kLn2B, kLayerCount };
  enum Head : std::size_t { kWt, kBt, kLntG, kLntB, kOutBias, kHeadCount };
  enum Cls : std::size_t { kWc, kBc, kClsCount };

  Encoder() = default;

  Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.vocab_size == 0 || cfg.d_model == 0 || cfg.heads == 0 || cfg.d_model % cfg.heads != 0) {
      throw BackendError("encoder: invalid configuration");
    }
    rng::Engine eng(rng::derive_seed(seed, "encoder/init"));
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto f = static_cast<Eigen::Index>(cfg.ffn);
    auto normal = [&](Eigen::Index r, Eigen::Index c) {
      Mat m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(0.02 * rng::normal(eng));
      return m;
    };
    auto zeros = [](Eigen::Index c) { return Mat(Mat::Zero(1, c)); };
    auto ones = [](Eigen::Index c) { return Mat(Mat::Ones(1, c)); };

    params_.push_back(normal(static_cast<Eigen::Index>(cfg.vocab_size), d));
    params_.push_back(normal(static_cast<Eigen::Index>(cfg.max_positions), d));
    params_.push_back(ones(d));
    params_.push_back(zeros(d));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      for (int j = 0; j < 4; ++j) {
        params_.push_back(normal(d, d));
        params_.push_back(zeros(d));
      }
      params_.push_back(ones(d));
      params_.push_back(zeros(d));
      params_.push_back(normal(d, f));
      params_.push_back(zeros(f));
      params_.push_back(normal(f, d));
      params_.push_back(zeros(d));
      params_.push_back(ones(d));
      params_.push_back(zeros(d));
    }
    params_.push_back(normal(d, d));
    params_.push_back(zeros(d));
    params_.push_back(ones(d));
    params_.push_back(zeros(d));
    params_.push_back(zeros(static_cast<Eigen::Index>(cfg.vocab_size)));
  }

  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }
  [[nodiscard]] Params& params() { return params_; }
  [[nodiscard]] const Params& params() const { return params_; }
  [[nodiscard]] std::size_t num_classes() const {
    return has_classifier() ? static_cast<std::size_t>(params_[cls(kBc)].cols()) : 0;
  }
  [[nodiscard]] bool has_classifier() const { return params_.size() == cls(kClsCount); }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
    return n;
  }

  void init_classifier(std::size_t num_classes, std::uint64_t seed) {
    params_.resize(cls(0));
    rng::Engine eng(rng::derive_seed(seed, "encoder/classifier"));
    Mat w(static_cast<Eigen::Index>(cfg_.d_model), static_cast<Eigen::Index>(num_classes));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(0.02 * rng::normal(eng));
    params_.push_back(std::move(w));
    params_.push_back(Mat::Zero(1, static_cast<Eigen::Index>(num_classes)));
  }

  [[nodiscard]] Params zero_grads() const {
    Params g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.push_back(Mat::Zero(p.rows(), p.cols()));
    return g;
  }

  // ---------------------------------------------------------------------
  // Forward pass

  struct NormCache {
    Mat xhat;
    Col inv_std;
  };

  struct LayerCache {
    Mat x_in, q, k, v, ctx, h1, f1, g, out;
    std::vector<Mat> probs;
    NormCache ln1, ln2;
  };

  struct Cache {
    std::vector<TokenId> ids;
    NormCache ln0;
    std::vector<LayerCache> layers;
    Mat hidden;  // final layer output, n x d
  };

  [[nodiscard]] Cache forward(std::span<const TokenId> ids) const {
    if (ids.empty()) throw BackendError("encoder: empty input");
    if (ids.size() > cfg_.max_positions) {
      throw LengthError("encoder: sequence of " + std::to_string(ids.size()) + " tokens exceeds the limit of " +
                        std::to_string(cfg_.max_positions));
    }
    const auto n = static_cast<Eigen::Index>(ids.size());
    const auto d = static_cast<Eigen::Index>(cfg_.d_model);
    Cache c;
    c.ids.assign(ids.begin(), ids.end());
    Mat x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto id = ids[static_cast<std::size_t>(i)];
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) throw BackendError("encoder: token id out of range");
      x.row(i) = params_[kTokEmb].row(id) + params_[kPosEmb].row(i);
    }
    x = layer_norm(x, params_[kEmbLnG], params_[kEmbLnB], c.ln0);

    const auto heads = static_cast<Eigen::Index>(cfg_.heads);
    const auto dh = d / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    c.layers.resize(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      auto& lc = c.layers[l];
      auto P = [&](Layer j) -> const Mat& { return params_[layer(l, j)]; };
      lc.x_in = x;
      lc.q = affine(x, P(kWq), P(kBq));
      lc.k = affine(x, P(kWk), P(kBk));
      lc.v = affine(x, P(kWv), P(kBv));
      lc.ctx.resize(n, d);
      lc.probs.resize(static_cast<std::size_t>(heads));
      for (Eigen::Index h = 0; h < heads; ++h) {
        Mat s = (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose()) * scale;
        softmax_rows_inplace(s);
        lc.ctx.middleCols(h * dh, dh) = s * lc.v.middleCols(h * dh, dh);
        lc.probs[static_cast<std::size_t>(h)] = std::move(s);
      }
      Mat res1 = x + affine(lc.ctx, P(kWo), P(kBo));
      lc.h1 = layer_norm(res1, P(kLn1G), P(kLn1B), lc.ln1);
      lc.f1 = affine(lc.h1, P(kW1), P(kB1));
      lc.g = lc.f1.unaryExpr([](S t) { return gelu(t); });
      Mat res2 = lc.h1 + affine(lc.g, P(kW2), P(kB2));
      lc.out = layer_norm(res2, P(kLn2G), P(kLn2B), lc.ln2);
      x = lc.out;
    }
    c.hidden = std::move(x);
    return c;
  }

  struct HeadCache {
    Row h, t, u;
    NormCache ln;
    Row z;
  };

  /// Masked-LM logits for hidden row `h`.
  [[nodiscard]] Row lm_logits(const Row& h, HeadCache* hc = nullptr) const {
    HeadCache local;
    HeadCache& c = hc ? *hc : local;
    c.h = h;
    c.t = h * params_[head(kWt)] + params_[head(kBt)];
    c.u = c.t.unaryExpr([](S t) { return gelu(t); });
    c.z = layer_norm(Mat(c.u), params_[head(kLntG)], params_[head(kLntB)], c.ln);
    return c.z * params_[kTokEmb].transpose() + params_[head(kOutBias)];
  }

  [[nodiscard]] Row mask_logits(std::span<const TokenId> ids, std::size_t mask_position) const {
    const auto c = forward(ids);
    return lm_logits(c.hidden.row(static_cast<Eigen::Index>(mask_position)));
  }

  [[nodiscard]] Row classifier_logits(std::span<const TokenId> ids) const {
    if (!has_classifier()) throw CapabilityError("encoder: classification head not initialized");
    const auto c = forward(ids);
    return c.hidden.row(0) * params_[cls(kWc)] + params_[cls(kBc)];
  }

  // ---------------------------------------------------------------------
  // Losses with gradients

  /// A masked position and the tokens whose mean log-probability it should
  /// maximize.
  struct MaskTarget {
    std::size_t position = 0;
    std::vector<TokenId> tokens;
  };

  /// Sum over targets of -mean_{t in tokens} log p(t | position). Gradients
  /// are added into `grads`, scaled by `weight`.
  S mask_loss(std::span<const TokenId> ids, std::span<const MaskTarget> targets, Params& grads, S weight = S(1)) const {
    const auto c = forward(ids);
    Mat dhidden = Mat::Zero(c.hidden.rows(), c.hidden.cols());
    S loss = 0;
    for (const auto& tgt : targets) {
      if (tgt.tokens.empty()) throw BackendError("encoder: empty target set");
      HeadCache hc;
      Row logits = lm_logits(c.hidden.row(static_cast<Eigen::Index>(tgt.position)), &hc);
      const S m = logits.maxCoeff();
      Row p = (logits.array() - m).exp();
      const S z = p.sum();
      p /= z;
      const S log_z = m + std::log(z);
      const S inv = S(1) / static_cast<S>(tgt.tokens.size());
      Row dlogits = p;
      for (auto t : tgt.tokens) {
        loss -= inv * (logits(t) - log_z);
        dlogits(t) -= inv;
      }
      dlogits *= weight;
      dhidden.row(static_cast<Eigen::Index>(tgt.position)) += lm_head_backward(hc, dlogits, grads);
    }
    backward(c, dhidden, grads);
    return loss;
  }

  /// Softmax cross-entropy of the classification head for `label`.
  S classifier_loss(std::span<const TokenId> ids, std::size_t label, Params& grads, S weight = S(1)) const {
    if (!has_classifier()) throw CapabilityError("encoder: classification head not initialized");
    const auto c = forward(ids);
    const Row h = c.hidden.row(0);
    Row logits = h * params_[cls(kWc)] + params_[cls(kBc)];
    const S m = logits.maxCoeff();
    Row p = (logits.array() - m).exp();
    const S z = p.sum();
    p /= z;
    const S loss = -(logits(static_cast<Eigen::Index>(label)) - m - std::log(z));
    Row dl = p;
    dl(static_cast<Eigen::Index>(label)) -= S(1);
    dl *= weight;
    grads[cls(kWc)] += h.transpose() * dl;
    grads[cls(kBc)] += dl;
    Mat dhidden = Mat::Zero(c.hidden.rows(), c.hidden.cols());
    dhidden.row(0) = dl * params_[cls(kWc)].transpose();
    backward(c, dhidden, grads);
    return loss;
  }

  [[nodiscard]] static constexpr std::size_t layer(std::size_t l, std::size_t j) {
    return kGlobalCount + kLayerCount * l + j;
  }
  [[nodiscard]] std::size_t head(std::size_t j) const { return layer(cfg_.layers, 0) + j; }
  [[nodiscard]] std::size_t cls(std::size_t j) const { return head(kHeadCount) + j; }

 private:
  static S gelu(S x) {
    constexpr S c = S(0.7978845608028654);
    return S(0.5) * x * (S(1) + std::tanh(c * (x + S(0.044715) * x * x * x)));
  }

  static S gelu_grad(S x) {
    constexpr S c = S(0.7978845608028654);
    const S t = std::tanh(c * (x + S(0.044715) * x * x * x));
    return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * c * (S(1) + S(3) * S(0.044715) * x * x);
  }

  static Mat affine(const Mat& x, const Mat& w, const Mat& b) {
    Mat y = x * w;
    y.rowwise() += b.row(0);
    return y;
  }

  static void softmax_rows_inplace(Mat& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const S m = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - m).exp();
      s.row(r) /= s.row(r).sum();
    }
  }

  static Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, NormCache& nc) {
    constexpr S eps = S(1e-5);
    const auto d = static_cast<S>(x.cols());
    nc.xhat.resize(x.rows(), x.cols());
    nc.inv_std.resize(x.rows());
    Mat y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const S mean = x.row(r).sum() / d;
      const S var = (x.row(r).array() - mean).square().sum() / d;
      const S inv = S(1) / std::sqrt(var + eps);
      nc.inv_std(r) = inv;
      nc.xhat.row(r) = (x.row(r).array() - mean) * inv;
      y.row(r) = nc.xhat.row(r).cwiseProduct(gamma.row(0)) + beta.row(0);
    }
    return y;
  }

  static Mat layer_norm_backward(const Mat& dy, const NormCache& nc, const Mat& gamma, Mat& dgamma, Mat& dbeta) {
    const auto d = static_cast<S>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      dgamma.row(0) += dy.row(r).cwiseProduct(nc.xhat.row(r));
      dbeta.row(0) += dy.row(r);
      const Row dxhat = dy.row(r).cwiseProduct(gamma.row(0));
      const S sum = dxhat.sum();
      const S dot = dxhat.dot(nc.xhat.row(r));
      dx.row(r) = (nc.inv_std(r) / d) * (d * dxhat.array() - sum - nc.xhat.row(r).array() * dot);
    }
    return dx;
  }

  Row lm_head_backward(const HeadCache& hc, const Row& dlogits, Params& g) const {
    const auto& E = params_[kTokEmb];
    g[head(kOutBias)] += dlogits;
    g[kTokEmb] += dlogits.transpose() * hc.z;
    const Mat dz = dlogits * E;
    const Mat du = layer_norm_backward(dz, hc.ln, params_[head(kLntG)], g[head(kLntG)], g[head(kLntB)]);
    const Row dt = du.row(0).cwiseProduct(hc.t.unaryExpr([](S t) { return gelu_grad(t); }));
    g[head(kWt)] += hc.h.transpose() * dt;
    g[head(kBt)] += dt;
    return dt * params_[head(kWt)].transpose();
  }

  void backward(const Cache& c, Mat dx, Params& g) const {
    const auto d = static_cast<Eigen::Index>(cfg_.d_model);
    const auto heads = static_cast<Eigen::Index>(cfg_.heads);
    const auto dh = d / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    for (std::size_t li = cfg_.layers; li-- > 0;) {
      const auto& lc = c.layers[li];
      auto P = [&](Layer j) -> const Mat& { return params_[layer(li, j)]; };
      auto G = [&](Layer j) -> Mat& { return g[layer(li, j)]; };

      const Mat dres2 = layer_norm_backward(dx, lc.ln2, P(kLn2G), G(kLn2G), G(kLn2B));
      G(kW2) += lc.g.transpose() * dres2;
      G(kB2) += dres2.colwise().sum();
      Mat df1 = dres2 * P(kW2).transpose();
      df1.array() *= lc.f1.unaryExpr([](S t) { return gelu_grad(t); }).array();
      G(kW1) += lc.h1.transpose() * df1;
      G(kB1) += df1.colwise().sum();
      const Mat dh1 = dres2 + df1 * P(kW1).transpose();

      const Mat dres1 = layer_norm_backward(dh1, lc.ln1, P(kLn1G), G(kLn1G), G(kLn1B));
      G(kWo) += lc.ctx.transpose() * dres1;
      G(kBo) += dres1.colwise().sum();
      const Mat dctx = dres1 * P(kWo).transpose();

      Mat dq(dctx.rows(), d), dk(dctx.rows(), d), dv(dctx.rows(), d);
      for (Eigen::Index h = 0; h < heads; ++h) {
        const auto& prob = lc.probs[static_cast<std::size_t>(h)];
        const auto dc = dctx.middleCols(h * dh, dh);
        const Mat dp = dc * lc.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh) = prob.transpose() * dc;
        Mat ds = prob.cwiseProduct(dp);
        const Col rows = ds.rowwise().sum();
        ds -= prob.cwiseProduct(rows.replicate(1, prob.cols()));
        ds *= scale;
        dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
      }
      G(kWq) += lc.x_in.transpose() * dq;
      G(kBq) += dq.colwise().sum();
      G(kWk) += lc.x_in.transpose() * dk;
      G(kBk) += dk.colwise().sum();
      G(kWv) += lc.x_in.transpose() * dv;
      G(kBv) += dv.colwise().sum();
      dx = dres1 + dq * P(kWq).transpose() + dk * P(kWk).transpose() + dv * P(kWv).transpose();
    }
    const Mat de = layer_norm_backward(dx, c.ln0, params_[kEmbLnG], g[kEmbLnG], g[kEmbLnB]);
    for (Eigen::Index i = 0; i < de.rows(); ++i) {
      g[kTokEmb].row(c.ids[static_cast<std::size_t>(i)]) += de.row(i);
      g[kPosEmb].row(i) += de.row(i);
    }
  }

  EncoderConfig cfg_;
  Params params_;
};

/// Adam with decoupled weight decay (AdamW when weight_decay > 0).
template <class S>
class Adam {
 public:
  using Params = typename Encoder<S>::Params;

  Adam() = default;
  explicit Adam(const OptimizerSettings& s) : settings_(s) {}

  void step(Params& params, const Params& grads) {
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (const auto& p : params) {
        m_.push_back(Encoder<S>::Mat::Zero(p.rows(), p.cols()));
        v_.push_back(Encoder<S>::Mat::Zero(p.rows(), p.cols()));
      }
      t_ = 0;
    }
    ++t_;
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const auto c1 = static_cast<S>(1.0 - std::pow(b1, static_cast<double>(t_)));
    const auto c2 = static_cast<S>(1.0 - std::pow(b2, static_cast<double>(t_)));
    const auto lr = static_cast<S>(settings_.learning_rate);
    const auto eps = static_cast<S>(settings_.epsilon);
    const auto wd = static_cast<S>(settings_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = static_cast<S>(b1) * m_[i] + static_cast<S>(1.0 - b1) * grads[i];
      v_[i] = static_cast<S>(b2) * v_[i] + static_cast<S>(1.0 - b2) * grads[i].cwiseProduct(grads[i]);
      auto update = ((m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps)).matrix();
      if (wd != S(0)) params[i] -= lr * wd * params[i];
      params[i] -= lr * update;
    }
  }

  [[nodiscard]] const OptimizerSettings& settings() const { return settings_; }

 private:
  OptimizerSettings settings_;
  Params m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace laav::tiny
