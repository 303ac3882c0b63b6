#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "quadtrack/common.hpp"

namespace quadtrack {

enum class LayerNormPlacement { AfterFirst, AfterSecond };

template <typename Derived>
auto elu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return (x.array() > Scalar(0)).select(x.array(), x.array().expm1()).matrix();
}

/// Closed-form parameter count of the three-layer encoder with one LayerNorm.
inline Eigen::Index mlp_param_count(Eigen::Index input, Eigen::Index width) { return width * (input + 2 * width + 5); }

/// Activations kept for the backward pass; columns are samples.
template <typename Scalar>
struct MlpCache {
  MatrixX<Scalar> x, a1, h1, a2, h2, xhat;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> rstd;
};

/// A dense block inside a flat parameter vector.
struct TensorSlot {
  std::string name;
  Eigen::Index offset;
  Eigen::Index rows;
  Eigen::Index cols;
};

/// Linear -> ELU -> [LN] -> Linear -> ELU -> [LN] -> Linear, with exactly one
/// LayerNorm at the configured slot. All weights live in `params`.
template <typename Scalar>
class Mlp {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;
  static constexpr Scalar kLayerNormEps = Scalar(1e-5);

  Mlp() = default;
  Mlp(Eigen::Index input, Eigen::Index width, LayerNormPlacement ln = LayerNormPlacement::AfterFirst)
      : input_(input), width_(width), ln_(ln) {
    if (input < 1 || width < 1) throw ShapeError("encoder dimensions must be positive");
    const Eigen::Index w = width;
    Eigen::Index off = 0;
    auto add = [&](const char* name, Eigen::Index r, Eigen::Index c) {
      slots_.push_back({name, off, r, c});
      off += r * c;
    };
    add("w1", w, input);
    add("b1", w, 1);
    add("w2", w, w);
    add("b2", w, 1);
    add("w3", w, w);
    add("b3", w, 1);
    add("ln_gamma", w, 1);
    add("ln_beta", w, 1);
    params = Vector::Zero(off);
    block(6).setOnes();
  }

  Eigen::Index input_dim() const { return input_; }
  Eigen::Index width() const { return width_; }
  Eigen::Index param_count() const { return params.size(); }
  LayerNormPlacement layer_norm() const { return ln_; }
  const std::vector<TensorSlot>& slots() const { return slots_; }

  Eigen::Map<Matrix> block(int i) {
    const auto& s = slots_[i];
    return {params.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<const Matrix> block(int i) const {
    const auto& s = slots_[i];
    return {params.data() + s.offset, s.rows, s.cols};
  }

  /// Orthogonal weights with `gain`, zero biases, unit LayerNorm scale.
  template <typename Gen>
  void initialize(Gen& rng, double gain);

  Matrix forward(const Matrix& x, MlpCache<Scalar>* cache = nullptr) const {
    if (x.rows() != input_) throw ShapeError("encoder input has wrong width");
    Matrix a1 = block(0) * x;
    a1.colwise() += block(1).col(0);
    Matrix h1 = elu(a1);
    Matrix xhat;
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> rstd;
    Matrix y1 = ln_ == LayerNormPlacement::AfterFirst ? layer_norm_forward(h1, xhat, rstd) : h1;
    Matrix a2 = block(2) * y1;
    a2.colwise() += block(3).col(0);
    Matrix h2 = elu(a2);
    Matrix y2 = ln_ == LayerNormPlacement::AfterSecond ? layer_norm_forward(h2, xhat, rstd) : h2;
    Matrix out = block(4) * y2;
    out.colwise() += block(5).col(0);
    if (cache) {
      cache->x = x;
      cache->a1 = std::move(a1);
      cache->a2 = std::move(a2);
      cache->xhat = std::move(xhat);
      cache->rstd = std::move(rstd);
      // inputs of layers 2 and 3, after the LayerNorm where it applies
      cache->h1 = std::move(y1);
      cache->h2 = std::move(y2);
    }
    return out;
  }

  /// Adds dL/dparams into `grad` (same layout as params) and returns dL/dx.
  Matrix backward(const MlpCache<Scalar>& c, const Matrix& upstream, Vector& grad) const {
    if (grad.size() != params.size()) throw ShapeError("gradient buffer has wrong size");
    auto g = [&](int i) {
      const auto& s = slots_[i];
      return Eigen::Map<Matrix>(grad.data() + s.offset, s.rows, s.cols);
    };
    // layer 3
    g(4).noalias() += upstream * c.h2.transpose();
    g(5).col(0) += upstream.rowwise().sum();
    Matrix d = block(4).transpose() * upstream;
    if (ln_ == LayerNormPlacement::AfterSecond) d = layer_norm_backward(c, d, g(6), g(7));
    d.array() *= elu_grad(c.a2).array();
    // layer 2
    g(2).noalias() += d * c.h1.transpose();
    g(3).col(0) += d.rowwise().sum();
    d = block(2).transpose() * d;
    if (ln_ == LayerNormPlacement::AfterFirst) d = layer_norm_backward(c, d, g(6), g(7));
    d.array() *= elu_grad(c.a1).array();
    // layer 1
    g(0).noalias() += d * c.x.transpose();
    g(1).col(0) += d.rowwise().sum();
    return block(0).transpose() * d;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out(input_, width_, ln_);
    out.params = params.template cast<Other>();
    return out;
  }

  Vector params;

 private:
  static Matrix elu_grad(const Matrix& a) {
    return (a.array() > Scalar(0)).select(Matrix::Ones(a.rows(), a.cols()).array(), a.array().exp()).matrix();
  }

  Matrix layer_norm_forward(const Matrix& h, Matrix& xhat, Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& rstd) const {
    const Scalar n = Scalar(h.rows());
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = h.colwise().sum() / n;
    xhat = h.rowwise() - mean;
    rstd = ((xhat.array().square().colwise().sum() / n) + kLayerNormEps).rsqrt();
    xhat.array().rowwise() *= rstd.array();
    Matrix y = xhat.array().colwise() * block(6).col(0).array();
    y.colwise() += block(7).col(0);
    return y;
  }

  Matrix layer_norm_backward(const MlpCache<Scalar>& c, const Matrix& dy, Eigen::Map<Matrix> dgamma,
                             Eigen::Map<Matrix> dbeta) const {
    dgamma.col(0) += (dy.array() * c.xhat.array()).rowwise().sum().matrix();
    dbeta.col(0) += dy.rowwise().sum();
    const Scalar n = Scalar(dy.rows());
    Matrix dxhat = dy.array().colwise() * block(6).col(0).array();
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum_d = dxhat.colwise().sum();
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum_dx = (dxhat.array() * c.xhat.array()).colwise().sum();
    Matrix dx = (dxhat * n).rowwise() - sum_d;
    dx -= (c.xhat.array().rowwise() * sum_dx.array()).matrix();
    dx.array().rowwise() *= (c.rstd.array() / n);
    return dx;
  }

  Eigen::Index input_ = 0;
  Eigen::Index width_ = 0;
  LayerNormPlacement ln_ = LayerNormPlacement::AfterFirst;
  std::vector<TensorSlot> slots_;
};

/// Orthogonal rows-or-columns matrix scaled by `gain`.
template <typename Gen>
Eigen::MatrixXd orthogonal_matrix(Eigen::Index rows, Eigen::Index cols, double gain, Gen& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const bool tall = rows >= cols;
  const Eigen::Index r = tall ? rows : cols, c = tall ? cols : rows;
  Eigen::MatrixXd g(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) g(i, j) = n(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  const Eigen::MatrixXd R = qr.matrixQR().topRows(c).template triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < c; ++j) {
    if (R(j, j) < 0) q.col(j) *= -1.0;
  }
  q *= gain;
  return tall ? q : Eigen::MatrixXd(q.transpose());
}

template <typename Scalar>
template <typename Gen>
void Mlp<Scalar>::initialize(Gen& rng, double gain) {
  params.setZero();
  block(0) = orthogonal_matrix(width_, input_, gain, rng).template cast<Scalar>();
  block(2) = orthogonal_matrix(width_, width_, gain, rng).template cast<Scalar>();
  block(4) = orthogonal_matrix(width_, width_, gain, rng).template cast<Scalar>();
  block(6).setOnes();
}

/// Diagonal Gaussian over 4 action dimensions with a state-independent log std.
/// Layout: weight (4 x width), bias (4), log_std (4).
template <typename Scalar>
class GaussianHead {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;
  static constexpr int kActions = 4;
  static constexpr Scalar kMinLogStd = Scalar(-20);
  static constexpr Scalar kMaxLogStd = Scalar(2);

  GaussianHead() = default;
  explicit GaussianHead(Eigen::Index width) : width_(width), params(Vector::Zero(kActions * width + 2 * kActions)) {}

  Eigen::Index width() const { return width_; }
  Eigen::Map<Matrix> weight() { return {params.data(), kActions, width_}; }
  Eigen::Map<const Matrix> weight() const { return {params.data(), kActions, width_}; }
  Eigen::Map<Vector> bias() { return {params.data() + kActions * width_, kActions}; }
  Eigen::Map<const Vector> bias() const { return {params.data() + kActions * width_, kActions}; }
  Eigen::Map<Vector> raw_log_std() { return {params.data() + kActions * width_ + kActions, kActions}; }
  Eigen::Map<const Vector> raw_log_std() const { return {params.data() + kActions * width_ + kActions, kActions}; }

  Vector log_std() const { return raw_log_std().cwiseMax(kMinLogStd).cwiseMin(kMaxLogStd); }

  template <typename Gen>
  void initialize(Gen& rng, double gain, double log_std_init) {
    params.setZero();
    weight() = orthogonal_matrix(kActions, width_, gain, rng).template cast<Scalar>();
    raw_log_std().setConstant(Scalar(log_std_init));
  }

  Matrix mean(const Matrix& latent) const {
    Matrix m = weight() * latent;
    m.colwise() += bias();
    return m;
  }

  /// Per-column log density of `actions` under N(mean, diag(std^2)).
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> log_prob(const Matrix& mean, const Matrix& actions) const {
    const Vector ls = log_std();
    const Vector inv_var = (Scalar(-2) * ls).array().exp();
    const Matrix z = actions - mean;
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> lp =
        Scalar(-0.5) * (z.array().square().colwise() * inv_var.array()).colwise().sum();
    lp.array() -= ls.sum() + Scalar(kActions) * Scalar(0.5) * std::log(Scalar(2) * Scalar(kPi));
    return lp;
  }

  Scalar entropy() const {
    return log_std().sum() + Scalar(kActions) * Scalar(0.5) * (Scalar(1) + std::log(Scalar(2) * Scalar(kPi)));
  }

  template <typename Gen>
  Vector4<Scalar> sample(const Vector4<Scalar>& mean, Gen& rng) const {
    std::normal_distribution<double> n(0.0, 1.0);
    const Vector ls = log_std();
    Vector4<Scalar> a;
    for (int i = 0; i < kActions; ++i) a[i] = mean[i] + std::exp(ls[i]) * Scalar(n(rng));
    return a;
  }

  /// Gradient of sum_i (w_i * log_prob_i) + ent_coef * entropy with respect to
  /// the head parameters and the latent. `dlogp` is the per-sample weight w.
  Matrix backward(const Matrix& latent, const Matrix& mean, const Matrix& actions,
                  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& dlogp, Scalar d_entropy, Vector& grad) const {
    const Vector ls = log_std();
    const Vector inv_var = (Scalar(-2) * ls).array().exp();
    const Matrix z = actions - mean;
    // d logp / d mean = z / var
    Matrix dmean = z.array().colwise() * inv_var.array();
    dmean.array().rowwise() *= dlogp.array();
    Eigen::Map<Matrix> gw(grad.data(), kActions, width_);
    Eigen::Map<Vector> gb(grad.data() + kActions * width_, kActions);
    Eigen::Map<Vector> gls(grad.data() + kActions * width_ + kActions, kActions);
    gw.noalias() += dmean * latent.transpose();
    gb += dmean.rowwise().sum();
    // d logp / d log_std = z^2 / var - 1; d entropy / d log_std = 1
    Matrix dls = (z.array().square().colwise() * inv_var.array()) - Scalar(1);
    dls.array().rowwise() *= dlogp.array();
    Vector d = dls.rowwise().sum();
    d.array() += d_entropy;
    for (int i = 0; i < kActions; ++i) {
      const Scalar raw = raw_log_std()[i];
      if (raw >= kMinLogStd && raw <= kMaxLogStd) gls[i] += d[i];
    }
    return weight().transpose() * dmean;
  }

  template <typename Other>
  GaussianHead<Other> cast() const {
    GaussianHead<Other> out(width_);
    out.params = params.template cast<Other>();
    return out;
  }

 private:
  Eigen::Index width_ = 0;

 public:
  Vector params;
};

/// Scalar value estimate. Layout: weight (1 x width), bias (1).
template <typename Scalar>
class ValueHead {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  ValueHead() = default;
  explicit ValueHead(Eigen::Index width) : width_(width), params(Vector::Zero(width + 1)) {}

  Eigen::Index width() const { return width_; }
  Eigen::Map<Matrix> weight() { return {params.data(), 1, width_}; }
  Eigen::Map<const Matrix> weight() const { return {params.data(), 1, width_}; }
  Scalar& bias() { return params[width_]; }
  Scalar bias() const { return params[width_]; }

  template <typename Gen>
  void initialize(Gen& rng, double gain) {
    params.setZero();
    weight() = orthogonal_matrix(1, width_, gain, rng).template cast<Scalar>();
  }

  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> forward(const Matrix& latent) const {
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> v = weight() * latent;
    v.array() += bias();
    return v;
  }

  Matrix backward(const Matrix& latent, const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& upstream, Vector& grad) const {
    Eigen::Map<Matrix> gw(grad.data(), 1, width_);
    gw.noalias() += upstream * latent.transpose();
    grad[width_] += upstream.sum();
    return weight().transpose() * upstream;
  }

  template <typename Other>
  ValueHead<Other> cast() const {
    ValueHead<Other> out(width_);
    out.params = params.template cast<Other>();
    return out;
  }

 private:
  Eigen::Index width_ = 0;

 public:
  Vector params;
};

/// Adam with bias correction on a flat parameter vector.
template <typename Scalar>
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  VectorX<Scalar> m;
  VectorX<Scalar> v;
  long long t = 0;

  void step(VectorX<Scalar>& params, const VectorX<Scalar>& grad) {
    if (m.size() != params.size()) {
      m = VectorX<Scalar>::Zero(params.size());
      v = VectorX<Scalar>::Zero(params.size());
    }
    ++t;
    m = Scalar(beta1) * m + Scalar(1 - beta1) * grad;
    v = Scalar(beta2) * v + Scalar(1 - beta2) * grad.cwiseAbs2();
    const Scalar c1 = Scalar(1 - std::pow(beta1, double(t)));
    const Scalar c2 = Scalar(1 - std::pow(beta2, double(t)));
    params.array() -= Scalar(lr) * (m.array() / c1) / ((v.array() / c2).sqrt() + Scalar(eps));
  }
};

/// Rescales `grad` in place so its norm is at most `max_norm`; returns the original norm.
template <typename Scalar>
Scalar clip_grad_norm(VectorX<Scalar>& grad, Scalar max_norm) {
  const Scalar norm = grad.norm();
  if (max_norm > 0 && norm > max_norm) grad *= max_norm / (norm + Scalar(1e-12));
  return norm;
}

}  // namespace quadtrack
