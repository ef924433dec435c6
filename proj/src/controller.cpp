#include "m3dm/controller.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "m3dm/errors.hpp"
#include "m3dm/random.hpp"

namespace m3dm {
namespace {

constexpr std::uint64_t kOrderSalt = 0x6f72646572ULL;
constexpr std::uint64_t kCoinSalt = 0x636f696eULL;

MatrixXd stack_input(const MatrixXd& P, const VectorXd& s) {
  MatrixXd X(P.rows() + 1, P.cols());
  X.topRows(P.rows()) = P;
  X.row(P.rows()) = s.transpose();
  return X;
}

MatrixXd run(const std::vector<DenseLayer>& layers, MatrixXd x) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixXd z = layers[l].W * x;
    z.colwise() += layers[l].b;
    x = l + 1 < layers.size() ? MatrixXd(z.cwiseMax(0.0)) : std::move(z);
  }
  return x;
}

void check_batch(const Controller& ctrl, const MatrixXd& p_src, const VectorXd& s_trg, const MatrixXd& p_trg) {
  if (p_src.cols() == 0) throw ContractError("loss needs a nonempty batch");
  if (p_src.rows() != ctrl.k() || p_trg.rows() != ctrl.k() || p_trg.cols() != p_src.cols() ||
      s_trg.size() != p_src.cols())
    throw ContractError("controller batch has inconsistent dimensions");
}


template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Layer weights in working precision; also used for gradients and moments.
template <typename T>
struct Net {
  std::vector<Mat<T>> W;
  std::vector<Vec<T>> b;

  static Net from(const Controller& c) {
    Net n;
    for (const auto& l : c.layers()) {
      n.W.push_back(l.W.cast<T>());
      n.b.push_back(l.b.cast<T>());
    }
    return n;
  }
  void zero() {
    for (auto& w : W) w.setZero();
    for (auto& v : b) v.setZero();
  }
  std::vector<DenseLayer> layers() const {
    std::vector<DenseLayer> out;
    for (std::size_t l = 0; l < W.size(); ++l) out.push_back({W[l].template cast<double>(), b[l].template cast<double>()});
    return out;
  }
};

// Mean batch loss; writes d(loss)/d(weights) into `grad` (same shapes as net).
template <typename T>
double batch_gradient(const Net<T>& net, bool residual, const Mat<T>& p_src, const Vec<T>& s_trg,
                      const Mat<T>& p_trg, LossKind kind, Net<T>& grad) {
  const std::size_t L = net.W.size();
  const Eigen::Index n = p_src.cols();
  std::vector<Mat<T>> post(L);
  post[0].resize(p_src.rows() + 1, n);
  post[0].topRows(p_src.rows()) = p_src;
  post[0].row(p_src.rows()) = s_trg.transpose();
  Mat<T> z;
  for (std::size_t l = 0; l < L; ++l) {
    z.noalias() = net.W[l] * post[l];
    z.colwise() += net.b[l];
    if (l + 1 < L) post[l + 1] = z.cwiseMax(T(0));
  }
  Mat<T> delta = z - p_trg;
  if (residual) delta += p_src;
  const T inv_b = T(1) / static_cast<T>(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T nrm = delta.col(i).norm();
    if (kind == LossKind::norm) {
      total += static_cast<double>(nrm);
      if (nrm > T(0))
        delta.col(i) *= inv_b / nrm;
      else
        delta.col(i).setZero();
    } else {
      total += static_cast<double>(nrm) * static_cast<double>(nrm);
      delta.col(i) *= T(2) * inv_b;
    }
  }
  for (std::size_t l = L; l-- > 0;) {
    grad.W[l].noalias() = delta * post[l].transpose();
    grad.b[l] = delta.rowwise().sum();
    if (l > 0) {
      Mat<T> back = net.W[l].transpose() * delta;
      delta = back.cwiseProduct((post[l].array() > T(0)).template cast<T>().matrix());
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace

const char* to_string(LossKind k) { return k == LossKind::norm ? "norm" : "squared"; }

Controller::Controller(int k, std::vector<int> hidden, bool residual, std::string attribute, std::uint64_t seed)
    : residual_(residual), attribute_(std::move(attribute)) {
  if (k < 1) throw ContractError("controller parameter dimension must be positive");
  std::vector<int> dims{k + 1};
  for (int h : hidden) {
    if (h < 1) throw ContractError("hidden width must be positive");
    dims.push_back(h);
  }
  dims.push_back(k);
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer{MatrixXd::Zero(dims[l + 1], dims[l]), VectorXd::Zero(dims[l + 1])};
    if (l + 2 < dims.size()) {
      const double bound = std::sqrt(6.0 / dims[l]);
      std::uniform_real_distribution<double> init(-bound, bound);
      for (Eigen::Index i = 0; i < layer.W.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.W.cols(); ++j) layer.W(i, j) = init(rng);
    }
    layers_.push_back(std::move(layer));
  }
}

Controller::Controller(std::vector<DenseLayer> layers, bool residual, std::string attribute)
    : layers_(std::move(layers)), residual_(residual), attribute_(std::move(attribute)) {
  if (layers_.empty()) throw ContractError("controller needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].b.size() != layers_[l].W.rows()) throw ContractError("layer bias size mismatch");
    if (l > 0 && layers_[l].W.cols() != layers_[l - 1].W.rows()) throw ContractError("layer shapes do not chain");
    if (!layers_[l].W.allFinite() || !layers_[l].b.allFinite()) throw NumericalError("non-finite controller weights");
  }
  if (layers_.front().W.cols() != layers_.back().W.rows() + 1)
    throw ContractError("controller input must be k+1 for output dimension k");
}

std::vector<int> Controller::layer_dims() const {
  std::vector<int> dims;
  if (layers_.empty()) return dims;
  dims.push_back(static_cast<int>(layers_.front().W.cols()));
  for (const auto& l : layers_) dims.push_back(static_cast<int>(l.W.rows()));
  return dims;
}

VectorXd Controller::forward(const VectorXd& p, double s_trg) const {
  if (p.size() != k()) throw ContractError("controller input has dimension " + std::to_string(p.size()) +
                                           ", expected " + std::to_string(k()));
  if (!p.allFinite() || !std::isfinite(s_trg)) throw NumericalError("non-finite controller input");
  VectorXd s(1);
  s[0] = s_trg;
  return forward_batch(p, s).col(0);
}

MatrixXd Controller::forward_batch(const MatrixXd& P, const VectorXd& s) const {
  if (P.rows() != k() || s.size() != P.cols()) throw ContractError("controller batch has inconsistent dimensions");
  if (!P.allFinite() || !s.allFinite()) throw NumericalError("non-finite controller input");
  MatrixXd out = run(layers_, stack_input(P, s));
  if (residual_) out += P;
  return out;
}

Eigen::Index Controller::n_parameters() const {
  Eigen::Index n = 0;
  for (const auto& l : layers_) n += l.W.size() + l.b.size();
  return n;
}

VectorXd Controller::parameters() const {
  VectorXd theta(n_parameters());
  Eigen::Index o = 0;
  for (const auto& l : layers_) {
    theta.segment(o, l.W.size()) = l.W.reshaped();
    o += l.W.size();
    theta.segment(o, l.b.size()) = l.b;
    o += l.b.size();
  }
  return theta;
}

void Controller::set_parameters(const VectorXd& theta) {
  if (theta.size() != n_parameters()) throw ContractError("controller parameter vector has wrong length");
  Eigen::Index o = 0;
  for (auto& l : layers_) {
    l.W.reshaped() = theta.segment(o, l.W.size());
    o += l.W.size();
    l.b = theta.segment(o, l.b.size());
    o += l.b.size();
  }
}

double loss(const Controller& ctrl, const MatrixXd& p_src, const VectorXd& s_trg, const MatrixXd& p_trg,
            LossKind kind) {
  check_batch(ctrl, p_src, s_trg, p_trg);
  const MatrixXd err = ctrl.forward_batch(p_src, s_trg) - p_trg;
  const VectorXd sq = err.colwise().squaredNorm().transpose();
  return kind == LossKind::norm ? sq.cwiseSqrt().mean() : sq.mean();
}

LossGradient loss_and_gradient(const Controller& ctrl, const MatrixXd& p_src, const VectorXd& s_trg,
                               const MatrixXd& p_trg, LossKind kind) {
  check_batch(ctrl, p_src, s_trg, p_trg);
  Net<double> net = Net<double>::from(ctrl);
  Net<double> grad = net;
  LossGradient lg;
  lg.loss = batch_gradient(net, ctrl.residual(), p_src, s_trg, p_trg, kind, grad);
  lg.grad.resize(ctrl.n_parameters());
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < grad.W.size(); ++l) {
    lg.grad.segment(o, grad.W[l].size()) = grad.W[l].reshaped();
    o += grad.W[l].size();
    lg.grad.segment(o, grad.b[l].size()) = grad.b[l];
    o += grad.b[l].size();
  }
  return lg;
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || hidden < 1 || hidden_layers < 1)
    throw ContractError("epochs, batch_size, hidden and hidden_layers must be positive");
  if (!(learning_rate > 0.0) || !(epsilon > 0.0)) throw ContractError("learning_rate and epsilon must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw ContractError("moment decay constants must lie in (0, 1)");
  if (weight_decay < 0.0) throw ContractError("weight_decay must be non-negative");
  if (!(swap_probability >= 0.0 && swap_probability <= 1.0))
    throw ContractError("swap_probability must lie in [0, 1]");
}

bool swap_coin(std::uint64_t seed, int epoch, std::uint64_t sample_id, double swap_probability) {
  return unit_interval(mix64(seed ^ kCoinSalt, static_cast<std::uint64_t>(epoch), sample_id)) < swap_probability;
}

TrainResult train(std::span<const PairedSample> samples, const std::string& attribute, const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw ContractError("training set is empty");
  const int k = static_cast<int>(samples.front().p_pos.size());
  Controller init(k, std::vector<int>(static_cast<std::size_t>(cfg.hidden_layers), cfg.hidden), cfg.residual,
                  attribute, mix64(cfg.seed, 0x696e6974ULL));
  return train(std::move(init), samples, cfg);
}

namespace {

template <typename T>
TrainResult train_impl(Controller ctrl, std::span<const PairedSample> samples, const TrainConfig& cfg) {
  const Eigen::Index k = ctrl.k();

  // Canonical order by id so the input order of `samples` is irrelevant.
  std::vector<std::size_t> by_id(samples.size());
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return samples[a].id < samples[b].id; });

  Net<T> net = Net<T>::from(ctrl);
  Net<T> grad = net, m1 = net, m2 = net;
  grad.zero();
  m1.zero();
  m2.zero();
  const T lr = static_cast<T>(cfg.learning_rate), b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T eps = static_cast<T>(cfg.epsilon), decay = static_cast<T>(1.0 - cfg.learning_rate * cfg.weight_decay);
  long step = 0;
  TrainResult result;
  std::vector<std::pair<std::uint64_t, std::size_t>> order(samples.size());
  const Eigen::Index B = cfg.batch_size;
  Mat<T> P(k, B), Q(k, B);
  Vec<T> S(B);

  auto adam = [&](auto& w, auto& g, auto& a, auto& v, T c1, T c2) {
    a = b1 * a + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseAbs2();
    w *= decay;
    w.array() -= lr * (a.array() * c1) / ((v.array() * c2).sqrt() + eps);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < by_id.size(); ++i) {
      const std::size_t idx = by_id[i];
      order[i] = {mix64(cfg.seed ^ kOrderSalt, static_cast<std::uint64_t>(epoch), samples[idx].id), idx};
    }
    std::sort(order.begin(), order.end());

    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(B)) {
      const Eigen::Index nb = static_cast<Eigen::Index>(std::min<std::size_t>(B, order.size() - start));
      if (P.cols() != nb) {
        P.resize(k, nb);
        Q.resize(k, nb);
        S.resize(nb);
      }
      for (Eigen::Index j = 0; j < nb; ++j) {
        const auto& s = samples[order[start + static_cast<std::size_t>(j)].second];
        if (swap_coin(cfg.seed, epoch, s.id, cfg.swap_probability)) {
          P.col(j) = s.p_pos.cast<T>();
          S[j] = static_cast<T>(s.s_neg);
          Q.col(j) = s.p_neg.cast<T>();
        } else {
          P.col(j) = s.p_neg.cast<T>();
          S[j] = static_cast<T>(s.s_pos);
          Q.col(j) = s.p_pos.cast<T>();
        }
      }
      const double batch_loss = batch_gradient(net, ctrl.residual(), P, S, Q, cfg.loss, grad);
      bool finite = std::isfinite(batch_loss);
      for (std::size_t l = 0; finite && l < grad.W.size(); ++l)
        finite = grad.W[l].allFinite() && grad.b[l].allFinite();
      if (!finite) throw NumericalError("training diverged at epoch " + std::to_string(epoch + 1));
      epoch_total += batch_loss * static_cast<double>(nb);

      ++step;
      const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(step))));
      const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(step))));
      for (std::size_t l = 0; l < net.W.size(); ++l) {
        adam(net.W[l], grad.W[l], m1.W[l], m2.W[l], c1, c2);
        adam(net.b[l], grad.b[l], m1.b[l], m2.b[l], c1, c2);
      }
    }
    const double mean_loss = epoch_total / static_cast<double>(order.size());
    if (!std::isfinite(mean_loss)) throw NumericalError("training diverged at epoch " + std::to_string(epoch + 1));
    result.loss_history.push_back(mean_loss);
  }
  result.controller = Controller(net.layers(), ctrl.residual(), ctrl.attribute());
  return result;
}

}  // namespace

TrainResult train(Controller ctrl, std::span<const PairedSample> samples, const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw ContractError("training set is empty");
  for (const auto& s : samples)
    if (s.p_pos.size() != ctrl.k() || s.p_neg.size() != ctrl.k()) throw ContractError("training pair dimension mismatch");
  if (cfg.single_precision) return train_impl<float>(std::move(ctrl), samples, cfg);
  return train_impl<double>(std::move(ctrl), samples, cfg);
}

}  // namespace m3dm
