#pragma once

// Stacked LSTM with a per-step sigmoid output, trained by BPTT on masked
// binary cross-entropy with RMSProp and a plateau learning-rate schedule.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hfnc/common.hpp"

namespace hfnc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Hyperparameters

struct TrainHyper {
  std::size_t batch_size = 12;
  double initial_lr = 9.6e-4;
  std::size_t patience = 10;
  double reduce_rate = 0.9;
  std::size_t max_reductions = 8;
  double dropout = 0.35;
  double recurrent_dropout = 0.2;
  double l2 = 1e-4;
  std::vector<std::size_t> hidden_sizes{128, 256, 128};
  double rmsprop_rho = 0.9;
  double rmsprop_eps = 1e-7;
  double forget_bias = 1.0;
  std::size_t max_epochs = 200;
  bool freeze_transferred = false;

  friend bool operator==(const TrainHyper&, const TrainHyper&) = default;
};

inline constexpr double kProbClamp = 1e-7;

// ---------------------------------------------------------------------------
// LSTMStack: all parameters live in one flat vector so the optimizer,
// checkpoints and gradient checks treat them uniformly.

struct LayerLayout {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t w_off = 0;  // 4H x in, column-major; gate rows i, f, g, o
  std::size_t u_off = 0;  // 4H x H
  std::size_t b_off = 0;  // 4H

  std::size_t begin() const { return w_off; }
  std::size_t end() const { return b_off + 4 * hidden; }
};

class LSTMStack {
 public:
  LSTMStack() = default;

  LSTMStack(std::size_t input_dim, std::vector<std::size_t> hidden_sizes) : input_dim_(input_dim) {
    if (input_dim == 0 || hidden_sizes.empty()) fail("LSTMStack: empty dimensions");
    std::size_t off = 0;
    std::size_t in = input_dim;
    for (std::size_t h : hidden_sizes) {
      if (h == 0) fail("LSTMStack: hidden size must be positive");
      LayerLayout l;
      l.in = in;
      l.hidden = h;
      l.w_off = off;
      off += 4 * h * in;
      l.u_off = off;
      off += 4 * h * h;
      l.b_off = off;
      off += 4 * h;
      layers_.push_back(l);
      in = h;
    }
    out_w_off_ = off;
    off += in;
    out_b_off_ = off;
    off += 1;
    params_ = VectorXd::Zero(static_cast<Eigen::Index>(off));
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t num_layers() const { return layers_.size(); }
  const LayerLayout& layer(std::size_t l) const { return layers_[l]; }
  std::vector<std::size_t> hidden_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& l : layers_) out.push_back(l.hidden);
    return out;
  }
  std::size_t top_hidden() const { return layers_.back().hidden; }
  std::size_t out_w_off() const { return out_w_off_; }
  std::size_t out_b_off() const { return out_b_off_; }
  std::size_t size() const { return static_cast<std::size_t>(params_.size()); }

  VectorXd& params() { return params_; }
  const VectorXd& params() const { return params_; }

  /// Parameter slice of one layer (W, U and b, contiguous).
  std::span<const double> layer_block(std::size_t l) const {
    const auto& L = layers_.at(l);
    return {params_.data() + L.begin(), L.end() - L.begin()};
  }
  std::span<double> layer_block(std::size_t l) {
    const auto& L = layers_.at(l);
    return {params_.data() + L.begin(), L.end() - L.begin()};
  }

  /// 1 for weight entries, 0 for biases: the L2 penalty applies to weights.
  VectorXd weight_mask() const {
    VectorXd m = VectorXd::Ones(params_.size());
    for (const auto& l : layers_) m.segment(static_cast<Eigen::Index>(l.b_off), static_cast<Eigen::Index>(4 * l.hidden)).setZero();
    m(static_cast<Eigen::Index>(out_b_off_)) = 0.0;
    return m;
  }

  bool same_shape(const LSTMStack& o) const {
    if (input_dim_ != o.input_dim_ || layers_.size() != o.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].in != o.layers_[i].in || layers_[i].hidden != o.layers_[i].hidden) return false;
    }
    return true;
  }

  bool all_finite() const { return params_.allFinite(); }

 private:
  std::size_t input_dim_ = 0;
  std::vector<LayerLayout> layers_;
  std::size_t out_w_off_ = 0;
  std::size_t out_b_off_ = 0;
  VectorXd params_;
};

namespace detail {

using ConstMap = Eigen::Map<const MatrixXd>;
using MutMap = Eigen::Map<MatrixXd>;

inline ConstMap W(const VectorXd& p, const LayerLayout& l) {
  return ConstMap(p.data() + l.w_off, static_cast<Eigen::Index>(4 * l.hidden), static_cast<Eigen::Index>(l.in));
}
inline ConstMap U(const VectorXd& p, const LayerLayout& l) {
  return ConstMap(p.data() + l.u_off, static_cast<Eigen::Index>(4 * l.hidden), static_cast<Eigen::Index>(l.hidden));
}
inline Eigen::Map<const VectorXd> B(const VectorXd& p, const LayerLayout& l) {
  return Eigen::Map<const VectorXd>(p.data() + l.b_off, static_cast<Eigen::Index>(4 * l.hidden));
}
inline MutMap W(VectorXd& p, const LayerLayout& l) {
  return MutMap(p.data() + l.w_off, static_cast<Eigen::Index>(4 * l.hidden), static_cast<Eigen::Index>(l.in));
}
inline MutMap U(VectorXd& p, const LayerLayout& l) {
  return MutMap(p.data() + l.u_off, static_cast<Eigen::Index>(4 * l.hidden), static_cast<Eigen::Index>(l.hidden));
}
inline Eigen::Map<VectorXd> B(VectorXd& p, const LayerLayout& l) {
  return Eigen::Map<VectorXd>(p.data() + l.b_off, static_cast<Eigen::Index>(4 * l.hidden));
}

}  // namespace detail

/// Scaled-uniform init: U(-1/sqrt(H), 1/sqrt(H)) for every weight, zero
/// biases except the forget gate.
inline LSTMStack init_params(std::uint64_t seed, std::size_t input_dim, const std::vector<std::size_t>& hidden_sizes,
                             double forget_bias = 1.0) {
  LSTMStack s(input_dim, hidden_sizes);
  Rng rng(mix_seed({seed, 0x11A5ULL}));
  VectorXd& p = s.params();
  for (std::size_t li = 0; li < s.num_layers(); ++li) {
    const auto& l = s.layer(li);
    const double a = 1.0 / std::sqrt(static_cast<double>(l.hidden));
    for (std::size_t i = l.w_off; i < l.b_off; ++i) p(static_cast<Eigen::Index>(i)) = a * (2.0 * uniform01(rng) - 1.0);
    auto b = detail::B(p, l);
    b.setZero();
    b.segment(static_cast<Eigen::Index>(l.hidden), static_cast<Eigen::Index>(l.hidden)).setConstant(forget_bias);
  }
  const double a = 1.0 / std::sqrt(static_cast<double>(s.top_hidden()));
  for (std::size_t i = s.out_w_off(); i < s.out_b_off(); ++i) p(static_cast<Eigen::Index>(i)) = a * (2.0 * uniform01(rng) - 1.0);
  p(static_cast<Eigen::Index>(s.out_b_off())) = 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Dropout masks (inverted, variational: one mask per sequence, reused at
// every time step)

struct DropoutMasks {
  std::vector<VectorXd> input;      // per layer, size = layer input dim
  std::vector<VectorXd> recurrent;  // per layer, size = hidden
};

inline VectorXd bernoulli_mask(Rng& rng, std::size_t n, double p) {
  VectorXd m(static_cast<Eigen::Index>(n));
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = uniform01(rng) < p ? 0.0 : keep;
  return m;
}

/// Deterministic in (seed, epoch, sequence_id).
inline DropoutMasks make_dropout_masks(std::uint64_t seed, std::uint64_t epoch, std::uint64_t sequence_id,
                                       const LSTMStack& stack, double p_in, double p_rec) {
  if (!(p_in >= 0 && p_in < 1) || !(p_rec >= 0 && p_rec < 1)) fail("dropout probabilities must be in [0,1)");
  Rng rng(mix_seed({seed, epoch, sequence_id, 0xD120ULL}));
  DropoutMasks m;
  for (std::size_t l = 0; l < stack.num_layers(); ++l) {
    m.input.push_back(bernoulli_mask(rng, stack.layer(l).in, p_in));
    m.recurrent.push_back(bernoulli_mask(rng, stack.layer(l).hidden, p_rec));
  }
  return m;
}

// ---------------------------------------------------------------------------
// forward

struct LayerCache {
  MatrixXd x;      // in x T, masked layer input
  MatrixXd gates;  // 4H x T, activated (i, f, g, o)
  MatrixXd c;      // H x T
  MatrixXd tc;     // H x T, tanh(c)
  MatrixXd h;      // H x T
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::optional<DropoutMasks> masks;
  std::vector<double> probs;
  std::vector<double> logits;
};

/// Runs one sequence; `inputs` is T x input_dim (row per time step). Without
/// masks this is evaluation mode.
template <typename Derived>
ForwardCache forward(const LSTMStack& stack, const Eigen::MatrixBase<Derived>& inputs,
                     const DropoutMasks* masks = nullptr) {
  if (static_cast<std::size_t>(inputs.cols()) != stack.input_dim()) {
    fail("forward: input has ", inputs.cols(), " columns, model expects ", stack.input_dim());
  }
  if (!inputs.allFinite()) fail("forward: non-finite input");
  const Eigen::Index T = inputs.rows();
  const VectorXd& p = stack.params();
  ForwardCache cache;
  if (masks) cache.masks = *masks;
  cache.layers.resize(stack.num_layers());

  MatrixXd below = inputs.transpose();  // in x T
  for (std::size_t li = 0; li < stack.num_layers(); ++li) {
    const LayerLayout& l = stack.layer(li);
    const auto H = static_cast<Eigen::Index>(l.hidden);
    LayerCache& lc = cache.layers[li];
    lc.x = std::move(below);
    if (masks) lc.x.array().colwise() *= masks->input[li].array();

    MatrixXd z = detail::W(p, l) * lc.x;
    z.colwise() += detail::B(p, l);
    lc.gates.resize(4 * H, T);
    lc.c.resize(H, T);
    lc.tc.resize(H, T);
    lc.h.resize(H, T);
    VectorXd h_prev = VectorXd::Zero(H);
    VectorXd c_prev = VectorXd::Zero(H);
    const auto Um = detail::U(p, l);
    VectorXd zt(4 * H);
    for (Eigen::Index t = 0; t < T; ++t) {
      if (masks) {
        zt.noalias() = Um * h_prev.cwiseProduct(masks->recurrent[li]);
      } else {
        zt.noalias() = Um * h_prev;
      }
      zt += z.col(t);
      auto g = lc.gates.col(t);
      for (Eigen::Index k = 0; k < H; ++k) {
        g(k) = sigmoid(zt(k));
        g(H + k) = sigmoid(zt(H + k));
        g(2 * H + k) = std::tanh(zt(2 * H + k));
        g(3 * H + k) = sigmoid(zt(3 * H + k));
      }
      auto c = lc.c.col(t);
      c = g.segment(H, H).cwiseProduct(c_prev) + g.segment(0, H).cwiseProduct(g.segment(2 * H, H));
      lc.tc.col(t) = c.array().tanh();
      lc.h.col(t) = g.segment(3 * H, H).cwiseProduct(lc.tc.col(t));
      h_prev = lc.h.col(t);
      c_prev = c;
    }
    below = lc.h;
  }

  const auto& top = cache.layers.back();
  Eigen::Map<const VectorXd> w_out(p.data() + stack.out_w_off(), static_cast<Eigen::Index>(stack.top_hidden()));
  const double b_out = p(static_cast<Eigen::Index>(stack.out_b_off()));
  VectorXd logits = top.h.transpose() * w_out;
  cache.logits.resize(static_cast<std::size_t>(T));
  cache.probs.resize(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    const double z = logits(t) + b_out;
    cache.logits[static_cast<std::size_t>(t)] = z;
    cache.probs[static_cast<std::size_t>(t)] = sigmoid(z);
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Loss

/// Mean BCE over non-NaN labels, probabilities clamped to [1e-7, 1-1e-7].
inline double bce_masked(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) fail("bce_masked: length mismatch");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!is_label(labels[i])) continue;
    const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    sum -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    ++n;
  }
  if (n == 0) fail("bce_masked: every label is NaN");
  return sum / static_cast<double>(n);
}

inline std::size_t count_labels(std::span<const double> labels) {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](double y) { return is_label(y); }));
}

/// Sum of squared weights (biases excluded).
inline double l2_penalty(const LSTMStack& stack) {
  return stack.params().cwiseProduct(stack.weight_mask()).squaredNorm();
}

// ---------------------------------------------------------------------------
// backward

/// Accumulates into `grad` the gradient of step_weight * sum_t BCE_t over
/// labeled steps. With step_weight = 1/N this is the gradient of the mean
/// masked BCE. Steps whose probability sits on the clamp contribute nothing,
/// matching the clamped loss.
inline void backward(const LSTMStack& stack, const ForwardCache& cache, std::span<const double> labels,
                     double step_weight, VectorXd& grad) {
  const auto T = static_cast<Eigen::Index>(cache.probs.size());
  if (static_cast<Eigen::Index>(labels.size()) != T) fail("backward: label length mismatch");
  if (grad.size() != stack.params().size()) grad = VectorXd::Zero(stack.params().size());
  const VectorXd& p = stack.params();

  VectorXd dlogit = VectorXd::Zero(T);
  Eigen::Index last = -1;
  for (Eigen::Index t = 0; t < T; ++t) {
    const double y = labels[static_cast<std::size_t>(t)];
    if (!is_label(y)) continue;
    const double pr = cache.probs[static_cast<std::size_t>(t)];
    if (pr < kProbClamp || pr > 1.0 - kProbClamp) continue;
    dlogit(t) = (pr - y) * step_weight;
    last = t;
  }
  if (last < 0) return;
  const Eigen::Index Tb = last + 1;  // nothing after the last labeled step matters

  const auto Htop = static_cast<Eigen::Index>(stack.top_hidden());
  Eigen::Map<const VectorXd> w_out(p.data() + stack.out_w_off(), Htop);
  Eigen::Map<VectorXd> g_wout(grad.data() + stack.out_w_off(), Htop);
  g_wout.noalias() += cache.layers.back().h.leftCols(Tb) * dlogit.head(Tb);
  grad(static_cast<Eigen::Index>(stack.out_b_off())) += dlogit.head(Tb).sum();

  MatrixXd dh_above = w_out * dlogit.head(Tb).transpose();  // H x Tb

  for (std::size_t li = stack.num_layers(); li-- > 0;) {
    const LayerLayout& l = stack.layer(li);
    const LayerCache& lc = cache.layers[li];
    const auto H = static_cast<Eigen::Index>(l.hidden);
    const auto Um = detail::U(p, l);
    MatrixXd dz(4 * H, Tb);
    VectorXd dh_next = VectorXd::Zero(H);
    VectorXd dc_next = VectorXd::Zero(H);
    VectorXd dh(H), dc(H);
    for (Eigen::Index t = Tb - 1; t >= 0; --t) {
      auto g = lc.gates.col(t);
      dh = dh_above.col(t) + dh_next;
      const auto o = g.segment(3 * H, H);
      const auto tc = lc.tc.col(t);
      dc = dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix()) + dc_next;
      auto dzt = dz.col(t);
      const auto i = g.segment(0, H);
      const auto f = g.segment(H, H);
      const auto gg = g.segment(2 * H, H);
      for (Eigen::Index k = 0; k < H; ++k) {
        const double c_prev = t > 0 ? lc.c(k, t - 1) : 0.0;
        dzt(k) = dc(k) * gg(k) * i(k) * (1.0 - i(k));
        dzt(H + k) = dc(k) * c_prev * f(k) * (1.0 - f(k));
        dzt(2 * H + k) = dc(k) * i(k) * (1.0 - gg(k) * gg(k));
        dzt(3 * H + k) = dh(k) * tc(k) * o(k) * (1.0 - o(k));
      }
      dc_next = dc.cwiseProduct(f);
      dh_next.noalias() = Um.transpose() * dzt;
      if (cache.masks) dh_next = dh_next.cwiseProduct(cache.masks->recurrent[li]);
    }

    auto gW = detail::W(grad, l);
    auto gU = detail::U(grad, l);
    auto gB = detail::B(grad, l);
    gW.noalias() += dz * lc.x.leftCols(Tb).transpose();
    if (Tb > 1) {
      if (cache.masks) {
        MatrixXd hm = lc.h.leftCols(Tb - 1);
        hm.array().colwise() *= cache.masks->recurrent[li].array();
        gU.noalias() += dz.rightCols(Tb - 1) * hm.transpose();
      } else {
        gU.noalias() += dz.rightCols(Tb - 1) * lc.h.leftCols(Tb - 1).transpose();
      }
    }
    gB += dz.rowwise().sum();

    if (li > 0) {
      dh_above = detail::W(p, l).transpose() * dz;
      if (cache.masks) dh_above.array().colwise() *= cache.masks->input[li].array();
    }
  }
}

struct LossAndGradient {
  double loss = 0;
  VectorXd grad;
};

/// Mean masked BCE of one sequence plus l2 * ||weights||^2, with gradient.
template <typename Derived>
LossAndGradient loss_and_gradient(const LSTMStack& stack, const Eigen::MatrixBase<Derived>& inputs,
                                  std::span<const double> labels, double l2, const DropoutMasks* masks = nullptr) {
  auto cache = forward(stack, inputs, masks);
  LossAndGradient out;
  out.loss = bce_masked(cache.probs, labels) + l2 * l2_penalty(stack);
  out.grad = VectorXd::Zero(stack.params().size());
  backward(stack, cache, labels, 1.0 / static_cast<double>(count_labels(labels)), out.grad);
  out.grad += 2.0 * l2 * stack.params().cwiseProduct(stack.weight_mask());
  return out;
}

// ---------------------------------------------------------------------------
// RMSProp

struct RmsPropState {
  VectorXd mean_square;
  double rho = 0.9;
  double eps = 1e-7;
};

/// s <- rho s + (1-rho) g^2;  theta <- theta - lr g / (sqrt(s) + eps).
/// Entries where `frozen` is nonzero are left untouched.
inline void rmsprop_step(VectorXd& params, const VectorXd& grads, RmsPropState& state, double lr,
                         const VectorXd* frozen = nullptr) {
  if (params.size() != grads.size()) fail("rmsprop_step: shape mismatch");
  if (state.mean_square.size() != params.size()) state.mean_square = VectorXd::Zero(params.size());
  state.mean_square = state.rho * state.mean_square + (1.0 - state.rho) * grads.cwiseAbs2();
  VectorXd step = lr * grads.cwiseQuotient((state.mean_square.cwiseSqrt().array() + state.eps).matrix());
  if (frozen) step = step.cwiseProduct((1.0 - frozen->array()).matrix());
  params -= step;
}

// ---------------------------------------------------------------------------
// Plateau schedule

struct ScheduleState {
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
  std::size_t reductions_used = 0;
  double current_lr = 0;
};

struct ScheduleDecision {
  bool improved = false;  // caller checkpoints
  bool reduced = false;
  bool stop = false;
};

class PlateauSchedule {
 public:
  PlateauSchedule(double initial_lr, std::size_t patience, double reduce_rate, std::size_t max_reductions)
      : initial_lr_(initial_lr), patience_(patience), reduce_rate_(reduce_rate), max_reductions_(max_reductions) {
    if (!(initial_lr > 0) || patience == 0 || !(reduce_rate > 0 && reduce_rate < 1)) {
      fail("PlateauSchedule: invalid parameters");
    }
    state_.current_lr = initial_lr;
  }

  explicit PlateauSchedule(const TrainHyper& h)
      : PlateauSchedule(h.initial_lr, h.patience, h.reduce_rate, h.max_reductions) {}

  const ScheduleState& state() const { return state_; }
  double lr() const { return state_.current_lr; }

  /// Higher metric is better. After `patience` epochs without strict
  /// improvement the rate is multiplied by reduce_rate; once all reductions
  /// are used, the next expiry stops training.
  ScheduleDecision update(double metric) {
    if (!std::isfinite(metric)) fail("schedule_update: metric must be finite");
    ScheduleDecision d;
    if (metric > state_.best_metric) {
      state_.best_metric = metric;
      state_.epochs_since_improvement = 0;
      d.improved = true;
      return d;
    }
    if (++state_.epochs_since_improvement < patience_) return d;
    state_.epochs_since_improvement = 0;
    if (state_.reductions_used < max_reductions_) {
      ++state_.reductions_used;
      state_.current_lr = initial_lr_ * std::pow(reduce_rate_, static_cast<double>(state_.reductions_used));
      d.reduced = true;
    } else {
      d.stop = true;
    }
    return d;
  }

 private:
  double initial_lr_;
  std::size_t patience_;
  double reduce_rate_;
  std::size_t max_reductions_;
  ScheduleState state_;
};

}  // namespace hfnc
