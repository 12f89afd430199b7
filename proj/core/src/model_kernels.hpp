#pragma once

// Forward pass written once over Scalar = double (prediction) or
// Scalar = ad::Var (training, recorded on a graph).

#include <cmath>
#include <span>
#include <type_traits>
#include <vector>

#include "mensa/autodiff.hpp"
#include "mensa/model.hpp"

namespace mensa::detail {

// Largest exponent fed to exp() for (t / scale)^shape.
inline constexpr double kPowerClamp = 700.0;

struct Layout {
  std::size_t d = 0;
  std::size_t hidden = 0;
  std::size_t states = 0;
  std::size_t components = 0;
  bool shape_covariates = true;
  std::size_t shared_weight = 0;  // hidden x d
  std::size_t shared_bias = 0;    // hidden
  std::vector<std::size_t> scale_bias;  // per state: components
  std::vector<std::size_t> shape_bias;  // per state: components
  std::vector<std::size_t> scale_proj;  // per state: components x hidden
  std::vector<std::size_t> shape_proj;  // per state: components x hidden
  std::vector<std::size_t> gate;        // per state: components x hidden

  static Layout of(const MensaModel& model);
};

// Optional training-time dropout on the hidden representation.
struct DropoutMask {
  const std::vector<char>* keep = nullptr;  // one flag per hidden unit
  double keep_prob = 1.0;
};

template <class S>
std::vector<S> hidden_layer(const Layout& L, std::span<const S> p, std::span<const double> x,
                            DropoutMask mask = {}) {
  std::vector<S> h;
  h.reserve(L.hidden);
  for (std::size_t k = 0; k < L.hidden; ++k) {
    S z = ad::dot(p.subspan(L.shared_weight + k * L.d, L.d), x) + p[L.shared_bias + k];
    z = ad::relu6(z);
    if constexpr (std::is_same_v<S, ad::Var>) {
      if (mask.keep != nullptr) z = z.graph()->dropout(z, (*mask.keep)[k] != 0, mask.keep_prob);
    }
    h.push_back(z);
  }
  return h;
}

template <class S>
struct Heads {
  std::vector<S> log_scale;
  std::vector<S> log_shape;
  std::vector<S> log_weight;
};

template <class S>
Heads<S> state_heads(const Layout& L, std::span<const S> p, std::span<const S> h,
                     std::size_t state) {
  Heads<S> out;
  std::vector<S> logits;
  const std::size_t H = L.hidden;
  for (std::size_t c = 0; c < L.components; ++c) {
    out.log_scale.push_back(p[L.scale_bias[state] + c] +
                            ad::selu(ad::dot(p.subspan(L.scale_proj[state] + c * H, H), h)));
    if (L.shape_covariates) {
      out.log_shape.push_back(p[L.shape_bias[state] + c] +
                              ad::selu(ad::dot(p.subspan(L.shape_proj[state] + c * H, H), h)));
    } else {
      out.log_shape.push_back(p[L.shape_bias[state] + c]);
    }
    logits.push_back(ad::dot(p.subspan(L.gate[state] + c * H, H), h));
  }
  out.log_weight = ad::log_softmax(std::span<const S>(logits));
  return out;
}

// Per-component log(t / scale) and the clamped (t / scale)^shape.
template <class S>
void weibull_terms(const Heads<S>& hd, std::size_t c, double log_t, S& log_ratio, S& power) {
  using std::exp;
  log_ratio = log_t - hd.log_scale[c];
  power = exp(ad::clamp_max(exp(hd.log_shape[c]) * log_ratio, kPowerClamp));
}

template <class S>
S mixture_log_pdf(const Heads<S>& hd, double t) {
  using std::exp;
  using std::log;
  const double log_t = std::log(t);
  std::vector<S> terms;
  terms.reserve(hd.log_scale.size());
  for (std::size_t c = 0; c < hd.log_scale.size(); ++c) {
    S log_ratio;
    S power;
    weibull_terms(hd, c, log_t, log_ratio, power);
    const S shape = exp(hd.log_shape[c]);
    const S lf = hd.log_shape[c] - hd.log_scale[c] + (shape - 1.0) * log_ratio - power;
    terms.push_back(hd.log_weight[c] + lf);
  }
  return ad::log_sum_exp(std::span<const S>(terms));
}

template <class S>
S mixture_log_surv(const Heads<S>& hd, double t) {
  const double log_t = std::log(t);
  std::vector<S> terms;
  terms.reserve(hd.log_scale.size());
  for (std::size_t c = 0; c < hd.log_scale.size(); ++c) {
    S log_ratio;
    S power;
    weibull_terms(hd, c, log_t, log_ratio, power);
    terms.push_back(hd.log_weight[c] - power);
  }
  return ad::log_sum_exp(std::span<const S>(terms));
}

// log h = log sum_c pi_c h_c with posterior weights pi_c proportional to
// g_c S_c. Avoids the cancellation of log f - log S when (t / scale)^shape
// is large; exact for a single component.
inline double mixture_log_hazard(const Heads<double>& hd, double t) {
  const double log_t = std::log(t);
  const std::size_t C = hd.log_scale.size();
  std::vector<double> log_post(C), log_h(C);
  for (std::size_t c = 0; c < C; ++c) {
    double log_ratio = 0.0;
    double power = 0.0;
    weibull_terms(hd, c, log_t, log_ratio, power);
    log_post[c] = hd.log_weight[c] - power;
    log_h[c] = hd.log_shape[c] - hd.log_scale[c] + (std::exp(hd.log_shape[c]) - 1.0) * log_ratio;
  }
  const auto norm = ad::log_softmax(std::span<const double>(log_post));
  for (std::size_t c = 0; c < C; ++c) log_h[c] += norm[c];
  return ad::log_sum_exp(std::span<const double>(log_h));
}

}  // namespace mensa::detail
