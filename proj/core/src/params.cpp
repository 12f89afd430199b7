#include "mensa/params.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "mensa/error.hpp"

namespace mensa {

std::size_t ParamStore::add(std::string name, std::vector<std::size_t> shape, double fill) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  TensorInfo t{std::move(name), std::move(shape), values_.size(), n};
  values_.resize(values_.size() + n, fill);
  tensors_.push_back(std::move(t));
  return tensors_.back().offset;
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const TensorInfo& t) { return t.name == name; });
}

const TensorInfo& ParamStore::info(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw ContractError("unknown parameter: " + std::string(name));
}

std::span<double> ParamStore::tensor(std::string_view name) {
  const auto& t = info(name);
  return std::span<double>(values_).subspan(t.offset, t.size);
}

std::span<const double> ParamStore::tensor(std::string_view name) const {
  const auto& t = info(name);
  return std::span<const double>(values_).subspan(t.offset, t.size);
}

double ParamStore::l2_norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.tensors_.size() != b.tensors_.size()) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    if (a.tensors_[i].name != b.tensors_[i].name || a.tensors_[i].shape != b.tensors_[i].shape) {
      return false;
    }
  }
  return a.values_ == b.values_;
}

void adam_step(ParamStore& params, std::span<const double> grads, AdamState& state) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ContractError("adam_step: gradient/moment buffers do not match parameter count");
  }
  const AdamOptions& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);

  auto values = params.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i] + o.weight_decay * values[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    v = o.beta2 * v + (1.0 - o.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    values[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.eps);
  }
}

}  // namespace mensa
