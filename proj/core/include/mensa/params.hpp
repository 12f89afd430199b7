#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mensa {

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Named fp64 tensors packed into one flat buffer. Names are unique and
// shapes are fixed once a tensor is added.
class ParamStore {
 public:
  // Returns the flat offset of the new tensor. Throws ContractError on a
  // duplicate name.
  std::size_t add(std::string name, std::vector<std::size_t> shape, double fill = 0.0);

  bool contains(std::string_view name) const;
  const TensorInfo& info(std::string_view name) const;
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  double l2_norm() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<TensorInfo> tensors_;
  std::vector<double> values_;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamOptions options;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step = 0;

  AdamState() = default;
  AdamState(AdamOptions opts, std::size_t num_params)
      : options(opts), first_moment(num_params, 0.0), second_moment(num_params, 0.0) {}
};

// One bias-corrected Adam update. Weight decay is coupled: it is added to
// the gradient before the moment updates.
void adam_step(ParamStore& params, std::span<const double> grads, AdamState& state);

}  // namespace mensa
