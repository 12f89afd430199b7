#include "mensa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mensa/error.hpp"

namespace mensa::ad {

namespace {

[[noreturn]] void domain_failure(const char* what, std::uint32_t node, double arg) {
  throw DomainError(std::string(what) + " at node " + std::to_string(node) +
                    " (argument " + std::to_string(arg) + ")");
}

}  // namespace

double Var::value() const { return graph_->value(index_); }

void Graph::reserve(std::size_t nodes, std::size_t operands) {
  nodes_.reserve(nodes);
  operands_.reserve(operands);
}

std::uint32_t Graph::check(Var v) const {
  if (v.graph_ != this || v.index_ >= nodes_.size()) {
    throw ContractError("variable does not belong to this graph");
  }
  return v.index_;
}

Var Graph::push(Node node) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(node);
  try {
    evaluate(index);
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return Var(this, index);
}

std::uint32_t Graph::append_operands(std::span<const Var> xs) {
  const auto begin = static_cast<std::uint32_t>(operands_.size());
  for (Var x : xs) operands_.push_back(check(x));
  return begin;
}

Var Graph::leaf(double value) {
  Node n;
  n.op = Op::Leaf;
  n.value = value;
  leaves_.push_back(static_cast<std::uint32_t>(nodes_.size()));
  nodes_.push_back(n);
  return Var(this, leaves_.back());
}

Var Graph::constant(double value) {
  Node n;
  n.op = Op::Const;
  n.value = value;
  nodes_.push_back(n);
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::add(Var a, Var b) { return push({Op::Add, check(a), check(b)}); }
Var Graph::sub(Var a, Var b) { return push({Op::Sub, check(a), check(b)}); }
Var Graph::mul(Var a, Var b) { return push({Op::Mul, check(a), check(b)}); }
Var Graph::div(Var a, Var b) { return push({Op::Div, check(a), check(b)}); }
Var Graph::neg(Var a) { return push({Op::Neg, check(a)}); }
Var Graph::exp(Var a) { return push({Op::Exp, check(a)}); }
Var Graph::log(Var a) { return push({Op::Log, check(a)}); }
Var Graph::pow(Var base, Var exponent) { return push({Op::Pow, check(base), check(exponent)}); }
Var Graph::relu6(Var a) { return push({Op::Relu6, check(a)}); }
Var Graph::selu(Var a) { return push({Op::Selu, check(a)}); }

Var Graph::add_const(Var a, double c) {
  Node n{Op::AddConst, check(a)};
  n.c = c;
  return push(n);
}

Var Graph::mul_const(Var a, double c) {
  Node n{Op::MulConst, check(a)};
  n.c = c;
  return push(n);
}

Var Graph::pow(Var base, double exponent) {
  Node n{Op::PowConst, check(base)};
  n.c = exponent;
  return push(n);
}

Var Graph::min_const(Var a, double c) {
  Node n{Op::MinConst, check(a)};
  n.c = c;
  return push(n);
}

Var Graph::dropout(Var a, bool keep, double keep_prob) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ContractError("dropout keep probability must lie in (0, 1]");
  }
  Node n{Op::Dropout, check(a)};
  n.c = keep ? 1.0 / keep_prob : 0.0;
  return push(n);
}

Var Graph::log_sum_exp(std::span<const Var> xs) {
  if (xs.empty()) throw ContractError("log_sum_exp of an empty set");
  Node n{Op::LogSumExp};
  n.begin = append_operands(xs);
  n.count = static_cast<std::uint32_t>(xs.size());
  return push(n);
}

Var Graph::sum(std::span<const Var> xs) {
  Node n{Op::Sum};
  n.begin = append_operands(xs);
  n.count = static_cast<std::uint32_t>(xs.size());
  return push(n);
}

Var Graph::dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw ContractError("dot: operand lengths differ");
  Node n{Op::Dot};
  n.begin = static_cast<std::uint32_t>(operands_.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    operands_.push_back(check(a[k]));
    operands_.push_back(check(b[k]));
  }
  n.count = static_cast<std::uint32_t>(a.size());
  return push(n);
}

Var Graph::dot(std::span<const Var> a, std::span<const double> c) {
  if (a.size() != c.size()) throw ContractError("dot: operand lengths differ");
  Node n{Op::DotConst};
  n.begin = append_operands(a);
  n.a = static_cast<std::uint32_t>(constants_.size());
  constants_.insert(constants_.end(), c.begin(), c.end());
  n.count = static_cast<std::uint32_t>(a.size());
  return push(n);
}

void Graph::evaluate(std::uint32_t index) {
  Node& n = nodes_[index];
  const auto val = [this](std::uint32_t i) { return nodes_[i].value; };
  switch (n.op) {
    case Op::Leaf:
    case Op::Const:
      break;
    case Op::Add:
      n.value = val(n.a) + val(n.b);
      break;
    case Op::Sub:
      n.value = val(n.a) - val(n.b);
      break;
    case Op::Mul:
      n.value = val(n.a) * val(n.b);
      break;
    case Op::Div:
      if (val(n.b) == 0.0) domain_failure("division by zero", index, val(n.b));
      n.value = val(n.a) / val(n.b);
      break;
    case Op::Neg:
      n.value = -val(n.a);
      break;
    case Op::AddConst:
      n.value = val(n.a) + n.c;
      break;
    case Op::MulConst:
    case Op::Dropout:
      n.value = val(n.a) * n.c;
      break;
    case Op::Exp:
      n.value = std::exp(val(n.a));
      break;
    case Op::Log:
      if (!(val(n.a) > 0.0)) domain_failure("log of non-positive argument", index, val(n.a));
      n.value = std::log(val(n.a));
      break;
    case Op::Pow:
      if (!(val(n.a) > 0.0)) domain_failure("power of non-positive base", index, val(n.a));
      n.value = std::pow(val(n.a), val(n.b));
      break;
    case Op::PowConst:
      if (!(val(n.a) > 0.0)) domain_failure("power of non-positive base", index, val(n.a));
      n.value = std::pow(val(n.a), n.c);
      break;
    case Op::Relu6:
      n.value = std::clamp(val(n.a), 0.0, 6.0);
      break;
    case Op::Selu: {
      const double x = val(n.a);
      n.value = x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
      break;
    }
    case Op::MinConst:
      n.value = std::min(val(n.a), n.c);
      break;
    case Op::LogSumExp: {
      double m = -std::numeric_limits<double>::infinity();
      for (std::uint32_t k = 0; k < n.count; ++k) m = std::max(m, val(operands_[n.begin + k]));
      if (std::isinf(m)) {
        n.value = m;
        break;
      }
      double s = 0.0;
      for (std::uint32_t k = 0; k < n.count; ++k) s += std::exp(val(operands_[n.begin + k]) - m);
      n.value = m + std::log(s);
      break;
    }
    case Op::Sum: {
      double s = 0.0;
      for (std::uint32_t k = 0; k < n.count; ++k) s += val(operands_[n.begin + k]);
      n.value = s;
      break;
    }
    case Op::Dot: {
      double s = 0.0;
      for (std::uint32_t k = 0; k < n.count; ++k) {
        s += val(operands_[n.begin + 2 * k]) * val(operands_[n.begin + 2 * k + 1]);
      }
      n.value = s;
      break;
    }
    case Op::DotConst: {
      double s = 0.0;
      for (std::uint32_t k = 0; k < n.count; ++k) {
        s += val(operands_[n.begin + k]) * constants_[n.a + k];
      }
      n.value = s;
      break;
    }
  }
}

void Graph::set_leaf(Var leaf, double value) {
  const auto i = check(leaf);
  if (nodes_[i].op != Op::Leaf) throw ContractError("set_leaf on a non-leaf node");
  nodes_[i].value = value;
}

void Graph::forward(std::span<const double> leaf_values) {
  if (leaf_values.size() != leaves_.size()) {
    throw ContractError("forward: expected " + std::to_string(leaves_.size()) +
                        " leaf values, got " + std::to_string(leaf_values.size()));
  }
  for (std::size_t k = 0; k < leaves_.size(); ++k) nodes_[leaves_[k]].value = leaf_values[k];
  forward();
}

void Graph::forward() {
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) evaluate(i);
}

Gradients Graph::backward(Var loss) const {
  const auto root = check(loss);
  std::vector<double> adj(root + 1, 0.0);
  adj[root] = 1.0;
  const auto val = [this](std::uint32_t i) { return nodes_[i].value; };

  for (std::uint32_t i = root + 1; i-- > 0;) {
    const double g = adj[i];
    if (g == 0.0) continue;
    const Node& n = nodes_[i];
    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add:
        adj[n.a] += g;
        adj[n.b] += g;
        break;
      case Op::Sub:
        adj[n.a] += g;
        adj[n.b] -= g;
        break;
      case Op::Mul:
        adj[n.a] += g * val(n.b);
        adj[n.b] += g * val(n.a);
        break;
      case Op::Div: {
        const double inv = 1.0 / val(n.b);
        adj[n.a] += g * inv;
        adj[n.b] -= g * n.value * inv;
        break;
      }
      case Op::Neg:
        adj[n.a] -= g;
        break;
      case Op::AddConst:
        adj[n.a] += g;
        break;
      case Op::MulConst:
      case Op::Dropout:
        adj[n.a] += g * n.c;
        break;
      case Op::Exp:
        adj[n.a] += g * n.value;
        break;
      case Op::Log:
        adj[n.a] += g / val(n.a);
        break;
      case Op::Pow:
        adj[n.a] += g * val(n.b) * std::pow(val(n.a), val(n.b) - 1.0);
        adj[n.b] += g * n.value * std::log(val(n.a));
        break;
      case Op::PowConst:
        adj[n.a] += g * n.c * std::pow(val(n.a), n.c - 1.0);
        break;
      case Op::Relu6: {
        const double x = val(n.a);
        if (x > 0.0 && x < 6.0) adj[n.a] += g;
        break;
      }
      case Op::Selu: {
        const double x = val(n.a);
        adj[n.a] += g * (x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x));
        break;
      }
      case Op::MinConst:
        if (val(n.a) < n.c) adj[n.a] += g;
        break;
      case Op::LogSumExp:
        if (std::isinf(n.value)) break;
        for (std::uint32_t k = 0; k < n.count; ++k) {
          const auto j = operands_[n.begin + k];
          adj[j] += g * std::exp(val(j) - n.value);
        }
        break;
      case Op::Sum:
        for (std::uint32_t k = 0; k < n.count; ++k) adj[operands_[n.begin + k]] += g;
        break;
      case Op::Dot:
        for (std::uint32_t k = 0; k < n.count; ++k) {
          const auto p = operands_[n.begin + 2 * k];
          const auto q = operands_[n.begin + 2 * k + 1];
          adj[p] += g * val(q);
          adj[q] += g * val(p);
        }
        break;
      case Op::DotConst:
        for (std::uint32_t k = 0; k < n.count; ++k) {
          adj[operands_[n.begin + k]] += g * constants_[n.a + k];
        }
        break;
    }
  }
  return Gradients(std::move(adj));
}

std::vector<double> Graph::leaf_gradient(Var loss) const {
  const Gradients grads = backward(loss);
  const auto adj = grads.adjoints();
  std::vector<double> out(leaves_.size(), 0.0);
  for (std::size_t k = 0; k < leaves_.size(); ++k) {
    if (leaves_[k] < adj.size()) out[k] = adj[leaves_[k]];
  }
  return out;
}

// Free-function surface.

namespace {
Graph& graph_of(Var a, Var b) {
  if (a.graph() == nullptr || a.graph() != b.graph()) {
    throw ContractError("operands belong to different graphs");
  }
  return *a.graph();
}
Graph& graph_of(Var a) {
  if (a.graph() == nullptr) throw ContractError("unbound variable");
  return *a.graph();
}
Graph& graph_of(std::span<const Var> xs) {
  if (xs.empty()) throw ContractError("empty operand list");
  return graph_of(xs.front());
}
}  // namespace

Var operator+(Var a, Var b) { return graph_of(a, b).add(a, b); }
Var operator-(Var a, Var b) { return graph_of(a, b).sub(a, b); }
Var operator*(Var a, Var b) { return graph_of(a, b).mul(a, b); }
Var operator/(Var a, Var b) { return graph_of(a, b).div(a, b); }
Var operator-(Var a) { return graph_of(a).neg(a); }
Var operator+(Var a, double c) { return graph_of(a).add_const(a, c); }
Var operator+(double c, Var a) { return graph_of(a).add_const(a, c); }
Var operator-(Var a, double c) { return graph_of(a).add_const(a, -c); }
Var operator-(double c, Var a) { return graph_of(a).add_const(graph_of(a).neg(a), c); }
Var operator*(Var a, double c) { return graph_of(a).mul_const(a, c); }
Var operator*(double c, Var a) { return graph_of(a).mul_const(a, c); }
Var operator/(Var a, double c) {
  if (c == 0.0) throw DomainError("division by constant zero");
  return graph_of(a).mul_const(a, 1.0 / c);
}
Var operator/(double c, Var a) {
  Graph& g = graph_of(a);
  return g.div(g.constant(c), a);
}

Var exp(Var a) { return graph_of(a).exp(a); }
Var log(Var a) { return graph_of(a).log(a); }
Var pow(Var base, Var exponent) { return graph_of(base, exponent).pow(base, exponent); }
Var pow(Var base, double exponent) { return graph_of(base).pow(base, exponent); }
Var relu6(Var a) { return graph_of(a).relu6(a); }
Var selu(Var a) { return graph_of(a).selu(a); }
Var clamp_max(Var a, double c) { return graph_of(a).min_const(a, c); }
Var log_sum_exp(std::span<const Var> xs) { return graph_of(xs).log_sum_exp(xs); }
Var sum(std::span<const Var> xs) { return graph_of(xs).sum(xs); }
Var dot(std::span<const Var> a, std::span<const Var> b) { return graph_of(a).dot(a, b); }
Var dot(std::span<const Var> a, std::span<const double> c) { return graph_of(a).dot(a, c); }

std::vector<Var> log_softmax(std::span<const Var> logits) {
  const Var lse = log_sum_exp(logits);
  std::vector<Var> out;
  out.reserve(logits.size());
  for (Var z : logits) out.push_back(z - lse);
  return out;
}

std::vector<Var> softmax(std::span<const Var> logits) {
  std::vector<Var> out = log_softmax(logits);
  for (Var& z : out) z = exp(z);
  return out;
}

double relu6(double x) { return std::clamp(x, 0.0, 6.0); }

double selu(double x) {
  return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}

double clamp_max(double x, double c) { return std::min(x, c); }

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("log_sum_exp of an empty set");
  const double m = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& z : out) z -= lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out = log_softmax(logits);
  for (double& z : out) z = std::exp(z);
  return out;
}

double sum(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("dot: operand lengths differ");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

}  // namespace mensa::ad
