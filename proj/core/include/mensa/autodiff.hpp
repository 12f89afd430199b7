#pragma once

// Scalar reverse-mode differentiation on a recorded tape.
//
// A Graph records every operation as a node whose operands precede it, so
// insertion order is a valid topological order. Values are computed eagerly
// when a node is recorded; forward() re-evaluates the whole tape after leaf
// values are rebound. backward() sweeps the tape once in reverse.

#include <cstdint>
#include <span>
#include <vector>

namespace mensa::ad {

enum class Op : std::uint8_t {
  Leaf,
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  AddConst,
  MulConst,
  Exp,
  Log,
  Pow,
  PowConst,
  Relu6,
  Selu,
  MinConst,
  Dropout,
  LogSumExp,
  Sum,
  Dot,
  DotConst,
};

inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

class Graph;

class Var {
 public:
  Var() = default;

  double value() const;
  std::uint32_t index() const { return index_; }
  Graph* graph() const { return graph_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::uint32_t index) : graph_(graph), index_(index) {}

  Graph* graph_ = nullptr;
  std::uint32_t index_ = 0;
};

// Adjoints for every node up to (and including) the loss node.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<double> adjoints) : adjoints_(std::move(adjoints)) {}

  double operator[](Var v) const {
    return v.index() < adjoints_.size() ? adjoints_[v.index()] : 0.0;
  }
  std::span<const double> adjoints() const { return adjoints_; }

 private:
  std::vector<double> adjoints_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void reserve(std::size_t nodes, std::size_t operands = 0);

  Var leaf(double value);
  Var constant(double value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var add_const(Var a, double c);
  Var mul_const(Var a, double c);
  Var exp(Var a);
  Var log(Var a);
  Var pow(Var base, Var exponent);
  Var pow(Var base, double exponent);
  Var relu6(Var a);
  Var selu(Var a);
  Var min_const(Var a, double c);
  // Inverted dropout: keep ? a / keep_prob : 0.
  Var dropout(Var a, bool keep, double keep_prob);
  Var log_sum_exp(std::span<const Var> xs);
  Var sum(std::span<const Var> xs);
  Var dot(std::span<const Var> a, std::span<const Var> b);
  Var dot(std::span<const Var> a, std::span<const double> c);

  std::size_t size() const { return nodes_.size(); }
  std::size_t leaf_count() const { return leaves_.size(); }
  std::span<const std::uint32_t> leaves() const { return leaves_; }
  Op op(std::uint32_t node) const { return nodes_.at(node).op; }
  double value(std::uint32_t node) const { return nodes_.at(node).value; }

  void set_leaf(Var leaf, double value);
  // Rebinds all leaves (in creation order) and re-evaluates the tape.
  void forward(std::span<const double> leaf_values);
  void forward();

  // Throws ContractError when `loss` does not belong to this graph.
  Gradients backward(Var loss) const;
  // Gradient restricted to the leaves, in creation order.
  std::vector<double> leaf_gradient(Var loss) const;

 private:
  struct Node {
    Op op = Op::Leaf;
    std::uint32_t a = 0;      // first operand, or constants_ offset for DotConst
    std::uint32_t b = 0;      // second operand
    std::uint32_t begin = 0;  // operands_ offset for n-ary ops
    std::uint32_t count = 0;  // n-ary operand count
    double c = 0.0;           // scalar constant
    double value = 0.0;
  };

  Var push(Node node);
  void evaluate(std::uint32_t index);
  std::uint32_t check(Var v) const;
  std::uint32_t append_operands(std::span<const Var> xs);

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> operands_;
  std::vector<double> constants_;
  std::vector<std::uint32_t> leaves_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator/(double c, Var a);

Var exp(Var a);
Var log(Var a);
Var pow(Var base, Var exponent);
Var pow(Var base, double exponent);
Var relu6(Var a);
Var selu(Var a);
Var clamp_max(Var a, double c);
Var log_sum_exp(std::span<const Var> xs);
std::vector<Var> softmax(std::span<const Var> logits);
std::vector<Var> log_softmax(std::span<const Var> logits);
Var sum(std::span<const Var> xs);
Var dot(std::span<const Var> a, std::span<const Var> b);
Var dot(std::span<const Var> a, std::span<const double> c);

// Plain-double counterparts so model code can be written once over a
// Scalar template parameter.
double relu6(double x);
double selu(double x);
double clamp_max(double x, double c);
double log_sum_exp(std::span<const double> xs);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
double sum(std::span<const double> xs);
double dot(std::span<const double> a, std::span<const double> b);

inline double value_of(double x) { return x; }
inline double value_of(Var v) { return v.value(); }

}  // namespace mensa::ad
