#ifndef SELM_AUTOGRAD_H_
#define SELM_AUTOGRAD_H_

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "selm/matrix.h"
#include "selm/parameters.h"

namespace selm {

class Graph;

// Handle to a node on a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }

  const Matrix& value() const;
  std::int64_t rows() const { return value().rows; }
  std::int64_t cols() const { return value().cols; }
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// creation order is a valid topological order for backward().
//
// Forward values and gradients are 64-bit; parameters are read from float32
// ParameterTree storage when bound.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  // Leaf that collects a gradient without being a named parameter.
  Var leaf(Matrix value);
  // Binds a named parameter; repeated calls return the same node. Frozen
  // parameters become constants and never receive gradients.
  Var parameter(const ParameterTree& tree, const std::string& name);

  Var record(Matrix value, std::vector<Var> inputs, BackwardFn backward);

  void backward(Var loss);

  // Gradients of every trainable bound parameter, keyed by name.
  Gradients gradients() const;
  const Matrix& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Internals for op implementations.
  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }
  const Matrix& output_grad(int id) const { return nodes_[id].grad; }
  // Gradient buffer of an input, allocated on first use.
  Matrix& input_grad(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    std::string param_name;
  };

  int add_node(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<std::string, int> bound_params_;
  bool backward_done_ = false;
};

// Scalar helpers shared with test oracles.
double gelu_scalar(double x);
double gelu_derivative(double x);

// Ops. All operands are rank-2; vectors are 1 x n rows.
Var matmul(Var a, Var b);
// x * weight + bias, weight stored [in x out], bias [1 x out].
Var linear(Var x, Var weight, Var bias);
Var add(Var a, Var b);
// Adds a 1 x c row to every row of x.
Var add_row(Var x, Var row);
Var scale(Var x, double s);
Var gelu(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Multi-head scaled dot-product attention over q, k, v of shape T x d.
Var attention(Var q, Var k, Var v, int heads, bool causal);
Var embedding(Var table, std::span<const std::int32_t> ids);
Var concat_rows(Var a, Var b);
Var slice_rows(Var x, std::int64_t begin, std::int64_t end);
Var reshape(Var x, std::int64_t rows, std::int64_t cols);
Var mean_rows(Var x);
Var sum(Var x);
// Mean over masked rows of -log softmax(logits)[target].
Var softmax_cross_entropy(Var logits, std::span<const std::int32_t> targets,
                          const std::vector<bool>& mask);

// Row-wise log-softmax of a plain matrix (no tape).
std::vector<double> log_softmax_row(std::span<const double> logits);

}  // namespace selm

#endif  // SELM_AUTOGRAD_H_
