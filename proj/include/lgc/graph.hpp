#pragma once

#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lgc/sparse.hpp"
#include "lgc/tensor.hpp"

namespace lgc::ad {

class ParameterStore;

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Concat,
  Slice,
  Softplus,
  SoftplusDerivative,
  Relu,
  Abs,
  Square,
  Sqrt,
  Sum,
  Mean,
  L2NormRows,
  ScalarMul,
  GatherRows,
  EdgeScatter,
  SpMM,
  Reshape,
};

const char* op_name(OpKind kind);

// Numerically stable scalar kernels shared by the tape ops and the tape-free
// batch evaluators.
double softplus_stable(double t, double beta);
double sigmoid(double t);

// Directed edge list with explicit self-loops where the caller wants them.
struct EdgeList {
  std::vector<long> src, dst;
  long num_vertices = 0;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Single-use expression tape: values are computed eagerly as nodes are
// appended, backward() runs reverse-mode over the finished tape. A graph is
// confined to one worker; build a fresh one per optimization step.
class Graph {
 public:
  Var constant(Tensor t) { return leaf(std::move(t), false); }
  Var leaf(Tensor t, bool requires_grad);
  // Copies the parameter's current value in; trainable parameters are
  // reported by backward(). Repeat registration returns the same node.
  Var param(const std::string& name, const ParameterStore& store, bool trainable = true);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var elementwise_mul(Var a, Var b);
  Var concat(Var a, Var b, int axis);
  Var slice(Var a, int axis, long start, long len);
  Var softplus(Var a, double beta);
  Var softplus_derivative(Var a, double beta);
  Var relu(Var a);
  Var abs(Var a);
  Var square(Var a);
  Var sqrt(Var a);
  Var sum(Var a);
  Var mean(Var a);
  Var l2_norm_rows(Var a);
  Var scalar_mul(Var a, double c);
  Var gather_rows(Var a, std::shared_ptr<const std::vector<long>> indices);
  Var edge_scatter(Var values, Var alpha, std::shared_ptr<const EdgeList> edges);
  Var spmm(std::shared_ptr<const CsrPair> m, Var x);
  Var reshape(Var a, Shape target);

  struct OpAttrs {
    double scalar = 0;
    int axis = 0;
    long start = 0, len = 0;
    Shape shape;
    std::shared_ptr<const std::vector<long>> indices;
    std::shared_ptr<const EdgeList> edges;
    std::shared_ptr<const CsrPair> sparse;
  };
  // Uniform dispatcher over the op table above; the typed builders are thin
  // wrappers around it.
  Var forward_op(OpKind kind, const std::vector<Var>& inputs, const OpAttrs& attrs);
  Var forward_op(OpKind kind, const std::vector<Var>& inputs) {
    return forward_op(kind, inputs, OpAttrs());
  }

  // Reverse pass from a scalar loss node. Each node is visited exactly once.
  // Returns a gradient for every trainable parameter registered on this
  // graph; parameters the loss does not reach get zeros.
  std::map<std::string, Tensor> backward(Var loss);

  const Tensor& value(Var v) const;
  double scalar_value(Var v) const;
  // Null when no gradient was needed or backward has not run.
  const Tensor* grad(Var v) const;
  long node_count() const { return static_cast<long>(nodes_.size()); }

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    int a = -1, b = -1;
    Tensor val;
    Tensor grad_val;
    bool needs_grad = false;
    bool has_grad = false;
    double scalar = 0;
    int axis = 0;
    long start = 0, len = 0;
    std::shared_ptr<const std::vector<long>> indices;
    std::shared_ptr<const EdgeList> edges;
    std::shared_ptr<const CsrPair> sparse;
  };

  int push(Node n);
  const Node& at(Var v) const;
  void check_input(Var v, const char* op) const;
  void backward_node(int id);

  // Deque keeps value()/grad() references stable while the tape grows.
  std::deque<Node> nodes_;
  std::vector<std::pair<std::string, int>> params_;  // registration order
  std::map<std::string, int> param_ids_;
  bool backward_done_ = false;
};

}  // namespace lgc::ad
