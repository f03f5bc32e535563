#include "lgc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "lgc/optim.hpp"

namespace lgc::ad {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "elementwise_mul";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Softplus: return "softplus";
    case OpKind::SoftplusDerivative: return "softplus_derivative";
    case OpKind::Relu: return "relu";
    case OpKind::Abs: return "abs";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::L2NormRows: return "l2_norm_rows";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::EdgeScatter: return "edge_scatter";
    case OpKind::SpMM: return "spmm";
    case OpKind::Reshape: return "reshape";
  }
  return "?";
}

Csr csr_from_triplets(long rows, long cols, std::vector<Triplet> triplets) {
  for (const Triplet& t : triplets) {
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
      throw Error("csr_from_triplets: entry (" + std::to_string(t.row) + "," +
                  std::to_string(t.col) + ") outside " + std::to_string(rows) + "x" +
                  std::to_string(cols));
  }
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  Csr m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(static_cast<std::size_t>(rows) + 1, 0);
  for (std::size_t i = 0; i < triplets.size();) {
    std::size_t j = i + 1;
    double v = triplets[i].val;
    while (j < triplets.size() && triplets[j].row == triplets[i].row &&
           triplets[j].col == triplets[i].col) {
      v += triplets[j].val;
      ++j;
    }
    m.col_idx.push_back(triplets[i].col);
    m.vals.push_back(v);
    ++m.row_ptr[static_cast<std::size_t>(triplets[i].row) + 1];
    i = j;
  }
  for (long r = 0; r < rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
  return m;
}

Csr csr_transpose(const Csr& a) {
  Csr t;
  t.rows = a.cols;
  t.cols = a.rows;
  t.row_ptr.assign(static_cast<std::size_t>(a.cols) + 1, 0);
  for (long c : a.col_idx) ++t.row_ptr[c + 1];
  for (long c = 0; c < a.cols; ++c) t.row_ptr[c + 1] += t.row_ptr[c];
  t.col_idx.resize(a.col_idx.size());
  t.vals.resize(a.vals.size());
  std::vector<long> fill(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (long r = 0; r < a.rows; ++r) {
    for (long e = a.row_ptr[r]; e < a.row_ptr[r + 1]; ++e) {
      long slot = fill[a.col_idx[e]]++;
      t.col_idx[slot] = r;
      t.vals[slot] = a.vals[e];
    }
  }
  return t;
}

namespace {

void check_finite(const Tensor& t, OpKind op) {
  for (double v : t.data) {
    if (!std::isfinite(v))
      throw NumericalError(std::string("op '") + op_name(op) + "' produced a non-finite value");
  }
}

void check_rank(const Tensor& t, OpKind op) {
  if (t.shape.empty() || t.shape.size() > 2)
    throw Error(std::string(op_name(op)) + ": tensors must be rank 1 or 2, got rank " +
                std::to_string(t.shape.size()));
  for (long d : t.shape) {
    if (d <= 0)
      throw Error(std::string(op_name(op)) + ": non-positive dimension in " + shape_str(t.shape));
  }
}

// How the second operand of add/sub/mul lines up with the first.
enum class Broadcast { Same, Row, Scalar };

Broadcast classify_broadcast(const Tensor& a, const Tensor& b, OpKind op) {
  if (a.same_shape(b)) return Broadcast::Same;
  if (b.size() == 1) return Broadcast::Scalar;
  if (a.shape.size() == 2 && b.shape.size() == 2 && b.shape[0] == 1 && b.shape[1] == a.shape[1])
    return Broadcast::Row;
  throw Error(std::string(op_name(op)) + ": shapes " + shape_str(a.shape) + " and " +
              shape_str(b.shape) + " do not line up (need equal, [1 x N] row, or scalar)");
}

}  // namespace

double softplus_stable(double t, double beta) {
  const double bt = beta * t;
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(bt))) / beta;
}

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

int Graph::push(Node n) {
  check_finite(n.val, n.op);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Graph::Node& Graph::at(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

void Graph::check_input(Var v, const char* op) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw Error(std::string(op) + ": input var is not part of this graph");
}

Var Graph::leaf(Tensor t, bool requires_grad) {
  check_rank(t, OpKind::Leaf);
  Node n;
  n.op = OpKind::Leaf;
  n.val = std::move(t);
  n.needs_grad = requires_grad;
  return Var{push(std::move(n))};
}

Var Graph::param(const std::string& name, const ParameterStore& store, bool trainable) {
  auto it = param_ids_.find(name);
  if (it != param_ids_.end()) return Var{it->second};
  Var v = leaf(store.value(name), trainable);
  param_ids_[name] = v.id;
  if (trainable) params_.emplace_back(name, v.id);
  return v;
}

Var Graph::forward_op(OpKind kind, const std::vector<Var>& inputs, const OpAttrs& attrs) {
  const char* name = op_name(kind);
  for (Var v : inputs) check_input(v, name);
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      throw Error(std::string(name) + ": expected " + std::to_string(n) + " inputs, got " +
                  std::to_string(inputs.size()));
  };

  Node n;
  n.op = kind;
  if (!inputs.empty()) {
    n.a = inputs[0].id;
    n.needs_grad = at(inputs[0]).needs_grad;
  }
  if (inputs.size() > 1) {
    n.b = inputs[1].id;
    n.needs_grad = n.needs_grad || at(inputs[1]).needs_grad;
  }

  switch (kind) {
    case OpKind::Leaf:
      throw Error("forward_op: leaves are created via leaf()/constant()/param()");

    case OpKind::MatMul: {
      need(2);
      const Tensor& a = at(inputs[0]).val;
      const Tensor& b = at(inputs[1]).val;
      if (a.shape.size() != 2 || b.shape.size() != 2)
        throw Error("matmul: both inputs must be rank 2, got " + shape_str(a.shape) + " and " +
                    shape_str(b.shape));
      if (a.shape[1] != b.shape[0])
        throw Error("matmul: inner dimensions disagree: " + shape_str(a.shape) + " x " +
                    shape_str(b.shape));
      const long M = a.shape[0], K = a.shape[1], N = b.shape[1];
      Tensor c = Tensor::zeros({M, N});
      for (long i = 0; i < M; ++i) {
        const double* ai = a.data.data() + i * K;
        double* ci = c.data.data() + i * N;
        for (long k = 0; k < K; ++k) {
          const double av = ai[k];
          const double* bk = b.data.data() + k * N;
          for (long j = 0; j < N; ++j) ci[j] += av * bk[j];
        }
      }
      n.val = std::move(c);
      break;
    }

    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      need(2);
      const Tensor& a = at(inputs[0]).val;
      const Tensor& b = at(inputs[1]).val;
      check_rank(a, kind);
      check_rank(b, kind);
      const Broadcast bc = classify_broadcast(a, b, kind);
      Tensor out = a;
      const long cols = a.cols();
      for (long i = 0; i < out.size(); ++i) {
        double bv;
        switch (bc) {
          case Broadcast::Same: bv = b[i]; break;
          case Broadcast::Row: bv = b[i % cols]; break;
          default: bv = b[0]; break;
        }
        if (kind == OpKind::Add)
          out[i] += bv;
        else if (kind == OpKind::Sub)
          out[i] -= bv;
        else
          out[i] *= bv;
      }
      n.val = std::move(out);
      break;
    }

    case OpKind::Concat: {
      need(2);
      const Tensor& a = at(inputs[0]).val;
      const Tensor& b = at(inputs[1]).val;
      check_rank(a, kind);
      check_rank(b, kind);
      n.axis = attrs.axis;
      if (attrs.axis == 0 && a.shape.size() == 1 && b.shape.size() == 1) {
        Tensor out = Tensor::zeros({a.shape[0] + b.shape[0]});
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.size());
        n.val = std::move(out);
        break;
      }
      if (a.shape.size() != 2 || b.shape.size() != 2)
        throw Error("concat: inputs must both be rank 2 (or both rank 1 on axis 0), got " +
                    shape_str(a.shape) + " and " + shape_str(b.shape));
      if (attrs.axis == 0) {
        if (a.shape[1] != b.shape[1])
          throw Error("concat axis 0: column counts disagree: " + shape_str(a.shape) + " vs " +
                      shape_str(b.shape));
        Tensor out = Tensor::zeros({a.shape[0] + b.shape[0], a.shape[1]});
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.size());
        n.val = std::move(out);
      } else if (attrs.axis == 1) {
        if (a.shape[0] != b.shape[0])
          throw Error("concat axis 1: row counts disagree: " + shape_str(a.shape) + " vs " +
                      shape_str(b.shape));
        const long M = a.shape[0], Na = a.shape[1], Nb = b.shape[1];
        Tensor out = Tensor::zeros({M, Na + Nb});
        for (long i = 0; i < M; ++i) {
          std::copy_n(a.data.begin() + i * Na, Na, out.data.begin() + i * (Na + Nb));
          std::copy_n(b.data.begin() + i * Nb, Nb, out.data.begin() + i * (Na + Nb) + Na);
        }
        n.val = std::move(out);
      } else {
        throw Error("concat: axis must be 0 or 1");
      }
      break;
    }

    case OpKind::Slice: {
      need(1);
      const Tensor& a = at(inputs[0]).val;
      check_rank(a, kind);
      n.axis = attrs.axis;
      n.start = attrs.start;
      n.len = attrs.len;
      if (attrs.axis != 0 && attrs.axis != 1) throw Error("slice: axis must be 0 or 1");
      if (attrs.axis == 1 && a.shape.size() != 2)
        throw Error("slice axis 1: input must be rank 2, got " + shape_str(a.shape));
      const long dim = a.shape[static_cast<std::size_t>(attrs.axis)];
      if (attrs.start < 0 || attrs.len <= 0 || attrs.start + attrs.len > dim)
        throw Error("slice: range [" + std::to_string(attrs.start) + ", " +
                    std::to_string(attrs.start + attrs.len) + ") outside dimension of size " +
                    std::to_string(dim));
      if (attrs.axis == 0) {
        const long cols = a.cols();
        Shape s = a.shape;
        s[0] = attrs.len;
        Tensor out = Tensor::zeros(s);
        std::copy_n(a.data.begin() + attrs.start * cols, attrs.len * cols, out.data.begin());
        n.val = std::move(out);
      } else {
        const long M = a.shape[0], N = a.shape[1];
        Tensor out = Tensor::zeros({M, attrs.len});
        for (long i = 0; i < M; ++i)
          std::copy_n(a.data.begin() + i * N + attrs.start, attrs.len,
                      out.data.begin() + i * attrs.len);
        n.val = std::move(out);
      }
      break;
    }

    case OpKind::Softplus:
    case OpKind::SoftplusDerivative: {
      need(1);
      const double beta = attrs.scalar;
      if (!(beta > 0)) throw Error(std::string(name) + ": beta must be positive");
      n.scalar = beta;
      Tensor out = at(inputs[0]).val;
      for (double& v : out.data)
        v = kind == OpKind::Softplus ? softplus_stable(v, beta) : sigmoid(beta * v);
      n.val = std::move(out);
      break;
    }

    case OpKind::Relu: {
      need(1);
      Tensor out = at(inputs[0]).val;
      for (double& v : out.data) v = std::max(v, 0.0);
      n.val = std::move(out);
      break;
    }

    case OpKind::Abs: {
      need(1);
      Tensor out = at(inputs[0]).val;
      for (double& v : out.data) v = std::abs(v);
      n.val = std::move(out);
      break;
    }

    case OpKind::Square: {
      need(1);
      Tensor out = at(inputs[0]).val;
      for (double& v : out.data) v *= v;
      n.val = std::move(out);
      break;
    }

    case OpKind::Sqrt: {
      need(1);
      Tensor out = at(inputs[0]).val;
      for (double& v : out.data) {
        if (v < 0) throw NumericalError("sqrt: negative input " + std::to_string(v));
        v = std::sqrt(v);
      }
      n.val = std::move(out);
      break;
    }

    case OpKind::Sum:
    case OpKind::Mean: {
      need(1);
      const Tensor& a = at(inputs[0]).val;
      double s = 0;
      for (double v : a.data) s += v;
      n.val = Tensor::scalar(kind == OpKind::Mean ? s / static_cast<double>(a.size()) : s);
      break;
    }

    case OpKind::L2NormRows: {
      need(1);
      const Tensor& a = at(inputs[0]).val;
      if (a.shape.size() != 2)
        throw Error("l2_norm_rows: input must be rank 2, got " + shape_str(a.shape));
      const long M = a.shape[0], N = a.shape[1];
      Tensor out = Tensor::zeros({M, 1});
      for (long i = 0; i < M; ++i) {
        double s = 0;
        for (long j = 0; j < N; ++j) s += a(i, j) * a(i, j);
        out[i] = std::sqrt(s);
      }
      n.val = std::move(out);
      break;
    }

    case OpKind::ScalarMul: {
      need(1);
      n.scalar = attrs.scalar;
      Tensor out = at(inputs[0]).val;
      for (double& v : out.data) v *= attrs.scalar;
      n.val = std::move(out);
      break;
    }

    case OpKind::GatherRows: {
      need(1);
      if (!attrs.indices) throw Error("gather_rows: missing index list");
      const Tensor& a = at(inputs[0]).val;
      check_rank(a, kind);
      n.indices = attrs.indices;
      const long M = a.rows(), N = a.cols();
      const long K = static_cast<long>(attrs.indices->size());
      if (K == 0) throw Error("gather_rows: empty index list");
      for (long idx : *attrs.indices) {
        if (idx < 0 || idx >= M)
          throw Error("gather_rows: index " + std::to_string(idx) + " outside " +
                      std::to_string(M) + " rows");
      }
      Shape s = a.shape;
      s[0] = K;
      Tensor out = Tensor::zeros(s);
      for (long i = 0; i < K; ++i)
        std::copy_n(a.data.begin() + (*attrs.indices)[i] * N, N, out.data.begin() + i * N);
      n.val = std::move(out);
      break;
    }

    case OpKind::EdgeScatter: {
      need(2);
      if (!attrs.edges) throw Error("edge_scatter: missing edge list");
      const Tensor& vals = at(inputs[0]).val;
      const Tensor& alpha = at(inputs[1]).val;
      if (vals.shape.size() != 2)
        throw Error("edge_scatter: values must be rank 2, got " + shape_str(vals.shape));
      const EdgeList& e = *attrs.edges;
      const long E = static_cast<long>(e.src.size());
      if (static_cast<long>(e.dst.size()) != E)
        throw Error("edge_scatter: src/dst length mismatch");
      if (vals.shape[0] != e.num_vertices)
        throw Error("edge_scatter: values have " + std::to_string(vals.shape[0]) +
                    " rows but the edge list covers " + std::to_string(e.num_vertices) +
                    " vertices");
      if (alpha.size() != E)
        throw Error("edge_scatter: " + std::to_string(alpha.size()) + " coefficients for " +
                    std::to_string(E) + " edges");
      for (long i = 0; i < E; ++i) {
        if (e.src[i] < 0 || e.src[i] >= e.num_vertices || e.dst[i] < 0 ||
            e.dst[i] >= e.num_vertices)
          throw Error("edge_scatter: edge " + std::to_string(i) + " references a vertex outside " +
                      std::to_string(e.num_vertices));
      }
      n.edges = attrs.edges;
      const long N = vals.shape[1];
      Tensor out = Tensor::zeros({e.num_vertices, N});
      for (long i = 0; i < E; ++i) {
        const double w = alpha[i];
        const double* vrow = vals.data.data() + e.src[i] * N;
        double* orow = out.data.data() + e.dst[i] * N;
        for (long j = 0; j < N; ++j) orow[j] += w * vrow[j];
      }
      n.val = std::move(out);
      break;
    }

    case OpKind::SpMM: {
      need(1);
      if (!attrs.sparse) throw Error("spmm: missing sparse operator");
      const Tensor& x = at(inputs[0]).val;
      if (x.shape.size() != 2)
        throw Error("spmm: dense input must be rank 2, got " + shape_str(x.shape));
      const Csr& m = attrs.sparse->mat;
      if (x.shape[0] != m.cols)
        throw Error("spmm: operator is " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                    " but input has " + std::to_string(x.shape[0]) + " rows");
      n.sparse = attrs.sparse;
      Tensor out = Tensor::zeros({m.rows, x.shape[1]});
      m.apply(x.data.data(), x.shape[1], out.data.data());
      n.val = std::move(out);
      break;
    }

    case OpKind::Reshape: {
      need(1);
      const Tensor& a = at(inputs[0]).val;
      if (attrs.shape.empty() || attrs.shape.size() > 2)
        throw Error("reshape: target must be rank 1 or 2");
      if (shape_numel(attrs.shape) != a.size())
        throw Error("reshape: " + shape_str(a.shape) + " cannot become " +
                    shape_str(attrs.shape));
      n.val = Tensor(attrs.shape, a.data);
      break;
    }
  }

  return Var{push(std::move(n))};
}

Var Graph::matmul(Var a, Var b) { return forward_op(OpKind::MatMul, {a, b}); }
Var Graph::add(Var a, Var b) { return forward_op(OpKind::Add, {a, b}); }
Var Graph::sub(Var a, Var b) { return forward_op(OpKind::Sub, {a, b}); }
Var Graph::elementwise_mul(Var a, Var b) { return forward_op(OpKind::Mul, {a, b}); }

Var Graph::concat(Var a, Var b, int axis) {
  OpAttrs at;
  at.axis = axis;
  return forward_op(OpKind::Concat, {a, b}, at);
}

Var Graph::slice(Var a, int axis, long start, long len) {
  OpAttrs at;
  at.axis = axis;
  at.start = start;
  at.len = len;
  return forward_op(OpKind::Slice, {a}, at);
}

Var Graph::softplus(Var a, double beta) {
  OpAttrs at;
  at.scalar = beta;
  return forward_op(OpKind::Softplus, {a}, at);
}

Var Graph::softplus_derivative(Var a, double beta) {
  OpAttrs at;
  at.scalar = beta;
  return forward_op(OpKind::SoftplusDerivative, {a}, at);
}

Var Graph::relu(Var a) { return forward_op(OpKind::Relu, {a}); }
Var Graph::abs(Var a) { return forward_op(OpKind::Abs, {a}); }
Var Graph::square(Var a) { return forward_op(OpKind::Square, {a}); }
Var Graph::sqrt(Var a) { return forward_op(OpKind::Sqrt, {a}); }
Var Graph::sum(Var a) { return forward_op(OpKind::Sum, {a}); }
Var Graph::mean(Var a) { return forward_op(OpKind::Mean, {a}); }
Var Graph::l2_norm_rows(Var a) { return forward_op(OpKind::L2NormRows, {a}); }

Var Graph::scalar_mul(Var a, double c) {
  OpAttrs at;
  at.scalar = c;
  return forward_op(OpKind::ScalarMul, {a}, at);
}

Var Graph::gather_rows(Var a, std::shared_ptr<const std::vector<long>> indices) {
  OpAttrs at;
  at.indices = std::move(indices);
  return forward_op(OpKind::GatherRows, {a}, at);
}

Var Graph::edge_scatter(Var values, Var alpha, std::shared_ptr<const EdgeList> edges) {
  OpAttrs at;
  at.edges = std::move(edges);
  return forward_op(OpKind::EdgeScatter, {values, alpha}, at);
}

Var Graph::spmm(std::shared_ptr<const CsrPair> m, Var x) {
  OpAttrs at;
  at.sparse = std::move(m);
  return forward_op(OpKind::SpMM, {x}, at);
}

Var Graph::reshape(Var a, Shape target) {
  OpAttrs at;
  at.shape = std::move(target);
  return forward_op(OpKind::Reshape, {a}, at);
}

const Tensor& Graph::value(Var v) const {
  check_input(v, "value");
  return at(v).val;
}

double Graph::scalar_value(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1)
    throw Error("scalar_value: node has shape " + shape_str(t.shape));
  return t[0];
}

const Tensor* Graph::grad(Var v) const {
  check_input(v, "grad");
  const Node& n = at(v);
  return n.has_grad ? &n.grad_val : nullptr;
}

void Graph::backward_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& g = n.grad_val;

  auto acc = [&](int input, auto&& fn) {
    Node& src = nodes_[static_cast<std::size_t>(input)];
    if (!src.needs_grad) return;
    if (!src.has_grad) {
      src.grad_val = Tensor::zeros(src.val.shape);
      src.has_grad = true;
    }
    fn(src.grad_val, src.val);
  };

  switch (n.op) {
    case OpKind::Leaf:
      break;

    case OpKind::MatMul: {
      const Tensor& a = nodes_[n.a].val;
      const Tensor& b = nodes_[n.b].val;
      const long M = a.shape[0], K = a.shape[1], N = b.shape[1];
      acc(n.a, [&](Tensor& da, const Tensor&) {
        // dA = G B^T as row dot products (contiguous in j).
        for (long i = 0; i < M; ++i) {
          const double* gi = g.data.data() + i * N;
          double* dai = da.data.data() + i * K;
          for (long k = 0; k < K; ++k) {
            const double* bk = b.data.data() + k * N;
            double s = 0;
            for (long j = 0; j < N; ++j) s += gi[j] * bk[j];
            dai[k] += s;
          }
        }
      });
      acc(n.b, [&](Tensor& db, const Tensor&) {
        // dB = A^T G, accumulated row-at-a-time.
        for (long i = 0; i < M; ++i) {
          const double* ai = a.data.data() + i * K;
          const double* gi = g.data.data() + i * N;
          for (long k = 0; k < K; ++k) {
            const double av = ai[k];
            if (av == 0) continue;
            double* dbk = db.data.data() + k * N;
            for (long j = 0; j < N; ++j) dbk[j] += av * gi[j];
          }
        }
      });
      break;
    }

    case OpKind::Add:
    case OpKind::Sub: {
      const double sign = n.op == OpKind::Add ? 1.0 : -1.0;
      acc(n.a, [&](Tensor& da, const Tensor&) {
        for (long i = 0; i < g.size(); ++i) da[i] += g[i];
      });
      acc(n.b, [&](Tensor& db, const Tensor&) {
        const long cols = nodes_[n.a].val.cols();
        if (db.size() == g.size()) {
          for (long i = 0; i < g.size(); ++i) db[i] += sign * g[i];
        } else if (db.size() == 1) {
          double s = 0;
          for (long i = 0; i < g.size(); ++i) s += g[i];
          db[0] += sign * s;
        } else {  // row broadcast: column sums
          for (long i = 0; i < g.size(); ++i) db[i % cols] += sign * g[i];
        }
      });
      break;
    }

    case OpKind::Mul: {
      const Tensor& a = nodes_[n.a].val;
      const Tensor& b = nodes_[n.b].val;
      const long cols = a.cols();
      auto b_at = [&](long i) -> double {
        if (b.size() == a.size()) return b[i];
        if (b.size() == 1) return b[0];
        return b[i % cols];
      };
      acc(n.a, [&](Tensor& da, const Tensor&) {
        for (long i = 0; i < g.size(); ++i) da[i] += g[i] * b_at(i);
      });
      acc(n.b, [&](Tensor& db, const Tensor&) {
        if (db.size() == g.size()) {
          for (long i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
        } else if (db.size() == 1) {
          double s = 0;
          for (long i = 0; i < g.size(); ++i) s += g[i] * a[i];
          db[0] += s;
        } else {
          for (long i = 0; i < g.size(); ++i) db[i % cols] += g[i] * a[i];
        }
      });
      break;
    }

    case OpKind::Concat: {
      const Tensor& a = nodes_[n.a].val;
      const Tensor& b = nodes_[n.b].val;
      if (n.axis == 0) {
        acc(n.a, [&](Tensor& da, const Tensor&) {
          for (long i = 0; i < a.size(); ++i) da[i] += g[i];
        });
        acc(n.b, [&](Tensor& db, const Tensor&) {
          for (long i = 0; i < b.size(); ++i) db[i] += g[a.size() + i];
        });
      } else {
        const long M = a.shape[0], Na = a.shape[1], Nb = b.shape[1];
        acc(n.a, [&](Tensor& da, const Tensor&) {
          for (long i = 0; i < M; ++i)
            for (long j = 0; j < Na; ++j) da(i, j) += g(i, j);
        });
        acc(n.b, [&](Tensor& db, const Tensor&) {
          for (long i = 0; i < M; ++i)
            for (long j = 0; j < Nb; ++j) db(i, j) += g(i, Na + j);
        });
      }
      break;
    }

    case OpKind::Slice: {
      acc(n.a, [&](Tensor& da, const Tensor& av) {
        if (n.axis == 0) {
          const long cols = av.cols();
          for (long i = 0; i < g.size(); ++i) da[n.start * cols + i] += g[i];
        } else {
          const long M = av.shape[0];
          for (long i = 0; i < M; ++i)
            for (long j = 0; j < n.len; ++j) da(i, n.start + j) += g(i, j);
        }
      });
      break;
    }

    case OpKind::Softplus: {
      acc(n.a, [&](Tensor& da, const Tensor& av) {
        for (long i = 0; i < g.size(); ++i) da[i] += g[i] * sigmoid(n.scalar * av[i]);
      });
      break;
    }

    case OpKind::SoftplusDerivative: {
      // value is s = sigmoid(beta t); ds/dt = beta s (1 - s).
      acc(n.a, [&](Tensor& da, const Tensor&) {
        for (long i = 0; i < g.size(); ++i) {
          const double s = n.val[i];
          da[i] += g[i] * n.scalar * s * (1.0 - s);
        }
      });
      break;
    }

    case OpKind::Relu: {
      acc(n.a, [&](Tensor& da, const Tensor& av) {
        for (long i = 0; i < g.size(); ++i)
          if (av[i] > 0) da[i] += g[i];
      });
      break;
    }

    case OpKind::Abs: {
      acc(n.a, [&](Tensor& da, const Tensor& av) {
        for (long i = 0; i < g.size(); ++i) {
          if (av[i] > 0)
            da[i] += g[i];
          else if (av[i] < 0)
            da[i] -= g[i];
        }
      });
      break;
    }

    case OpKind::Square: {
      acc(n.a, [&](Tensor& da, const Tensor& av) {
        for (long i = 0; i < g.size(); ++i) da[i] += 2.0 * av[i] * g[i];
      });
      break;
    }

    case OpKind::Sqrt: {
      acc(n.a, [&](Tensor& da, const Tensor&) {
        for (long i = 0; i < g.size(); ++i)
          if (n.val[i] > 0) da[i] += g[i] / (2.0 * n.val[i]);
      });
      break;
    }

    case OpKind::Sum: {
      acc(n.a, [&](Tensor& da, const Tensor&) {
        for (long i = 0; i < da.size(); ++i) da[i] += g[0];
      });
      break;
    }

    case OpKind::Mean: {
      acc(n.a, [&](Tensor& da, const Tensor&) {
        const double s = g[0] / static_cast<double>(da.size());
        for (long i = 0; i < da.size(); ++i) da[i] += s;
      });
      break;
    }

    case OpKind::L2NormRows: {
      acc(n.a, [&](Tensor& da, const Tensor& av) {
        const long M = av.shape[0], N = av.shape[1];
        for (long i = 0; i < M; ++i) {
          const double r = n.val[i];
          if (r == 0) continue;
          const double s = g[i] / r;
          for (long j = 0; j < N; ++j) da(i, j) += s * av(i, j);
        }
      });
      break;
    }

    case OpKind::ScalarMul: {
      acc(n.a, [&](Tensor& da, const Tensor&) {
        for (long i = 0; i < g.size(); ++i) da[i] += n.scalar * g[i];
      });
      break;
    }

    case OpKind::GatherRows: {
      acc(n.a, [&](Tensor& da, const Tensor& av) {
        const long N = av.cols();
        const auto& idx = *n.indices;
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (long j = 0; j < N; ++j) da[idx[i] * N + j] += g[static_cast<long>(i) * N + j];
      });
      break;
    }

    case OpKind::EdgeScatter: {
      const Tensor& vals = nodes_[n.a].val;
      const Tensor& alpha = nodes_[n.b].val;
      const EdgeList& e = *n.edges;
      const long E = static_cast<long>(e.src.size());
      const long N = vals.shape[1];
      acc(n.a, [&](Tensor& dv, const Tensor&) {
        for (long i = 0; i < E; ++i) {
          const double w = alpha[i];
          const double* grow = g.data.data() + e.dst[i] * N;
          double* drow = dv.data.data() + e.src[i] * N;
          for (long j = 0; j < N; ++j) drow[j] += w * grow[j];
        }
      });
      acc(n.b, [&](Tensor& dalpha, const Tensor&) {
        for (long i = 0; i < E; ++i) {
          const double* vrow = vals.data.data() + e.src[i] * N;
          const double* grow = g.data.data() + e.dst[i] * N;
          double s = 0;
          for (long j = 0; j < N; ++j) s += vrow[j] * grow[j];
          dalpha[i] += s;
        }
      });
      break;
    }

    case OpKind::SpMM: {
      acc(n.a, [&](Tensor& dx, const Tensor& xv) {
        // dX = A^T G via the stored transpose.
        const long width = xv.shape[1];
        Tensor tmp = Tensor::zeros(xv.shape);
        n.sparse->mat_t.apply(g.data.data(), width, tmp.data.data());
        for (long i = 0; i < dx.size(); ++i) dx[i] += tmp[i];
      });
      break;
    }

    case OpKind::Reshape: {
      acc(n.a, [&](Tensor& da, const Tensor&) {
        for (long i = 0; i < g.size(); ++i) da[i] += g[i];
      });
      break;
    }
  }
}

std::map<std::string, Tensor> Graph::backward(Var loss) {
  check_input(loss, "backward");
  if (backward_done_) throw Error("backward: tape already consumed; build a fresh graph");
  backward_done_ = true;
  Node& top = nodes_[static_cast<std::size_t>(loss.id)];
  if (top.val.size() != 1)
    throw Error("backward: loss must be scalar, got shape " + shape_str(top.val.shape));

  if (top.needs_grad) {
    top.grad_val = Tensor::full(top.val.shape, 1.0);
    top.has_grad = true;
    for (int id = loss.id; id >= 0; --id) {
      Node& nd = nodes_[static_cast<std::size_t>(id)];
      if (nd.has_grad && nd.op != OpKind::Leaf) backward_node(id);
    }
  }

  std::map<std::string, Tensor> grads;
  for (const auto& [name, id] : params_) {
    const Node& nd = nodes_[static_cast<std::size_t>(id)];
    grads.emplace(name, nd.has_grad ? nd.grad_val : Tensor::zeros(nd.val.shape));
  }
  return grads;
}

}  // namespace lgc::ad
