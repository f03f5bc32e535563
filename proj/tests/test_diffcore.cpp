#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include "lgc/checkpoint.hpp"
#include "lgc/graph.hpp"
#include "lgc/hash.hpp"
#include "lgc/optim.hpp"
#include "lgc/rng.hpp"

using namespace lgc;
using namespace lgc::ad;

namespace {

Tensor rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Magnitudes in [lo_mag, hi_mag] with random sign, so values stay clear of
// the nonsmooth point of relu/abs regardless of the FD step.
Tensor rand_signed_away_from_zero(Shape s, Rng& rng, double lo_mag = 0.2, double hi_mag = 1.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.data) {
    const double m = rng.uniform(lo_mag, hi_mag);
    v = rng.next() & 1 ? m : -m;
  }
  return t;
}

struct FdCase {
  OpKind kind;
  Graph::OpAttrs attrs;
  std::vector<Tensor> inputs;
  Tensor weights;  // same shape as the op output
};

double run_case(const FdCase& c, std::vector<Tensor>* grads_out) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(c.inputs.size());
  for (const Tensor& t : c.inputs) vars.push_back(g.leaf(t, true));
  Var out = g.forward_op(c.kind, vars, c.attrs);
  Var loss = g.sum(g.elementwise_mul(out, g.constant(c.weights)));
  const double v = g.scalar_value(loss);
  if (grads_out) {
    g.backward(loss);
    grads_out->clear();
    for (Var var : vars) {
      const Tensor* gr = g.grad(var);
      grads_out->push_back(gr ? *gr : Tensor::zeros(g.value(var).shape));
    }
  }
  return v;
}

// Worst relative error between reverse-mode and central finite differences
// over every entry of every input.
double fd_max_rel_err(FdCase c, double h = 1e-6) {
  std::vector<Tensor> analytic;
  run_case(c, &analytic);
  double worst = 0;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    for (long j = 0; j < c.inputs[i].size(); ++j) {
      const double keep = c.inputs[i][j];
      c.inputs[i][j] = keep + h;
      const double fp = run_case(c, nullptr);
      c.inputs[i][j] = keep - h;
      const double fm = run_case(c, nullptr);
      c.inputs[i][j] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[i][j];
      const double err = std::abs(fd - a) / std::max({1.0, std::abs(fd), std::abs(a)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

Tensor dense_from_csr(const Csr& m) {
  Tensor d = Tensor::zeros({m.rows, m.cols});
  for (long r = 0; r < m.rows; ++r)
    for (long e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) d(r, m.col_idx[e]) += m.vals[e];
  return d;
}

std::filesystem::path fresh_temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() /
           (std::string("lgc_test_") + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("splitmix64 matches the published reference sequence") {
  Rng rng(1234567);
  const std::uint64_t expected[5] = {6457827717110365317ull, 3203168211198807973ull,
                                     9817491932198370423ull, 4593380528125082431ull,
                                     16408922859458223821ull};
  for (std::uint64_t e : expected) CHECK(rng.next() == e);
}

TEST_CASE("rng streams are deterministic and derivations are independent") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

  Rng base(99);
  Rng s0 = base.derive(0), s1 = base.derive(1), s0again = base.derive(0);
  CHECK(s0.next() == s0again.next());
  CHECK(s0.next() != s1.next());

  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
  Rng n(5);
  double mean = 0;
  for (int i = 0; i < 10000; ++i) mean += n.normal();
  mean /= 10000;
  CHECK(std::abs(mean) < 0.05);  // ~5 sigma of the sample mean
}

TEST_CASE("fnv1a hashing is stable") {
  // Standard FNV-1a reference values.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
  CHECK(hash_hex(0xcbf29ce484222325ull) == "cbf29ce484222325");
}

TEST_CASE("tensor shape plumbing") {
  CHECK(shape_str({3, 4}) == "[3 x 4]");
  CHECK(shape_numel({3, 4}) == 12);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), Error);
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t(1, 2) == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  Tensor v = Tensor::vector({1, 2});
  CHECK(v.rows() == 2);
  CHECK(v.cols() == 1);
}

TEST_CASE("matmul forward matches a hand-computed product") {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = g.constant(Tensor::matrix(3, 2, {7, 8, 9, 10, 11, 12}));
  const Tensor& c = g.value(g.matmul(a, b));
  CHECK(c.shape == Shape{2, 2});
  CHECK(c(0, 0) == 58);
  CHECK(c(0, 1) == 64);
  CHECK(c(1, 0) == 139);
  CHECK(c(1, 1) == 154);
}

TEST_CASE("elementwise ops produce frozen values") {
  Graph g;
  Var x = g.constant(Tensor::vector({-2, -0.5, 0, 0.5, 2}));

  const Tensor& r = g.value(g.relu(x));
  CHECK(r.data == std::vector<double>{0, 0, 0, 0.5, 2});

  const Tensor& ab = g.value(g.abs(x));
  CHECK(ab.data == std::vector<double>{2, 0.5, 0, 0.5, 2});

  const Tensor& sq = g.value(g.square(x));
  CHECK(sq.data == std::vector<double>{4, 0.25, 0, 0.25, 4});

  Var y = g.constant(Tensor::vector({0, 1, 4, 9}));
  const Tensor& sr = g.value(g.sqrt(y));
  CHECK(sr.data == std::vector<double>{0, 1, 2, 3});

  CHECK(g.scalar_value(g.sum(y)) == 14);
  CHECK(g.scalar_value(g.mean(y)) == doctest::Approx(3.5));

  const Tensor& sm = g.value(g.scalar_mul(x, -3));
  CHECK(sm.data == std::vector<double>{6, 1.5, 0, -1.5, -6});
}

TEST_CASE("softplus is exact at zero and saturates stably") {
  Graph g;
  Var x = g.constant(Tensor::vector({0, 1000, -1000}));
  const Tensor& s1 = g.value(g.softplus(x, 1.0));
  CHECK(s1[0] == doctest::Approx(std::log(2.0)));
  CHECK(s1[1] == doctest::Approx(1000.0));
  CHECK(s1[2] == doctest::Approx(0.0));

  const Tensor& s100 = g.value(g.softplus(x, 100.0));
  CHECK(s100[0] == doctest::Approx(std::log(2.0) / 100.0));
  CHECK(s100[1] == doctest::Approx(1000.0));

  const Tensor& d = g.value(g.softplus_derivative(x, 100.0));
  CHECK(d[0] == doctest::Approx(0.5));
  CHECK(d[1] == doctest::Approx(1.0));
  CHECK(d[2] == doctest::Approx(0.0));
}

TEST_CASE("softplus_derivative equals the slope of softplus") {
  Rng rng(11);
  Graph g;
  Tensor x = rand_tensor({8}, rng, -0.1, 0.1);
  Var xv = g.constant(x);
  const Tensor& claimed = g.value(g.softplus_derivative(xv, 100.0));
  const double h = 1e-7;
  for (long i = 0; i < x.size(); ++i) {
    const double bp = 100.0 * (x[i] + h), bm = 100.0 * (x[i] - h);
    auto sp = [](double bt) { return std::max(bt, 0.0) + std::log1p(std::exp(-std::abs(bt))); };
    const double fd = (sp(bp) - sp(bm)) / 100.0 / (2.0 * h);
    CHECK(claimed[i] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("broadcast add/sub/mul handle rows and scalars") {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var row = g.constant(Tensor::matrix(1, 3, {10, 20, 30}));
  Var sc = g.constant(Tensor::scalar(2));

  CHECK(g.value(g.add(a, row)).data == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(g.value(g.sub(a, row)).data == std::vector<double>{-9, -18, -27, -6, -15, -24});
  CHECK(g.value(g.elementwise_mul(a, sc)).data == std::vector<double>{2, 4, 6, 8, 10, 12});
  CHECK(g.value(g.elementwise_mul(a, row)).data == std::vector<double>{10, 40, 90, 40, 100, 180});

  Var bad = g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS_AS(g.add(a, bad), Error);
}

TEST_CASE("concat and slice are inverse on both axes") {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b = g.constant(Tensor::matrix(2, 3, {5, 6, 7, 8, 9, 10}));
  Var cat = g.concat(a, b, 1);
  CHECK(g.value(cat).shape == Shape{2, 5});
  CHECK(g.value(cat).data == std::vector<double>{1, 2, 5, 6, 7, 3, 4, 8, 9, 10});
  CHECK(g.value(g.slice(cat, 1, 0, 2)).data == g.value(a).data);
  CHECK(g.value(g.slice(cat, 1, 2, 3)).data == g.value(b).data);

  Var c = g.constant(Tensor::matrix(1, 2, {11, 12}));
  Var cat0 = g.concat(a, c, 0);
  CHECK(g.value(cat0).shape == Shape{3, 2});
  CHECK(g.value(g.slice(cat0, 0, 2, 1)).data == std::vector<double>{11, 12});

  CHECK_THROWS_AS(g.slice(cat, 1, 4, 2), Error);
  CHECK_THROWS_AS(g.concat(a, b, 0), Error);
}

TEST_CASE("l2_norm_rows computes row norms") {
  Graph g;
  Var a = g.constant(Tensor::matrix(3, 2, {3, 4, 0, 0, -5, 12}));
  const Tensor& n = g.value(g.l2_norm_rows(a));
  CHECK(n.shape == Shape{3, 1});
  CHECK(n[0] == doctest::Approx(5));
  CHECK(n[1] == doctest::Approx(0));
  CHECK(n[2] == doctest::Approx(13));
}

TEST_CASE("gather_rows selects and repeats rows") {
  Graph g;
  Var a = g.constant(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  auto idx = std::make_shared<const std::vector<long>>(std::vector<long>{2, 0, 2});
  const Tensor& out = g.value(g.gather_rows(a, idx));
  CHECK(out.shape == Shape{3, 2});
  CHECK(out.data == std::vector<double>{5, 6, 1, 2, 5, 6});

  auto bad = std::make_shared<const std::vector<long>>(std::vector<long>{3});
  CHECK_THROWS_AS(g.gather_rows(a, bad), Error);
}

TEST_CASE("edge_scatter accumulates weighted source rows at destinations") {
  Graph g;
  // 3 vertices; edges 0->1, 1->2, 2->2, plus self-loop 0->0.
  auto edges = std::make_shared<EdgeList>();
  edges->src = {0, 1, 2, 0};
  edges->dst = {1, 2, 2, 0};
  edges->num_vertices = 3;
  Var vals = g.constant(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  Var alpha = g.constant(Tensor::vector({1, 0.5, 2, -1}));
  const Tensor& out = g.value(g.edge_scatter(vals, alpha, edges));
  CHECK(out.shape == Shape{3, 2});
  // vertex 0: -1*(1,2); vertex 1: 1*(1,2); vertex 2: 0.5*(3,4) + 2*(5,6)
  CHECK(out.data == std::vector<double>{-1, -2, 1, 2, 11.5, 14});
}

TEST_CASE("csr construction merges duplicates and transposes correctly") {
  std::vector<Triplet> tr = {{1, 2, 5.0}, {0, 0, 1.0}, {1, 2, 2.0}, {2, 1, -3.0}, {0, 3, 4.0}};
  Csr m = csr_from_triplets(3, 4, tr);
  Tensor d = dense_from_csr(m);
  CHECK(d(0, 0) == 1.0);
  CHECK(d(0, 3) == 4.0);
  CHECK(d(1, 2) == 7.0);  // merged duplicate
  CHECK(d(2, 1) == -3.0);
  CHECK(m.vals.size() == 4);

  Csr t = csr_transpose(m);
  Tensor dt = dense_from_csr(t);
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 4; ++j) CHECK(d(i, j) == dt(j, i));

  CHECK_THROWS_AS(csr_from_triplets(2, 2, {{2, 0, 1.0}}), Error);
}

TEST_CASE("spmm equals dense multiplication") {
  Rng rng(21);
  std::vector<Triplet> tr;
  for (long r = 0; r < 7; ++r)
    for (long c = 0; c < 5; ++c)
      if (rng.uniform() < 0.4) tr.push_back({r, c, rng.uniform(-1, 1)});
  tr.push_back({6, 4, 0.5});  // keep the last row/col populated
  auto pair = std::make_shared<CsrPair>(make_csr_pair(csr_from_triplets(7, 5, tr)));

  Tensor x = rand_tensor({5, 3}, rng);
  Graph g;
  Var out = g.spmm(pair, g.constant(x));
  Var ref = g.matmul(g.constant(dense_from_csr(pair->mat)), g.constant(x));
  const Tensor& a = g.value(out);
  const Tensor& b = g.value(ref);
  REQUIRE(a.shape == b.shape);
  for (long i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("reshape reinterprets without reordering") {
  Graph g;
  Var a = g.constant(Tensor::vector({1, 2, 3, 4, 5, 6}));
  const Tensor& m = g.value(g.reshape(a, {2, 3}));
  CHECK(m(1, 0) == 4);
  CHECK_THROWS_AS(g.reshape(a, {4, 2}), Error);
}

TEST_CASE("backward: frozen gradient of sum of squares") {
  Graph g;
  Var x = g.leaf(Tensor::vector({1, 2, 3}), true);
  Var loss = g.sum(g.square(x));
  CHECK(g.scalar_value(loss) == 14);
  g.backward(loss);
  const Tensor* gr = g.grad(x);
  REQUIRE(gr != nullptr);
  CHECK(gr->data == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward: matmul gradients match the transpose identities") {
  Graph g;
  Tensor at = Tensor::matrix(2, 3, {1, -2, 0.5, 3, 1, -1});
  Tensor bt = Tensor::matrix(3, 2, {2, 0, 1, -1, 0.5, 4});
  Var a = g.leaf(at, true);
  Var b = g.leaf(bt, true);
  Var loss = g.sum(g.matmul(a, b));
  g.backward(loss);
  // dA = 1 * B^T (column sums of B per row), dB = A^T * 1.
  const Tensor* da = g.grad(a);
  const Tensor* db = g.grad(b);
  REQUIRE(da);
  REQUIRE(db);
  for (long i = 0; i < 2; ++i)
    for (long k = 0; k < 3; ++k) CHECK((*da)(i, k) == doctest::Approx(bt(k, 0) + bt(k, 1)));
  for (long k = 0; k < 3; ++k)
    for (long j = 0; j < 2; ++j) CHECK((*db)(k, j) == doctest::Approx(at(0, k) + at(1, k)));
}

TEST_CASE("finite differences validate every op's reverse rule") {
  Rng rng(1001);
  int instances = 0;
  double worst = 0;
  auto check_case = [&](FdCase c) {
    const double err = fd_max_rel_err(std::move(c));
    worst = std::max(worst, err);
    ++instances;
    CHECK(err < 1e-6);
  };

  for (int rep = 0; rep < 2; ++rep) {
    {
      FdCase c{OpKind::MatMul, {}, {rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)},
               rand_tensor({3, 2}, rng)};
      check_case(std::move(c));
    }
    for (OpKind k : {OpKind::Add, OpKind::Sub, OpKind::Mul}) {
      FdCase same{k, {}, {rand_tensor({2, 3}, rng), rand_tensor({2, 3}, rng)},
                  rand_tensor({2, 3}, rng)};
      check_case(std::move(same));
      FdCase row{k, {}, {rand_tensor({2, 3}, rng), rand_tensor({1, 3}, rng)},
                 rand_tensor({2, 3}, rng)};
      check_case(std::move(row));
      FdCase sc{k, {}, {rand_tensor({2, 3}, rng), rand_tensor({1}, rng)},
                rand_tensor({2, 3}, rng)};
      check_case(std::move(sc));
    }
    {
      Graph::OpAttrs at;
      at.axis = 1;
      FdCase c{OpKind::Concat, at, {rand_tensor({2, 2}, rng), rand_tensor({2, 3}, rng)},
               rand_tensor({2, 5}, rng)};
      check_case(std::move(c));
      at.axis = 0;
      FdCase c0{OpKind::Concat, at, {rand_tensor({2, 3}, rng), rand_tensor({1, 3}, rng)},
                rand_tensor({3, 3}, rng)};
      check_case(std::move(c0));
    }
    {
      Graph::OpAttrs at;
      at.axis = 1;
      at.start = 1;
      at.len = 2;
      FdCase c{OpKind::Slice, at, {rand_tensor({3, 4}, rng)}, rand_tensor({3, 2}, rng)};
      check_case(std::move(c));
      at.axis = 0;
      at.start = 0;
      at.len = 2;
      FdCase c0{OpKind::Slice, at, {rand_tensor({3, 4}, rng)}, rand_tensor({2, 4}, rng)};
      check_case(std::move(c0));
    }
    for (double beta : {1.0, 100.0}) {
      Graph::OpAttrs at;
      at.scalar = beta;
      FdCase sp{OpKind::Softplus, at, {rand_tensor({2, 3}, rng, -0.5, 0.5)},
                rand_tensor({2, 3}, rng)};
      check_case(std::move(sp));
      FdCase spd{OpKind::SoftplusDerivative, at, {rand_tensor({2, 3}, rng, -0.5, 0.5)},
                 rand_tensor({2, 3}, rng)};
      check_case(std::move(spd));
    }
    {
      FdCase c{OpKind::Relu, {}, {rand_signed_away_from_zero({2, 4}, rng)},
               rand_tensor({2, 4}, rng)};
      check_case(std::move(c));
      FdCase c2{OpKind::Abs, {}, {rand_signed_away_from_zero({2, 4}, rng)},
                rand_tensor({2, 4}, rng)};
      check_case(std::move(c2));
      FdCase c3{OpKind::Square, {}, {rand_tensor({2, 4}, rng)}, rand_tensor({2, 4}, rng)};
      check_case(std::move(c3));
      FdCase c4{OpKind::Sqrt, {}, {rand_tensor({2, 4}, rng, 0.5, 2.0)}, rand_tensor({2, 4}, rng)};
      check_case(std::move(c4));
    }
    {
      FdCase c{OpKind::Sum, {}, {rand_tensor({3, 3}, rng)}, rand_tensor({1}, rng)};
      check_case(std::move(c));
      FdCase c2{OpKind::Mean, {}, {rand_tensor({3, 3}, rng)}, rand_tensor({1}, rng)};
      check_case(std::move(c2));
      FdCase c3{OpKind::L2NormRows, {}, {rand_signed_away_from_zero({4, 3}, rng, 0.3, 1.0)},
                rand_tensor({4, 1}, rng)};
      check_case(std::move(c3));
      Graph::OpAttrs at;
      at.scalar = -2.5;
      FdCase c4{OpKind::ScalarMul, at, {rand_tensor({2, 3}, rng)}, rand_tensor({2, 3}, rng)};
      check_case(std::move(c4));
    }
    {
      Graph::OpAttrs at;
      at.indices = std::make_shared<const std::vector<long>>(std::vector<long>{1, 3, 1, 0});
      FdCase c{OpKind::GatherRows, at, {rand_tensor({4, 3}, rng)}, rand_tensor({4, 3}, rng)};
      check_case(std::move(c));
    }
    {
      auto edges = std::make_shared<EdgeList>();
      edges->src = {0, 1, 2, 3, 0, 2};
      edges->dst = {1, 2, 2, 0, 0, 3};
      edges->num_vertices = 4;
      Graph::OpAttrs at;
      at.edges = edges;
      FdCase c{OpKind::EdgeScatter, at, {rand_tensor({4, 3}, rng), rand_tensor({6}, rng)},
               rand_tensor({4, 3}, rng)};
      check_case(std::move(c));
    }
    {
      std::vector<Triplet> tr;
      for (long r = 0; r < 5; ++r)
        for (long cc = 0; cc < 4; ++cc)
          if (rng.uniform() < 0.5) tr.push_back({r, cc, rng.uniform(-1, 1)});
      tr.push_back({4, 3, 1.0});
      Graph::OpAttrs at;
      at.sparse = std::make_shared<CsrPair>(make_csr_pair(csr_from_triplets(5, 4, tr)));
      FdCase c{OpKind::SpMM, at, {rand_tensor({4, 3}, rng)}, rand_tensor({5, 3}, rng)};
      check_case(std::move(c));
    }
    {
      Graph::OpAttrs at;
      at.shape = {2, 6};
      FdCase c{OpKind::Reshape, at, {rand_tensor({3, 4}, rng)}, rand_tensor({2, 6}, rng)};
      check_case(std::move(c));
    }
  }
  CHECK(instances >= 40);
  MESSAGE("fd property suite: " << instances << " instances, worst rel err " << worst);
}

TEST_CASE("second-order flow: gradients of a loss built from an input gradient") {
  // f(x) = softplus(x W1 + b1) W2; the tape carries f'(x) explicitly as
  // sigmoid(beta pre) * W1 row, and the loss penalizes (f'(x) - 1)^2. The
  // backward pass therefore differentiates through the derivative.
  const double beta = 50.0;
  ParameterStore ps;
  Rng rng(31);
  ps.add("w1", rand_tensor({1, 4}, rng));
  ps.add("b1", rand_tensor({1, 4}, rng, -0.1, 0.1));
  ps.add("w2", rand_tensor({4, 1}, rng));

  auto loss_of = [&](const ParameterStore& store, std::map<std::string, Tensor>* grads) {
    Graph g;
    Var x = g.constant(Tensor::matrix(1, 1, {0.3}));
    Var w1 = g.param("w1", store);
    Var b1 = g.param("b1", store);
    Var w2 = g.param("w2", store);
    Var pre = g.add(g.matmul(x, w1), b1);
    Var one = g.constant(Tensor::matrix(1, 1, {1.0}));
    Var jrow = g.elementwise_mul(g.softplus_derivative(pre, beta), g.matmul(one, w1));
    Var dfdx = g.matmul(jrow, w2);
    Var loss = g.sum(g.square(g.sub(dfdx, one)));
    const double v = g.scalar_value(loss);
    if (grads) *grads = g.backward(loss);
    return v;
  };

  std::map<std::string, Tensor> grads;
  loss_of(ps, &grads);
  const double h = 1e-6;
  for (const std::string& name : ps.names()) {
    Tensor& val = ps.value(name);
    for (long i = 0; i < val.size(); ++i) {
      const double keep = val[i];
      val[i] = keep + h;
      const double fp = loss_of(ps, nullptr);
      val[i] = keep - h;
      const double fm = loss_of(ps, nullptr);
      val[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = grads.at(name)[i];
      CHECK(std::abs(fd - a) / std::max({1.0, std::abs(fd), std::abs(a)}) < 1e-5);
    }
  }
}

TEST_CASE("tape misuse is rejected") {
  Graph g;
  Var x = g.leaf(Tensor::vector({1, 2}), true);
  Var loss = g.sum(g.square(x));
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), Error);

  Graph g2;
  Var y = g2.leaf(Tensor::vector({1, 2}), true);
  CHECK_THROWS_AS(g2.backward(g2.square(y)), Error);  // non-scalar loss

  Graph g3;
  CHECK_THROWS_AS(g3.leaf(Tensor::vector({1, std::nan("")}), false), NumericalError);
  Var z = g3.constant(Tensor::vector({-1.0}));
  CHECK_THROWS_AS(g3.sqrt(z), NumericalError);

  Graph g4;
  Var a = g4.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS_AS(g4.matmul(a, a), Error);
}

TEST_CASE("parameters registered twice share a node; unreached parameters get zeros") {
  ParameterStore ps;
  ps.add("w", Tensor::vector({2, 3}));
  ps.add("idle", Tensor::matrix(2, 2, {1, 1, 1, 1}));
  ps.add("outside", Tensor::scalar(9));
  Graph g;
  Var w1 = g.param("w", ps);
  Var w2 = g.param("w", ps);
  CHECK(w1.id == w2.id);
  Var idle = g.param("idle", ps);  // on the tape but not wired to the loss
  (void)idle;
  Var loss = g.sum(g.elementwise_mul(w1, w2));  // sum w^2
  auto grads = g.backward(loss);
  CHECK(grads.at("w").data == std::vector<double>{4, 6});
  CHECK(grads.at("idle").data == std::vector<double>{0, 0, 0, 0});
  // Parameters never pulled onto this graph are absent, so the optimizer
  // leaves them (and their moments) untouched.
  CHECK(grads.count("outside") == 0);
}

TEST_CASE("constants receive no gradient") {
  Graph g;
  Var c = g.constant(Tensor::vector({5}));
  Var x = g.leaf(Tensor::vector({2}), true);
  Var loss = g.sum(g.elementwise_mul(c, x));
  g.backward(loss);
  CHECK(g.grad(c) == nullptr);
  REQUIRE(g.grad(x));
  CHECK((*g.grad(x))[0] == 5);
}

TEST_CASE("gradients are bit-identical across repeated runs") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Graph g;
    Var a = g.leaf(rand_tensor({4, 5}, rng), true);
    Var b = g.leaf(rand_tensor({5, 3}, rng), true);
    Var h = g.softplus(g.matmul(a, b), 100.0);
    Var loss = g.mean(g.square(h));
    g.backward(loss);
    std::vector<double> out = g.grad(a)->data;
    const auto& gb = g.grad(b)->data;
    out.insert(out.end(), gb.begin(), gb.end());
    return out;
  };
  CHECK(run(77) == run(77));
  CHECK(run(77) != run(78));
}

TEST_CASE("adam: one hand-computed step") {
  // f(w) = w^2 at w = 1: g = 2, mhat = 2, vhat = 4, step = lr * 2/(2 + eps).
  ParameterStore ps;
  ps.add("w", Tensor::scalar(1.0));
  Graph g;
  Var w = g.param("w", ps);
  auto grads = g.backward(g.sum(g.square(w)));
  ps.adam_step(grads, 0.1);
  CHECK(ps.value("w")[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(ps.entry("w").step == 1);
}

TEST_CASE("adam: trajectory matches a naive reference implementation") {
  ParameterStore ps;
  ps.add("w", Tensor::vector({1.0, -2.0, 0.5}));
  std::vector<double> ref = {1.0, -2.0, 0.5};
  std::vector<double> m(3, 0.0), v(3, 0.0);
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (int t = 1; t <= 25; ++t) {
    Graph g;
    Var w = g.param("w", ps);
    // loss = sum((w - [3,1,-1])^2)
    Var target = g.constant(Tensor::vector({3.0, 1.0, -1.0}));
    auto grads = g.backward(g.sum(g.square(g.sub(w, target))));
    ps.adam_step(grads, lr);

    for (int i = 0; i < 3; ++i) {
      const double gr = 2.0 * (ref[i] - (i == 0 ? 3.0 : i == 1 ? 1.0 : -1.0));
      m[i] = b1 * m[i] + (1 - b1) * gr;
      v[i] = b2 * v[i] + (1 - b2) * gr * gr;
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    for (int i = 0; i < 3; ++i) CHECK(ps.value("w")[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("adam: learning-rate groups apply independently") {
  ParameterStore ps;
  ps.add("net", Tensor::scalar(1.0), ParamGroup::Network);
  ps.add("code", Tensor::scalar(1.0), ParamGroup::Latent);
  std::map<std::string, Tensor> grads;
  grads.emplace("net", Tensor::scalar(2.0));
  grads.emplace("code", Tensor::scalar(2.0));
  ps.adam_step(grads, 0.0, 0.1);
  CHECK(ps.value("net")[0] == 1.0);
  CHECK(ps.value("code")[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(ps.count(ParamGroup::Network) == 1);
  CHECK(ps.count(ParamGroup::Latent) == 1);
}

TEST_CASE("checkpoint round-trips bytes, groups, steps, and metadata") {
  ParameterStore ps;
  Rng rng(4242);
  ps.add("decoder/layer0:W", rand_tensor({5, 3}, rng), ParamGroup::Network);
  ps.add("decoder/layer0:b", rand_tensor({1, 3}, rng), ParamGroup::Network);
  ps.add("code@shape 7", rand_tensor({8}, rng), ParamGroup::Latent);

  // A couple of optimizer steps so moments and counters are nonzero.
  for (int t = 0; t < 3; ++t) {
    std::map<std::string, Tensor> grads;
    for (const auto& name : ps.names()) grads.emplace(name, rand_tensor(ps.value(name).shape, rng));
    ps.adam_step(grads, 1e-3, 1e-2);
  }

  CheckpointMeta meta;
  meta.epoch = 17;
  meta.seed = 0xDEADBEEFCAFEull;
  meta.extra = {{"arch", "test"}, {"note", 3}};

  const auto dir = fresh_temp_dir("ckpt");
  save_checkpoint(dir.string(), ps, meta);

  ParameterStore loaded;
  CheckpointMeta back = load_checkpoint(dir.string(), loaded);
  CHECK(back.epoch == 17);
  CHECK(back.seed == 0xDEADBEEFCAFEull);
  CHECK(back.extra.at("arch") == "test");

  REQUIRE(loaded.names() == ps.names());
  for (const auto& name : ps.names()) {
    const auto& a = ps.entry(name);
    const auto& b = loaded.entry(name);
    CHECK(a.value.shape == b.value.shape);
    CHECK(a.value.data == b.value.data);  // exact, bit-for-bit
    CHECK(a.m.data == b.m.data);
    CHECK(a.v.data == b.v.data);
    CHECK(a.step == b.step);
    CHECK(a.group == b.group);
  }

  // Resuming from the checkpoint reproduces an uninterrupted run exactly.
  std::map<std::string, Tensor> grads;
  Rng grng(5);
  for (const auto& name : ps.names()) grads.emplace(name, rand_tensor(ps.value(name).shape, grng));
  ps.adam_step(grads, 1e-3, 1e-2);
  loaded.adam_step(grads, 1e-3, 1e-2);
  for (const auto& name : ps.names()) CHECK(ps.value(name).data == loaded.value(name).data);

  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects damage and name collisions") {
  ParameterStore ps;
  Rng rng(1);
  ps.add("w", rand_tensor({4, 4}, rng));
  const auto dir = fresh_temp_dir("ckpt_damage");
  save_checkpoint(dir.string(), ps, {});

  std::filesystem::resize_file(dir / "w.f64", 8);  // truncate
  ParameterStore loaded;
  CHECK_THROWS_AS(load_checkpoint(dir.string(), loaded), IoError);
  std::filesystem::remove_all(dir);

  ParameterStore clash;
  clash.add("a/b", Tensor::scalar(1));
  clash.add("a_b", Tensor::scalar(2));
  const auto dir2 = fresh_temp_dir("ckpt_clash");
  CHECK_THROWS_AS(save_checkpoint(dir2.string(), clash, {}), Error);
  std::filesystem::remove_all(dir2);

  ParameterStore none;
  CHECK_THROWS_AS(load_checkpoint((dir2 / "missing").string(), none), IoError);
}

TEST_CASE("forward_op dispatcher agrees with the typed builders") {
  Rng rng(9);
  Tensor x = rand_tensor({3, 3}, rng);
  Graph g;
  Var a = g.constant(x);
  Graph::OpAttrs at;
  at.scalar = 100.0;
  Var via_dispatch = g.forward_op(OpKind::Softplus, {a}, at);
  Var via_builder = g.softplus(a, 100.0);
  CHECK(g.value(via_dispatch).data == g.value(via_builder).data);
  CHECK(g.node_count() == 3);
}
