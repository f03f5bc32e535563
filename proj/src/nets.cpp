#include "lgc/nets.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "lgc/error.hpp"

namespace lgc::nets {

using ad::Shape;
using ad::shape_str;
using ad::Tensor;

namespace {

// Mirrors the tape's MatMul inner loop (ikj) so tape-free evaluation is
// bitwise identical: out must be zeroed by the caller.
void matmul_accumulate(const double* a, long rows, long inner, const double* b, long cols,
                       double* out) {
  for (long i = 0; i < rows; ++i) {
    const double* arow = a + i * inner;
    double* orow = out + i * cols;
    for (long k = 0; k < inner; ++k) {
      const double aik = arow[k];
      const double* brow = b + k * cols;
      for (long j = 0; j < cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

Tensor jacobian_column(long batch, long width, int column) {
  Tensor t = Tensor::zeros({batch, width});
  for (long i = 0; i < batch; ++i) t.data[static_cast<std::size_t>(i * width + column)] = 1.0;
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// MlpDecoder
// ---------------------------------------------------------------------------

MlpDecoderConfig sdf4_config(long latent_dim) {
  MlpDecoderConfig cfg;
  cfg.latent_dim = latent_dim;
  cfg.widths = {3 + latent_dim, 128, 128, 128, 1};
  cfg.skip_layer = 0;
  return cfg;
}

MlpDecoderConfig sdf8_config(long latent_dim) {
  MlpDecoderConfig cfg;
  cfg.latent_dim = latent_dim;
  const long raw = 3 + latent_dim;
  // The layer before the skip emits 512 - raw units so the concatenated
  // width is back to 512.
  cfg.widths = {raw, 512, 512, 512, 512 - raw, 512, 512, 512, 1};
  cfg.skip_layer = 4;
  return cfg;
}

MlpDecoder::MlpDecoder(std::string name, MlpDecoderConfig cfg)
    : name_(std::move(name)), cfg_(std::move(cfg)) {
  if (cfg_.latent_dim < 1) throw ConfigError("decoder: latent_dim must be >= 1");
  if (cfg_.widths.size() < 2) throw ConfigError("decoder: need at least one layer");
  if (cfg_.widths.front() != 3 + cfg_.latent_dim)
    throw ConfigError("decoder: first width must be 3 + latent_dim = " +
                      std::to_string(3 + cfg_.latent_dim) + ", got " +
                      std::to_string(cfg_.widths.front()));
  if (cfg_.widths.back() != 1) throw ConfigError("decoder: output width must be 1");
  for (long w : cfg_.widths)
    if (w < 1) throw ConfigError("decoder: widths must be positive");
  if (cfg_.skip_layer < 0 || cfg_.skip_layer >= num_layers())
    throw ConfigError("decoder: skip layer " + std::to_string(cfg_.skip_layer) +
                      " out of range (have " + std::to_string(num_layers()) + " layers)");
  if (cfg_.softplus_beta <= 0) throw ConfigError("decoder: softplus beta must be positive");
}

long MlpDecoder::layer_input_width(int layer) const {
  long w = cfg_.widths[static_cast<std::size_t>(layer - 1)];
  if (cfg_.skip_layer != 0 && layer == cfg_.skip_layer + 1) w += cfg_.widths.front();
  return w;
}

std::string MlpDecoder::weight_name(int layer) const {
  return name_ + ".l" + std::to_string(layer) + ".w";
}

std::string MlpDecoder::bias_name(int layer) const {
  return name_ + ".l" + std::to_string(layer) + ".b";
}

std::vector<std::string> MlpDecoder::param_names() const {
  std::vector<std::string> out;
  for (int i = 1; i <= num_layers(); ++i) {
    out.push_back(weight_name(i));
    out.push_back(bias_name(i));
  }
  return out;
}

long MlpDecoder::count_parameters() const {
  long total = 0;
  for (int i = 1; i <= num_layers(); ++i) {
    const long out = cfg_.widths[static_cast<std::size_t>(i)];
    total += layer_input_width(i) * out + out;
  }
  return total;
}

void MlpDecoder::init_geometric(ad::ParameterStore& store, Rng& rng) const {
  const long raw = cfg_.widths.front();
  const int L = num_layers();
  for (int i = 1; i <= L; ++i) {
    const long in = layer_input_width(i);
    const long out = cfg_.widths[static_cast<std::size_t>(i)];
    Tensor w = Tensor::zeros({in, out});
    Tensor b = Tensor::zeros({1, out});
    if (i < L) {
      const double std = std::sqrt(2.0 / static_cast<double>(out));
      for (double& v : w.data) v = rng.normal() * std;
      // Keep the initial field a function of x alone: silence the latent
      // inputs of the first layer and the whole re-fed raw block at the skip.
      long zero_begin = -1, zero_end = -1;
      if (i == 1) {
        zero_begin = 3;
        zero_end = raw;
      } else if (cfg_.skip_layer != 0 && i == cfg_.skip_layer + 1) {
        zero_begin = in - raw;
        zero_end = in;
      }
      for (long r = zero_begin; r >= 0 && r < zero_end; ++r)
        std::fill_n(w.data.begin() + r * out, out, 0.0);
    } else {
      const double mean = std::sqrt(M_PI) / std::sqrt(static_cast<double>(in));
      for (double& v : w.data) v = mean + rng.normal() * 1e-5;
      b.data[0] = -cfg_.geo_init_radius;
    }
    store.add(weight_name(i), std::move(w));
    store.add(bias_name(i), std::move(b));
  }
}

MlpDecoder::ValueGrad MlpDecoder::run(ad::Graph& g, const ad::ParameterStore& store, ad::Var x,
                                      ad::Var code, bool with_grad) const {
  const Tensor& xv = g.value(x);
  const Tensor& cv = g.value(code);
  if (xv.shape.size() != 2 || xv.shape[1] != 3)
    throw ConfigError("decoder: points must be {B,3}, got " + shape_str(xv.shape));
  if (cv.shape.size() != 2 || cv.shape[1] != cfg_.latent_dim)
    throw ConfigError("decoder: codes must be {B," + std::to_string(cfg_.latent_dim) +
                      "}, got " + shape_str(cv.shape));
  if (xv.shape[0] != cv.shape[0])
    throw ConfigError("decoder: batch mismatch, " + std::to_string(xv.shape[0]) + " points vs " +
                      std::to_string(cv.shape[0]) + " codes");

  const long batch = xv.shape[0];
  const long raw_w = cfg_.widths.front();
  const int L = num_layers();

  ad::Var raw = g.concat(x, code, 1);
  ad::Var h = raw;
  std::array<ad::Var, 3> jac, jac_raw;
  if (with_grad)
    for (int c = 0; c < 3; ++c) {
      jac_raw[static_cast<std::size_t>(c)] = g.constant(jacobian_column(batch, raw_w, c));
      jac[static_cast<std::size_t>(c)] = jac_raw[static_cast<std::size_t>(c)];
    }

  for (int i = 1; i <= L; ++i) {
    ad::Var w = g.param(weight_name(i), store);
    ad::Var b = g.param(bias_name(i), store);
    ad::Var pre = g.add(g.matmul(h, w), b);
    if (i < L) {
      h = g.softplus(pre, cfg_.softplus_beta);
      if (with_grad) {
        ad::Var act = g.softplus_derivative(pre, cfg_.softplus_beta);
        for (auto& j : jac) j = g.elementwise_mul(act, g.matmul(j, w));
      }
      if (i == cfg_.skip_layer) {
        h = g.concat(h, raw, 1);
        if (with_grad)
          for (int c = 0; c < 3; ++c)
            jac[static_cast<std::size_t>(c)] =
                g.concat(jac[static_cast<std::size_t>(c)], jac_raw[static_cast<std::size_t>(c)], 1);
      }
    } else {
      h = pre;
      if (with_grad)
        for (auto& j : jac) j = g.matmul(j, w);
    }
  }

  ValueGrad out;
  out.value = h;
  if (with_grad) out.grad = g.concat(g.concat(jac[0], jac[1], 1), jac[2], 1);
  return out;
}

ad::Var MlpDecoder::forward(ad::Graph& g, const ad::ParameterStore& store, ad::Var x,
                            ad::Var code) const {
  return run(g, store, x, code, false).value;
}

MlpDecoder::ValueGrad MlpDecoder::forward_with_gradient(ad::Graph& g,
                                                        const ad::ParameterStore& store, ad::Var x,
                                                        ad::Var code) const {
  return run(g, store, x, code, true);
}

void MlpDecoder::eval(const ad::ParameterStore& store, const double* x, const double* code,
                      long count, double* out) const {
  eval_with_gradient(store, x, code, count, out, nullptr);
}

void MlpDecoder::eval_with_gradient(const ad::ParameterStore& store, const double* x,
                                    const double* code, long count, double* out,
                                    double* out_grad) const {
  const long raw_w = cfg_.widths.front();
  const long m = cfg_.latent_dim;
  const int L = num_layers();
  const bool with_grad = out_grad != nullptr;

  std::vector<double> raw(static_cast<std::size_t>(count * raw_w));
  for (long i = 0; i < count; ++i) {
    std::copy_n(x + i * 3, 3, raw.begin() + i * raw_w);
    std::copy_n(code + i * m, m, raw.begin() + i * raw_w + 3);
  }

  std::vector<double> h = raw, pre, act, tmp;
  std::array<std::vector<double>, 3> jac;
  if (with_grad)
    for (int c = 0; c < 3; ++c) {
      jac[static_cast<std::size_t>(c)].assign(static_cast<std::size_t>(count * raw_w), 0.0);
      for (long i = 0; i < count; ++i)
        jac[static_cast<std::size_t>(c)][static_cast<std::size_t>(i * raw_w + c)] = 1.0;
    }

  long width = raw_w;
  for (int i = 1; i <= L; ++i) {
    const Tensor& w = store.value(weight_name(i));
    const Tensor& b = store.value(bias_name(i));
    const long out_w = w.shape[1];

    pre.assign(static_cast<std::size_t>(count * out_w), 0.0);
    matmul_accumulate(h.data(), count, width, w.data.data(), out_w, pre.data());
    for (long r = 0; r < count; ++r)
      for (long c = 0; c < out_w; ++c) pre[static_cast<std::size_t>(r * out_w + c)] += b[c];

    if (with_grad) {
      for (auto& j : jac) {
        tmp.assign(static_cast<std::size_t>(count * out_w), 0.0);
        matmul_accumulate(j.data(), count, width, w.data.data(), out_w, tmp.data());
        j.swap(tmp);
      }
    }

    if (i < L) {
      h.resize(pre.size());
      for (std::size_t t = 0; t < pre.size(); ++t)
        h[t] = ad::softplus_stable(pre[t], cfg_.softplus_beta);
      if (with_grad) {
        act.resize(pre.size());
        for (std::size_t t = 0; t < pre.size(); ++t)
          act[t] = ad::sigmoid(cfg_.softplus_beta * pre[t]);
        for (auto& j : jac)
          for (std::size_t t = 0; t < j.size(); ++t) j[t] = act[t] * j[t];
      }
      width = out_w;
      if (i == cfg_.skip_layer) {
        tmp.assign(static_cast<std::size_t>(count * (width + raw_w)), 0.0);
        for (long r = 0; r < count; ++r) {
          std::copy_n(h.begin() + r * width, width, tmp.begin() + r * (width + raw_w));
          std::copy_n(raw.begin() + r * raw_w, raw_w, tmp.begin() + r * (width + raw_w) + width);
        }
        h.swap(tmp);
        if (with_grad) {
          for (int c = 0; c < 3; ++c) {
            auto& j = jac[static_cast<std::size_t>(c)];
            tmp.assign(static_cast<std::size_t>(count * (width + raw_w)), 0.0);
            for (long r = 0; r < count; ++r) {
              std::copy_n(j.begin() + r * width, width, tmp.begin() + r * (width + raw_w));
              tmp[static_cast<std::size_t>(r * (width + raw_w) + width + c)] = 1.0;
            }
            j.swap(tmp);
          }
        }
        width += raw_w;
      }
    } else {
      h.swap(pre);
      width = out_w;
    }
  }

  std::copy_n(h.begin(), count, out);
  if (with_grad)
    for (long r = 0; r < count; ++r)
      for (int c = 0; c < 3; ++c)
        out_grad[r * 3 + c] = jac[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)];
}

// ---------------------------------------------------------------------------
// Shape graph
// ---------------------------------------------------------------------------

ShapeGraph build_shape_graph(const geom::TriangleMesh& mesh) {
  const long n = static_cast<long>(mesh.vertices.size());
  std::vector<long> degree(static_cast<std::size_t>(n), 0);
  for (const auto& e : mesh.edges) {
    ++degree[static_cast<std::size_t>(e[0])];
    ++degree[static_cast<std::size_t>(e[1])];
  }

  std::vector<ad::Triplet> trips;
  trips.reserve(mesh.edges.size() * 2);
  for (const auto& e : mesh.edges) {
    const double w =
        -1.0 / std::sqrt(static_cast<double>(degree[static_cast<std::size_t>(e[0])]) *
                         static_cast<double>(degree[static_cast<std::size_t>(e[1])]));
    trips.push_back({e[0], e[1], w});
    trips.push_back({e[1], e[0], w});
  }

  auto edges = std::make_shared<ad::EdgeList>();
  edges->num_vertices = n;
  std::vector<std::pair<long, long>> directed;  // (dst, src)
  directed.reserve(mesh.edges.size() * 2 + static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) directed.emplace_back(i, i);
  for (const auto& e : mesh.edges) {
    directed.emplace_back(e[1], e[0]);
    directed.emplace_back(e[0], e[1]);
  }
  std::sort(directed.begin(), directed.end());
  for (const auto& [dst, src] : directed) {
    edges->src.push_back(src);
    edges->dst.push_back(dst);
  }

  ShapeGraph g;
  g.num_vertices = n;
  g.laplacian = std::make_shared<ad::CsrPair>(
      ad::make_csr_pair(ad::csr_from_triplets(n, n, std::move(trips))));
  g.conv_edges = std::move(edges);
  return g;
}

// ---------------------------------------------------------------------------
// chebConv
// ---------------------------------------------------------------------------

void ChebConv::init_uniform(ad::ParameterStore& store, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * order));
  for (int j = 0; j < order; ++j) {
    Tensor w = Tensor::zeros({in, out});
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    store.add(weight_name(j), std::move(w));
  }
  store.add(bias_name(), Tensor::zeros({1, out}));
}

ad::Var chebconv_forward(ad::Graph& g, const ad::ParameterStore& store, const ChebConv& layer,
                         ad::Var x, const ShapeGraph& graph) {
  const Tensor& xv = g.value(x);
  if (xv.shape.size() != 2 || xv.shape[1] != layer.in)
    throw ConfigError("chebconv " + layer.name + ": input must be {N," +
                      std::to_string(layer.in) + "}, got " + shape_str(xv.shape));
  if (layer.order < 1) throw ConfigError("chebconv " + layer.name + ": order must be >= 1");

  ad::Var acc = g.matmul(x, g.param(layer.weight_name(0), store));
  ad::Var prev2 = x;  // T_0 X
  ad::Var prev;       // T_1 X once computed
  for (int j = 1; j < layer.order; ++j) {
    ad::Var zj;
    if (j == 1) {
      zj = g.spmm(graph.laplacian, x);
    } else {
      zj = g.sub(g.scalar_mul(g.spmm(graph.laplacian, prev), 2.0), prev2);
      prev2 = prev;
    }
    prev = zj;
    acc = g.add(acc, g.matmul(zj, g.param(layer.weight_name(j), store)));
  }
  return g.add(acc, g.param(layer.bias_name(), store));
}

// ---------------------------------------------------------------------------
// vcConv
// ---------------------------------------------------------------------------

void VcConv::init_uniform(ad::ParameterStore& store, Rng& rng) const {
  const double wb = 1.0 / std::sqrt(static_cast<double>(in));
  for (int b = 0; b < bases; ++b) {
    Tensor w = Tensor::zeros({in, out});
    for (double& v : w.data) v = rng.uniform(-wb, wb);
    store.add(basis_name(b), std::move(w));
  }
  const double ab = 1.0 / std::sqrt(static_cast<double>(bases));
  Tensor alpha = Tensor::zeros({num_edges, bases});
  for (double& v : alpha.data) v = rng.uniform(-ab, ab);
  store.add(alpha_name(), std::move(alpha));
  store.add(bias_name(), Tensor::zeros({1, out}));
}

ad::Var vcconv_forward(ad::Graph& g, const ad::ParameterStore& store, const VcConv& layer,
                       ad::Var x, const ShapeGraph& graph) {
  const Tensor& xv = g.value(x);
  if (xv.shape.size() != 2 || xv.shape[1] != layer.in)
    throw ConfigError("vcconv " + layer.name + ": input must be {N," + std::to_string(layer.in) +
                      "}, got " + shape_str(xv.shape));
  const long E = static_cast<long>(graph.conv_edges->src.size());
  const Tensor& av = store.value(layer.alpha_name());
  if (av.shape.size() != 2 || av.shape[0] != E || av.shape[1] != layer.bases)
    throw ConfigError("vcconv " + layer.name + ": coefficient table is " + shape_str(av.shape) +
                      " but the graph has " + std::to_string(E) +
                      " directed edges (self-loops included) and the layer " +
                      std::to_string(layer.bases) + " bases");

  ad::Var alpha = g.param(layer.alpha_name(), store);
  ad::Var acc;
  for (int b = 0; b < layer.bases; ++b) {
    ad::Var yb = g.matmul(x, g.param(layer.basis_name(b), store));
    ad::Var ab = g.slice(alpha, 1, b, 1);
    ad::Var term = g.edge_scatter(yb, ab, graph.conv_edges);
    acc = b == 0 ? term : g.add(acc, term);
  }
  return g.add(acc, g.param(layer.bias_name(), store));
}

// ---------------------------------------------------------------------------
// G2L
// ---------------------------------------------------------------------------

G2LNetwork::G2LNetwork(std::string name, G2LConfig cfg, ShapeGraph graph)
    : name_(std::move(name)), cfg_(std::move(cfg)), graph_(std::move(graph)) {
  if (cfg_.widths.size() < 2) throw ConfigError("g2l: need at least one conv layer");
  const int L = static_cast<int>(cfg_.widths.size()) - 1;
  if (cfg_.orders.empty()) {
    if (cfg_.conv == ConvKind::Cheb) {
      cfg_.orders.assign(static_cast<std::size_t>(L), 6);
    } else {
      for (int i = 1; i <= L; ++i)
        cfg_.orders.push_back(static_cast<int>(cfg_.widths[static_cast<std::size_t>(i)]));
    }
  }
  if (static_cast<int>(cfg_.orders.size()) != L)
    throw ConfigError("g2l: " + std::to_string(cfg_.orders.size()) + " orders for " +
                      std::to_string(L) + " layers");
  for (int k : cfg_.orders)
    if (k < 1) throw ConfigError("g2l: conv orders must be >= 1");

  for (int i = 1; i <= L; ++i) {
    const std::string lname = name_ + ".conv" + std::to_string(i);
    const long in = cfg_.widths[static_cast<std::size_t>(i - 1)];
    const long out = cfg_.widths[static_cast<std::size_t>(i)];
    const int k = cfg_.orders[static_cast<std::size_t>(i - 1)];
    if (cfg_.conv == ConvKind::Cheb)
      cheb_.push_back({lname, in, out, k});
    else
      vc_.push_back({lname, in, out, k, static_cast<long>(graph_.conv_edges->src.size())});
  }
}

long G2LNetwork::expected_global_size() const {
  return cfg_.split == SplitMode::Chunk ? input_width() * graph_.num_vertices : input_width();
}

long G2LNetwork::count_parameters() const {
  long total = 0;
  for (const auto& l : cheb_) total += l.count_parameters();
  for (const auto& l : vc_) total += l.count_parameters();
  return total;
}

std::vector<std::string> G2LNetwork::param_names() const {
  std::vector<std::string> out;
  for (const auto& l : cheb_) {
    for (int j = 0; j < l.order; ++j) out.push_back(l.weight_name(j));
    out.push_back(l.bias_name());
  }
  for (const auto& l : vc_) {
    for (int b = 0; b < l.bases; ++b) out.push_back(l.basis_name(b));
    out.push_back(l.alpha_name());
    out.push_back(l.bias_name());
  }
  return out;
}

void G2LNetwork::init_uniform(ad::ParameterStore& store, Rng& rng) const {
  for (const auto& l : cheb_) l.init_uniform(store, rng);
  for (const auto& l : vc_) l.init_uniform(store, rng);
}

ad::Var G2LNetwork::forward(ad::Graph& g, const ad::ParameterStore& store, ad::Var zg) const {
  const Tensor& zv = g.value(zg);
  const long expected = expected_global_size();
  if (zv.size() != expected)
    throw ConfigError("g2l: global code has " + std::to_string(zv.size()) +
                      " elements, expected " +
                      (cfg_.split == SplitMode::Chunk
                           ? std::to_string(input_width()) + " * N_v = " + std::to_string(expected)
                           : std::to_string(expected)));

  ad::Var x;
  if (cfg_.split == SplitMode::Chunk) {
    x = g.reshape(zg, {graph_.num_vertices, input_width()});
  } else {
    ad::Var row = g.reshape(zg, {1, input_width()});
    x = g.matmul(g.constant(Tensor::full({graph_.num_vertices, 1}, 1.0)), row);
  }

  const int L = static_cast<int>(cfg_.widths.size()) - 1;
  for (int i = 1; i <= L; ++i) {
    if (cfg_.conv == ConvKind::Cheb)
      x = chebconv_forward(g, store, cheb_[static_cast<std::size_t>(i - 1)], x, graph_);
    else
      x = vcconv_forward(g, store, vc_[static_cast<std::size_t>(i - 1)], x, graph_);
    if (i < L && cfg_.activation == G2lActivation::Relu) x = g.relu(x);
  }
  return x;
}

}  // namespace lgc::nets
