#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lgc/graph.hpp"
#include "lgc/mesh.hpp"
#include "lgc/optim.hpp"
#include "lgc/rng.hpp"

namespace lgc::nets {

// ---------------------------------------------------------------------------
// SDF decoder MLP
// ---------------------------------------------------------------------------

struct MlpDecoderConfig {
  long latent_dim = 64;      // m; first layer consumes 3 + m inputs
  std::vector<long> widths;  // full width chain, widths.front() = 3 + m, widths.back() = 1
  int skip_layer = 0;        // 0 = none; s >= 1 re-concatenates the raw input after layer s
  double softplus_beta = 100.0;
  double geo_init_radius = 0.5;
};

MlpDecoderConfig sdf4_config(long latent_dim = 64);
MlpDecoderConfig sdf8_config(long latent_dim = 256);

// Fully connected SDF decoder with Softplus after every layer but the last
// and an optional skip connection that re-feeds the raw (x, code) input.
class MlpDecoder {
 public:
  MlpDecoder(std::string name, MlpDecoderConfig cfg);

  const MlpDecoderConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }
  int num_layers() const { return static_cast<int>(cfg_.widths.size()) - 1; }
  long layer_input_width(int layer) const;  // layers are 1-based; accounts for the skip
  std::string weight_name(int layer) const;
  std::string bias_name(int layer) const;
  std::vector<std::string> param_names() const;
  long count_parameters() const;

  // Registers all weights in the store using the sphere-like initialization:
  // the untrained decoder approximates ||x|| - geo_init_radius.
  void init_geometric(ad::ParameterStore& store, Rng& rng) const;

  // x {B,3}, code {B,m} -> {B,1}
  ad::Var forward(ad::Graph& g, const ad::ParameterStore& store, ad::Var x, ad::Var code) const;

  // Value plus the analytic spatial gradient, built as a forward chain of
  // tape ops so backward() reaches the weights through it.
  struct ValueGrad {
    ad::Var value;  // {B,1}
    ad::Var grad;   // {B,3}
  };
  ValueGrad forward_with_gradient(ad::Graph& g, const ad::ParameterStore& store, ad::Var x,
                                  ad::Var code) const;

  // Tape-free batch evaluation for dense grids; matches forward() bitwise.
  // x: count*3, code: count*m, out: count. out_grad: count*3.
  void eval(const ad::ParameterStore& store, const double* x, const double* code, long count,
            double* out) const;
  void eval_with_gradient(const ad::ParameterStore& store, const double* x, const double* code,
                          long count, double* out, double* out_grad) const;

 private:
  ValueGrad run(ad::Graph& g, const ad::ParameterStore& store, ad::Var x, ad::Var code,
                bool with_grad) const;

  std::string name_;
  MlpDecoderConfig cfg_;
};

// ---------------------------------------------------------------------------
// Graph convolutions
// ---------------------------------------------------------------------------

// Structural operators of a mesh graph shared by all conv layers.
struct ShapeGraph {
  long num_vertices = 0;
  // Scaled Chebyshev Laplacian with lambda_max fixed at 2:
  // Ltilde = L - I = -D^{-1/2} A D^{-1/2}.
  std::shared_ptr<const ad::CsrPair> laplacian;
  // Directed neighbor edges plus self-loops, sorted by (dst, src); the row
  // index of an edge is its coefficient row in vcConv layers.
  std::shared_ptr<const ad::EdgeList> conv_edges;
};

ShapeGraph build_shape_graph(const geom::TriangleMesh& mesh);

// Chebyshev-polynomial spectral convolution: sum_j T_j(Ltilde) X W_j + b.
struct ChebConv {
  std::string name;
  long in = 0, out = 0;
  int order = 0;  // k

  std::string weight_name(int j) const { return name + ".w" + std::to_string(j); }
  std::string bias_name() const { return name + ".b"; }
  long count_parameters() const { return static_cast<long>(order) * in * out + out; }
  void init_uniform(ad::ParameterStore& store, Rng& rng) const;
};

ad::Var chebconv_forward(ad::Graph& g, const ad::ParameterStore& store, const ChebConv& layer,
                         ad::Var x, const ShapeGraph& graph);

// Per-edge mixed-basis convolution: out_i = sum_{j in N1(i) u {i}} X_j M_{j->i} + b
// with M_{j->i} = sum_b alpha_{(j->i),b} B_b over k shared bases.
struct VcConv {
  std::string name;
  long in = 0, out = 0;
  int bases = 0;      // k
  long num_edges = 0; // directed edges incl. self-loops; rows of alpha

  std::string basis_name(int b) const { return name + ".basis" + std::to_string(b); }
  std::string alpha_name() const { return name + ".alpha"; }
  std::string bias_name() const { return name + ".b"; }
  long count_parameters() const {
    return static_cast<long>(bases) * in * out + num_edges * bases + out;
  }
  void init_uniform(ad::ParameterStore& store, Rng& rng) const;
};

ad::Var vcconv_forward(ad::Graph& g, const ad::ParameterStore& store, const VcConv& layer,
                       ad::Var x, const ShapeGraph& graph);

// ---------------------------------------------------------------------------
// G2L: split one global code into per-vertex local codes
// ---------------------------------------------------------------------------

enum class ConvKind { Cheb, Vc };
enum class SplitMode { Chunk, Broadcast };
enum class G2lActivation { Relu, None };

struct G2LConfig {
  ConvKind conv = ConvKind::Cheb;
  SplitMode split = SplitMode::Chunk;
  G2lActivation activation = G2lActivation::Relu;  // between layers; never after the last
  std::vector<long> widths = {8, 8, 16, 32, 64};   // per-vertex channel widths
  // Per-layer k. Empty selects the reference setting: 6 for every chebConv
  // layer, the layer's output width for vcConv.
  std::vector<int> orders = {};
};

class G2LNetwork {
 public:
  G2LNetwork(std::string name, G2LConfig cfg, ShapeGraph graph);

  const G2LConfig& config() const { return cfg_; }
  const ShapeGraph& graph() const { return graph_; }
  long input_width() const { return cfg_.widths.front(); }
  long output_width() const { return cfg_.widths.back(); }
  // Length the global code must have: 8 * N_v in chunk mode, 8 in broadcast.
  long expected_global_size() const;
  long count_parameters() const;
  std::vector<std::string> param_names() const;

  void init_uniform(ad::ParameterStore& store, Rng& rng) const;

  // zg (rank-1, expected_global_size()) -> local codes {N_v, widths.back()}
  ad::Var forward(ad::Graph& g, const ad::ParameterStore& store, ad::Var zg) const;

 private:
  std::string name_;
  G2LConfig cfg_;
  ShapeGraph graph_;
  std::vector<ChebConv> cheb_;
  std::vector<VcConv> vc_;
};

}  // namespace lgc::nets
