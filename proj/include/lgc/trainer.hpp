#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgc/checkpoint.hpp"
#include "lgc/losses.hpp"
#include "lgc/mesh.hpp"
#include "lgc/nets.hpp"
#include "lgc/regions.hpp"
#include "lgc/sampling.hpp"

namespace lgc::train {

// ---------------------------------------------------------------------------
// Model: decoder plus optional global-to-local network
// ---------------------------------------------------------------------------

enum class ModelKind { Sdf4, Sdf8, LgclCheb, LgclVc };

const char* model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::LgclCheb;
  nets::MlpDecoderConfig decoder;  // filled by make_model_config
  // Used by the Lgcl kinds only. conv is forced to match `kind`.
  nets::G2LConfig g2l;
  int ring_depth = 3;  // K for the code-similarity ring average
  regions::RingAverageMode ring_mode = regions::RingAverageMode::Normalized;
  losses::SimReduce sim_reduce = losses::SimReduce::Mean;
};

// Reference configuration for each kind: SDF-4/SDF-8 are plain auto-decoders
// on global coordinates (latent 64 / 256); the Lgcl kinds pair the four-layer
// decoder with a G2L split network over the shape graph.
ModelConfig make_model_config(ModelKind kind);

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ModelKind kind() const { return cfg_.kind; }
  bool has_g2l() const;
  const nets::MlpDecoder& decoder() const { return decoder_; }

  // Per-shape instance sharing one weight set: parameter names depend only on
  // the layer index, never on the graph.
  nets::G2LNetwork g2l_for(const nets::ShapeGraph& graph) const;

  // Length of a shape's trainable global code.
  long latent_size(long num_vertices) const;

  // Registers decoder (and G2L) weights. The Vc kind sizes its per-edge
  // coefficient tables from `graph`, so that kind requires one.
  void init_params(ad::ParameterStore& store, Rng& rng,
                   const nets::ShapeGraph* graph = nullptr) const;

  // Weight count excluding latent codes; Vc needs the graph for the same
  // reason as init_params.
  long count_parameters(const nets::ShapeGraph* graph = nullptr) const;

  nlohmann::json describe() const;

 private:
  ModelConfig cfg_;
  nets::MlpDecoder decoder_;
};

ModelConfig model_config_from_json(const nlohmann::json& j);

// First field where `saved` differs from `expected` -> ConfigError naming it.
void check_architecture(const nlohmann::json& saved, const nlohmann::json& expected);

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

// One training (or test) shape with everything the step loop needs
// precomputed: sample split, per-sample region assignment against the mesh
// vertices, graph operators, and the ring-average operator for the
// code-similarity loss. The global code itself lives in the ParameterStore
// under `latent_name`.
struct ShapeEntry {
  std::string id;
  geom::TriangleMesh mesh;
  geom::SampleSet samples;
  std::string latent_name;

  std::vector<long> surface_rows, offsurface_rows;

  // Mesh bounding box inflated 10% per side; the eikonal term draws its
  // domain-wide points uniformly from here.
  Vec3 box_lo, box_hi;

  // Filled only for models with a G2L stage.
  nets::ShapeGraph graph;
  std::shared_ptr<const regions::KeyPointSet> keypoints;
  regions::RegionAssignment assignment;
  std::shared_ptr<const ad::CsrPair> ring_average;
};

ShapeEntry prepare_shape(std::string id, geom::TriangleMesh mesh, geom::SampleSet samples,
                         const Model& model);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  long epochs = 300;
  double lr_network = 5e-4;
  double lr_latent = 1e-3;
  long decay_epoch = 200;  // epochs beyond this index use the decayed rates
  double decay_factor = 0.5;
  // Per shape per step: half surface, a quarter perturbed, and a quarter
  // drawn uniformly from the shape's box. The uniform points carry no
  // distance label and feed only the eikonal term.
  long batch_points = 2048;
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  // Latent inference keeps the full training loss unless these opt out.
  bool infer_sim = true;
  bool infer_reg = true;
  std::string log_path;              // per-step CSV; empty disables
  std::ostream* progress = nullptr;  // per-epoch lines; the CLI passes &std::cout

  void validate() const;
};

struct EpochStats {
  long epoch = 0;
  losses::LossBreakdown mean;  // mean over the epoch's steps
  double lr_network = 0, lr_latent = 0;
};

struct TrainResult {
  long steps = 0;
  std::vector<EpochStats> epochs;
};

// Auto-decoder loop: per epoch, per shape, one Adam step on the shared
// weights and that shape's global code. Missing latent entries are created
// with N(0, 0.01^2) draws seeded from (config.seed, latent name). Resuming a
// checkpoint continues with first_epoch = saved epoch + 1; the learning-rate
// schedule depends only on the epoch index. Non-finite losses or updates
// abort with the epoch/step/shape named.
TrainResult train(const std::vector<ShapeEntry>& shapes, const Model& model,
                  ad::ParameterStore& store, const TrainConfig& cfg, long first_epoch = 1);

// Fits a fresh code for one shape with the network weights frozen: only
// `latent_name` is updated (created anew if present). Runs cfg.epochs steps
// with the training loss (sim/reg subject to cfg.infer_sim / cfg.infer_reg).
struct InferResult {
  ad::Tensor latent;
  TrainResult log;
};

InferResult infer_latent(const ShapeEntry& shape, const Model& model, ad::ParameterStore& store,
                         const TrainConfig& cfg, const std::string& latent_name);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

// Parameter checkpoint plus the architecture descriptor and epoch counter.
void save_model(const std::string& dir, const Model& model, const ad::ParameterStore& store,
                long epochs_completed, std::uint64_t seed);

struct LoadedModel {
  Model model;
  long epoch = 0;
  std::uint64_t seed = 0;
};

// Rebuilds the model from the stored descriptor and replaces the store's
// contents. When `expected` is given, its descriptor must match the stored
// one exactly; the first differing field is named in the error.
LoadedModel load_model(const std::string& dir, ad::ParameterStore& store,
                       const Model* expected = nullptr);

}  // namespace lgc::train
