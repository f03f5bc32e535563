#include "lgc/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <iterator>
#include <ostream>
#include <utility>

#include "lgc/error.hpp"
#include "lgc/hash.hpp"
#include "lgc/rng.hpp"

namespace lgc::train {

using ad::Tensor;

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Sdf4: return "sdf4";
    case ModelKind::Sdf8: return "sdf8";
    case ModelKind::LgclCheb: return "lgcl-cheb";
    case ModelKind::LgclVc: return "lgcl-vc";
  }
  throw Error("model_kind_name: bad enum value");
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "sdf4") return ModelKind::Sdf4;
  if (name == "sdf8") return ModelKind::Sdf8;
  if (name == "lgcl-cheb") return ModelKind::LgclCheb;
  if (name == "lgcl-vc") return ModelKind::LgclVc;
  throw ConfigError("unknown model kind '" + name +
                    "' (expected sdf4, sdf8, lgcl-cheb, or lgcl-vc)");
}

ModelConfig make_model_config(ModelKind kind) {
  ModelConfig cfg;
  cfg.kind = kind;
  switch (kind) {
    case ModelKind::Sdf4: cfg.decoder = nets::sdf4_config(); break;
    case ModelKind::Sdf8: cfg.decoder = nets::sdf8_config(); break;
    case ModelKind::LgclCheb:
      cfg.decoder = nets::sdf4_config();
      cfg.g2l.conv = nets::ConvKind::Cheb;
      break;
    case ModelKind::LgclVc:
      cfg.decoder = nets::sdf4_config();
      cfg.g2l.conv = nets::ConvKind::Vc;
      break;
  }
  return cfg;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)), decoder_("decoder", cfg_.decoder) {
  if (has_g2l()) {
    cfg_.g2l.conv =
        cfg_.kind == ModelKind::LgclCheb ? nets::ConvKind::Cheb : nets::ConvKind::Vc;
    if (cfg_.g2l.widths.back() != cfg_.decoder.latent_dim)
      throw ConfigError("model: G2L output width " + std::to_string(cfg_.g2l.widths.back()) +
                        " does not match the decoder latent size " +
                        std::to_string(cfg_.decoder.latent_dim));
    if (cfg_.ring_depth < 1)
      throw ConfigError("model: ring depth must be >= 1, got " +
                        std::to_string(cfg_.ring_depth));
  }
}

bool Model::has_g2l() const {
  return cfg_.kind == ModelKind::LgclCheb || cfg_.kind == ModelKind::LgclVc;
}

nets::G2LNetwork Model::g2l_for(const nets::ShapeGraph& graph) const {
  if (!has_g2l()) throw ConfigError("model kind has no G2L stage");
  return nets::G2LNetwork("g2l", cfg_.g2l, graph);
}

long Model::latent_size(long num_vertices) const {
  if (!has_g2l()) return cfg_.decoder.latent_dim;
  if (cfg_.g2l.split == nets::SplitMode::Chunk) return cfg_.g2l.widths.front() * num_vertices;
  return cfg_.g2l.widths.front();
}

namespace {

// Placeholder graph for operations that touch only graph-independent weights.
nets::ShapeGraph dummy_graph() {
  nets::ShapeGraph g;
  g.num_vertices = 1;
  g.laplacian =
      std::make_shared<const ad::CsrPair>(ad::make_csr_pair(ad::csr_from_triplets(1, 1, {})));
  auto edges = std::make_shared<ad::EdgeList>();
  edges->src = {0};
  edges->dst = {0};
  edges->num_vertices = 1;
  g.conv_edges = edges;
  return g;
}

const nets::ShapeGraph& graph_or_dummy(const ModelConfig& cfg, const nets::ShapeGraph* graph,
                                       nets::ShapeGraph& storage, const char* what) {
  if (graph) return *graph;
  if (cfg.g2l.conv == nets::ConvKind::Vc)
    throw ConfigError(std::string(what) +
                      ": a vc model needs a shape graph to size its per-edge tables");
  storage = dummy_graph();
  return storage;
}

}  // namespace

void Model::init_params(ad::ParameterStore& store, Rng& rng,
                        const nets::ShapeGraph* graph) const {
  decoder_.init_geometric(store, rng);
  if (!has_g2l()) return;
  nets::ShapeGraph storage;
  g2l_for(graph_or_dummy(cfg_, graph, storage, "init_params")).init_uniform(store, rng);
}

long Model::count_parameters(const nets::ShapeGraph* graph) const {
  long n = decoder_.count_parameters();
  if (!has_g2l()) return n;
  nets::ShapeGraph storage;
  return n + g2l_for(graph_or_dummy(cfg_, graph, storage, "count_parameters")).count_parameters();
}

nlohmann::json Model::describe() const {
  nlohmann::json j;
  j["kind"] = model_kind_name(cfg_.kind);
  j["decoder"] = {{"latent_dim", cfg_.decoder.latent_dim},
                  {"widths", cfg_.decoder.widths},
                  {"skip_layer", cfg_.decoder.skip_layer},
                  {"softplus_beta", cfg_.decoder.softplus_beta},
                  {"geo_init_radius", cfg_.decoder.geo_init_radius}};
  if (has_g2l()) {
    j["g2l"] = {{"widths", cfg_.g2l.widths},
                {"orders", cfg_.g2l.orders},
                {"split", cfg_.g2l.split == nets::SplitMode::Chunk ? "chunk" : "broadcast"},
                {"activation",
                 cfg_.g2l.activation == nets::G2lActivation::Relu ? "relu" : "none"}};
    j["ring_depth"] = cfg_.ring_depth;
    j["ring_mode"] =
        cfg_.ring_mode == regions::RingAverageMode::Normalized ? "normalized" : "literal";
    j["sim_reduce"] = cfg_.sim_reduce == losses::SimReduce::Mean ? "mean" : "sum";
  }
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg = make_model_config(model_kind_from_name(j.at("kind").get<std::string>()));
    const auto& d = j.at("decoder");
    cfg.decoder.latent_dim = d.at("latent_dim").get<long>();
    cfg.decoder.widths = d.at("widths").get<std::vector<long>>();
    cfg.decoder.skip_layer = d.at("skip_layer").get<int>();
    cfg.decoder.softplus_beta = d.at("softplus_beta").get<double>();
    cfg.decoder.geo_init_radius = d.at("geo_init_radius").get<double>();
    if (j.contains("g2l")) {
      const auto& g = j.at("g2l");
      cfg.g2l.widths = g.at("widths").get<std::vector<long>>();
      cfg.g2l.orders = g.at("orders").get<std::vector<int>>();
      std::string split = g.at("split").get<std::string>();
      if (split != "chunk" && split != "broadcast")
        throw ConfigError("model descriptor: unknown split mode '" + split + "'");
      cfg.g2l.split =
          split == "chunk" ? nets::SplitMode::Chunk : nets::SplitMode::Broadcast;
      std::string act = g.at("activation").get<std::string>();
      if (act != "relu" && act != "none")
        throw ConfigError("model descriptor: unknown activation '" + act + "'");
      cfg.g2l.activation =
          act == "relu" ? nets::G2lActivation::Relu : nets::G2lActivation::None;
      cfg.ring_depth = j.at("ring_depth").get<int>();
      std::string mode = j.at("ring_mode").get<std::string>();
      if (mode != "normalized" && mode != "literal")
        throw ConfigError("model descriptor: unknown ring mode '" + mode + "'");
      cfg.ring_mode = mode == "normalized" ? regions::RingAverageMode::Normalized
                                           : regions::RingAverageMode::Literal;
      std::string reduce = j.at("sim_reduce").get<std::string>();
      if (reduce != "mean" && reduce != "sum")
        throw ConfigError("model descriptor: unknown sim reduce '" + reduce + "'");
      cfg.sim_reduce = reduce == "mean" ? losses::SimReduce::Mean : losses::SimReduce::Sum;
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model descriptor: ") + e.what());
  }
}

void check_architecture(const nlohmann::json& saved, const nlohmann::json& expected) {
  auto delta = nlohmann::json::diff(expected, saved);
  if (delta.empty()) return;
  std::string path = delta.at(0).value("path", "");
  auto at_or_missing = [&](const nlohmann::json& j) -> std::string {
    nlohmann::json::json_pointer p(path);
    return j.contains(p) ? j.at(p).dump() : "(missing)";
  };
  throw ConfigError("checkpoint architecture mismatch at '" + path + "': checkpoint has " +
                    at_or_missing(saved) + ", expected " + at_or_missing(expected));
}

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

ShapeEntry prepare_shape(std::string id, geom::TriangleMesh mesh, geom::SampleSet samples,
                         const Model& model) {
  if (id.empty()) throw ConfigError("prepare_shape: empty shape id");
  long n = samples.size();
  if (n == 0) throw ConfigError("prepare_shape: shape '" + id + "' has no samples");
  if (static_cast<long>(samples.unsigned_distance.size()) != n ||
      static_cast<long>(samples.on_surface.size()) != n ||
      static_cast<long>(samples.normal.size()) != n)
    throw ConfigError("prepare_shape: shape '" + id + "' has inconsistent sample arrays");

  ShapeEntry s;
  s.id = id;
  s.latent_name = "z." + id;
  for (long i = 0; i < n; ++i)
    (samples.on_surface[i] ? s.surface_rows : s.offsurface_rows).push_back(i);
  if (s.surface_rows.empty() || s.offsurface_rows.empty())
    throw ConfigError("prepare_shape: shape '" + id +
                      "' needs both surface and off-surface samples");

  s.box_lo = s.box_hi = mesh.vertices.at(0);
  for (const Vec3& v : mesh.vertices) {
    s.box_lo = {std::min(s.box_lo.x, v.x), std::min(s.box_lo.y, v.y), std::min(s.box_lo.z, v.z)};
    s.box_hi = {std::max(s.box_hi.x, v.x), std::max(s.box_hi.y, v.y), std::max(s.box_hi.z, v.z)};
  }
  const Vec3 pad = 0.1 * (s.box_hi - s.box_lo);
  s.box_lo = s.box_lo - pad;
  s.box_hi = s.box_hi + pad;

  if (model.has_g2l()) {
    s.graph = nets::build_shape_graph(mesh);
    s.keypoints = std::make_shared<regions::KeyPointSet>(mesh.vertices);
    s.assignment = regions::assign_regions(samples.points, *s.keypoints);
    auto rings = regions::ring_neighborhoods(mesh, model.config().ring_depth);
    s.ring_average = std::make_shared<const ad::CsrPair>(
        ad::make_csr_pair(regions::ring_average_operator(rings, model.config().ring_mode)));
  }
  s.mesh = std::move(mesh);
  s.samples = std::move(samples);
  return s;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
  if (!(lr_network > 0) || !(lr_latent > 0))
    throw ConfigError("train config: learning rates must be > 0");
  if (decay_epoch < 0 || decay_epoch > epochs)
    throw ConfigError("train config: decay epoch must lie in [0, epochs]");
  if (!(decay_factor > 0)) throw ConfigError("train config: decay factor must be > 0");
  if (batch_points < 2)
    throw ConfigError("train config: batch needs at least one surface and one off-surface point");
  weights.validate();
}

namespace {

struct StepSpec {
  const ShapeEntry* shape = nullptr;
  const nets::G2LNetwork* g2l = nullptr;  // null for the plain auto-decoder kinds
  bool update_network = true;
  bool use_sim = true;
  bool use_reg = true;
};

double decayed(double lr, long epoch, const TrainConfig& cfg) {
  return epoch > cfg.decay_epoch ? lr * cfg.decay_factor : lr;
}

Rng step_rng(const TrainConfig& cfg, const char* purpose, long epoch, const std::string& id) {
  return Rng(cfg.seed).derive(fnv1a64(purpose)).derive(static_cast<std::uint64_t>(epoch))
      .derive(fnv1a64(id));
}

void ensure_latent(ad::ParameterStore& store, const std::string& name, long size,
                   std::uint64_t seed) {
  if (store.contains(name)) return;
  Rng rng = Rng(seed).derive(fnv1a64("latent:" + name));
  Tensor z({size}, std::vector<double>(static_cast<std::size_t>(size)));
  for (long i = 0; i < size; ++i) z[i] = 0.01 * rng.normal();
  store.add(name, std::move(z), ad::ParamGroup::Latent);
}

struct Batch {
  Tensor x;        // {B,3} coordinates fed to the decoder
  Tensor d;        // {n_sal,1} unsigned distances
  Tensor normals;  // {n_surface,3}
  std::shared_ptr<std::vector<long>> code_rows;  // region index per batch point
  long n_surface = 0;
  long n_sal = 0;  // leading rows with distance labels (surface + perturbed)
};

// Rows: [surface | perturbed | uniform]. The uniform tail samples the shape's
// box so the eikonal term sees the whole domain, not just the data support.
Batch draw_batch(const ShapeEntry& s, bool local_coords, long batch_points, Rng& rng) {
  Batch b;
  b.n_surface = batch_points / 2;
  long n_off = batch_points / 4;
  b.n_sal = b.n_surface + n_off;
  long n_uniform = batch_points - b.n_sal;
  std::vector<long> rows;
  rows.reserve(b.n_sal);
  for (long i = 0; i < b.n_surface; ++i)
    rows.push_back(s.surface_rows[rng.uniform_index(s.surface_rows.size())]);
  for (long i = 0; i < n_off; ++i)
    rows.push_back(s.offsurface_rows[rng.uniform_index(s.offsurface_rows.size())]);

  b.x = Tensor::zeros({batch_points, 3});
  b.d = Tensor::zeros({b.n_sal, 1});
  b.normals = Tensor::zeros({b.n_surface, 3});
  if (local_coords) b.code_rows = std::make_shared<std::vector<long>>();
  for (long i = 0; i < b.n_sal; ++i) {
    long r = rows[i];
    const Vec3 p = local_coords ? s.assignment.local[r] : s.samples.points[r];
    b.x(i, 0) = p.x;
    b.x(i, 1) = p.y;
    b.x(i, 2) = p.z;
    b.d[i] = s.samples.unsigned_distance[r];
    if (local_coords) b.code_rows->push_back(s.assignment.region[r]);
    if (i < b.n_surface) {
      b.normals(i, 0) = s.samples.normal[r].x;
      b.normals(i, 1) = s.samples.normal[r].y;
      b.normals(i, 2) = s.samples.normal[r].z;
    }
  }
  for (long i = 0; i < n_uniform; ++i) {
    Vec3 p{rng.uniform(s.box_lo.x, s.box_hi.x), rng.uniform(s.box_lo.y, s.box_hi.y),
           rng.uniform(s.box_lo.z, s.box_hi.z)};
    if (local_coords) {
      long region = s.keypoints->nearest(p);
      b.code_rows->push_back(region);
      p = p - s.keypoints->points()[region];
    }
    b.x(b.n_sal + i, 0) = p.x;
    b.x(b.n_sal + i, 1) = p.y;
    b.x(b.n_sal + i, 2) = p.z;
  }
  return b;
}

losses::LossBreakdown run_step(const Model& model, const StepSpec& spec,
                               ad::ParameterStore& store, const TrainConfig& cfg, Rng rng,
                               double lr_network, double lr_latent) {
  const ShapeEntry& s = *spec.shape;
  Batch batch = draw_batch(s, spec.g2l != nullptr, cfg.batch_points, rng);

  ad::Graph g;
  ad::Var zg = g.param(s.latent_name, store);
  ad::Var code;
  ad::Var vertex_codes;
  if (spec.g2l) {
    vertex_codes = spec.g2l->forward(g, store, zg);
    code = g.gather_rows(vertex_codes, batch.code_rows);
  } else {
    ad::Var row = g.reshape(zg, {1, model.config().decoder.latent_dim});
    ad::Var ones = g.constant(Tensor::full({cfg.batch_points, 1}, 1.0));
    code = g.matmul(ones, row);
  }

  ad::Var x = g.constant(std::move(batch.x));
  auto vg = model.decoder().forward_with_gradient(g, store, x, code);

  losses::TotalParts parts;
  ad::Var value_sal = g.slice(vg.value, 0, 0, batch.n_sal);
  parts.sal = losses::sal_loss(g, value_sal, g.constant(std::move(batch.d)));
  ad::Var grad_surf = g.slice(vg.grad, 0, 0, batch.n_surface);
  auto igr = losses::igr_loss(g, vg.grad, grad_surf, g.constant(std::move(batch.normals)),
                              cfg.weights.lambda_grad);
  parts.igr_eikonal = igr.eikonal;
  parts.igr_normal = igr.normal;
  if (spec.g2l && spec.use_sim)
    parts.sim = losses::sim_loss(g, vertex_codes, s.ring_average, model.config().sim_reduce);
  if (spec.use_reg) parts.reg = losses::reg_loss(g, zg);

  auto total = losses::total_loss(g, parts, cfg.weights);
  auto grads = g.backward(total.total);
  if (!spec.update_network) {
    for (auto it = grads.begin(); it != grads.end();)
      it = it->first == s.latent_name ? std::next(it) : grads.erase(it);
  }
  store.adam_step(grads, lr_network, lr_latent);
  return total.breakdown;
}

void accumulate(losses::LossBreakdown& acc, const losses::LossBreakdown& step) {
  acc.sal += step.sal;
  acc.igr_eikonal += step.igr_eikonal;
  acc.igr_normal += step.igr_normal;
  acc.sim += step.sim;
  acc.reg += step.reg;
  acc.total += step.total;
}

void scale(losses::LossBreakdown& acc, double k) {
  acc.sal *= k;
  acc.igr_eikonal *= k;
  acc.igr_normal *= k;
  acc.sim *= k;
  acc.reg *= k;
  acc.total *= k;
}

void print_progress(std::ostream& out, const EpochStats& e, long epochs) {
  char line[256];
  std::snprintf(line, sizeof line,
                "epoch %ld/%ld  sal %.6g  eik %.6g  nrm %.6g  sim %.6g  reg %.6g  total %.6g"
                "  lr %.3g/%.3g\n",
                e.epoch, epochs, e.mean.sal, e.mean.igr_eikonal, e.mean.igr_normal, e.mean.sim,
                e.mean.reg, e.mean.total, e.lr_network, e.lr_latent);
  out << line;
}

// Shared epoch loop for training and latent inference. `specs` carries one
// entry per shape; latents named there must already exist in the store.
TrainResult run_epochs(const Model& model, const std::vector<StepSpec>& specs,
                       ad::ParameterStore& store, const TrainConfig& cfg, long first_epoch,
                       const char* purpose) {
  TrainResult result;
  long shapes_n = static_cast<long>(specs.size());
  for (long epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr_network = decayed(cfg.lr_network, epoch, cfg);
    stats.lr_latent = decayed(cfg.lr_latent, epoch, cfg);
    for (long i = 0; i < shapes_n; ++i) {
      const ShapeEntry& s = *specs[i].shape;
      long step = (epoch - 1) * shapes_n + i + 1;
      losses::LossBreakdown bd;
      try {
        bd = run_step(model, specs[i], store, cfg, step_rng(cfg, purpose, epoch, s.id),
                      stats.lr_network, stats.lr_latent);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(purpose) + " diverged at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step) +
                             " (shape '" + s.id + "'): " + e.what());
      }
      if (!cfg.log_path.empty()) losses::append_log_row(cfg.log_path, epoch, step, bd);
      accumulate(stats.mean, bd);
      ++result.steps;
    }
    scale(stats.mean, 1.0 / static_cast<double>(shapes_n));
    if (cfg.progress) print_progress(*cfg.progress, stats, cfg.epochs);
    result.epochs.push_back(stats);
  }
  return result;
}

}  // namespace

TrainResult train(const std::vector<ShapeEntry>& shapes, const Model& model,
                  ad::ParameterStore& store, const TrainConfig& cfg, long first_epoch) {
  cfg.validate();
  if (shapes.empty()) throw ConfigError("train: no shapes");
  if (first_epoch < 1) throw ConfigError("train: first epoch must be >= 1");

  std::vector<nets::G2LNetwork> g2l;
  if (model.has_g2l()) {
    g2l.reserve(shapes.size());
    for (const ShapeEntry& s : shapes) {
      if (s.graph.num_vertices == 0 || !s.ring_average)
        throw ConfigError("train: shape '" + s.id + "' was not prepared for a G2L model");
      g2l.push_back(model.g2l_for(s.graph));
    }
  }

  std::vector<StepSpec> specs(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    specs[i].shape = &shapes[i];
    specs[i].g2l = model.has_g2l() ? &g2l[i] : nullptr;
  }

  // Created only when a step will actually run, so zero-epoch calls leave the
  // store bitwise untouched.
  if (first_epoch <= cfg.epochs)
    for (const ShapeEntry& s : shapes)
      ensure_latent(store, s.latent_name, model.latent_size(s.graph.num_vertices), cfg.seed);

  return run_epochs(model, specs, store, cfg, first_epoch, "training");
}

InferResult infer_latent(const ShapeEntry& shape, const Model& model, ad::ParameterStore& store,
                         const TrainConfig& cfg, const std::string& latent_name) {
  cfg.validate();
  if (latent_name.empty()) throw ConfigError("infer_latent: empty latent name");

  std::vector<nets::G2LNetwork> g2l;
  if (model.has_g2l()) {
    if (shape.graph.num_vertices == 0 || !shape.ring_average)
      throw ConfigError("infer_latent: shape '" + shape.id +
                        "' was not prepared for a G2L model");
    g2l.push_back(model.g2l_for(shape.graph));
  }

  // The shape entry's own latent name is ignored on purpose: inference fits a
  // fresh code under the caller's name, never touching training codes.
  ShapeEntry probe = shape;
  probe.latent_name = latent_name;

  if (store.contains(latent_name)) store.remove(latent_name);
  ensure_latent(store, latent_name, model.latent_size(shape.graph.num_vertices), cfg.seed);

  std::vector<StepSpec> specs(1);
  specs[0].shape = &probe;
  specs[0].g2l = model.has_g2l() ? &g2l[0] : nullptr;
  specs[0].update_network = false;
  specs[0].use_sim = cfg.infer_sim;
  specs[0].use_reg = cfg.infer_reg;

  InferResult result;
  result.log = run_epochs(model, specs, store, cfg, 1, "latent inference");
  result.latent = store.value(latent_name);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_model(const std::string& dir, const Model& model, const ad::ParameterStore& store,
                long epochs_completed, std::uint64_t seed) {
  ad::CheckpointMeta meta;
  meta.epoch = epochs_completed;
  meta.seed = seed;
  meta.extra["arch"] = model.describe();
  ad::save_checkpoint(dir, store, meta);
}

LoadedModel load_model(const std::string& dir, ad::ParameterStore& store, const Model* expected) {
  ad::ParameterStore loaded;
  ad::CheckpointMeta meta = ad::load_checkpoint(dir, loaded);
  if (!meta.extra.contains("arch"))
    throw ConfigError("checkpoint '" + dir + "' carries no architecture descriptor");
  nlohmann::json arch = meta.extra.at("arch");
  if (expected) check_architecture(arch, expected->describe());
  LoadedModel out{Model(model_config_from_json(arch)), meta.epoch, meta.seed};
  store = std::move(loaded);
  return out;
}

}  // namespace lgc::train
