#include "lgc/losses.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lgc/error.hpp"

namespace lgc::losses {

using ad::Tensor;

namespace {

void check_batch(ad::Graph& g, ad::Var v, long cols, const char* what) {
  const Tensor& t = g.value(v);
  if (t.shape.size() != 2 || t.shape[1] != cols)
    throw ConfigError(std::string(what) + " must be {B," + std::to_string(cols) + "}, got " +
                      ad::shape_str(t.shape));
  if (t.shape[0] < 1) throw ConfigError(std::string(what) + " batch is empty");
}

}  // namespace

void LossWeights::validate() const {
  for (const auto& [name, v] : {std::pair{"lambda_grad", lambda_grad},
                                std::pair{"lambda_sim", lambda_sim},
                                std::pair{"lambda_reg", lambda_reg}}) {
    if (!std::isfinite(v) || v < 0)
      throw ConfigError(std::string(name) + " must be finite and >= 0, got " + std::to_string(v));
  }
}

ad::Var sal_loss(ad::Graph& g, ad::Var predicted, ad::Var d_u) {
  check_batch(g, predicted, 1, "sal_loss: predictions");
  check_batch(g, d_u, 1, "sal_loss: unsigned distances");
  if (g.value(predicted).shape[0] != g.value(d_u).shape[0])
    throw ConfigError("sal_loss: " + std::to_string(g.value(predicted).shape[0]) +
                      " predictions vs " + std::to_string(g.value(d_u).shape[0]) + " distances");
  return g.mean(g.abs(g.sub(g.abs(predicted), d_u)));
}

IgrTerms igr_loss(ad::Graph& g, ad::Var grad_all, ad::Var grad_surf, ad::Var normals,
                  double lambda_grad) {
  check_batch(g, grad_all, 3, "igr_loss: field gradients");
  check_batch(g, grad_surf, 3, "igr_loss: surface gradients");
  check_batch(g, normals, 3, "igr_loss: normals");
  const Tensor& nv = g.value(normals);
  if (g.value(grad_surf).shape[0] != nv.shape[0])
    throw ConfigError("igr_loss: " + std::to_string(g.value(grad_surf).shape[0]) +
                      " surface gradients vs " + std::to_string(nv.shape[0]) + " normals");
  for (long i = 0; i < nv.shape[0]; ++i) {
    const double len =
        std::sqrt(nv(i, 0) * nv(i, 0) + nv(i, 1) * nv(i, 1) + nv(i, 2) * nv(i, 2));
    if (std::abs(len - 1.0) > 1e-6)
      throw ConfigError("igr_loss: normal " + std::to_string(i) + " has length " +
                        std::to_string(len) + ", expected unit");
  }

  IgrTerms out;
  ad::Var ones = g.constant(Tensor::full({g.value(grad_all).shape[0], 1}, 1.0));
  out.eikonal =
      g.scalar_mul(g.mean(g.square(g.sub(g.l2_norm_rows(grad_all), ones))), lambda_grad);
  out.normal = g.mean(g.l2_norm_rows(g.sub(grad_surf, normals)));
  return out;
}

ad::Var sim_loss(ad::Graph& g, ad::Var local_codes,
                 std::shared_ptr<const ad::CsrPair> ring_average, SimReduce reduce) {
  const Tensor& cv = g.value(local_codes);
  if (cv.shape.size() != 2)
    throw ConfigError("sim_loss: codes must be rank 2, got " + ad::shape_str(cv.shape));
  if (!ring_average || ring_average->mat.rows != cv.shape[0])
    throw ConfigError("sim_loss: ring operator covers " +
                      std::to_string(ring_average ? ring_average->mat.rows : 0) +
                      " vertices but codes have " + std::to_string(cv.shape[0]) + " rows");

  ad::Var target = g.spmm(std::move(ring_average), local_codes);
  ad::Var diff = g.abs(g.sub(local_codes, target));
  if (reduce == SimReduce::Mean) return g.mean(diff);
  // Sum over the code dimension, mean over vertices.
  return g.scalar_mul(g.sum(diff), 1.0 / static_cast<double>(cv.shape[0]));
}

ad::Var sim_loss(ad::Graph& g, ad::Var local_codes, const regions::RingNeighborhoods& rings,
                 regions::RingAverageMode mode, SimReduce reduce) {
  auto op = std::make_shared<ad::CsrPair>(
      ad::make_csr_pair(regions::ring_average_operator(rings, mode)));
  return sim_loss(g, local_codes, std::move(op), reduce);
}

ad::Var reg_loss(ad::Graph& g, ad::Var zg, bool squared) {
  ad::Var sq = g.sum(g.square(zg));
  return squared ? sq : g.sqrt(sq);
}

TotalResult total_loss(ad::Graph& g, const TotalParts& parts, const LossWeights& weights) {
  weights.validate();

  const auto component = [&](ad::Var v, const char* name) {
    if (!v.valid()) return 0.0;
    const Tensor& t = g.value(v);
    if (t.size() != 1)
      throw ConfigError(std::string("total_loss: ") + name + " must be a scalar, got " +
                        ad::shape_str(t.shape));
    const double x = t.data[0];
    if (!std::isfinite(x))
      throw NumericalError(std::string("total_loss: ") + name + " is not finite");
    return x;
  };

  TotalResult out;
  out.breakdown.sal = component(parts.sal, "sal");
  out.breakdown.igr_eikonal = component(parts.igr_eikonal, "igr_eikonal");
  out.breakdown.igr_normal = component(parts.igr_normal, "igr_normal");
  out.breakdown.sim = component(parts.sim, "sim");
  out.breakdown.reg = component(parts.reg, "reg");

  ad::Var total = g.constant(Tensor::scalar(0.0));
  if (parts.sal.valid()) total = g.add(total, parts.sal);
  if (parts.igr_eikonal.valid()) total = g.add(total, parts.igr_eikonal);
  if (parts.igr_normal.valid()) total = g.add(total, parts.igr_normal);
  if (parts.sim.valid()) total = g.add(total, g.scalar_mul(parts.sim, weights.lambda_sim));
  if (parts.reg.valid()) total = g.add(total, g.scalar_mul(parts.reg, weights.lambda_reg));
  out.total = total;
  out.breakdown.total = g.scalar_value(total);
  return out;
}

void append_log_row(const std::string& path, long epoch, long step, const LossBreakdown& row) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot open training log " + path);
  if (fresh) f << "epoch,step,sal,igr_eikonal,igr_normal,sim,reg,total\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", epoch, step,
                row.sal, row.igr_eikonal, row.igr_normal, row.sim, row.reg, row.total);
  f << buf;
  if (!f) throw IoError("failed writing training log " + path);
}

}  // namespace lgc::losses
