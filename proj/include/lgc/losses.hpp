#pragma once

#include <memory>
#include <string>

#include "lgc/graph.hpp"
#include "lgc/regions.hpp"

namespace lgc::losses {

struct LossWeights {
  double lambda_grad = 0.1;
  double lambda_sim = 1.0;
  double lambda_reg = 0.001;

  void validate() const;  // finite and nonnegative
};

// Values logged per optimization step. igr_eikonal is stored with its
// lambda_grad weight already applied; sim and reg are raw, so
// total = sal + igr_eikonal + igr_normal + lambda_sim*sim + lambda_reg*reg.
struct LossBreakdown {
  double sal = 0;
  double igr_eikonal = 0;
  double igr_normal = 0;
  double sim = 0;
  double reg = 0;
  double total = 0;
};

// Sign-agnostic distance: mean | |f| - d_u |. predicted and d_u are {B,1}.
ad::Var sal_loss(ad::Graph& g, ad::Var predicted, ad::Var d_u);

struct IgrTerms {
  ad::Var eikonal;  // lambda_grad * mean (||grad f|| - 1)^2 over the full batch
  ad::Var normal;   // mean ||grad f - n|| over the surface batch
};
// grad_all {Ba,3}, grad_surf {Bs,3}, normals {Bs,3} unit rows.
IgrTerms igr_loss(ad::Graph& g, ad::Var grad_all, ad::Var grad_surf, ad::Var normals,
                  double lambda_grad);

enum class SimReduce { Mean, Sum };  // reduction over the code dimension

// Per-vertex L1 distance between a code and its neighborhood aggregate,
// averaged over vertices. The aggregate operator comes from
// regions::ring_average_operator; prefer the prebuilt-operator overload when
// calling every step.
ad::Var sim_loss(ad::Graph& g, ad::Var local_codes,
                 std::shared_ptr<const ad::CsrPair> ring_average, SimReduce reduce);
ad::Var sim_loss(ad::Graph& g, ad::Var local_codes, const regions::RingNeighborhoods& rings,
                 regions::RingAverageMode mode, SimReduce reduce);

// Euclidean norm of the global code (optionally squared).
ad::Var reg_loss(ad::Graph& g, ad::Var zg, bool squared = false);

// Components for the weighted total; default-constructed (invalid) Vars are
// treated as absent and contribute zero.
struct TotalParts {
  ad::Var sal;
  ad::Var igr_eikonal;  // already lambda_grad-weighted (from igr_loss)
  ad::Var igr_normal;
  ad::Var sim;  // raw; weighted by lambda_sim here
  ad::Var reg;  // raw; weighted by lambda_reg here
};

struct TotalResult {
  ad::Var total;
  LossBreakdown breakdown;
};

TotalResult total_loss(ad::Graph& g, const TotalParts& parts, const LossWeights& weights);

// Appends one CSV row (with a header when the file is new or empty):
// epoch,step,sal,igr_eikonal,igr_normal,sim,reg,total
void append_log_row(const std::string& path, long epoch, long step, const LossBreakdown& row);

}  // namespace lgc::losses
