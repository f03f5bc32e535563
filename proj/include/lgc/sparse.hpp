#pragma once

#include <vector>

#include "lgc/error.hpp"

namespace lgc::ad {

// Constant CSR matrix used as a fixed linear operator inside expression
// graphs (graph Laplacians, ring-average operators). Values never train.
struct Csr {
  long rows = 0, cols = 0;
  std::vector<long> row_ptr;  // rows+1
  std::vector<long> col_idx;
  std::vector<double> vals;

  // y = A x for row-major x with `width` columns; y must be rows*width.
  void apply(const double* x, long width, double* y) const {
    for (long i = 0; i < rows * width; ++i) y[i] = 0.0;
    for (long r = 0; r < rows; ++r) {
      double* yr = y + r * width;
      for (long e = row_ptr[r]; e < row_ptr[r + 1]; ++e) {
        const double v = vals[e];
        const double* xr = x + col_idx[e] * width;
        for (long j = 0; j < width; ++j) yr[j] += v * xr[j];
      }
    }
  }
};

struct Triplet {
  long row, col;
  double val;
};

Csr csr_from_triplets(long rows, long cols, std::vector<Triplet> triplets);
Csr csr_transpose(const Csr& a);

// Operator plus its transpose, so reverse mode can apply A^T cheaply.
struct CsrPair {
  Csr mat;
  Csr mat_t;
};

inline CsrPair make_csr_pair(Csr m) {
  CsrPair p;
  p.mat_t = csr_transpose(m);
  p.mat = std::move(m);
  return p;
}

}  // namespace lgc::ad
