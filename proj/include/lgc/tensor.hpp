#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "lgc/error.hpp"

namespace lgc::ad {

// Rank 1 or 2 only; rank 2 is row-major.
using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<long>(data.size()))
      throw Error("Tensor: shape " + shape_str(shape) + " does not match data length " +
                  std::to_string(data.size()));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s), {}, 0.0); }
  static Tensor full(Shape s, double v) { return Tensor(std::move(s), {}, v); }
  static Tensor scalar(double v) { return Tensor{{1}, {v}}; }
  static Tensor vector(std::vector<double> d) {
    long n = static_cast<long>(d.size());
    return Tensor{{n}, std::move(d)};
  }
  static Tensor matrix(long rows, long cols, std::vector<double> d) {
    return Tensor{{rows, cols}, std::move(d)};
  }

  long size() const { return static_cast<long>(data.size()); }
  long rows() const { return shape.empty() ? 1 : shape[0]; }
  long cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& operator()(long i, long j) { return data[i * cols() + j]; }
  double operator()(long i, long j) const { return data[i * cols() + j]; }
  double& operator[](long i) { return data[i]; }
  double operator[](long i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

 private:
  Tensor(Shape s, std::vector<double>&&, double fill)
      : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}
};

}  // namespace lgc::ad
