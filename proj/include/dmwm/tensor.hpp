#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dmwm {

// Row-major dense matrix of doubles. Vectors are 1×n; batches are B×n.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {}

  static Tensor row_vector(std::span<const double> v) {
    return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Tensor& o) const = default;
};

bool all_finite(std::span<const double> v);
inline bool all_finite(const Tensor& t) { return all_finite(std::span<const double>(t.data)); }

}  // namespace dmwm
