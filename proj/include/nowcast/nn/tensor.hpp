#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace nowcast::nn {

/// Dense row-major tensor. Shapes are small vectors of ints; data is flat.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
  Tensor(std::initializer_list<int> s) : Tensor(std::vector<int>(s)) {}

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
  }

  long numel() const { return static_cast<long>(data.size()); }
  int dim(int i) const { return shape[i]; }
  int ndim() const { return static_cast<int>(shape.size()); }
  bool empty() const { return data.empty(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](long i) { return data[i]; }
  const T& operator[](long i) const { return data[i]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(T(0)); }

  void reshape(std::vector<int> s) {
    if (numel_of(s) != numel()) throw std::invalid_argument("tensor reshape: element count mismatch");
    shape = std::move(s);
  }

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapT = Eigen::Map<Mat>;
  using CMapT = Eigen::Map<const Mat>;

  MapT mat(long rows, long cols) {
    if (rows * cols != numel()) throw std::invalid_argument("tensor mat view: size mismatch");
    return MapT(data.data(), rows, cols);
  }
  CMapT mat(long rows, long cols) const {
    if (rows * cols != numel()) throw std::invalid_argument("tensor mat view: size mismatch");
    return CMapT(data.data(), rows, cols);
  }
  /// View of a contiguous sub-block starting at element `offset`.
  MapT mat_at(long offset, long rows, long cols) { return MapT(data.data() + offset, rows, cols); }
  CMapT mat_at(long offset, long rows, long cols) const { return CMapT(data.data() + offset, rows, cols); }
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;  // null for non-learnable buffers (running stats)
};

}  // namespace nowcast::nn
