#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lgdiff {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Dense tensor with row-major logical indexing over a flat Eigen array.
// Rank and extents are dynamic; elementwise math goes through data(),
// matrix math through mat()/as_matrix() maps.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(Storage::Zero(shape_numel(shape_))) {}
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw ValidationError("tensor storage size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }
  static Tensor full(Shape shape, S v) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = Storage::Constant(shape_numel(t.shape_), v);
    return t;
  }
  static Tensor scalar(S v) { return full({1}, v); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
  Index numel() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }
  S* raw() { return data_.data(); }
  const S* raw() const { return data_.data(); }

  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  S& operator()(Index i) { return data_[i]; }
  S operator()(Index i) const { return data_[i]; }
  S& operator()(Index i, Index j) { return data_[i * shape_[1] + j]; }
  S operator()(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  S& operator()(Index i, Index j, Index k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  S operator()(Index i, Index j, Index k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  S& operator()(Index i, Index j, Index k, Index l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  S operator()(Index i, Index j, Index k, Index l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  // Row-major matrix view of the flat storage.
  Eigen::Map<MatRM<S>> mat(Index rows, Index cols) {
    return Eigen::Map<MatRM<S>>(data_.data(), rows, cols);
  }
  Eigen::Map<const MatRM<S>> mat(Index rows, Index cols) const {
    return Eigen::Map<const MatRM<S>>(data_.data(), rows, cols);
  }
  // Rank-2 view.
  Eigen::Map<MatRM<S>> as_matrix() {
    require_rank(2, "as_matrix");
    return mat(shape_[0], shape_[1]);
  }
  Eigen::Map<const MatRM<S>> as_matrix() const {
    require_rank(2, "as_matrix");
    return mat(shape_[0], shape_[1]);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw ValidationError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                            " changes element count");
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.isFinite().all(); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out = Tensor<T>(shape_, data_.template cast<T>());
    return out;
  }

  void require_rank(Index r, const char* what) const {
    if (rank() != r)
      throw ValidationError(std::string(what) + ": expected rank " + std::to_string(r) +
                            ", got shape " + shape_str(shape_));
  }

 private:
  Shape shape_;
  Storage data_;
};

template <typename S>
void check_same_shape(const char* what, const Tensor<S>& a, const Tensor<S>& b) {
  if (!same_shape(a.shape(), b.shape()))
    throw ContractViolation(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
}

}  // namespace lgdiff
