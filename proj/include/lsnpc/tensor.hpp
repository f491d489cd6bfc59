#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lsnpc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Graph operations view every tensor as a matrix: rank 0 is 1x1 and rank 1
/// of length c is 1xc.
class Tensor {
 public:
  Tensor() : shape_{1, 1}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1, 1}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor row(std::span<const double> values);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row_span(std::size_t r) const noexcept {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row_span(std::size_t r) noexcept {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }

  /// Value of a one-element tensor.
  double item() const;
  void fill(double v);
  bool all_finite() const noexcept;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// A learnable array together with its accumulated gradient.
struct Parameter {
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}
  std::string name;
  Tensor value;
  Tensor grad;
};

using ParameterPtr = std::shared_ptr<Parameter>;

/// Name-ordered collection of parameters shared between graphs and optimizers.
class ParameterStore {
 public:
  ParameterPtr add(const std::string& name, Tensor value);
  ParameterPtr get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void zero_grad();
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t total_numel() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::map<std::string, Tensor> snapshot() const;
  void restore(const std::map<std::string, Tensor>& values);

 private:
  std::map<std::string, ParameterPtr> params_;
};

}  // namespace lsnpc
