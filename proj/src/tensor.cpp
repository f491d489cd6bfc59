#include "lsnpc/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lsnpc {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor(Shape{rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(Shape{1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() < 2) return 1;
  return numel() / shape_.back();
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

ParameterPtr ParameterStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_shared<Parameter>(name, std::move(value));
  params_.emplace(name, p);
  return p;
}

ParameterPtr ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p->grad.fill(0.0);
}

std::size_t ParameterStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p->value.numel();
  return n;
}

std::map<std::string, Tensor> ParameterStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : params_) out.emplace(name, p->value);
  return out;
}

void ParameterStore::restore(const std::map<std::string, Tensor>& values) {
  for (const auto& [name, v] : values) {
    auto p = get(name);
    if (p->value.shape() != v.shape())
      throw std::invalid_argument("shape mismatch restoring parameter " + name + ": " + shape_string(v.shape()) +
                                  " vs " + shape_string(p->value.shape()));
    p->value = v;
  }
  if (values.size() != params_.size())
    throw std::invalid_argument("restore expected " + std::to_string(params_.size()) + " parameters, got " +
                                std::to_string(values.size()));
}

}  // namespace lsnpc
