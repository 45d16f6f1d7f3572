#include "headsearch/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "headsearch/error.hpp"

namespace headsearch {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  check_shape(shape);
  auto s = std::make_shared<detail::TensorStorage>();
  s->values.assign(shape_numel(shape), value);
  s->shape = std::move(shape);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::from_values(Shape shape, std::vector<float> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto s = std::make_shared<detail::TensorStorage>();
  s->shape = std::move(shape);
  s->values = std::move(values);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return full({1}, value, requires_grad); }

detail::TensorStorage& Tensor::storage() const {
  if (!storage_) throw Error("use of undefined tensor");
  return *storage_;
}

const Shape& Tensor::shape() const { return storage().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return storage().values.size(); }

std::span<float> Tensor::values() { return storage().values; }
std::span<const float> Tensor::values() const { return storage().values; }

float Tensor::item() const {
  if (numel() != 1) throw RankError("item() on tensor of shape " + shape_str(shape()));
  return storage().values[0];
}

bool Tensor::has_grad() const { return !storage().grad.empty(); }

std::span<const float> Tensor::grad() const { return storage().grad; }

std::span<float> Tensor::grad_buffer() const {
  auto& s = storage();
  if (s.grad.empty()) s.grad.assign(s.values.size(), 0.0f);
  return s.grad;
}

void Tensor::zero_grad() const {
  auto& g = storage().grad;
  std::fill(g.begin(), g.end(), 0.0f);
}

void Tensor::release_grad() const {
  auto& g = storage().grad;
  g.clear();
  g.shrink_to_fit();
}

bool Tensor::requires_grad() const { return storage().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  storage().requires_grad = flag;
  return *this;
}

const GraphRef& Tensor::graph_ref() const { return storage().graph; }

void Tensor::set_graph_ref(GraphRef ref) { storage().graph = ref; }

Tensor Tensor::detach() const { return from_values(shape(), storage().values, false); }

Tensor Tensor::clone() const { return from_values(shape(), storage().values, requires_grad()); }

}  // namespace headsearch
