#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace headsearch {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Position of a tensor on a recording tape. A tensor with no graph ref is a
// leaf (parameter, input, or detached value).
struct GraphRef {
  std::uint64_t tape_id = 0;
  std::size_t node = 0;

  bool attached() const { return tape_id != 0; }
};

namespace detail {

struct TensorStorage {
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  GraphRef graph;
};

}  // namespace detail

// Reference-counted handle to a dense row-major float32 array. Copies share
// storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<float> values();
  std::span<const float> values() const;
  float item() const;
  float at(std::size_t flat) const { return values()[flat]; }

  bool has_grad() const;
  std::span<const float> grad() const;
  // Allocates a zero gradient on first use. Gradients belong to the shared
  // storage, so these are callable through const handles.
  std::span<float> grad_buffer() const;
  void zero_grad() const;
  void release_grad() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  const GraphRef& graph_ref() const;
  void set_graph_ref(GraphRef ref);

  // New leaf with identical values, no gradient, not on any tape.
  Tensor detach() const;
  // Deep copy that keeps requires_grad but drops graph membership.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorStorage> s) : storage_(std::move(s)) {}
  detail::TensorStorage& storage() const;

  std::shared_ptr<detail::TensorStorage> storage_;
};

}  // namespace headsearch
