// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mosa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One entry on the autodiff tape. `order` is the creation index; reverse
// creation order is a valid topological order for the backward sweep.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::uint64_t order = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // pushes `grad` into `inputs`

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense float64 tensor, row-major, with a slot on the reverse-mode tape.
///
/// Copies are shallow (shared storage), mirroring how parameters are shared
/// between a model and its optimizer. Use `clone()` for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse sweep from this scalar; leaves accumulate into their grad.
  void backward() const;

  /// New leaf holding a copy of the values, cut from the tape.
  Tensor detach() const;
  Tensor clone() const { return detach().set_requires_grad(requires_grad()); }

  bool is_leaf() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. `inputs` are recorded only when one of them needs a
  /// gradient; `backward` then receives the result node and must accumulate
  /// into each input's `grad_buffer()` when that input requires grad.
  static Tensor from_op(Shape shape, std::vector<double> data,
                        std::vector<Tensor> inputs,
                        std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

}  // namespace mosa
