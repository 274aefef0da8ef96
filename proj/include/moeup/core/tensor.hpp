// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_CORE_TENSOR_HPP_
#define MOEUP_CORE_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace moeup {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer.
//
// Tensor is a handle: copies share storage and autograd history. Use clone()
// for an independent deep copy. Operations that take at least one input with
// requires_grad() record a backward closure; otherwise no graph is kept.
class Tensor {
 public:
  struct Node;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value) { return from({}, {value}); }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  // 2-D helpers.
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();  // allocates zeros on first use
  void zero_grad();

  // Deep copy with no history and no gradient.
  Tensor clone() const;

  // Reverse-mode sweep from a scalar. Gradients accumulate into every
  // reachable tensor that requires grad.
  void backward() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(Node&)>);

  std::shared_ptr<Node> node_;
};

struct Tensor::Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::span<double> ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

// Builds the output of an operation. The backward closure is kept only when
// some input requires grad; inside it, node.grad holds dL/d(output) and
// node.parents follow the order of `inputs`.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(Tensor::Node&)> backward);

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace moeup

#endif  // MOEUP_CORE_TENSOR_HPP_
