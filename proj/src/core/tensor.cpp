// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/core/tensor.hpp"

#include <cstring>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "moeup/core/error.hpp"

namespace moeup {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
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

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    fail(ErrorCode::kDimension, "tensor shape " + shape_str(shape) +
                                    " does not match " +
                                    std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    fail(ErrorCode::kDimension, "axis " + std::to_string(axis) +
                                    " out of range for shape " +
                                    shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    fail(ErrorCode::kDimension,
         "item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return node_->data[i * cols() + j];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }

bool Tensor::has_grad() const {
  return node_->grad.size() == node_->data.size();
}

std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::clone() const { return from(node_->shape, node_->data, false); }

void Tensor::backward() const {
  if (numel() != 1) {
    fail(ErrorCode::kDimension,
         "backward() needs a scalar, got shape " + shape_str(shape()));
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() == node->data.size()) {
      node->backward(*node);
    }
  }
}

Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(Tensor::Node&)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  bool needs_grad = false;
  for (const Tensor& input : inputs) needs_grad |= input.requires_grad();
  if (needs_grad) {
    auto& node = *out.node_;
    node.requires_grad = true;
    node.parents.reserve(inputs.size());
    for (Tensor& input : inputs) node.parents.push_back(input.node_);
    node.backward = std::move(backward);
  }
  return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.numel() * sizeof(double)) == 0;
}

}  // namespace moeup
