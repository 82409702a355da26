// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense tensors.
//
// A Graph is a tape: every op appends one node whose inputs already exist, so
// node ids are a topological order and backward() simply walks them in
// reverse. Graphs are built fresh for every forward pass; learnable state
// lives in Parameter objects that outlive the graph and accumulate gradients
// across backward() calls until zero_grad().
//
// Instantiated for float (training) and double (gradient checks).

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "nebla/tensor.hpp"

namespace nebla {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = true;

  Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(std::move(shape)) {}
  void zero_grad() { grad.fill(T{}); }
};

// Ordered, name-unique collection of parameters. Insertion order is the
// canonical order for optimizers and checkpoints.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Shape shape);
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

template <typename T>
class Graph;

// Lightweight handle to a graph node.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor<T> value;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  explicit Graph(bool training = false, std::uint64_t seed = 0) : training_(training), seed_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> param(Parameter<T>& p);

  // Appends a node. `fn` runs during backward only if some input requires grad.
  Var<T> record(std::string op, std::vector<int> inputs, Tensor<T> value, BackwardFn fn);

  const Tensor<T>& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, zero-allocated on first use. Parameter nodes
  // alias the Parameter's own accumulator.
  Tensor<T>& grad(int id);

  // Seeds d(out)/d(out) = 1 and propagates in exact reverse tape order.
  // Intermediate gradients are released as soon as they are consumed unless
  // retain_grads is set.
  void backward(Var<T> out);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[id]; }

  bool training() const { return training_; }
  // Fresh seed for a stochastic op; sequence depends only on the graph seed.
  std::uint64_t next_seed() { return seed_ * 0x9E3779B97F4A7C15ULL + (++seed_counter_); }

  bool retain_grads = false;

 private:
  std::vector<Node> nodes_;
  bool training_;
  std::uint64_t seed_;
  std::uint64_t seed_counter_ = 0;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

// ---------------------------------------------------------------------------
// Operations. All take and return nodes of the same graph.
// ---------------------------------------------------------------------------

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);                  // [m,k]x[k,n]
template <typename T> Var<T> transpose(Var<T> a);                         // [m,n] -> [n,m]
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);       // x[m,k] w[k,n] b[n]

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> add_bias(Var<T> x, Var<T> b);               // b broadcast over last axis
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> square(Var<T> x);
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);

template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> swish(Var<T> x, T beta);
template <typename T> Var<T> softmax(Var<T> x, int axis);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));
template <typename T> Var<T> instance_norm(Var<T> x, T eps = T(1e-5));    // per axis-0 channel
template <typename T> Var<T> dropout(Var<T> x, T rate);                  // identity unless training

template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, int axis);
template <typename T> Var<T> slice(Var<T> x, int axis, std::size_t start, std::size_t length);
template <typename T> std::vector<Var<T>> split(Var<T> x, int axis, const std::vector<std::size_t>& lengths);
// Max over one axis (removed from the shape). Ties route gradient to the lowest index.
template <typename T> Var<T> max_reduce(Var<T> x, int axis);

// Row gather: out[i,:] = table[index[i],:]. Backward scatter-adds in index order.
template <typename T>
Var<T> gather_rows(Var<T> table, std::shared_ptr<const std::vector<std::uint32_t>> index);
// out[target[i]] = mean of x[i] over all i with that target; untouched slots are 0.
template <typename T>
Var<T> scatter_mean(Var<T> x, std::shared_ptr<const std::vector<std::uint32_t>> target, Shape out_shape);

// Convolutions use the cross-correlation convention (kernel is not flipped).
// 2-D tensors are [C,H,W] with weights [Co,Ci,kh,kw]; 3-D tensors are
// [C,H,W,D] with weights [Co,Ci,k0,k1,k2]. Transposed convolutions take
// weights [Ci,Co,...] and are the input-adjoint of the matching convolution.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, std::size_t stride, std::size_t pad);
template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, std::size_t stride, std::size_t pad);
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, std::size_t stride, std::size_t pad);
template <typename T>
Var<T> conv_transpose3d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, std::size_t stride, std::size_t pad);

}  // namespace nebla
