#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rankstack/tensor.hpp"

namespace rankstack::nn {

class Tape;

// Handle to a node on a Tape. Forward values are computed eagerly as the
// graph is built; backward() then fills gradients in reverse order.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Activation { kRelu, kGelu };

class ParameterStore;

class Tape {
public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves ---------------------------------------------------------------
  Value input(Tensor t);  // constant, receives no gradient
  // trainable leaf; gradient is retrievable per name after backward()
  Value param(const std::string& name, const Tensor& value);
  // convenience: register every use of a ParameterStore slot
  Value param(ParameterStore& store, const std::string& name);

  // --- primitives -------------------------------------------------------------
  Value matmul(Value a, Value b);     // [m x k] * [k x n]
  Value matmul_nt(Value a, Value b);  // [m x k] * [n x k]^T -> [m x n]
  Value add(Value a, Value b);        // same shape
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);        // elementwise
  Value bias_add(Value m, Value bias);  // bias broadcast over rows
  Value scale(Value v, double c);
  Value add_scalar(Value v, double c);
  Value rsub_scalar(double c, Value v);  // c - v
  Value relu(Value v);
  Value gelu(Value v);  // exact erf form
  Value sigmoid(Value v);
  Value activation(Value v, Activation act);
  Value log(Value v);
  Value clamp(Value v, double lo, double hi);
  Value layer_norm(Value x, Value gain, Value bias);  // per row, eps 1e-5
  Value softmax(Value v);                             // per row
  // gather rows of `table` (2-D); backward scatter-adds
  Value embedding(Value table, std::span<const int> ids);
  Value rows(Value m, std::span<const int> indices);
  Value row(Value m, int r);  // single row as a 1-D vector
  Value concat(std::span<const Value> parts);  // along last axis
  Value concat(std::initializer_list<Value> parts);
  // stack rows vertically; 1-D parts contribute a single row
  Value vstack(std::span<const Value> parts);
  Value vstack(std::initializer_list<Value> parts);
  Value mean_rows(Value m);  // mean over axis 0 -> 1-D
  Value sum(Value v);        // total sum -> scalar
  // masked scaled dot-product multi-head attention over packed heads;
  // q,k,v are [n x d_model], d_model divisible by num_heads
  Value attention(Value q, Value k, Value v, int num_heads, bool causal);
  // -log softmax(logits)[target]; logits 1-D
  Value cross_entropy_with_logits(Value logits, int target);

  // --- execution --------------------------------------------------------------
  const Tensor& val(Value v) const;
  // Seeds d(loss)/d(loss)=1 and propagates to all leaves. `loss` must be a
  // scalar node produced by this tape.
  void backward(Value loss);
  // backward() followed by accumulation into the store's gradient slots
  void backward_into(Value loss, ParameterStore& store);
  // gradient of a leaf created via param(); backward() must have run
  const Tensor& grad(Value leaf) const;
  // visit (name, grad) for every trainable leaf
  void for_each_param_grad(
      const std::function<void(const std::string&, const Tensor&)>& fn) const;

  size_t size() const { return nodes_.size(); }

private:
  struct Node;
  int push(std::unique_ptr<Node> n);
  Node& node(Value v);
  const Node& node(Value v) const;
  Tensor& grad_buf(int id);

  std::vector<std::unique_ptr<Node>> nodes_;
  bool ran_backward_ = false;
};

// max over sampled parameter coordinates of
// |analytic - central difference| / max(1, |analytic|)
// build_loss must construct the same scalar loss from the given store.
double grad_check(
    const std::function<Value(Tape&, ParameterStore&)>& build_loss,
    ParameterStore& store, double h = 1e-5, int max_coords_per_param = 0,
    uint64_t seed = 17);

}  // namespace rankstack::nn
