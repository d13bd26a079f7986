#pragma once

#include <map>
#include <string>
#include <vector>

#include "rankstack/tensor.hpp"

namespace rankstack::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named trainable parameters with accumulated gradients and Adam moments.
// Mutated by exactly one trainer at a time; reads are safe once training
// has finished.
class ParameterStore {
public:
  struct Slot {
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
    int64_t step = 0;
  };

  // creates the slot on first call, otherwise returns the existing value
  Tensor& get_or_create(const std::string& name, const Tensor& init);
  bool contains(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  const Slot& slot(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return slots_.size(); }

  void accumulate_grad(const std::string& name, const Tensor& g);
  void scale_grads(double c);
  void zero_grads();

  // Bias-corrected Adam over every slot; zeroes gradients afterwards.
  // A non-finite gradient rejects the whole step and reports the offending
  // parameter name.
  void adam_step(double lr, const AdamConfig& cfg = {});

  // drops optimizer state (moments and step counters)
  void reset_optimizer();

  // "RKF1" binary checkpoint: magic, then per parameter
  // (u32 name length, name bytes, u32 rank, u32 dims..., f32 little-endian data)
  void save_checkpoint(const std::string& path) const;
  static ParameterStore load_checkpoint(const std::string& path);

private:
  std::map<std::string, Slot> slots_;  // ordered: deterministic iteration
};

}  // namespace rankstack::nn
