#include "rankstack/params.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "rankstack/binio.hpp"

namespace rankstack::nn {

Tensor& ParameterStore::get_or_create(const std::string& name,
                                      const Tensor& init) {
  auto it = slots_.find(name);
  if (it == slots_.end()) {
    Slot s;
    s.value = init;
    s.grad = Tensor(init.shape());
    s.m = Tensor(init.shape());
    s.v = Tensor(init.shape());
    it = slots_.emplace(name, std::move(s)).first;
  }
  return it->second.value;
}

bool ParameterStore::contains(const std::string& name) const {
  return slots_.count(name) > 0;
}

Tensor& ParameterStore::value(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end())
    throw std::out_of_range("unknown parameter: " + name);
  return it->second.value;
}

const Tensor& ParameterStore::value(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end())
    throw std::out_of_range("unknown parameter: " + name);
  return it->second.value;
}

const ParameterStore::Slot& ParameterStore::slot(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end())
    throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(slots_.size());
  for (const auto& [name, slot] : slots_) out.push_back(name);
  return out;
}

void ParameterStore::accumulate_grad(const std::string& name, const Tensor& g) {
  auto it = slots_.find(name);
  if (it == slots_.end())
    throw std::out_of_range("unknown parameter: " + name);
  if (!it->second.grad.same_shape(g))
    throw std::invalid_argument("gradient shape mismatch for " + name);
  it->second.grad.add_inplace(g);
}

void ParameterStore::scale_grads(double c) {
  for (auto& [name, slot] : slots_) slot.grad.scale_inplace(c);
}

void ParameterStore::zero_grads() {
  for (auto& [name, slot] : slots_) slot.grad.fill(0.0);
}

void ParameterStore::adam_step(double lr, const AdamConfig& cfg) {
  for (const auto& [name, slot] : slots_) {
    if (!slot.grad.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient for parameter " +
                               name);
  }
  for (auto& [name, slot] : slots_) {
    slot.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.step));
    for (size_t i = 0; i < slot.value.numel(); ++i) {
      double g = slot.grad[i];
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = slot.m[i] / bc1;
      double vhat = slot.v[i] / bc2;
      slot.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    slot.grad.fill(0.0);
  }
}

void ParameterStore::reset_optimizer() {
  for (auto& [name, slot] : slots_) {
    slot.m.fill(0.0);
    slot.v.fill(0.0);
    slot.step = 0;
  }
}

void ParameterStore::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write("RKF1", 4);
  for (const auto& [name, slot] : slots_) {
    binio::write_string32(out, name);
    binio::write_le<uint32_t>(out, static_cast<uint32_t>(slot.value.rank()));
    for (int d : slot.value.shape())
      binio::write_le<uint32_t>(out, static_cast<uint32_t>(d));
    binio::write_f32_array(out, slot.value.data(), slot.value.numel());
  }
}

ParameterStore ParameterStore::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  binio::expect_magic(in, "RKF1", path);
  ParameterStore store;
  while (in.peek() != std::char_traits<char>::eof()) {
    std::string name = binio::read_string32(in);
    uint32_t rank = binio::read_le<uint32_t>(in);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(binio::read_le<uint32_t>(in));
    Tensor t(shape);
    binio::read_f32_array(in, t.data(), t.numel());
    store.get_or_create(name, t);
  }
  return store;
}

}  // namespace rankstack::nn
