#pragma once

#include <map>
#include <string>
#include <vector>

#include "lgc/tensor.hpp"

namespace lgc::ad {

// Two learning-rate groups: network weights and latent codes.
enum class ParamGroup { Network = 0, Latent = 1 };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameters with Adam moment buffers. Iteration order is the sorted
// name order, so updates and serialization are deterministic.
class ParameterStore {
 public:
  struct Entry {
    Tensor value;
    Tensor m, v;
    long step = 0;
    ParamGroup group = ParamGroup::Network;
  };

  void add(const std::string& name, Tensor init, ParamGroup group = ParamGroup::Network);
  void remove(const std::string& name);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& value(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Entry& entry(const std::string& name) const;
  Entry& entry(const std::string& name);

  std::vector<std::string> names() const;
  std::vector<std::string> names(ParamGroup group) const;

  // Trainable scalar count; pass a group to restrict (Network = weights only,
  // which is the convention for reported model sizes).
  long count(ParamGroup group) const;
  long count() const;

  // Standard bias-corrected Adam over every entry present in `grads`.
  // Each entry uses the learning rate of its group. Entries not in `grads`
  // are untouched.
  void adam_step(const std::map<std::string, Tensor>& grads, double lr_network, double lr_latent,
                 const AdamConfig& cfg = {});
  void adam_step(const std::map<std::string, Tensor>& grads, double lr, const AdamConfig& cfg = {});

  std::map<std::string, Entry>& raw() { return entries_; }
  const std::map<std::string, Entry>& raw() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace lgc::ad
