#include "lgc/optim.hpp"

#include <cmath>

#include "lgc/error.hpp"

namespace lgc::ad {

void ParameterStore::add(const std::string& name, Tensor init, ParamGroup group) {
  if (name.empty()) throw Error("ParameterStore: empty parameter name");
  if (entries_.count(name)) throw Error("ParameterStore: duplicate parameter '" + name + "'");
  Entry e;
  e.m = Tensor::zeros(init.shape);
  e.v = Tensor::zeros(init.shape);
  e.value = std::move(init);
  e.group = group;
  entries_.emplace(name, std::move(e));
}

void ParameterStore::remove(const std::string& name) {
  if (!entries_.erase(name)) throw Error("ParameterStore: no parameter '" + name + "'");
}

const ParameterStore::Entry& ParameterStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("ParameterStore: no parameter '" + name + "'");
  return it->second;
}

ParameterStore::Entry& ParameterStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("ParameterStore: no parameter '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::value(const std::string& name) const { return entry(name).value; }
Tensor& ParameterStore::value(const std::string& name) { return entry(name).value; }

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

std::vector<std::string> ParameterStore::names(ParamGroup group) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_)
    if (v.group == group) out.push_back(k);
  return out;
}

long ParameterStore::count(ParamGroup group) const {
  long n = 0;
  for (const auto& [k, v] : entries_)
    if (v.group == group) n += v.value.size();
  return n;
}

long ParameterStore::count() const {
  long n = 0;
  for (const auto& [k, v] : entries_) n += v.value.size();
  return n;
}

void ParameterStore::adam_step(const std::map<std::string, Tensor>& grads, double lr_network,
                               double lr_latent, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    Entry& e = entry(name);
    if (!g.same_shape(e.value))
      throw Error("adam_step: gradient shape mismatch for '" + name + "'");
    e.step += 1;
    const double lr = e.group == ParamGroup::Latent ? lr_latent : lr_network;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.step));
    for (long i = 0; i < g.size(); ++i) {
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mh = e.m[i] / c1;
      const double vh = e.v[i] / c2;
      e.value[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    for (double x : e.value.data) {
      if (!std::isfinite(x))
        throw NumericalError("adam_step: parameter '" + name + "' became non-finite");
    }
  }
}

void ParameterStore::adam_step(const std::map<std::string, Tensor>& grads, double lr,
                               const AdamConfig& cfg) {
  adam_step(grads, lr, lr, cfg);
}

}  // namespace lgc::ad
