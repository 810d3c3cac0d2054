#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pcdiff/autograd.hpp"

namespace pcdiff {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool frozen = false;
};

/// Insertion-ordered named parameters. Layers hold Var handles into the same nodes.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init, bool frozen = false) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, items_.size());
    items_.push_back({name, Var<T>(std::move(init), !frozen), frozen});
    return items_.back().var;
  }

  std::vector<Parameter<T>>& items() noexcept { return items_; }
  const std::vector<Parameter<T>>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }
  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  const Parameter<T>& at(const std::string& name) const {
    const auto* p = find(name);
    if (!p) throw ConfigError("unknown parameter '" + name + "'");
    return *p;
  }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& p : items_) total += p.var.numel();
    return total;
  }

  void zero_grad() {
    for (auto& p : items_) p.var.zero_grad();
  }

  void freeze_all() {
    for (auto& p : items_) {
      p.frozen = true;
      p.var.set_requires_grad(false);
    }
  }

 private:
  std::vector<Parameter<T>> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace pcdiff
