#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "smallbig/tensor.hpp"

namespace smallbig {

/// One named tensor with its gradient slot and optimizer state.
template <class T>
struct Param {
  std::string name;  // canonical name (first registration)
  Tensor5<T> value;
  Tensor5<T> grad;
  Tensor5<T> velocity;    // SGD momentum buffer, sized on first use
  bool trainable = true;  // false for BN running statistics
  bool decay = false;     // L2 weight decay applies (conv/fc weights only)

  explicit Param(std::string n, const Shape5& s, bool trainable_ = true,
                 bool decay_ = false)
      : name(std::move(n)), value(s), grad(s), trainable(trainable_),
        decay(decay_) {}

  void zero_grad() { grad.zero(); }
};

/// Named parameter tensors with explicit share-groups. Aliased names resolve
/// to the identical storage; gradients of a shared tensor accumulate over all
/// use sites because every user adds into the same grad slot.
template <class T>
class ParamStore {
 public:
  using Ptr = std::shared_ptr<Param<T>>;

  Ptr add(const std::string& name, const Shape5& shape, bool trainable = true,
          bool decay = false) {
    if (by_name_.count(name))
      throw ConfigError("ParamStore: duplicate parameter name " + name);
    auto p = std::make_shared<Param<T>>(name, shape, trainable, decay);
    by_name_[name] = p;
    ordered_.push_back(p);
    return p;
  }

  /// Register `alias` as a second name for an existing parameter.
  Ptr share(const std::string& alias, const Ptr& existing) {
    if (by_name_.count(alias))
      throw ConfigError("ParamStore: duplicate parameter name " + alias);
    by_name_[alias] = existing;
    aliases_[alias] = existing->name;
    return existing;
  }

  Ptr get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end())
      throw ConfigError("ParamStore: unknown parameter " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return by_name_.count(name) != 0; }

  /// Canonical parameters in registration order (each shared tensor once).
  const std::vector<Ptr>& canonical() const { return ordered_; }

  const std::map<std::string, std::string>& aliases() const { return aliases_; }

  size_t share_group_count() const { return aliases_.size(); }

  void zero_grads() {
    for (auto& p : ordered_) p->zero_grad();
  }

  /// Trainable scalar count, shared tensors counted once.
  int64_t trainable_count() const {
    int64_t n = 0;
    for (const auto& p : ordered_)
      if (p->trainable) n += p->value.numel();
    return n;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : ordered_) {
      auto q = out.add(p->name, p->value.shape(), p->trainable, p->decay);
      q->value = p->value.template cast<U>();
    }
    for (const auto& [alias, canon] : aliases_) out.share(alias, out.get(canon));
    return out;
  }

 private:
  std::map<std::string, Ptr> by_name_;
  std::map<std::string, std::string> aliases_;  // alias -> canonical
  std::vector<Ptr> ordered_;
};

}  // namespace smallbig
