#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "rpdro/tensor.hpp"

namespace rpdro {

// Named tensors for one model or one adversary. Names are unique and shapes
// are fixed after initialization; map keys give a deterministic order.
class ParamSet {
  public:
    void add(const std::string& name, Tensor t) {
        auto [it, inserted] = params_.emplace(name, std::move(t));
        if (!inserted) throw std::invalid_argument("ParamSet: duplicate parameter " + name);
    }

    const Tensor& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::invalid_argument("ParamSet: no parameter " + name);
        return it->second;
    }

    // Shape-preserving overwrite (optimizer updates).
    void set(const std::string& name, Tensor t) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::invalid_argument("ParamSet: no parameter " + name);
        if (!(it->second.shape == t.shape)) {
            throw std::invalid_argument("ParamSet: shape change for " + name + ": " +
                                        shape_str(it->second.shape) + " -> " + shape_str(t.shape));
        }
        it->second = std::move(t);
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }
    std::size_t size() const { return params_.size(); }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }

    bool operator==(const ParamSet& other) const {
        if (params_.size() != other.params_.size()) return false;
        auto a = params_.begin();
        auto b = other.params_.begin();
        for (; a != params_.end(); ++a, ++b) {
            if (a->first != b->first || !(a->second.shape == b->second.shape) ||
                a->second.values != b->second.values)
                return false;
        }
        return true;
    }

  private:
    std::map<std::string, Tensor> params_;
};

}  // namespace rpdro
