#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "splineflow/errors.hpp"
#include "splineflow/mat.hpp"

namespace splineflow {

// Named parameter arrays with deterministic (registration) iteration order.
// Shapes are fixed once registered.
class ParamStore {
 public:
  Mat& create(const std::string& name, Mat init) {
    if (index_.count(name)) {
      throw NumericError("ParamStore: duplicate parameter name '" + name + "'");
    }
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(init)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Mat& get(const std::string& name) {
    return entries_[index_of(name)].value;
  }
  const Mat& get(const std::string& name) const {
    return entries_[index_of(name)].value;
  }

  // Overwrite an existing parameter; the shape must match.
  void set(const std::string& name, Mat value) {
    Mat& dst = get(name);
    if (!dst.same_shape(value)) {
      throw NumericError("ParamStore: shape mismatch for '" + name + "': " +
                         dst.shape_str() + " vs " + value.shape_str());
    }
    dst = std::move(value);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name_at(std::size_t i) const { return entries_[i].name; }
  Mat& value_at(std::size_t i) { return entries_[i].value; }
  const Mat& value_at(std::size_t i) const { return entries_[i].value; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

 private:
  struct Entry {
    std::string name;
    Mat value;
  };

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw NumericError("ParamStore: unknown parameter '" + name + "'");
    }
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace splineflow
