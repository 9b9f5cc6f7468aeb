#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "s3ta/config.hpp"

namespace s3ta {

struct ParameterEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;  // in scalars, into the flat buffer
  std::size_t size = 0;
};

/// Ordered list of named learnable arrays packed into one flat buffer.
class ParameterLayout {
 public:
  ParameterLayout() = default;

  /// Appends an array and returns its index.
  std::size_t add(std::string name, std::vector<int> shape);

  const std::vector<ParameterEntry>& entries() const { return entries_; }
  std::size_t total_size() const { return total_; }
  std::size_t count() const { return entries_.size(); }
  /// Throws InvalidArgument for unknown names.
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const;

  bool operator==(const ParameterLayout& other) const;

 private:
  std::vector<ParameterEntry> entries_;
  std::size_t total_ = 0;
};

/// Layout of every array the S3TA model learns for a config. Depends on
/// everything in ModelConfig except unroll_steps.
ParameterLayout model_parameter_layout(const ModelConfig& config);

template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::shared_ptr<const ParameterLayout> layout)
      : layout_(std::move(layout)), data_(layout_->total_size(), T(0)) {}

  const ParameterLayout& layout() const { return *layout_; }
  std::shared_ptr<const ParameterLayout> shared_layout() const { return layout_; }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }

  std::span<T> at(std::size_t index) {
    const auto& e = layout_->entries()[index];
    return {data_.data() + e.offset, e.size};
  }
  std::span<const T> at(std::size_t index) const {
    const auto& e = layout_->entries()[index];
    return {data_.data() + e.offset, e.size};
  }
  std::span<T> operator[](const std::string& name) { return at(layout_->index_of(name)); }
  std::span<const T> operator[](const std::string& name) const { return at(layout_->index_of(name)); }

  void set_zero() { std::fill(data_.begin(), data_.end(), T(0)); }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out(layout_);
    auto dst = out.flat();
    for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::shared_ptr<const ParameterLayout> layout_;
  std::vector<T> data_;
};

}  // namespace s3ta
