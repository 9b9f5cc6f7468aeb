#include "s3ta/parameters.hpp"

#include <numeric>

#include "s3ta/errors.hpp"

namespace s3ta {

std::size_t ParameterLayout::add(std::string name, std::vector<int> shape) {
  if (contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  std::size_t size = 1;
  for (int d : shape) {
    if (d <= 0) throw InvalidArgument("parameter '" + name + "' has a non-positive dimension");
    size *= static_cast<std::size_t>(d);
  }
  entries_.push_back({std::move(name), std::move(shape), total_, size});
  total_ += size;
  return entries_.size() - 1;
}

std::size_t ParameterLayout::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw InvalidArgument("unknown parameter '" + name + "'");
}

bool ParameterLayout::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

bool ParameterLayout::operator==(const ParameterLayout& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape) return false;
  return true;
}

ParameterLayout model_parameter_layout(const ModelConfig& c) {
  c.validate();
  ParameterLayout layout;
  layout.add("backbone.stem.weight", {c.stem_channels, c.input_channels, 3, 3});
  layout.add("backbone.stem.bias", {c.stem_channels});
  int in = c.stem_channels;
  for (std::size_t i = 0; i < c.blocks.size(); ++i) {
    const auto& b = c.blocks[i];
    const std::string p = "backbone.block" + std::to_string(i);
    layout.add(p + ".conv1.weight", {b.channels, in, 3, 3});
    layout.add(p + ".conv1.bias", {b.channels});
    layout.add(p + ".conv2.weight", {b.channels, b.channels, 3, 3});
    layout.add(p + ".conv2.bias", {b.channels});
    if (b.stride != 1 || b.channels != in) layout.add(p + ".shortcut.weight", {b.channels, in, 1, 1});
    in = b.channels;
  }
  const int h = c.controller_width;
  layout.add("controller.input_weight", {4 * h, c.controller_input_width()});
  layout.add("controller.recurrent_weight", {4 * h, h});
  layout.add("controller.bias", {4 * h});
  layout.add("controller.initial_hidden", {h});
  layout.add("controller.initial_cell", {h});
  layout.add("query.hidden_weight", {c.query_hidden_width, h + c.num_classes});
  layout.add("query.hidden_bias", {c.query_hidden_width});
  layout.add("query.output_weight", {c.num_heads * c.query_width(), c.query_hidden_width});
  layout.add("query.output_bias", {c.num_heads * c.query_width()});
  layout.add("output.hidden_weight", {c.output_hidden_width, h});
  layout.add("output.hidden_bias", {c.output_hidden_width});
  layout.add("output.output_weight", {c.num_classes, c.output_hidden_width});
  layout.add("output.output_bias", {c.num_classes});
  return layout;
}

}  // namespace s3ta
