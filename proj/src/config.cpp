#include "s3ta/config.hpp"

#include <charconv>
#include <sstream>

#include "s3ta/errors.hpp"
#include "s3ta/kv_config.hpp"

namespace s3ta {
namespace {

int conv_out(int in, int stride) { return (in - 1) / stride + 1; }

std::string blocks_to_string(const std::vector<BlockSpec>& blocks) {
  std::string out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(blocks[i].channels) + ':' + std::to_string(blocks[i].stride);
  }
  return out;
}

std::vector<BlockSpec> blocks_from_string(const std::string& text) {
  std::vector<BlockSpec> blocks;
  if (text.empty()) return blocks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InvalidArgument("block spec must be channels:stride, got '" + item + "'");
    blocks.push_back({parse_int(item.substr(0, colon)), parse_int(item.substr(colon + 1))});
  }
  return blocks;
}

}  // namespace

int ModelConfig::grid_height() const {
  int h = conv_out(input_height, stem_stride);
  for (const auto& b : blocks) h = conv_out(h, b.stride);
  return h;
}

int ModelConfig::grid_width() const {
  int w = conv_out(input_width, stem_stride);
  for (const auto& b : blocks) w = conv_out(w, b.stride);
  return w;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("invalid model config: ") + what);
  };
  require(input_height > 0 && input_width > 0 && input_channels > 0, "input dimensions must be positive");
  require(stem_channels > 0 && stem_stride > 0, "stem must have positive channels and stride");
  for (const auto& b : blocks) require(b.channels > 0 && b.stride > 0, "blocks need positive channels and stride");
  require(key_channels > 0 && value_channels > 0, "key and value channels must be positive");
  require(feature_channels() == key_channels + value_channels,
          "backbone output channels must equal key_channels + value_channels");
  require(basis_frequencies > 0, "basis_frequencies must be >= 1");
  require(num_heads >= 1, "num_heads must be >= 1");
  require(unroll_steps >= 1, "unroll_steps must be >= 1");
  require(controller_width > 0 && query_hidden_width > 0 && output_hidden_width > 0,
          "hidden widths must be positive");
  require(num_classes >= 2, "num_classes must be >= 2");
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "input_height = " << input_height << '\n'
      << "input_width = " << input_width << '\n'
      << "input_channels = " << input_channels << '\n'
      << "stem_channels = " << stem_channels << '\n'
      << "stem_stride = " << stem_stride << '\n'
      << "blocks = " << blocks_to_string(blocks) << '\n'
      << "key_channels = " << key_channels << '\n'
      << "value_channels = " << value_channels << '\n'
      << "basis_frequencies = " << basis_frequencies << '\n'
      << "num_heads = " << num_heads << '\n'
      << "unroll_steps = " << unroll_steps << '\n'
      << "controller_width = " << controller_width << '\n'
      << "query_hidden_width = " << query_hidden_width << '\n'
      << "output_hidden_width = " << output_hidden_width << '\n'
      << "num_classes = " << num_classes << '\n';
  return out.str();
}

void ModelConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "input_height") input_height = parse_int(value);
    else if (key == "input_width") input_width = parse_int(value);
    else if (key == "input_channels") input_channels = parse_int(value);
    else if (key == "stem_channels") stem_channels = parse_int(value);
    else if (key == "stem_stride") stem_stride = parse_int(value);
    else if (key == "blocks") blocks = blocks_from_string(value);
    else if (key == "key_channels") key_channels = parse_int(value);
    else if (key == "value_channels") value_channels = parse_int(value);
    else if (key == "basis_frequencies") basis_frequencies = parse_int(value);
    else if (key == "num_heads") num_heads = parse_int(value);
    else if (key == "unroll_steps") unroll_steps = parse_int(value);
    else if (key == "controller_width") controller_width = parse_int(value);
    else if (key == "query_hidden_width") query_hidden_width = parse_int(value);
    else if (key == "output_hidden_width") output_hidden_width = parse_int(value);
    else if (key == "num_classes") num_classes = parse_int(value);
    else throw InvalidArgument("unknown model config key '" + key + "'");
  }
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  cfg.apply(parse_kv_text(text));
  return cfg;
}

namespace presets {

ModelConfig desk_scale() { return ModelConfig{}; }

ModelConfig tiny() {
  ModelConfig c;
  c.input_height = 8;
  c.input_width = 8;
  c.input_channels = 3;
  c.stem_channels = 4;
  c.stem_stride = 1;
  c.blocks = {{12, 2}};
  c.key_channels = 4;
  c.value_channels = 8;
  c.basis_frequencies = 1;
  c.num_heads = 2;
  c.unroll_steps = 2;
  c.controller_width = 8;
  c.query_hidden_width = 8;
  c.output_hidden_width = 8;
  c.num_classes = 3;
  return c;
}

ModelConfig paper_scale() {
  ModelConfig c;
  c.input_height = 224;
  c.input_width = 224;
  c.input_channels = 3;
  c.stem_channels = 64;
  c.stem_stride = 4;
  c.blocks = {{256, 1}, {512, 2}, {1024, 1}, {2048, 1}};
  c.key_channels = 32;
  c.value_channels = 2016;
  c.basis_frequencies = 4;
  c.num_heads = 4;
  c.unroll_steps = 16;
  c.controller_width = 1024;
  c.query_hidden_width = 1024;
  c.output_hidden_width = 1024;
  c.num_classes = 1000;
  return c;
}

}  // namespace presets

}  // namespace s3ta
