#include "s3ta/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <memory>
#include <sstream>

#include "s3ta/errors.hpp"
#include "s3ta/file_io.hpp"

namespace s3ta {
namespace {

constexpr char kMagic[4] = {'S', '3', 'T', 'A'};
constexpr std::uint8_t kFloat32 = 0;
constexpr std::string_view kMetaPrefix = "meta.";

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::string_view take(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated checkpoint while reading ") + what, bytes_.size());
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(int width, const char* what) {
    const auto s = take(width, what);
    std::uint64_t v = 0;
    for (int i = width - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
    return v;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(uint(1, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint(4, what)); }
  std::uint64_t u64(const char* what) { return uint(8, what); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ModelConfig& config, const ParameterSet<float>& params, const KvMap& meta) {
  config.validate();
  const ParameterLayout expected = model_parameter_layout(config);
  if (!(params.layout() == expected)) throw InvalidArgument("parameters do not match the model config");

  std::string text = config.to_text();
  for (const auto& [k, v] : meta) {
    if (k.empty() || k.find_first_of("=\n#") != std::string::npos || v.find('\n') != std::string::npos)
      throw InvalidArgument("checkpoint metadata keys and values must be single-line");
    text += std::string(kMetaPrefix) + k + " = " + v + "\n";
  }

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto& entries = params.layout().entries();
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u8(out, kFloat32);
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) put_u64(out, static_cast<std::uint64_t>(d));
    put_u64(out, static_cast<std::uint64_t>(e.offset) * 4);
  }
  for (float v : params.flat()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("not a checkpoint (bad magic)", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw UnsupportedVersion("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");

  const std::size_t text_at = r.pos();
  const std::uint32_t text_len = r.u32("header length");
  const std::string text(r.take(text_len, "header text"));

  Checkpoint ck;
  std::string config_text;
  {
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.rfind(kMetaPrefix, 0) == 0) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw FormatError("malformed metadata line", text_at);
        ck.meta[line.substr(kMetaPrefix.size(), eq - kMetaPrefix.size())] = line.substr(eq + 3);
      } else {
        config_text += line + "\n";
      }
    }
  }
  try {
    ck.config = ModelConfig::from_text(config_text);
    ck.config.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid model config in checkpoint: ") + e.what(), text_at);
  }
  const auto layout = std::make_shared<const ParameterLayout>(model_parameter_layout(ck.config));

  const std::size_t manifest_at = r.pos();
  const std::uint32_t count = r.u32("array count");
  if (count != layout->count())
    throw FormatError("manifest has " + std::to_string(count) + " arrays, the config implies " +
                          std::to_string(layout->count()),
                      manifest_at);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.pos();
    ManifestRecord m;
    const std::uint32_t name_len = r.u32("name length");
    m.name = std::string(r.take(name_len, "array name"));
    if (r.u8("dtype") != kFloat32) throw FormatError("unsupported array dtype", entry_at);
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError("array rank too large", entry_at);
    std::uint64_t elems = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      m.shape.push_back(r.u64("shape"));
      elems *= m.shape.back();
    }
    m.offset = r.u64("offset");
    m.bytes = elems * 4;
    const auto& e = layout->entries()[i];
    std::vector<std::uint64_t> want(e.shape.begin(), e.shape.end());
    if (m.name != e.name || m.shape != want || m.offset != static_cast<std::uint64_t>(e.offset) * 4)
      throw FormatError("manifest entry '" + m.name + "' does not match the model layout", entry_at);
    ck.manifest.push_back(std::move(m));
  }

  const std::size_t data_at = r.pos();
  const std::uint64_t data_bytes = static_cast<std::uint64_t>(layout->total_size()) * 4;
  if (r.remaining() < data_bytes) throw FormatError("truncated checkpoint data section", bytes.size());
  if (r.remaining() > data_bytes) throw FormatError("trailing bytes after the data section", data_at + data_bytes);
  ParameterSet<float> params(layout);
  auto flat = params.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = std::bit_cast<float>(r.u32("array data"));
  ck.params = std::move(params);
  return ck;
}

void save_checkpoint(const std::string& path, const ModelConfig& config, const ParameterSet<float>& params,
                     const KvMap& meta) {
  write_file_atomic(path, encode_checkpoint(config, params, meta));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace s3ta
