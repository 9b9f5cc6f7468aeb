#include "s3ta/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "s3ta/errors.hpp"
#include "s3ta/file_io.hpp"
#include "s3ta/image_io.hpp"
#include "s3ta/rng.hpp"

namespace s3ta {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kShuffleStream = 0x5f1e;

void append(ImageBatch& dst, const ImageBatch& src) {
  if (dst.size() == 0 && dst.pixels.empty()) {
    dst = src;
    return;
  }
  dst.pixels.insert(dst.pixels.end(), src.pixels.begin(), src.pixels.end());
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
}

std::vector<fs::path> record_files(const DatasetSpec& spec) {
  const fs::path root(spec.path);
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    if (!fs::exists(root, ec)) throw IoError("dataset not found: " + spec.path);
    return {root};
  }
  std::vector<fs::path> files;
  if (spec.split == DatasetSplit::kTest) {
    files.push_back(root / "test_batch.bin");
  } else {
    for (const auto& e : fs::directory_iterator(root)) {
      const auto name = e.path().filename().string();
      if (name.rfind("data_batch_", 0) == 0 && e.path().extension() == ".bin") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw IoError("no record files for the requested split in " + spec.path);
  for (const auto& f : files)
    if (!fs::exists(f, ec)) throw IoError("dataset file not found: " + f.string());
  return files;
}

ImageBatch load_image_directory(const DatasetSpec& spec) {
  const fs::path root(spec.path);
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("image directory not found: " + spec.path);
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw IoError("no class subdirectories in " + spec.path);
  if (static_cast<int>(classes.size()) > spec.num_classes)
    throw InvalidArgument("image directory has more classes than num_classes");

  ImageBatch out(spec.height, spec.width, spec.channels, 0);
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[label])) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      RasterImage img;
      try {
        img = read_pnm(f.string());
      } catch (const FormatError& e) {
        throw FormatError(f.string() + ": " + e.what(), e.offset());
      }
      if (img.width != spec.width || img.height != spec.height || img.channels != spec.channels)
        throw InvalidArgument(f.string() + " does not have the configured image shape");
      for (auto v : img.data) out.pixels.push_back(static_cast<float>(v) / 255.0f);
      out.labels.push_back(static_cast<int>(label));
    }
  }
  return out;
}

}  // namespace

void ImageBatch::validate(int num_classes) const {
  if (height < 1 || width < 1 || channels < 1) throw InvalidArgument("image dimensions must be positive");
  if (pixels.size() != labels.size() * image_size()) throw InvalidArgument("pixel buffer does not match the batch shape");
  for (float v : pixels)
    if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("pixel intensities must lie in [0, 1]");
  for (int l : labels)
    if (l < 0 || l >= num_classes) throw InvalidArgument("label out of range");
}

ImageBatch decode_records(std::string_view bytes, int height, int width, int channels) {
  if (height < 1 || width < 1 || channels < 1) throw InvalidArgument("image dimensions must be positive");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const std::size_t record = 1 + plane * channels;
  const std::size_t count = bytes.size() / record;
  if (bytes.size() % record != 0)
    throw FormatError("record file size " + std::to_string(bytes.size()) + " is not a multiple of the record length " +
                          std::to_string(record),
                      count * record);
  ImageBatch out(height, width, channels, count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data()) + i * record;
    out.labels[i] = rec[0];
    auto img = out.image(i);
    for (int c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        img[p * channels + c] = static_cast<float>(rec[1 + c * plane + p]) / 255.0f;
  }
  return out;
}

std::string encode_records(const ImageBatch& batch) {
  const std::size_t plane = static_cast<std::size_t>(batch.height) * batch.width;
  const int c = batch.channels;
  std::string out;
  out.reserve(batch.size() * (1 + plane * c));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.labels[i] < 0 || batch.labels[i] > 255) throw InvalidArgument("labels must fit in one byte");
    out.push_back(static_cast<char>(batch.labels[i]));
    const auto img = batch.image(i);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) out.push_back(static_cast<char>(to_byte(img[p * c + ch])));
  }
  return out;
}

ImageBatch load_dataset(const DatasetSpec& spec) {
  ImageBatch out;
  if (spec.format == DatasetFormat::kImageDirectory) {
    out = load_image_directory(spec);
  } else {
    out = ImageBatch(spec.height, spec.width, spec.channels, 0);
    for (const auto& f : record_files(spec)) {
      const std::string bytes = read_file(f.string());
      try {
        append(out, decode_records(bytes, spec.height, spec.width, spec.channels));
      } catch (const FormatError& e) {
        throw FormatError(f.string() + ": " + e.what(), e.offset());
      }
    }
  }
  if (spec.limit > 0 && out.size() > spec.limit) out = head(out, spec.limit);
  out.validate(spec.num_classes);
  return out;
}

std::vector<std::size_t> shuffled_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, {static_cast<std::uint64_t>(epoch), kShuffleStream});
  // Explicit Fisher-Yates so the order does not depend on the standard
  // library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

ImageBatch take(const ImageBatch& set, std::span<const std::size_t> indices) {
  ImageBatch b(set.height, set.width, set.channels, indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= set.size()) throw InvalidArgument("image index out of range");
    const auto src = set.image(indices[i]);
    std::copy(src.begin(), src.end(), b.image(i).begin());
    b.labels[i] = set.labels[indices[i]];
  }
  return b;
}

ImageBatch head(const ImageBatch& set, std::size_t n) {
  n = std::min(n, set.size());
  ImageBatch b(set.height, set.width, set.channels, 0);
  b.pixels.assign(set.pixels.begin(), set.pixels.begin() + static_cast<std::ptrdiff_t>(n * set.image_size()));
  b.labels.assign(set.labels.begin(), set.labels.begin() + static_cast<std::ptrdiff_t>(n));
  return b;
}

BatchStream::BatchStream(const ImageBatch& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed,
                         int epoch)
    : data_(data), batch_size_(batch_size) {
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (shuffle_seed) {
    order_ = shuffled_order(*shuffle_seed, epoch, data.size());
  } else {
    order_.resize(data.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }
}

bool BatchStream::next(ImageBatch& out) {
  if (pos_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_size_, order_.size() - pos_);
  out = take(data_, std::span(order_).subspan(pos_, n));
  pos_ += n;
  return true;
}

std::size_t BatchStream::num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

}  // namespace s3ta
