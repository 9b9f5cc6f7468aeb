#pragma once

// Dataset ingestion. Two on-disk formats:
//  - record binary: fixed-size records of one label byte followed by the
//    pixels as planar (channel, row, column) bytes, as in the CIFAR-10
//    binary release;
//  - image directory: one subdirectory per class (sorted by name, giving
//    labels 0, 1, ...) holding binary PGM/PPM files.
// Pixel bytes decode to v / 255 exactly.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s3ta/image.hpp"

namespace s3ta {

enum class DatasetFormat { kRecordBinary, kImageDirectory };
enum class DatasetSplit { kTrain, kTest };

struct DatasetSpec {
  /// A record file, a directory of record files (data_batch_*.bin for
  /// train, test_batch.bin for test), or the root of an image directory.
  std::string path;
  DatasetFormat format = DatasetFormat::kRecordBinary;
  DatasetSplit split = DatasetSplit::kTrain;
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 10;
  std::size_t limit = 0;  // keep only the first `limit` images (0: all)
};

/// Throws FormatError (with the byte offset of the first incomplete record)
/// when the size is not a multiple of the record length.
ImageBatch decode_records(std::string_view bytes, int height, int width, int channels);
std::string encode_records(const ImageBatch& batch);

ImageBatch load_dataset(const DatasetSpec& spec);

/// Order of images for one epoch, a pure function of (seed, epoch, n).
std::vector<std::size_t> shuffled_order(std::uint64_t seed, int epoch, std::size_t n);

/// Images `indices` of `set`, in that order.
ImageBatch take(const ImageBatch& set, std::span<const std::size_t> indices);
/// The first min(n, size) images.
ImageBatch head(const ImageBatch& set, std::size_t n);

/// Fixed-size batches over a dataset, optionally in shuffled order.
class BatchStream {
 public:
  BatchStream(const ImageBatch& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed = {},
              int epoch = 0);
  /// False once every image has been returned. The last batch may be short.
  bool next(ImageBatch& out);
  std::size_t num_batches() const;

 private:
  const ImageBatch& data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Procedural 10-class image set in record-binary form: each class is an
/// oriented sinusoidal grating with its own angle, frequency and tint, under
/// random phase, contrast and pixel noise.
ImageBatch make_synthetic(std::size_t count, std::uint64_t seed, int height = 32, int width = 32, int channels = 3,
                          int num_classes = 10);

}  // namespace s3ta
