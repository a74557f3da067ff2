#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advscope/tensor.hpp"

namespace advscope {

/// Labeled images, each (3, height, width) with pixels in [0, 1].
struct Dataset {
  std::vector<Tensor<float>> images;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Per-class label counts.
  std::vector<std::size_t> histogram() const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Stratified split: within each class the last round(fraction * count)
/// images (in dataset order) form the test set.
DatasetSplit split_dataset(const Dataset& data, double test_fraction);

inline const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{"circle", "square", "triangle", "cross"};
  return names;
}

/// Synthetic four-class shapes: random background colour, one filled shape
/// with random centre/scale and a contrasting colour, Gaussian noise
/// sigma = 0.05, clipped to [0, 1]. Images are shuffled with the seed.
Dataset generate_shapes_dataset(std::uint64_t seed, std::size_t count_per_class,
                                std::size_t image_size = 32);

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarBatchRecords = 10000;

/// Parses one CIFAR-10 binary batch: records of 1 label byte followed by
/// 1024 R, 1024 G, 1024 B bytes (row-major 32x32). expected_records == 0
/// accepts any positive count.
Dataset load_cifar10_file(const std::filesystem::path& path, std::size_t expected_records = 0);

enum class CifarSplit { Train, Test, All };

/// Loads data_batch_1..5.bin and/or test_batch.bin from a directory. Class
/// names come from batches.meta.txt when present.
Dataset load_cifar10(const std::filesystem::path& directory, CifarSplit split = CifarSplit::Test);

// Dataset archive: "ADVDS1\0" magic, u32 header length, JSON header
// {count, height, width, channels, class_names}, u32 labels, f32 pixels.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Archive file or CIFAR-10 directory.
Dataset load_any_dataset(const std::filesystem::path& path);

}  // namespace advscope
