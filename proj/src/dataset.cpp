#include "advscope/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <iterator>

#include "advscope/binary_io.hpp"
#include "advscope/random.hpp"
#include "json.hpp"

namespace advscope {

using nlohmann::json;

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.class_names = class_names;
  out.height = height;
  out.width = width;
  for (std::size_t i : indices) {
    out.images.push_back(images.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

std::vector<std::size_t> Dataset::histogram() const {
  std::vector<std::size_t> counts(class_names.size());
  for (std::size_t label : labels) {
    if (label >= counts.size()) counts.resize(label + 1);
    ++counts[label];
  }
  return counts;
}

DatasetSplit split_dataset(const Dataset& data, double test_fraction) {
  if (!(test_fraction >= 0 && test_fraction < 1)) {
    throw ValidationError("test fraction must lie in [0, 1)", "test_fraction");
  }
  const auto counts = data.histogram();
  std::vector<std::size_t> test_quota(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    test_quota[c] = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(counts[c])));
  }
  std::vector<std::size_t> seen(counts.size());
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t c = data.labels[i];
    const bool to_test = seen[c] >= counts[c] - test_quota[c];
    ++seen[c];
    (to_test ? test_idx : train_idx).push_back(i);
  }
  return {data.subset(train_idx), data.subset(test_idx)};
}

namespace {

using Color = std::array<double, 3>;

Color random_color(SplitMix64& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

double color_distance(const Color& a, const Color& b) {
  double d = 0;
  for (int i = 0; i < 3; ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d);
}

bool inside_shape(std::size_t cls, double dx, double dy, double r) {
  switch (cls) {
    case 0:
      return dx * dx + dy * dy <= r * r;
    case 1:
      return std::abs(dx) <= r * 0.85 && std::abs(dy) <= r * 0.85;
    case 2: {
      // Upward triangle with apex at (0, -r) and base at y = +r.
      if (dy < -r || dy > r) return false;
      const double half_width = r * (dy + r) / (2 * r);
      return std::abs(dx) <= half_width;
    }
    default: {
      const double arm = r * 0.3;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
  }
}

}  // namespace

Dataset generate_shapes_dataset(std::uint64_t seed, std::size_t count_per_class, std::size_t image_size) {
  if (image_size < 16) throw ValidationError("image size must be at least 16", "image_size");
  Dataset data;
  data.class_names = shape_class_names();
  data.height = data.width = image_size;
  const std::size_t classes = data.class_names.size();

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < count_per_class; ++i) {
    for (std::size_t c = 0; c < classes; ++c) order.push_back(c);
  }
  SplitMix64 order_rng(derive_seed(seed, 0));
  shuffle(order, order_rng);

  const double size = static_cast<double>(image_size);
  for (std::size_t idx = 0; idx < order.size(); ++idx) {
    const std::size_t cls = order[idx];
    SplitMix64 rng(derive_seed(seed, idx + 1));
    const Color background = random_color(rng);
    Color foreground = random_color(rng);
    while (color_distance(background, foreground) < 0.6) foreground = random_color(rng);
    const double r = rng.uniform(0.22, 0.4) * size;
    const double cx = rng.uniform(r, size - r);
    const double cy = rng.uniform(r, size - r);

    Tensor<float> image({3, image_size, image_size});
    for (std::size_t y = 0; y < image_size; ++y) {
      for (std::size_t x = 0; x < image_size; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx;
        const double dy = static_cast<double>(y) + 0.5 - cy;
        const Color& color = inside_shape(cls, dx, dy, r) ? foreground : background;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = color[ch] + 0.05 * rng.normal();
          image[(ch * image_size + y) * image_size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    data.images.push_back(std::move(image));
    data.labels.push_back(cls);
  }
  return data;
}

Dataset load_cifar10_file(const std::filesystem::path& path, std::size_t expected_records) {
  const Bytes bytes = read_file(path);
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a whole number of 3073-byte records");
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  if (expected_records != 0 && records != expected_records) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected_records) + " records, found " +
                      std::to_string(records));
  }
  Dataset data;
  data.height = data.width = 32;
  data.class_names = {"airplane", "automobile", "bird", "cat", "deer",
                      "dog", "frog", "horse", "ship", "truck"};
  data.images.reserve(records);
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) throw FormatError(path.string() + ": label byte out of range");
    Tensor<float> image({3, 32, 32});
    for (std::size_t i = 0; i < 3072; ++i) image[i] = static_cast<float>(rec[1 + i]) / 255.0f;
    data.images.push_back(std::move(image));
    data.labels.push_back(rec[0]);
  }
  return data;
}

Dataset load_cifar10(const std::filesystem::path& directory, CifarSplit split) {
  std::vector<std::filesystem::path> files;
  if (split != CifarSplit::Test) {
    for (int i = 1; i <= 5; ++i) files.push_back(directory / ("data_batch_" + std::to_string(i) + ".bin"));
  }
  if (split != CifarSplit::Train) files.push_back(directory / "test_batch.bin");
  Dataset all;
  for (const auto& file : files) {
    Dataset part = load_cifar10_file(file, kCifarBatchRecords);
    if (all.class_names.empty()) {
      all.class_names = part.class_names;
      all.height = part.height;
      all.width = part.width;
    }
    std::move(part.images.begin(), part.images.end(), std::back_inserter(all.images));
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  const auto meta = directory / "batches.meta.txt";
  if (std::filesystem::exists(meta)) {
    std::vector<std::string> names;
    std::string text = read_text(meta), line;
    for (char ch : text + "\n") {
      if (ch == '\n') {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        if (!line.empty()) names.push_back(line);
        line.clear();
      } else {
        line += ch;
      }
    }
    if (names.size() == 10) all.class_names = names;
  }
  return all;
}

constexpr std::string_view kDatasetMagic{"ADVDS1\0", 7};

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  json header{{"count", data.size()},
              {"height", data.height},
              {"width", data.width},
              {"channels", 3},
              {"class_names", data.class_names}};
  const std::string text = header.dump();
  Bytes out;
  put_bytes(out, kDatasetMagic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  put_bytes(out, text);
  for (std::size_t label : data.labels) put_u32(out, static_cast<std::uint32_t>(label));
  for (const auto& image : data.images) put_f32s(out, image.span());
  write_file_atomic(path, out);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  ByteReader reader(bytes, path.string());
  reader.expect(kDatasetMagic);
  auto header_bytes = reader.take(reader.u32());
  Dataset data;
  std::size_t count = 0;
  try {
    json header = json::parse(header_bytes.begin(), header_bytes.end());
    count = header.at("count");
    data.height = header.at("height");
    data.width = header.at("width");
    data.class_names = header.at("class_names").get<std::vector<std::string>>();
    if (header.at("channels").get<std::size_t>() != 3) throw FormatError(path.string() + ": expected RGB");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const std::size_t pixels = 3 * data.height * data.width;
  if (reader.remaining() != count * (4 + 4 * pixels)) throw FormatError(path.string() + ": length mismatch");
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = reader.u32();
    if (label >= data.class_names.size()) throw FormatError(path.string() + ": label out of range");
    data.labels.push_back(label);
  }
  for (std::size_t i = 0; i < count; ++i) {
    Tensor<float> image({3, data.height, data.width});
    reader.f32s(image.span());
    data.images.push_back(std::move(image));
  }
  return data;
}

Dataset load_any_dataset(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) {
    const bool has_train = std::filesystem::exists(path / "data_batch_1.bin");
    return load_cifar10(path, has_train ? CifarSplit::All : CifarSplit::Test);
  }
  return load_dataset(path);
}

}  // namespace advscope
