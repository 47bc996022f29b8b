#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blindspot/numerics.hpp"

namespace blindspot {

using Label = int;

inline constexpr int kNumClasses = 10;

// A grayscale image with pixels in [0, 1], stored row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  Vector pixels;

  std::size_t size() const noexcept { return width * height; }
};

// Throws InvalidInput if any pixel is outside [0, 1] or sizes disagree.
void validate_image(const Image& img);

// Immutable labelled image collection. Images are stored as the columns of
// one matrix so whole-batch evaluation is a single matrix product.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::string name, std::size_t width, std::size_t height, Matrix pixels,
                 std::vector<Label> labels, int num_classes = kNumClasses);

  const std::string& name() const noexcept { return name_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t dim() const noexcept { return width_ * height_; }
  int num_classes() const noexcept { return num_classes_; }

  // dim x size, one image per column.
  const Matrix& pixels() const noexcept { return pixels_; }
  const std::vector<Label>& labels() const noexcept { return labels_; }
  Label label(std::size_t i) const { return labels_.at(i); }
  Image image(std::size_t i) const;

  LabeledDataset subset(std::span<const std::size_t> indices, std::string name) const;
  // Stable content hash (FNV-1a over quantized pixels and labels).
  std::uint64_t content_hash() const;

 private:
  std::string name_;
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  int num_classes_ = kNumClasses;
  Matrix pixels_;
  std::vector<Label> labels_;
};

LabeledDataset make_dataset(std::string name, std::span<const Image> images,
                            std::span<const Label> labels, int num_classes = kNumClasses);

// IDX reader. Image files carry magic 2051 and dims (count, rows, cols);
// label files carry magic 2049 and dim (count). Pixels are scaled b / 255.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::string name = "idx");

enum class MnistSplit { train, test };

struct MnistPaths {
  std::filesystem::path images;
  std::filesystem::path labels;
};

MnistPaths mnist_paths(const std::filesystem::path& dir, MnistSplit split);
// Loads the standard file pair from dir; the error names both expected paths.
LabeledDataset load_mnist(const std::filesystem::path& dir, MnistSplit split);

// Deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Seeded shuffle then halving. Requires an even size.
std::pair<LabeledDataset, LabeledDataset> split_half(const LabeledDataset& d, std::uint64_t seed);

// First n items of a seeded permutation (all items if n >= size).
LabeledDataset subsample(const LabeledDataset& d, std::size_t n, std::uint64_t seed);

// Two-class 8x8 images: a bright blob in the upper-left (class 0) or
// lower-right (class 1) quadrant with jittered centre and additive noise.
LabeledDataset make_synthetic_blobs(std::size_t count, std::uint64_t seed);

// Binary P5 PGM, maxval 255. Images are tiled row-major, cols per row, with
// a one-pixel separator of value 128; unused cells are filled with 128.
void write_pgm_grid(std::span<const Image> images, std::size_t cols,
                    const std::filesystem::path& path);

std::uint8_t quantize_pixel(double p) noexcept;

// Minimal CSV emitter: header row, comma separator, '.' decimal point.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  CsvWriter& row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const noexcept { return header_; }
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Locale-independent number formatting used by every CSV emitter.
std::string format_number(double v, int precision = 10);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace blindspot
