#include "blindspot/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "blindspot/error.hpp"

namespace blindspot {

namespace fs = std::filesystem;

void validate_image(const Image& img) {
  if (static_cast<std::size_t>(img.pixels.size()) != img.width * img.height) {
    throw InvalidInput("image: pixel count " + std::to_string(img.pixels.size()) +
                       " does not match " + std::to_string(img.width) + "x" +
                       std::to_string(img.height));
  }
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
    const double p = img.pixels(i);
    if (!(p >= 0.0 && p <= 1.0)) {
      throw InvalidInput("image: pixel " + std::to_string(i) + " outside [0,1]");
    }
  }
}

LabeledDataset::LabeledDataset(std::string name, std::size_t width, std::size_t height,
                               Matrix pixels, std::vector<Label> labels, int num_classes)
    : name_(std::move(name)),
      width_(width),
      height_(height),
      num_classes_(num_classes),
      pixels_(std::move(pixels)),
      labels_(std::move(labels)) {
  if (static_cast<std::size_t>(pixels_.rows()) != width_ * height_) {
    throw InvalidInput("dataset: pixel rows do not match image dimensions");
  }
  if (static_cast<std::size_t>(pixels_.cols()) != labels_.size()) {
    throw InvalidInput("dataset: " + std::to_string(pixels_.cols()) + " images but " +
                       std::to_string(labels_.size()) + " labels");
  }
  for (Label l : labels_) {
    if (l < 0 || l >= num_classes_) {
      throw InvalidInput("dataset: label " + std::to_string(l) + " outside class range");
    }
  }
}

Image LabeledDataset::image(std::size_t i) const {
  if (i >= size()) throw InvalidInput("dataset: index out of range");
  return Image{width_, height_, pixels_.col(static_cast<Eigen::Index>(i))};
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices,
                                      std::string name) const {
  Matrix px(pixels_.rows(), static_cast<Eigen::Index>(indices.size()));
  std::vector<Label> labels;
  labels.reserve(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t i = indices[j];
    if (i >= size()) throw InvalidInput("dataset subset: index out of range");
    px.col(static_cast<Eigen::Index>(j)) = pixels_.col(static_cast<Eigen::Index>(i));
    labels.push_back(labels_[i]);
  }
  return LabeledDataset(std::move(name), width_, height_, std::move(px), std::move(labels),
                        num_classes_);
}

std::uint64_t LabeledDataset::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (Eigen::Index j = 0; j < pixels_.cols(); ++j) {
    for (Eigen::Index i = 0; i < pixels_.rows(); ++i) feed(quantize_pixel(pixels_(i, j)));
    feed(static_cast<std::uint64_t>(labels_[static_cast<std::size_t>(j)]));
  }
  return h;
}

LabeledDataset make_dataset(std::string name, std::span<const Image> images,
                            std::span<const Label> labels, int num_classes) {
  if (images.size() != labels.size()) {
    throw InvalidInput("make_dataset: image and label counts differ");
  }
  if (images.empty()) {
    return LabeledDataset(std::move(name), 0, 0, Matrix(0, 0), {}, num_classes);
  }
  const std::size_t w = images.front().width;
  const std::size_t h = images.front().height;
  Matrix px(static_cast<Eigen::Index>(w * h), static_cast<Eigen::Index>(images.size()));
  for (std::size_t j = 0; j < images.size(); ++j) {
    if (images[j].width != w || images[j].height != h) {
      throw InvalidInput("make_dataset: images differ in dimensions");
    }
    validate_image(images[j]);
    px.col(static_cast<Eigen::Index>(j)) = images[j].pixels;
  }
  return LabeledDataset(std::move(name), w, h, std::move(px),
                        std::vector<Label>(labels.begin(), labels.end()), num_classes);
}

namespace {

std::vector<unsigned char> read_all_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const fs::path& path) {
  if (bytes.size() < offset + 4) {
    throw FormatError(path.string() + ": truncated IDX header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(std::uint32_t actual, std::uint32_t expected, const fs::path& path) {
  if (actual != expected) {
    throw FormatError(path.string() + ": bad IDX magic, expected " + std::to_string(expected) +
                      ", got " + std::to_string(actual));
  }
}

}  // namespace

LabeledDataset load_idx(const fs::path& images_path, const fs::path& labels_path,
                        std::string name) {
  const auto img_bytes = read_all_bytes(images_path);
  const auto lbl_bytes = read_all_bytes(labels_path);

  expect_magic(read_be32(img_bytes, 0, images_path), 2051, images_path);
  expect_magic(read_be32(lbl_bytes, 0, labels_path), 2049, labels_path);

  const std::size_t count = read_be32(img_bytes, 4, images_path);
  const std::size_t rows = read_be32(img_bytes, 8, images_path);
  const std::size_t cols = read_be32(img_bytes, 12, images_path);
  const std::size_t label_count = read_be32(lbl_bytes, 4, labels_path);

  const std::size_t img_header = 16;
  const std::size_t lbl_header = 8;
  const std::size_t dim = rows * cols;
  if (img_bytes.size() != img_header + count * dim) {
    throw FormatError(images_path.string() + ": expected " +
                      std::to_string(img_header + count * dim) + " bytes, found " +
                      std::to_string(img_bytes.size()));
  }
  if (lbl_bytes.size() != lbl_header + label_count) {
    throw FormatError(labels_path.string() + ": expected " +
                      std::to_string(lbl_header + label_count) + " bytes, found " +
                      std::to_string(lbl_bytes.size()));
  }
  if (count != label_count) {
    throw FormatError("IDX consistency: " + std::to_string(count) + " images but " +
                      std::to_string(label_count) + " labels");
  }

  Matrix px(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
  for (std::size_t j = 0; j < count; ++j) {
    const unsigned char* src = img_bytes.data() + img_header + j * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      px(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = src[i] / 255.0;
    }
  }
  std::vector<Label> labels(count);
  for (std::size_t j = 0; j < count; ++j) {
    const int l = lbl_bytes[lbl_header + j];
    if (l >= kNumClasses) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(l) +
                        " outside 0..9 at index " + std::to_string(j));
    }
    labels[j] = l;
  }
  return LabeledDataset(std::move(name), cols, rows, std::move(px), std::move(labels));
}

MnistPaths mnist_paths(const fs::path& dir, MnistSplit split) {
  const std::string prefix = split == MnistSplit::train ? "train" : "t10k";
  return {dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte")};
}

LabeledDataset load_mnist(const fs::path& dir, MnistSplit split) {
  const auto paths = mnist_paths(dir, split);
  if (!fs::exists(paths.images) || !fs::exists(paths.labels)) {
    throw IoError("MNIST files not found: expected " + paths.images.string() + " and " +
                  paths.labels.string() +
                  " (pass --data <dir> or set BLINDSPOT_DATA to the directory holding the "
                  "uncompressed IDX files)");
  }
  return load_idx(paths.images, paths.labels,
                  split == MnistSplit::train ? "mnist-train" : "mnist-test");
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  RngStream rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::pair<LabeledDataset, LabeledDataset> split_half(const LabeledDataset& d,
                                                     std::uint64_t seed) {
  if (d.size() % 2 != 0) {
    throw InvalidInput("split_half: dataset size " + std::to_string(d.size()) + " is odd");
  }
  const auto perm = seeded_permutation(d.size(), seed);
  const std::size_t half = d.size() / 2;
  std::span<const std::size_t> all(perm);
  return {d.subset(all.first(half), d.name() + "-P1"),
          d.subset(all.subspan(half), d.name() + "-P2")};
}

LabeledDataset subsample(const LabeledDataset& d, std::size_t n, std::uint64_t seed) {
  auto perm = seeded_permutation(d.size(), seed);
  perm.resize(std::min(n, d.size()));
  return d.subset(perm, d.name() + "-sub" + std::to_string(perm.size()));
}

LabeledDataset make_synthetic_blobs(std::size_t count, std::uint64_t seed) {
  constexpr std::size_t side = 8;
  RngStream rng(seed);
  Matrix px(static_cast<Eigen::Index>(side * side), static_cast<Eigen::Index>(count));
  std::vector<Label> labels(count);
  for (std::size_t j = 0; j < count; ++j) {
    const Label label = static_cast<Label>(rng.below(2));
    const double base = label == 0 ? 2.0 : 5.0;
    const double cy = base + rng.uniform(-0.75, 0.75);
    const double cx = base + rng.uniform(-0.75, 0.75);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        const double v = std::exp(-(dx * dx + dy * dy) / 3.0) + 0.05 * rng.normal();
        px(static_cast<Eigen::Index>(y * side + x), static_cast<Eigen::Index>(j)) =
            std::clamp(v, 0.0, 1.0);
      }
    }
    labels[j] = label;
  }
  return LabeledDataset("synthetic-blobs", side, side, std::move(px), std::move(labels), 2);
}

std::uint8_t quantize_pixel(double p) noexcept {
  const double c = std::isnan(p) ? 0.0 : std::clamp(p, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * c));
}

void write_pgm_grid(std::span<const Image> images, std::size_t cols, const fs::path& path) {
  if (images.empty()) throw InvalidInput("write_pgm_grid: no images");
  if (cols == 0) throw InvalidInput("write_pgm_grid: cols must be positive");
  const std::size_t w = images.front().width;
  const std::size_t h = images.front().height;
  for (const auto& img : images) {
    if (img.width != w || img.height != h ||
        static_cast<std::size_t>(img.pixels.size()) != w * h) {
      throw InvalidInput("write_pgm_grid: images differ in dimensions");
    }
  }
  const std::size_t grid_cols = std::min(cols, images.size());
  const std::size_t grid_rows = (images.size() + cols - 1) / cols;
  const std::size_t out_w = grid_cols * w + (grid_cols - 1);
  const std::size_t out_h = grid_rows * h + (grid_rows - 1);

  std::vector<std::uint8_t> canvas(out_w * out_h, 128);
  for (std::size_t k = 0; k < images.size(); ++k) {
    const std::size_t ox = (k % cols) * (w + 1);
    const std::size_t oy = (k / cols) * (h + 1);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        canvas[(oy + y) * out_w + ox + x] =
            quantize_pixel(images[k].pixels(static_cast<Eigen::Index>(y * w + x)));
      }
    }
  }

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << out_w << " " << out_h << "\n255\n";
  out.write(reinterpret_cast<const char*>(canvas.data()),
            static_cast<std::streamsize>(canvas.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

CsvWriter::CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

CsvWriter& CsvWriter::row(std::vector<std::string> cells) {
  if (cells.size() != header_.size()) {
    throw InvalidInput("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                       std::to_string(header_.size()));
  }
  rows_.push_back(std::move(cells));
  return *this;
}

namespace {

std::string escape_cell(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void append_line(std::string& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += escape_cell(cells[i]);
  }
  out += '\n';
}

}  // namespace

std::string CsvWriter::str() const {
  std::string out;
  append_line(out, header_);
  for (const auto& r : rows_) append_line(out, r);
  return out;
}

void CsvWriter::write(const fs::path& path) const { write_text_file(path, str()); }

std::string format_number(double v, int precision) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, precision);
  return std::string(buf, res.ptr);
}

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace blindspot
