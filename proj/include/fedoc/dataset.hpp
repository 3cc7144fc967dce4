#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "fedoc/common.hpp"

namespace fedoc {

// Row-major N x d feature matrix with labels in [0, C).
struct Dataset {
  std::string name;
  std::size_t num_classes = 0;
  std::size_t dims = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {features.data() + i * dims, dims}; }

  std::vector<std::vector<std::size_t>> indices_by_class() const {
    std::vector<std::vector<std::size_t>> out(num_classes);
    for (std::size_t i = 0; i < size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
    return out;
  }

  void validate() const {
    check(size() > 0, name + ": dataset is empty");
    check(features.size() == size() * dims, name + ": feature matrix has the wrong size");
    for (int y : labels)
      check(y >= 0 && static_cast<std::size_t>(y) < num_classes, name + ": label out of range");
    for (double x : features) check(std::isfinite(x), name + ": non-finite feature");
  }
};

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idx, std::string name) {
  Dataset out;
  out.name = std::move(name);
  out.num_classes = ds.num_classes;
  out.dims = ds.dims;
  out.features.reserve(idx.size() * ds.dims);
  for (std::size_t i : idx) {
    const auto r = ds.row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

// Class-proportional subset of `count` samples (largest-remainder rounding),
// order preserved.
inline Dataset stratified_subset(const Dataset& ds, std::size_t count, std::uint64_t seed) {
  if (count == 0 || count >= ds.size()) return ds;
  auto by_class = ds.indices_by_class();
  Rng rng(derive_seed(seed, 0x5ab5));
  std::vector<std::size_t> take(ds.num_classes);
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> rem;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    const double exact = static_cast<double>(count) * by_class[c].size() / static_cast<double>(ds.size());
    take[c] = static_cast<std::size_t>(exact);
    assigned += take[c];
    rem.push_back({exact - std::floor(exact), c});
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < count; ++i, ++assigned) ++take[rem[i % rem.size()].second];
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    rng.shuffle(by_class[c]);
    chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + static_cast<long>(take[c]));
  }
  std::sort(chosen.begin(), chosen.end());
  return subset(ds, chosen, ds.name + "-subset");
}

// ---------------------------------------------------------------------------
// IDX files (big-endian magic + dims header). gzip-compressed files are read
// transparently.

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  check(std::filesystem::exists(path), "file not found: " + path);
  gzFile f = gzopen(path.c_str(), "rb");
  check(f != nullptr, "cannot open " + path);
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> buf{};
  int n;
  while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0)
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  const bool failed = n < 0;
  gzclose(f);
  check(!failed, "read error in " + path);
  return out;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v >> 24));
  b.push_back(static_cast<unsigned char>(v >> 16));
  b.push_back(static_cast<unsigned char>(v >> 8));
  b.push_back(static_cast<unsigned char>(v));
}

struct IdxFile {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> payload;
};

inline IdxFile parse_idx(const std::string& path, std::uint32_t magic) {
  const auto bytes = read_file_bytes(path);
  check(bytes.size() >= 4, path + ": truncated header");
  const std::uint32_t got = read_be32(bytes, 0);
  if (got != magic) {
    char msg[96];
    std::snprintf(msg, sizeof msg, ": bad magic 0x%08x (expected 0x%08x)", got, magic);
    throw Error(path + msg);
  }
  const std::size_t ndims = magic & 0xff;
  check(bytes.size() >= 4 + 4 * ndims, path + ": truncated header");
  IdxFile f;
  std::size_t expected = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    f.dims.push_back(read_be32(bytes, 4 + 4 * i));
    expected *= f.dims.back();
  }
  const std::size_t header = 4 + 4 * ndims;
  check(bytes.size() - header >= expected, path + ": truncated payload");
  f.payload.assign(bytes.begin() + static_cast<long>(header),
                   bytes.begin() + static_cast<long>(header + expected));
  return f;
}

}  // namespace detail

// Pixels scaled to [0, 1].
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const auto images = detail::parse_idx(images_path, kIdxImagesMagic);
  const auto labels = detail::parse_idx(labels_path, kIdxLabelsMagic);
  check(images.dims[0] == labels.dims[0], "image/label count mismatch: " +
                                              std::to_string(images.dims[0]) + " vs " +
                                              std::to_string(labels.dims[0]));
  Dataset ds;
  ds.name = "mnist";
  ds.num_classes = 10;
  ds.dims = std::size_t{images.dims[1]} * images.dims[2];
  ds.features.resize(images.payload.size());
  for (std::size_t i = 0; i < images.payload.size(); ++i) ds.features[i] = images.payload[i] / 255.0;
  ds.labels.assign(labels.payload.begin(), labels.payload.end());
  ds.validate();
  return ds;
}

// Uncompressed IDX writer used by tests and fixture generation.
inline void write_idx_images(const std::string& path, const std::vector<unsigned char>& pixels,
                             std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
  std::vector<unsigned char> b;
  detail::put_be32(b, kIdxImagesMagic);
  detail::put_be32(b, count);
  detail::put_be32(b, rows);
  detail::put_be32(b, cols);
  b.insert(b.end(), pixels.begin(), pixels.end());
  std::FILE* f = std::fopen(path.c_str(), "wb");
  check(f != nullptr, "cannot write " + path);
  std::fwrite(b.data(), 1, b.size(), f);
  std::fclose(f);
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> b;
  detail::put_be32(b, kIdxLabelsMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  std::FILE* f = std::fopen(path.c_str(), "wb");
  check(f != nullptr, "cannot write " + path);
  std::fwrite(b.data(), 1, b.size(), f);
  std::fclose(f);
}

struct MnistSplit {
  Dataset train;
  Dataset test;
};

// Looks for {train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz] in `dir`.
inline MnistSplit load_mnist_dir(const std::string& dir) {
  auto find = [&](const std::string& stem) {
    for (const char* ext : {"", ".gz"}) {
      const auto p = std::filesystem::path(dir) / (stem + ext);
      if (std::filesystem::exists(p)) return p.string();
    }
    throw Error("MNIST file " + stem + " not found in " + dir);
  };
  MnistSplit s{load_mnist_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte")),
               load_mnist_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"))};
  s.test.name = "mnist-test";
  return s;
}

// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t dims = 10;
  std::size_t per_class = 100;
  double spread = 0.5;

  bool operator==(const SyntheticSpec&) const = default;
};

// Gaussian blobs: one unit-norm mean per class, isotropic noise of std `spread`.
// Samples are interleaved by class (0, 1, ..., C-1, 0, 1, ...).
inline Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  check(spec.classes >= 2, "synthetic: need at least 2 classes");
  check(spec.dims >= 1, "synthetic: need at least 1 dimension");
  check(spec.per_class >= 1, "synthetic: need at least 1 sample per class");
  check(spec.spread >= 0.0, "synthetic: spread must be non-negative");
  Rng rng(derive_seed(seed, 0xb10b));
  std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.dims));
  for (auto& m : means) {
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (auto& v : m) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (auto& v : m) v /= norm;
  }
  Dataset ds;
  ds.name = "synthetic";
  ds.num_classes = spec.classes;
  ds.dims = spec.dims;
  ds.features.reserve(spec.classes * spec.per_class * spec.dims);
  for (std::size_t i = 0; i < spec.per_class; ++i) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      for (std::size_t j = 0; j < spec.dims; ++j) ds.features.push_back(means[c][j] + spec.spread * rng.normal());
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

}  // namespace fedoc
