#pragma once

// Dataset loading and batch assembly.
//
// Sources: IDX image/label pairs (optionally gzipped) and CIFAR binary
// records. Images stay uint8 CHW until batch assembly, which resizes to the
// target side (nearest), optionally pad-crops and flips (training only),
// replicates grayscale to the target channel count, and normalizes per
// channel. Every random draw is keyed on (seed, epoch, batch), so any batch
// of any epoch can be rebuilt independently: that is what makes checkpoint
// resume bitwise exact.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cresnet/error.hpp"
#include "cresnet/tensor.hpp"

namespace cresnet {

struct Dataset {
  std::int64_t n = 0;
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t num_classes = 0;
  std::vector<std::uint8_t> pixels;  // n * channels * height * width, CHW
  std::vector<int> labels;           // n entries in [0, num_classes)
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline bool is_gzip(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

inline std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in,
                                        const std::string& what) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK)  // accept zlib and gzip framing
    throw Error("zlib: inflateInit2 failed");
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 18);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      const long long at = static_cast<long long>(zs.total_in);
      inflateEnd(&zs);
      throw DataError(what + ": corrupt gzip stream (zlib rc " + std::to_string(rc) + ")",
                      at);
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

inline std::vector<std::uint8_t> read_maybe_gz(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file(path);
  return is_gzip(bytes) ? gunzip(bytes, path) : bytes;
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, size_t at,
                          const std::string& what) {
  if (at + 4 > b.size())
    throw DataError(what + ": truncated before a 4-byte field",
                    static_cast<long long>(at));
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) |
         (std::uint32_t(b[at + 2]) << 8) | std::uint32_t(b[at + 3]);
}

// Exists either as `path` or `path.gz`.
inline std::string resolve_gz(const std::string& path) {
  if (std::ifstream(path, std::ios::binary)) return path;
  if (std::ifstream(path + ".gz", std::ios::binary)) return path + ".gz";
  throw DataError("cannot open " + path + " (also tried .gz)");
}

}  // namespace detail

// IDX image file (magic 2051) + label file (magic 2049), big-endian header.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::int64_t num_classes = 10) {
  const auto img = detail::read_maybe_gz(images_path);
  const auto lab = detail::read_maybe_gz(labels_path);

  const std::uint32_t img_magic = detail::be32(img, 0, images_path);
  if (img_magic != 2051)
    throw DataError(images_path + ": IDX image magic mismatch, expected 2051, got " +
                    std::to_string(img_magic), 0);
  const std::uint32_t n = detail::be32(img, 4, images_path);
  const std::uint32_t h = detail::be32(img, 8, images_path);
  const std::uint32_t w = detail::be32(img, 12, images_path);
  const size_t need = 16 + size_t(n) * h * w;
  if (img.size() != need)
    throw DataError(images_path + ": expected " + std::to_string(need) + " bytes for " +
                    std::to_string(n) + " images of " + std::to_string(h) + "x" +
                    std::to_string(w) + ", got " + std::to_string(img.size()),
                    static_cast<long long>(std::min(img.size(), need)));

  const std::uint32_t lab_magic = detail::be32(lab, 0, labels_path);
  if (lab_magic != 2049)
    throw DataError(labels_path + ": IDX label magic mismatch, expected 2049, got " +
                    std::to_string(lab_magic), 0);
  const std::uint32_t ln = detail::be32(lab, 4, labels_path);
  if (ln != n)
    throw DataError(labels_path + ": " + std::to_string(ln) + " labels for " +
                    std::to_string(n) + " images", 4);
  if (lab.size() != 8 + size_t(ln))
    throw DataError(labels_path + ": expected " + std::to_string(8 + size_t(ln)) +
                    " bytes, got " + std::to_string(lab.size()),
                    static_cast<long long>(std::min(lab.size(), 8 + size_t(ln))));

  Dataset ds;
  ds.n = n;
  ds.channels = 1;
  ds.height = h;
  ds.width = w;
  ds.num_classes = num_classes;
  ds.pixels.assign(img.begin() + 16, img.end());
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const int y = lab[8 + i];
    if (y >= num_classes)
      throw DataError(labels_path + ": label " + std::to_string(y) + " outside [0," +
                      std::to_string(num_classes) + ") at index " + std::to_string(i),
                      static_cast<long long>(8 + i));
    ds.labels[static_cast<size_t>(i)] = y;
  }
  return ds;
}

// Standard file names, bare or .gz; split is "train" or "t10k".
inline Dataset load_mnist(const std::string& dir, const std::string& split) {
  if (split != "train" && split != "t10k")
    throw SpecError("mnist split must be 'train' or 't10k', got '" + split + "'");
  const std::string img = detail::resolve_gz(dir + "/" + split + "-images-idx3-ubyte");
  const std::string lab = detail::resolve_gz(dir + "/" + split + "-labels-idx1-ubyte");
  return load_idx(img, lab, 10);
}

namespace detail {

inline Dataset load_cifar_bin(const std::vector<std::string>& paths, bool coarse_fine,
                              std::int64_t num_classes) {
  // CIFAR-10 record: label + 3072 pixels. CIFAR-100: coarse, fine + 3072.
  const size_t record = coarse_fine ? 3074 : 3073;
  Dataset ds;
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  ds.num_classes = num_classes;
  for (const std::string& path : paths) {
    const auto bytes = read_maybe_gz(path);
    if (bytes.empty() || bytes.size() % record != 0)
      throw DataError(path + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of the " + std::to_string(record) +
                      "-byte record",
                      static_cast<long long>(bytes.size() - bytes.size() % record));
    const size_t count = bytes.size() / record;
    for (size_t i = 0; i < count; ++i) {
      const size_t at = i * record;
      const int y = coarse_fine ? bytes[at + 1] : bytes[at];
      if (y >= num_classes)
        throw DataError(path + ": label " + std::to_string(y) + " outside [0," +
                        std::to_string(num_classes) + ") in record " + std::to_string(i),
                        static_cast<long long>(coarse_fine ? at + 1 : at));
      ds.labels.push_back(y);
      const size_t px = at + (coarse_fine ? 2 : 1);
      ds.pixels.insert(ds.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(px),
                       bytes.begin() + static_cast<std::ptrdiff_t>(px + 3072));
    }
    ds.n += static_cast<std::int64_t>(count);
  }
  return ds;
}

}  // namespace detail

inline Dataset load_cifar10(const std::string& dir, const std::string& split) {
  if (split == "train") {
    std::vector<std::string> paths;
    for (int i = 1; i <= 5; ++i)
      paths.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    return detail::load_cifar_bin(paths, false, 10);
  }
  if (split == "test") return detail::load_cifar_bin({dir + "/test_batch.bin"}, false, 10);
  throw SpecError("cifar10 split must be 'train' or 'test', got '" + split + "'");
}

inline Dataset load_cifar100(const std::string& dir, const std::string& split) {
  if (split == "train") return detail::load_cifar_bin({dir + "/train.bin"}, true, 100);
  if (split == "test") return detail::load_cifar_bin({dir + "/test.bin"}, true, 100);
  throw SpecError("cifar100 split must be 'train' or 'test', got '" + split + "'");
}

// First n examples. Fixture files interleave classes round-robin, so any
// prefix stays close to balanced.
inline Dataset take_prefix(const Dataset& ds, std::int64_t n) {
  if (n <= 0 || n > ds.n)
    throw SpecError("take_prefix: n is " + std::to_string(n) + ", dataset has " +
                    std::to_string(ds.n));
  Dataset out = ds;
  out.n = n;
  const size_t image = static_cast<size_t>(ds.channels * ds.height * ds.width);
  out.pixels.resize(static_cast<size_t>(n) * image);
  out.labels.resize(static_cast<size_t>(n));
  return out;
}

inline std::vector<std::int64_t> class_histogram(const Dataset& ds) {
  std::vector<std::int64_t> hist(static_cast<size_t>(ds.num_classes), 0);
  for (int y : ds.labels) ++hist[static_cast<size_t>(y)];
  return hist;
}

// ---------------------------------------------------------------------------
// Batch assembly

struct AugmentConfig {
  int out_size = 32;
  bool pad_crop = true;  // zero-pad by `pad`, crop back to out_size (training)
  int pad = 4;
  bool hflip = true;     // coin-flip horizontal mirror (training)
  std::vector<double> mean;    // per target channel
  std::vector<double> stddev;  // per target channel
};

inline AugmentConfig cifar_augment() {
  AugmentConfig a;
  a.mean = {0.4914, 0.4822, 0.4465};
  a.stddev = {0.2470, 0.2435, 0.2616};
  return a;
}

// Digits are not mirror symmetric, so flipping stays off.
inline AugmentConfig mnist_augment() {
  AugmentConfig a;
  a.hflip = false;
  a.mean = {0.1307, 0.1307, 0.1307};
  a.stddev = {0.3081, 0.3081, 0.3081};
  return a;
}

namespace detail {

// splitmix64 finalizer; keys every stream on (seed, index) pairs.
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace detail

template <typename T>
struct Batch {
  Tensor<T> x;
  std::vector<int> y;
};

template <typename T>
class Loader {
 public:
  Loader(const Dataset& ds, std::int64_t batch_size, bool train_mode, AugmentConfig aug,
         std::uint64_t seed)
      : ds_(&ds), batch_(batch_size), train_(train_mode), aug_(std::move(aug)),
        seed_(seed) {
    if (batch_size < 1) throw SpecError("batch size must be >= 1");
    if (aug_.mean.empty() || aug_.mean.size() != aug_.stddev.size())
      throw SpecError("augment config needs matching per-channel mean and stddev");
    if (ds.channels != static_cast<std::int64_t>(aug_.mean.size()) && ds.channels != 1)
      throw SpecError("dataset has " + std::to_string(ds.channels) +
                      " channels; config expects " + std::to_string(aug_.mean.size()) +
                      " (or 1 for grayscale replication)");
  }

  std::int64_t examples() const { return ds_->n; }
  std::int64_t batches() const { return (ds_->n + batch_ - 1) / batch_; }
  std::int64_t target_channels() const {
    return static_cast<std::int64_t>(aug_.mean.size());
  }

  // Example order for an epoch; shuffled only in training mode.
  std::vector<std::int64_t> epoch_order(int epoch) const {
    std::vector<std::int64_t> order(static_cast<size_t>(ds_->n));
    std::iota(order.begin(), order.end(), 0);
    if (train_) {
      std::mt19937_64 rng(detail::mix64(seed_, static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
    }
    return order;
  }

  // Deterministic random access: (epoch, index) alone decides the content.
  Batch<T> batch(int epoch, std::int64_t index) {
    if (index < 0 || index >= batches())
      throw SpecError("batch index " + std::to_string(index) + " outside [0," +
                      std::to_string(batches()) + ")");
    if (cached_epoch_ != epoch) {
      order_ = epoch_order(epoch);
      cached_epoch_ = epoch;
    }
    const std::int64_t begin = index * batch_;
    const std::int64_t count = std::min(batch_, ds_->n - begin);
    const std::int64_t C = target_channels(), S = aug_.out_size;

    Batch<T> out;
    out.x = Tensor<T>::zeros({count, C, S, S});
    out.y.resize(static_cast<size_t>(count));
    std::mt19937 rng(static_cast<std::uint32_t>(detail::mix64(
        detail::mix64(seed_, static_cast<std::uint64_t>(epoch)),
        static_cast<std::uint64_t>(index) + 0x10000)));
    for (std::int64_t i = 0; i < count; ++i) {
      const std::int64_t src = order_[static_cast<size_t>(begin + i)];
      int dy = 0, dx = 0;
      bool flip = false;
      if (train_ && aug_.pad_crop) {
        std::uniform_int_distribution<int> d(0, 2 * aug_.pad);
        dy = d(rng);
        dx = d(rng);
      }
      if (train_ && aug_.hflip) {
        std::bernoulli_distribution coin(0.5);
        flip = coin(rng);
      }
      assemble(out.x.data() + i * C * S * S, src, dy, dx, flip);
      out.y[static_cast<size_t>(i)] = ds_->labels[static_cast<size_t>(src)];
    }
    return out;
  }

 private:
  void assemble(T* dst, std::int64_t src, int dy, int dx, bool flip) const {
    const std::int64_t C = target_channels(), S = aug_.out_size;
    const std::int64_t h = ds_->height, w = ds_->width;
    const bool crop = train_ && aug_.pad_crop;
    const std::uint8_t* base =
        ds_->pixels.data() + static_cast<size_t>(src) * ds_->channels * h * w;
    for (std::int64_t c = 0; c < C; ++c) {
      const std::uint8_t* plane =
          base + (ds_->channels == 1 ? 0 : static_cast<size_t>(c) * h * w);
      const T mean = static_cast<T>(aug_.mean[static_cast<size_t>(c)]);
      const T inv_std = T(1) / static_cast<T>(aug_.stddev[static_cast<size_t>(c)]);
      for (std::int64_t y = 0; y < S; ++y) {
        for (std::int64_t x = 0; x < S; ++x) {
          const std::int64_t xv = flip ? S - 1 - x : x;
          // Position in the resized (S x S) image; pad-crop shifts it.
          const std::int64_t ry = crop ? y + dy - aug_.pad : y;
          const std::int64_t rx = crop ? xv + dx - aug_.pad : xv;
          T v = T(0);
          if (ry >= 0 && ry < S && rx >= 0 && rx < S) {
            const std::int64_t sy = ry * h / S;  // nearest-neighbor resize
            const std::int64_t sx = rx * w / S;
            v = static_cast<T>(plane[sy * w + sx]) / T(255);
          }
          dst[(c * S + y) * S + x] = (v - mean) * inv_std;
        }
      }
    }
  }

  const Dataset* ds_;
  std::int64_t batch_;
  bool train_;
  AugmentConfig aug_;
  std::uint64_t seed_;
  int cached_epoch_ = -1;
  std::vector<std::int64_t> order_;
};

}  // namespace cresnet
