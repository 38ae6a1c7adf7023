// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/data/data.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <ostream>

namespace hmcvi::data {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

// Whole file, decompressed if it is gzip.
std::vector<unsigned char> read_all(const std::string& path) {
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  for (;;) {
    const int n = gzread(f.get(), buf, sizeof(buf));
    if (n < 0) throw IdxError("read error in '" + path + "'");
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  return out;
}

void write_all(const std::string& path, const std::vector<unsigned char>& bytes) {
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  GzHandle f(gzopen(path.c_str(), gz ? "wb9" : "wbT"));
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  if (!bytes.empty() &&
      gzwrite(f.get(), bytes.data(), static_cast<unsigned>(bytes.size())) !=
          static_cast<int>(bytes.size())) {
    throw std::runtime_error("write error in '" + path + "'");
  }
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>((v >> s) & 0xffu));
}

// Parses the header; returns the dims and checks the payload size.
std::vector<std::uint32_t> parse_header(const std::vector<unsigned char>& b, std::uint32_t magic,
                                        const std::string& path) {
  if (b.size() < 4) throw IdxTruncated("'" + path + "': file shorter than the IDX magic");
  const std::uint32_t got = be32(b, 0);
  if (got != magic) {
    char msg[128];
    std::snprintf(msg, sizeof(msg), "bad IDX magic 0x%08x (expected 0x%08x)", got, magic);
    throw IdxBadMagic("'" + path + "': " + msg);
  }
  const std::size_t ndim = magic & 0xffu;
  if (b.size() < 4 + 4 * ndim) throw IdxTruncated("'" + path + "': truncated IDX header");
  std::vector<std::uint32_t> dims(ndim);
  std::size_t payload = 1;
  for (std::size_t k = 0; k < ndim; ++k) {
    dims[k] = be32(b, 4 + 4 * k);
    payload *= dims[k];
  }
  const std::size_t have = b.size() - 4 - 4 * ndim;
  if (have < payload) {
    throw IdxTruncated("'" + path + "': header promises " + std::to_string(payload) +
                       " bytes, file holds " + std::to_string(have));
  }
  if (have > payload) {
    throw IdxDimMismatch("'" + path + "': " + std::to_string(have - payload) +
                         " bytes beyond the declared dimensions");
  }
  return dims;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<int> load_idx_labels(const std::string& path) {
  const auto bytes = read_all(path);
  const auto dims = parse_header(bytes, kIdxLabelMagic, path);
  std::vector<int> labels(dims[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = bytes[8 + i];
  return labels;
}

ImageDataset load_idx(const std::string& images_path, const std::string& labels_path,
                      Split split) {
  const auto bytes = read_all(images_path);
  const auto dims = parse_header(bytes, kIdxImageMagic, images_path);
  ImageDataset ds;
  ds.split = split;
  ds.image_rows = static_cast<int>(dims[1]);
  ds.image_cols = static_cast<int>(dims[2]);
  const Eigen::Index n = dims[0];
  const Eigen::Index D = static_cast<Eigen::Index>(dims[1]) * dims[2];
  ds.images.resize(n, D);
  const std::size_t off = 16;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < D; ++j) {
      ds.images(i, j) = bytes[off + static_cast<std::size_t>(i * D + j)] / 256.0;
    }
  }
  if (!labels_path.empty()) {
    ds.labels = load_idx_labels(labels_path);
    if (static_cast<Eigen::Index>(ds.labels.size()) != n) {
      throw IdxDimMismatch("'" + labels_path + "' holds " + std::to_string(ds.labels.size()) +
                           " labels for " + std::to_string(n) + " images");
    }
  }
  return ds;
}

void write_idx_images(const std::string& path, const ImageDataset& ds) {
  if (static_cast<Eigen::Index>(ds.image_rows) * ds.image_cols != ds.dim()) {
    throw std::invalid_argument("write_idx_images: image shape does not match row length");
  }
  std::vector<unsigned char> b;
  b.reserve(16 + static_cast<std::size_t>(ds.images.size()));
  put_be32(b, kIdxImageMagic);
  put_be32(b, static_cast<std::uint32_t>(ds.size()));
  put_be32(b, static_cast<std::uint32_t>(ds.image_rows));
  put_be32(b, static_cast<std::uint32_t>(ds.image_cols));
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
      const double raw = ds.images(i, j) * 256.0;
      if (!(raw >= 0.0 && raw <= 255.0) || raw != std::floor(raw)) {
        throw std::invalid_argument("write_idx_images: pixel is not k/256 with k in [0, 255]");
      }
      b.push_back(static_cast<unsigned char>(raw));
    }
  }
  write_all(path, b);
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::vector<unsigned char> b;
  put_be32(b, kIdxLabelMagic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw std::invalid_argument("write_idx_labels: label outside [0, 255]");
    b.push_back(static_cast<unsigned char>(l));
  }
  write_all(path, b);
}

std::pair<ImageDataset, ImageDataset> split_at(const ImageDataset& ds, Eigen::Index n_first,
                                               Split first, Split second) {
  if (n_first < 0 || n_first > ds.size()) throw std::invalid_argument("split_at: bad split point");
  ImageDataset a = ds, b = ds;
  a.split = first;
  b.split = second;
  a.images = ds.images.topRows(n_first);
  b.images = ds.images.bottomRows(ds.size() - n_first);
  if (!ds.labels.empty()) {
    a.labels.assign(ds.labels.begin(), ds.labels.begin() + n_first);
    b.labels.assign(ds.labels.begin() + n_first, ds.labels.end());
  }
  return {a, b};
}

Matrix binarize_threshold(const Matrix& images) {
  return (images.array() >= 0.5).cast<double>().matrix();
}

Matrix binarize_stochastic(const Matrix& images, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix out(images.rows(), images.cols());
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    for (Eigen::Index j = 0; j < images.cols(); ++j) {
      out(i, j) = unif(rng) < images(i, j) ? 1.0 : 0.0;
    }
  }
  return out;
}

Matrix binarize_epoch(const Matrix& images, std::uint64_t seed, std::uint64_t epoch) {
  Matrix out(images.rows(), images.cols());
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    Rng rng = make_stream(seed, epoch, static_cast<std::uint64_t>(i), StreamPurpose::binarize);
    out.row(i) = binarize_stochastic(images.row(i), rng);
  }
  return out;
}

std::vector<EvalDraw> make_eval_draws(const Matrix& images, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("make_eval_draws: k must be >= 1");
  std::vector<EvalDraw> draws;
  for (int j = 0; j < k; ++j) {
    draws.push_back({seed, static_cast<std::uint64_t>(j),
                     binarize_epoch(images, seed, static_cast<std::uint64_t>(j))});
  }
  return draws;
}

Vector conjugate_log_marginal(const Matrix& x) {
  const double d = static_cast<double>(x.cols());
  // log N(x; 0, 2 I) = -d/2 log(4 pi) - |x|^2 / 4.
  return (-0.5 * d * (kLog2Pi + std::log(2.0)) - 0.25 * x.rowwise().squaredNorm().array())
      .matrix();
}

ConjugateDataset synthetic_conjugate(int n, int d, Rng& rng) {
  if (n < 1 || d < 1) throw std::invalid_argument("synthetic_conjugate: n and d must be >= 1");
  std::normal_distribution<double> normal;
  ConjugateDataset ds;
  ds.z.resize(n, d);
  ds.x.resize(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      ds.z(i, j) = normal(rng);
      ds.x(i, j) = ds.z(i, j) + normal(rng);
    }
  }
  ds.log_px = conjugate_log_marginal(ds.x);
  return ds;
}

ClusterDataset two_cluster(int n, int D, double flip_prob, Rng& rng) {
  if (n < 1 || D < 1) throw std::invalid_argument("two_cluster: n and D must be >= 1");
  if (!(flip_prob >= 0.0 && flip_prob <= 0.5)) {
    throw std::invalid_argument("two_cluster: flip_prob must lie in [0, 0.5]");
  }
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution flip(flip_prob);
  ClusterDataset ds;
  ds.prototypes.resize(2, D);
  for (int j = 0; j < D; ++j) {
    ds.prototypes(0, j) = coin(rng) ? 1.0 : 0.0;
    ds.prototypes(1, j) = 1.0 - ds.prototypes(0, j);  // maximally separated
  }
  ds.x.resize(n, D);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = coin(rng) ? 1 : 0;
    ds.labels[static_cast<std::size_t>(i)] = c;
    for (int j = 0; j < D; ++j) {
      const double p = ds.prototypes(c, j);
      ds.x(i, j) = flip(rng) ? 1.0 - p : p;
    }
  }
  return ds;
}

void write_csv(std::ostream& os, const ConjugateDataset& ds) {
  const auto d = ds.x.cols();
  for (Eigen::Index j = 0; j < d; ++j) os << "x" << j + 1 << ',';
  for (Eigen::Index j = 0; j < d; ++j) os << "z" << j + 1 << ',';
  os << "log_px\n";
  os.precision(17);
  for (Eigen::Index i = 0; i < ds.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) os << ds.x(i, j) << ',';
    for (Eigen::Index j = 0; j < d; ++j) os << ds.z(i, j) << ',';
    os << ds.log_px(i) << '\n';
  }
}

void write_csv(std::ostream& os, const ClusterDataset& ds) {
  for (Eigen::Index j = 0; j < ds.x.cols(); ++j) os << "x" << j + 1 << ',';
  os << "label\n";
  for (Eigen::Index i = 0; i < ds.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.x.cols(); ++j) os << static_cast<int>(ds.x(i, j)) << ',';
    os << ds.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

}  // namespace hmcvi::data
