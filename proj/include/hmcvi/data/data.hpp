// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image datasets in IDX format, binarization and synthetic data.
//
// Pixels are stored as raw_byte / 256, so values lie in [0, 255/256]. Images
// are rows of a matrix. Binarized sets are plain 0/1 matrices of the same
// shape.

#ifndef HMCVI_DATA_DATA_HPP_
#define HMCVI_DATA_DATA_HPP_

#include "hmcvi/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmcvi::data {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Split { train, valid, test };
const char* split_name(Split s);

struct ImageDataset {
  Matrix images;            // N x (rows * cols), values in [0, 1)
  std::vector<int> labels;  // empty or N entries
  Split split = Split::train;
  int image_rows = 0;
  int image_cols = 0;

  Eigen::Index size() const { return images.rows(); }
  Eigen::Index dim() const { return images.cols(); }
};

// Distinct failure kinds of the IDX reader. All derive from IdxError.
class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IdxBadMagic : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxTruncated : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxDimMismatch : public IdxError {
 public:
  using IdxError::IdxError;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image file (gzip-compressed or plain). Pixels are divided by
/// 256. With a labels path, label count must equal image count.
ImageDataset load_idx(const std::string& images_path, const std::string& labels_path = "",
                      Split split = Split::train);
std::vector<int> load_idx_labels(const std::string& path);

/// Writes images back as bytes round(pixel * 256). A ".gz" suffix selects
/// gzip output. Throws std::invalid_argument for pixels that are not
/// multiples of 1/256 in [0, 255/256].
void write_idx_images(const std::string& path, const ImageDataset& ds);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

/// First `n_first` images in one dataset, the rest in the other.
std::pair<ImageDataset, ImageDataset> split_at(const ImageDataset& ds, Eigen::Index n_first,
                                               Split first, Split second);

// --- binarization ---------------------------------------------------------------

/// 1 where pixel >= 0.5.
Matrix binarize_threshold(const Matrix& images);
/// Independent Bernoulli(pixel) per entry, drawn row by row from `rng`.
Matrix binarize_stochastic(const Matrix& images, Rng& rng);
/// Row i draws from make_stream(seed, epoch, i, binarize); the result does not
/// depend on how rows are split across workers.
Matrix binarize_epoch(const Matrix& images, std::uint64_t seed, std::uint64_t epoch);

struct EvalDraw {
  std::uint64_t seed = 0;
  std::uint64_t draw = 0;
  Matrix x;
};

/// k stochastic binarizations; draw j equals binarize_epoch(images, seed, j).
std::vector<EvalDraw> make_eval_draws(const Matrix& images, int k, std::uint64_t seed);

// --- synthetic data ----------------------------------------------------------------

/// z ~ N(0, I_d), x | z ~ N(z, I_d); log_px holds log N(x; 0, 2 I_d).
struct ConjugateDataset {
  Matrix x;
  Matrix z;
  Vector log_px;
};

ConjugateDataset synthetic_conjugate(int n, int d, Rng& rng);
/// log N(x; 0, 2 I) per row.
Vector conjugate_log_marginal(const Matrix& x);

/// Binary vectors from two random prototypes with independent bit flips.
struct ClusterDataset {
  Matrix x;
  std::vector<int> labels;
  Matrix prototypes;  // 2 x D
};

ClusterDataset two_cluster(int n, int D, double flip_prob, Rng& rng);

/// CSV with a header row of column names (x1.., then z1.. and log_px when
/// present, or label).
void write_csv(std::ostream& os, const ConjugateDataset& ds);
void write_csv(std::ostream& os, const ClusterDataset& ds);

}  // namespace hmcvi::data

#endif  // HMCVI_DATA_DATA_HPP_
