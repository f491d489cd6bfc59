#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsnpc/matrix.hpp"

namespace lsnpc {

enum class SplitTag : char { None = '-', Train = 'T', Validation = 'V', Clean = 'C', Test = 'S' };

/// Feature vectors with binary labels, split tags and provenance metadata.
struct FeatureDataset {
  FeatureMatrix x;
  LabelMatrix y;
  std::vector<SplitTag> splits;  // empty or one per row
  std::map<std::string, std::string> metadata;

  std::size_t n() const noexcept { return x.rows(); }
  std::size_t d() const noexcept { return x.cols(); }
  std::size_t k() const noexcept { return y.cols(); }

  /// Throws if shapes disagree, X has non-finite values or Y is not binary.
  void validate() const;
  bool operator==(const FeatureDataset&) const = default;
};

struct GeneratorConfig {
  std::size_t n = 2000;
  std::size_t d = 32;
  std::size_t k = 10;
  std::size_t rank = 8;
  double feature_noise = 1.0;
  double label_offset = 2.0;   // mean threshold shift; larger means sparser labels
  double offset_spread = 1.0;  // offsets vary linearly across labels by this much
  bool identity_embedding = false;  // features equal the latent factors (requires rank == d)
  std::uint64_t seed = 1;
};

/// Ground truth behind a synthetic dataset.
struct SyntheticTruth {
  ProbMatrix prototypes;  // k x rank
  std::vector<double> offsets;
  ProbMatrix embedding;   // d x rank
};

/// Latent-factor generator: u ~ N(0, I_r), y_i = 1[sigmoid(w_i.u + b_i) > 0.5],
/// x = A u + noise.
FeatureDataset generate_synthetic(const GeneratorConfig& cfg, SyntheticTruth* truth = nullptr);

/// Binary layout:
///   "LSDS" | version u8 | n u64 | d u64 | k u64 | metadata (u32 length, "key=value\n" text) |
///   X as little-endian f32 row-major | Y bit-packed row-major (LSB first)
/// Split tags travel in the metadata under the key "splits".
inline constexpr std::uint8_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const FeatureDataset& ds);
FeatureDataset decode_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const FeatureDataset& ds, const std::string& path);
FeatureDataset load_dataset(const std::string& path);

/// Comma-separated import: header row, then d feature columns followed by k 0/1 label columns.
FeatureDataset import_csv(const std::string& text, std::size_t k);

}  // namespace lsnpc
