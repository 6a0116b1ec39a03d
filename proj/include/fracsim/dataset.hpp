#pragma once

#include "fracsim/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fracsim {

/// Synthetic time-frequency classification data.
///
/// Each class is a band-limited spectro-temporal pattern (two chirped
/// Gaussian ridges under an amplitude envelope). Samples are the class
/// pattern shifted (zero-filled) by up to `time_jitter`
/// frames, a gain in [0.85, 1.15], and additive Gaussian noise of standard
/// deviation `noise_level`.
struct SynthDatasetSpec {
  int num_classes = 10;
  int samples_per_class = 300;
  Index time_frames = 32;
  Index freq_bins = 16;
  double noise_level = 0.4;
  int time_jitter = 2;
  double train_fraction = 0.9;
  std::uint64_t seed = 1;

  void validate() const;
  /// Samples of each class that go to the training split.
  int train_per_class() const;
};

struct Dataset {
  SynthDatasetSpec spec;
  RealTensor inputs;  // [N, 1, T, F]
  std::vector<int> labels;
  std::vector<Index> train_indices;
  std::vector<Index> val_indices;
  RealTensor prototypes;  // [classes, 1, T, F], noise-free class patterns

  Index sample_count() const { return static_cast<Index>(labels.size()); }
  /// Stacks the selected samples into [len, 1, T, F].
  RealTensor gather(std::span<const Index> indices) const;
  std::vector<int> gather_labels(std::span<const Index> indices) const;
  /// Indices of `split` grouped by class label.
  std::vector<std::vector<Index>> by_class(std::span<const Index> split) const;
};

Dataset generate_dataset(const SynthDatasetSpec& spec);

/// Writes `<stem>.bin` (little-endian float64 inputs, row-major) and
/// `<stem>.json` (shape, labels, split, generating spec).
void save_dataset(const Dataset& data, const std::filesystem::path& stem);
Dataset load_dataset(const std::filesystem::path& stem);

}  // namespace fracsim
