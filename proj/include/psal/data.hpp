#ifndef PSAL_DATA_HPP
#define PSAL_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "psal/metrics.hpp"
#include "psal/tensor.hpp"

namespace psal {

/// Binary observer-group tag. Group 0 is encoded as an all-zeros label
/// tensor, group 1 as all-ones.
class ObserverLabel {
 public:
  constexpr ObserverLabel() = default;
  explicit ObserverLabel(int group);
  int group() const { return group_; }
  friend bool operator==(const ObserverLabel&, const ObserverLabel&) = default;

 private:
  int group_ = 0;
};

/// Sum of isotropic Gaussians (std `sigma` pixels) at each fixation, scaled
/// so the peak is exactly 1.
SaliencyMap fixations_to_heatmap(const FixationSet& fixations, std::size_t size, double sigma);

/// Packs stimulus and population map into the [1, 3, S, S] generator input:
/// channel 0 stimulus, channel 1 population map, channel 2 zeros, all mapped
/// from [0, 1] to [-1, 1] by 2u - 1.
Tensor encode_generator_input(const Grid& stimulus, const Grid& population_map);

/// A [0, 1] map as a [1, 1, S, S] tensor in [-1, 1].
Tensor encode_map(const Grid& map);

/// Inverse of encode_map for batch item `index`: (o + 1) / 2, clamped to [0, 1].
SaliencyMap decode_map(const Tensor& output, std::size_t index = 0);

/// [1, channels, spatial, spatial] tensor filled with the label's group value.
Tensor build_label_tensor(ObserverLabel label, std::size_t channels, std::size_t spatial);

/// Batched form: item i is filled with labels[i].
Tensor build_label_tensor(std::span<const ObserverLabel> labels, std::size_t channels, std::size_t spatial);

/// Stacks [1, C, H, W] tensors along the batch axis (no gradient).
Tensor stack_batch(std::span<const Tensor> items);

struct SynthParams {
  std::size_t fixations_per_group = 30;
  std::size_t min_blobs = 2;
  std::size_t max_blobs = 5;
  double group0_std_frac = 1.0 / 24.0;  // of image size
  double group1_std_frac = 1.0 / 10.0;
  double outlier_rate = 0.2;
  double heatmap_sigma_frac = 1.0 / 16.0;
};

struct ManifestEntry {
  std::string id;
  std::string stimulus;        // paths relative to the dataset root
  std::string population_map;
  std::string gt_map;
  FixationSet fixations;
  ObserverLabel label;
  std::string split;           // "train", "test", or empty before splitting
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  std::filesystem::path root;
  int version = kVersion;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  SynthParams params;
  double test_fraction = 0.0;
  std::uint64_t split_seed = 0;
  std::vector<ManifestEntry> samples;

  /// Stimulus files in first-appearance order; the unit of splitting.
  std::vector<std::string> stimulus_ids() const;
};

/// One stimulus of the synthetic two-group dataset, before it is written out.
struct SynthStimulus {
  Grid stimulus;
  SaliencyMap population_map;
  FixationSet fixations[2];
  SaliencyMap gt_maps[2];
};

/// Deterministic in (index, size, seed, params).
SynthStimulus synth_stimulus(std::size_t index, std::size_t size, std::uint64_t seed, const SynthParams& params = {});

/// Writes root/images/*.pgm and root/manifest.json; returns the (unsplit) manifest.
DatasetManifest synth_dataset(std::size_t n, std::size_t size, std::uint64_t seed, const std::filesystem::path& root,
                              const SynthParams& params = {});

/// Seeded shuffle of stimulus ids; both labels of one stimulus share a split.
DatasetManifest split(const DatasetManifest& manifest, double test_fraction = 0.2, std::uint64_t seed = 0);

void write_manifest(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& root);

/// A decoded manifest entry.
struct Sample {
  std::string id;
  std::string stimulus_id;
  Grid stimulus;
  Grid population_map;
  ObserverLabel label;
  Grid gt_map;
  FixationSet fixations;
};

/// Loads all entries whose split tag equals `split_tag` (all entries when empty).
std::vector<Sample> load_samples(const DatasetManifest& manifest, const std::string& split_tag = "");

}  // namespace psal

#endif  // PSAL_DATA_HPP
