#ifndef PSAL_CHECKPOINT_HPP
#define PSAL_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>

#include "psal/model.hpp"
#include "psal/training.hpp"

namespace psal {

/// Everything needed to resume a run bit-for-bit.
///
/// File layout: "PSAL", u32 format version, u64 header length, canonical JSON
/// header (configs, epoch, rng state, optimizer steps and a tensor table of
/// name / shape / offset), then little-endian fp64 blocks in table order.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  NetConfig net;
  TrainConfig train;
  ParamSet generator;
  ParamSet discriminator;
  OptimizerState opt_g;
  OptimizerState opt_d;
  std::size_t epoch = 0;
  Rng rng;

  bool operator==(const Checkpoint& other) const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace psal

#endif  // PSAL_CHECKPOINT_HPP
