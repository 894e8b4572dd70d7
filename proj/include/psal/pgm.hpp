#ifndef PSAL_PGM_HPP
#define PSAL_PGM_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include "psal/metrics.hpp"

namespace psal {

/// round(255 * u) with u clamped to [0, 1].
std::uint8_t quantize(double u);

/// Writes an 8-bit binary (P5) PGM.
void write_pgm(const std::filesystem::path& path, const Grid& image);

/// Reads P5 or P2 graymaps with maxval <= 255, scaled to [0, 1]. The image
/// must be square.
Grid read_pgm(const std::filesystem::path& path);

}  // namespace psal

#endif  // PSAL_PGM_HPP
