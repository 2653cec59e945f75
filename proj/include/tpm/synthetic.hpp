#pragma once
// Synthetic labeled image data for desk-scale experiments.

#include <cstdint>

#include "tpm/dataset.hpp"

namespace tpm {

struct RectanglesOptions {
  std::size_t width = 8;
  std::size_t height = 8;
  std::size_t min_side = 2;
  double flip_noise = 0.02;  // per-pixel flip probability for rectangle classes
};

// Three classes: 0 = outline of a rectangle wider than tall, 1 = outline of a
// rectangle taller than wide, 2 = the same number of on-pixels scattered
// uniformly (noise). Samples carry geometry (width, height).
BinaryDataset make_rectangles_dataset(std::size_t m, std::uint64_t seed, const RectanglesOptions& options = {});

}  // namespace tpm
