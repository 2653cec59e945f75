#include "tpm/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace tpm {

BinaryDataset make_rectangles_dataset(std::size_t m, std::uint64_t seed, const RectanglesOptions& options) {
  const std::size_t w = options.width, h = options.height;
  const std::size_t longest = std::min(w, h);
  if (options.min_side < 1 || options.min_side >= longest) throw ArgumentError("min_side must leave room for w != h");
  const std::size_t n = w * h;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> pick_class(0, 2);
  std::uniform_int_distribution<std::size_t> pick_side(options.min_side, longest);
  std::bernoulli_distribution flip(options.flip_noise);

  std::vector<std::uint8_t> samples(m * n, 0);
  std::vector<std::uint32_t> labels(m);
  std::vector<std::size_t> cells(n);
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint32_t label = pick_class(rng);
    labels[i] = label;
    std::size_t rw = 0, rh = 0;
    do {
      rw = pick_side(rng);
      rh = pick_side(rng);
    } while (rw == rh);
    if ((label == 0 && rw < rh) || (label == 1 && rw > rh)) std::swap(rw, rh);
    std::uint8_t* img = samples.data() + i * n;
    const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, w - rw)(rng);
    const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, h - rh)(rng);
    if (label == 2) {
      const std::size_t on = 2 * rw + 2 * rh - 4;
      std::iota(cells.begin(), cells.end(), 0);
      std::shuffle(cells.begin(), cells.end(), rng);
      for (std::size_t c = 0; c < on; ++c) img[cells[c]] = 1;
      continue;
    }
    for (std::size_t y = y0; y < y0 + rh; ++y) {
      for (std::size_t x = x0; x < x0 + rw; ++x) {
        const bool border = y == y0 || y + 1 == y0 + rh || x == x0 || x + 1 == x0 + rw;
        img[y * w + x] = border ? 1 : 0;
      }
    }
    for (std::size_t p = 0; p < n; ++p) {
      if (flip(rng)) img[p] ^= 1;
    }
  }
  return BinaryDataset(n, std::move(samples), std::move(labels), "rectangles").with_geometry({w, h});
}

}  // namespace tpm
