#include "nn/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace advlab::nn {

Dataset::Dataset(Tensor imgs, std::vector<int> lbls, int classes, std::string split_tag)
    : images(std::move(imgs)), labels(std::move(lbls)), num_classes(classes),
      split(std::move(split_tag)) {
  if (images.rank() != 4) throw ShapeError("dataset: images must be N x H x W x C");
  if (images.shape[0] != labels.size())
    throw Error("dataset: " + std::to_string(images.shape[0]) + " images vs " +
                std::to_string(labels.size()) + " labels");
  for (double v : images.data)
    if (v < 0.0 || v > 1.0) throw Error("dataset: image values must lie in [0, 1]");
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw Error("dataset: label " + std::to_string(y) + " out of range");
}

Shape Dataset::image_shape() const {
  return {images.shape[1], images.shape[2], images.shape[3]};
}

Tensor Dataset::image(std::size_t i) const {
  const std::size_t px = images.shape[1] * images.shape[2] * images.shape[3];
  Tensor out = Tensor::zeros(image_shape());
  std::copy_n(images.data.begin() + i * px, px, out.data.begin());
  return out;
}

Tensor Dataset::batch(const std::vector<std::size_t>& idx) const {
  const std::size_t px = images.shape[1] * images.shape[2] * images.shape[3];
  Tensor out = Tensor::zeros({idx.size(), images.shape[1], images.shape[2], images.shape[3]});
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(images.data.begin() + idx[k] * px, px, out.data.begin() + k * px);
  return out;
}

Dataset Dataset::take(std::size_t n) const {
  n = std::min(n, size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return Dataset(batch(idx), std::vector<int>(labels.begin(), labels.begin() + n), num_classes,
                 split);
}

namespace {

// 10 x 8 glyph stamps.
const std::array<std::array<const char*, 10>, 10> kGlyphs = {{
    {{"..####..", ".#....#.", "#......#", "#......#", "#......#", "#......#", "#......#",
      "#......#", ".#....#.", "..####.."}},
    {{"...##...", "..###...", ".#.##...", "...##...", "...##...", "...##...", "...##...",
      "...##...", "...##...", ".######."}},
    {{"..####..", ".#....#.", "......#.", "......#.", ".....#..", "....#...", "...#....",
      "..#.....", ".#......", ".######."}},
    {{"..####..", ".#....#.", "......#.", "......#.", "...###..", "......#.", "......#.",
      "......#.", ".#....#.", "..####.."}},
    {{".....#..", "....##..", "...#.#..", "..#..#..", ".#...#..", "#....#..", "########",
      ".....#..", ".....#..", ".....#.."}},
    {{".######.", ".#......", ".#......", ".#......", ".#####..", "......#.", "......#.",
      "......#.", ".#....#.", "..####.."}},
    {{"..####..", ".#....#.", ".#......", "#.......", "#.####..", "##....#.", "#......#",
      "#......#", ".#....#.", "..####.."}},
    {{"########", ".......#", "......#.", "......#.", ".....#..", ".....#..", "....#...",
      "....#...", "...#....", "...#...."}},
    {{"..####..", ".#....#.", "#......#", ".#....#.", "..####..", ".#....#.", "#......#",
      "#......#", ".#....#.", "..####.."}},
    {{"..####..", ".#....#.", "#......#", "#......#", ".#....#.", "..#####.", ".......#",
      "......#.", ".#...#..", "..###..."}},
}};

constexpr std::size_t kSide = 16;
constexpr std::size_t kGlyphH = 10;
constexpr std::size_t kGlyphW = 8;

void blur3(std::vector<double>& img) {
  static const double k[3][3] = {{1, 2, 1}, {2, 4, 2}, {1, 2, 1}};
  std::vector<double> out(img.size(), 0.0);
  for (std::size_t i = 0; i < kSide; ++i)
    for (std::size_t j = 0; j < kSide; ++j) {
      double acc = 0.0, wsum = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int y = static_cast<int>(i) + dy, x = static_cast<int>(j) + dx;
          if (y < 0 || x < 0 || y >= static_cast<int>(kSide) || x >= static_cast<int>(kSide))
            continue;
          const double w = k[dy + 1][dx + 1];
          acc += w * img[y * kSide + x];
          wsum += w;
        }
      out[i * kSide + j] = acc / wsum;
    }
  img = std::move(out);
}

}  // namespace

Dataset synthetic_digits(std::size_t n, std::uint64_t seed, const std::string& split) {
  std::uint64_t tag = 0;
  for (char c : split) tag = tag * 131 + static_cast<unsigned char>(c);
  Rng root = Rng(seed).split(tag ^ 0x5157ull);

  Tensor images = Tensor::zeros({n, kSide, kSide, 1});
  std::vector<int> labels(n);

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(i);
    const int digit = static_cast<int>(i % 10);
    labels[i] = digit;

    std::vector<double> canvas(kSide * kSide, 0.0);
    const int oy = 1 + static_cast<int>(rng.below(5));  // glyph is 10 high on a 16 canvas
    const int ox = 2 + static_cast<int>(rng.below(5));
    const double fg = rng.uniform(0.7, 1.0);
    for (std::size_t gy = 0; gy < kGlyphH; ++gy)
      for (std::size_t gx = 0; gx < kGlyphW; ++gx) {
        if (kGlyphs[digit][gy][gx] != '#') continue;
        const std::size_t y = oy + gy, x = ox + gx;
        canvas[y * kSide + x] = fg * rng.uniform(0.85, 1.0);
      }

    blur3(canvas);
    for (double& v : canvas) v = std::clamp(v + rng.uniform(0.0, 0.08), 0.0, 1.0);

    std::copy(canvas.begin(), canvas.end(), images.data.begin() + i * kSide * kSide);
  }

  // deterministic shuffle so class order carries no signal
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng shuf = root.split(0xfeedull);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[shuf.below(i)]);

  Tensor shuffled = Tensor::zeros(images.shape);
  std::vector<int> shuffled_labels(n);
  const std::size_t px = kSide * kSide;
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(images.data.begin() + perm[i] * px, px, shuffled.data.begin() + i * px);
    shuffled_labels[i] = labels[perm[i]];
  }

  return Dataset(std::move(shuffled), std::move(shuffled_labels), 10, split);
}

}  // namespace advlab::nn
