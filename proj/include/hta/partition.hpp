#pragma once

#include <stdexcept>
#include <vector>

#include "hta/tensor.hpp"

namespace hta {

/// Tile an (H, W, C) image into non-overlapping tile x tile x C blocks
/// (ragged at the right/bottom edges) and return them as a group partition
/// over the flat index space.
inline GroupPartition build_tile_partition(const Shape& image_shape,
                                           std::size_t tile) {
  if (image_shape.size() != 3)
    throw std::invalid_argument("build_tile_partition: need an (H, W, C) shape");
  const std::size_t h = image_shape[0], w = image_shape[1], c = image_shape[2];
  if (tile == 0 || tile > h || tile > w)
    throw std::invalid_argument(
        "build_tile_partition: tile must be in [1, min(H, W)]");
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t ti = 0; ti < h; ti += tile)
    for (std::size_t tj = 0; tj < w; tj += tile) {
      std::vector<std::size_t> g;
      for (std::size_t i = ti; i < std::min(h, ti + tile); ++i)
        for (std::size_t j = tj; j < std::min(w, tj + tile); ++j)
          for (std::size_t ch = 0; ch < c; ++ch)
            g.push_back((i * w + j) * c + ch);
      groups.push_back(std::move(g));
    }
  return GroupPartition(std::move(groups), h * w * c);
}

}  // namespace hta
