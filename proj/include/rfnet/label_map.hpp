#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace rfnet {

/// Integer id map (labels, predictions) of size height x width, row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0)
      : height(h), width(w), data(h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::int32_t& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  std::int32_t at(std::size_t r, std::size_t c) const { return data[r * width + c]; }

  bool operator==(const LabelMap&) const = default;
};

}  // namespace rfnet
