#pragma once

#include "egodiff/toy_world.hpp"

#include <string>
#include <vector>

namespace egodiff {

/// 8-bit RGB PNG (values clamped to [0,1]).
void write_png(const Image& im, const std::string& path);

/// Frames side by side in one PNG, `every`-th frame starting at 0.
void write_png_strip(const std::vector<Image>& frames, const std::string& path, long every = 1);

}  // namespace egodiff
