#pragma once

#include <array>
#include <vector>

namespace toyworld {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Stroke skeleton of one character, polylines inside the unit box.
struct GlyphSkeleton {
  char ch = '?';
  std::vector<std::vector<Vec2>> polylines;
};

/// The ten toy glyphs 'a'..'j'. Throws on any other character.
const GlyphSkeleton& glyph(char c);

/// Characters with skeletons, in alphabet order.
const std::array<char, 10>& glyph_chars();

}  // namespace toyworld
