#include "toyworld/glyphs.hpp"

#include <stdexcept>
#include <string>

namespace toyworld {

namespace {

std::vector<GlyphSkeleton> make_glyphs() {
  // Each entry stays inside [0,1]^2 and every polyline has >= 2 points.
  // Shapes are chosen to be mutually distinct under mild slant and jitter.
  std::vector<GlyphSkeleton> g;
  g.push_back({'a', {{{0.0, 0.0}, {0.5, 1.0}, {1.0, 0.0}}, {{0.25, 0.45}, {0.75, 0.45}}}});
  g.push_back({'b', {{{0.0, 0.0}, {0.0, 1.0}}, {{0.0, 0.55}, {0.9, 0.55}, {0.9, 0.0}, {0.0, 0.0}}}});
  g.push_back({'c', {{{1.0, 1.0}, {0.1, 1.0}, {0.1, 0.0}, {1.0, 0.0}}}});
  g.push_back({'d', {{{0.0, 0.0}, {0.0, 1.0}, {0.9, 0.5}, {0.0, 0.25}}}});
  g.push_back({'e', {{{1.0, 1.0}, {0.0, 1.0}, {0.0, 0.0}, {1.0, 0.0}}, {{0.0, 0.5}, {0.7, 0.5}}}});
  g.push_back({'f', {{{0.1, 0.0}, {0.1, 1.0}, {1.0, 1.0}}, {{0.1, 0.55}, {0.8, 0.55}}}});
  g.push_back({'g', {{{0.0, 1.0}, {1.0, 1.0}, {0.0, 0.0}, {1.0, 0.0}}}});
  g.push_back({'h', {{{0.0, 0.0}, {0.0, 1.0}}, {{1.0, 0.0}, {1.0, 1.0}}, {{0.0, 0.5}, {1.0, 0.5}}}});
  g.push_back({'i', {{{0.5, 0.0}, {0.5, 0.8}}, {{0.3, 1.0}, {0.7, 1.0}}}});
  g.push_back({'j', {{{0.75, 1.0}, {0.75, 0.25}, {0.5, 0.0}, {0.15, 0.15}}}});
  return g;
}

const std::vector<GlyphSkeleton>& table() {
  static const std::vector<GlyphSkeleton> t = make_glyphs();
  return t;
}

}  // namespace

const GlyphSkeleton& glyph(char c) {
  if (c < 'a' || c > 'j') {
    throw std::invalid_argument(std::string("toyworld: no glyph for character '") + c + "'");
  }
  return table()[static_cast<size_t>(c - 'a')];
}

const std::array<char, 10>& glyph_chars() {
  static const std::array<char, 10> cs = {'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j'};
  return cs;
}

}  // namespace toyworld
