#pragma once

#include <string>

#include "ink/ink.hpp"

namespace ink {

/// Renders the pen-down trajectory as an SVG document, one path per maximal
/// pen-down run. The y axis is flipped so positive dy points up on screen.
std::string render_svg(const StrokeSample& sample);

}  // namespace ink
