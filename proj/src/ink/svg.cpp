#include "ink/svg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <vector>

namespace ink {

namespace {

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 3);
  return std::string(buf, ptr);
}

struct Box {
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  void include(double x, double y) {
    min_x = std::min(min_x, x);
    min_y = std::min(min_y, y);
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  }
};

}  // namespace

std::string render_svg(const StrokeSample& sample) {
  validate(sample);
  std::vector<AbsPoint> pts = to_absolute(sample);
  Box box;
  for (const AbsPoint& p : pts) box.include(p.x, p.y);

  // Maximal pen-down runs; each run's path starts at the pen position before
  // its first move (the origin for a run starting at t=0).
  std::vector<std::string> paths;
  std::string d;
  double prev_x = 0.0, prev_y = 0.0;
  auto flip = [&](double y) { return box.max_y - y; };
  for (size_t t = 0; t < pts.size(); ++t) {
    if (pts[t].pen_down) {
      if (d.empty())
        d = "M " + fmt(prev_x) + " " + fmt(flip(prev_y));
      d += " L " + fmt(pts[t].x) + " " + fmt(flip(pts[t].y));
    } else if (!d.empty()) {
      paths.push_back(d);
      d.clear();
    }
    prev_x = pts[t].x;
    prev_y = pts[t].y;
  }
  if (!d.empty()) paths.push_back(d);

  double pad = 0.05 * std::max({box.max_x - box.min_x, box.max_y - box.min_y, 1.0});
  double w = box.max_x - box.min_x + 2 * pad;
  double h = box.max_y - box.min_y + 2 * pad;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"";
  svg += fmt(box.min_x - pad) + " " + fmt(-pad) + " " + fmt(w) + " " + fmt(h);
  svg += "\" width=\"" + fmt(w * 40) + "\" height=\"" + fmt(h * 40) + "\">\n";
  for (const std::string& p : paths) {
    svg += "  <path d=\"" + p +
           "\" fill=\"none\" stroke=\"black\" stroke-width=\"" + fmt(h / 60) +
           "\" stroke-linecap=\"round\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace ink
