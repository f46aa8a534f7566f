#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "numerics/tensor.hpp"

namespace ink {

/// One stylus movement: offset plus whether the pen touched the surface
/// while moving.
struct Move {
  double dx = 0.0;
  double dy = 0.0;
  int pen_down = 0;
};

/// Delta-encoded online handwriting sample.
struct StrokeSample {
  std::string id;
  std::string text;
  std::optional<std::string> writer;
  std::optional<std::string> lang;
  std::optional<std::string> split;
  std::vector<Move> moves;
};

/// Ordered character set; the CTC blank is always the extra last index Q.
class Alphabet {
 public:
  explicit Alphabet(std::string chars);
  int size() const { return static_cast<int>(chars_.size()); }
  int blank() const { return size(); }
  int index_of(char c) const;  // -1 when absent
  char at(int index) const { return chars_.at(index); }
  const std::string& chars() const { return chars_; }
  std::vector<int> encode(const std::string& text) const;
  std::string decode(std::span<const int> labels) const;

 private:
  std::string chars_;
};

/// Throws std::invalid_argument naming the first violated invariant:
/// T >= 1, binary pen flags, finite offsets, non-empty text, and (when an
/// alphabet is given) every character known.
void validate(const StrokeSample& sample, const Alphabet* alphabet = nullptr);

struct AbsPoint {
  double x = 0.0;
  double y = 0.0;
  int pen_down = 0;
};

std::vector<AbsPoint> to_absolute(const StrokeSample& sample);
/// First differences; inverse of to_absolute.
std::vector<Move> moves_from_absolute(std::span<const AbsPoint> points);

/// Rows (u, sin_theta, cos_theta, len) as a [T,4] tensor; zero-length moves
/// use the fixed direction convention (0, 1).
numerics::Tensor extract_features(const StrokeSample& sample);

/// Divides offsets by the standard deviation of nonzero move lengths
/// (mean length when the std vanishes). Errors when every move is zero.
StrokeSample normalize(const StrokeSample& sample);

}  // namespace ink
