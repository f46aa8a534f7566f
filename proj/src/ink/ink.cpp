#include "ink/ink.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace ink {

Alphabet::Alphabet(std::string chars) : chars_(std::move(chars)) {
  if (chars_.empty()) throw std::invalid_argument("alphabet: empty character set");
  std::unordered_set<char> seen;
  for (char c : chars_)
    if (!seen.insert(c).second)
      throw std::invalid_argument(std::string("alphabet: duplicate character '") +
                                  c + "'");
}

int Alphabet::index_of(char c) const {
  auto pos = chars_.find(c);
  return pos == std::string::npos ? -1 : static_cast<int>(pos);
}

std::vector<int> Alphabet::encode(const std::string& text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) {
    int idx = index_of(c);
    if (idx < 0)
      throw std::invalid_argument(std::string("alphabet: unknown character '") +
                                  c + "'");
    out.push_back(idx);
  }
  return out;
}

std::string Alphabet::decode(std::span<const int> labels) const {
  std::string out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(at(l));
  return out;
}

void validate(const StrokeSample& sample, const Alphabet* alphabet) {
  if (sample.moves.empty())
    throw std::invalid_argument("sample '" + sample.id + "': no moves");
  for (size_t t = 0; t < sample.moves.size(); ++t) {
    const Move& m = sample.moves[t];
    if (m.pen_down != 0 && m.pen_down != 1)
      throw std::invalid_argument("sample '" + sample.id + "': pen flag " +
                                  std::to_string(m.pen_down) + " at move " +
                                  std::to_string(t) + " is not 0/1");
    if (!std::isfinite(m.dx) || !std::isfinite(m.dy))
      throw std::invalid_argument("sample '" + sample.id +
                                  "': non-finite offset at move " +
                                  std::to_string(t));
  }
  if (sample.text.empty())
    throw std::invalid_argument("sample '" + sample.id + "': empty text");
  if (alphabet)
    for (char c : sample.text)
      if (alphabet->index_of(c) < 0)
        throw std::invalid_argument("sample '" + sample.id +
                                    "': character '" + std::string(1, c) +
                                    "' not in alphabet");
}

std::vector<AbsPoint> to_absolute(const StrokeSample& sample) {
  std::vector<AbsPoint> pts;
  pts.reserve(sample.moves.size());
  double x = 0.0, y = 0.0;
  for (const Move& m : sample.moves) {
    x += m.dx;
    y += m.dy;
    pts.push_back({x, y, m.pen_down});
  }
  return pts;
}

std::vector<Move> moves_from_absolute(std::span<const AbsPoint> points) {
  std::vector<Move> moves;
  moves.reserve(points.size());
  double px = 0.0, py = 0.0;
  for (const AbsPoint& p : points) {
    moves.push_back({p.x - px, p.y - py, p.pen_down});
    px = p.x;
    py = p.y;
  }
  return moves;
}

numerics::Tensor extract_features(const StrokeSample& sample) {
  validate(sample);
  numerics::Tensor f(static_cast<int>(sample.moves.size()), 4);
  for (size_t t = 0; t < sample.moves.size(); ++t) {
    const Move& m = sample.moves[t];
    double len = std::sqrt(m.dx * m.dx + m.dy * m.dy);
    f.at(static_cast<int>(t), 0) = m.pen_down;
    if (len > 0.0) {
      f.at(static_cast<int>(t), 1) = m.dy / len;
      f.at(static_cast<int>(t), 2) = m.dx / len;
    } else {
      f.at(static_cast<int>(t), 1) = 0.0;
      f.at(static_cast<int>(t), 2) = 1.0;
    }
    f.at(static_cast<int>(t), 3) = len;
  }
  return f;
}

StrokeSample normalize(const StrokeSample& sample) {
  validate(sample);
  std::vector<double> lens;
  for (const Move& m : sample.moves) {
    double len = std::sqrt(m.dx * m.dx + m.dy * m.dy);
    if (len > 0.0) lens.push_back(len);
  }
  if (lens.empty())
    throw std::invalid_argument("sample '" + sample.id +
                                "': all moves are zero, cannot normalize");
  double mean = 0.0;
  for (double l : lens) mean += l;
  mean /= static_cast<double>(lens.size());
  double var = 0.0;
  for (double l : lens) var += (l - mean) * (l - mean);
  double sd = std::sqrt(var / static_cast<double>(lens.size()));
  // Constant-length samples have sd 0; fall back to the mean so the result
  // still has unit-scale moves.
  double denom = sd > 1e-12 * mean ? sd : mean;
  StrokeSample out = sample;
  for (Move& m : out.moves) {
    m.dx /= denom;
    m.dy /= denom;
  }
  return out;
}

}  // namespace ink
