#include "ink/codec.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace ink {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void line_error(size_t line_no, const std::string& what) {
  throw std::runtime_error("line " + std::to_string(line_no) + ": " + what);
}

std::optional<std::string> read_optional(const json& j, const char* key,
                                         size_t line_no) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_string())
    line_error(line_no, std::string("field '") + key + "' must be a string or null");
  return j[key].get<std::string>();
}

StrokeSample parse_line(const json& j, size_t line_no, const Alphabet* alphabet,
                        std::vector<std::string>* warnings) {
  if (!j.is_object()) line_error(line_no, "record is not a JSON object");
  for (const auto& [key, value] : j.items()) {
    static const char* known[] = {"id", "text", "writer", "lang", "split", "moves"};
    bool ok = false;
    for (const char* k : known) ok |= key == k;
    if (!ok)
      warnings->push_back("line " + std::to_string(line_no) +
                          ": unknown field '" + key + "' ignored");
  }
  StrokeSample s;
  if (!j.contains("id") || !j["id"].is_string())
    line_error(line_no, "missing or non-string field 'id'");
  s.id = j["id"].get<std::string>();
  if (!j.contains("text") || !j["text"].is_string())
    line_error(line_no, "missing or non-string field 'text'");
  s.text = j["text"].get<std::string>();
  s.writer = read_optional(j, "writer", line_no);
  s.lang = read_optional(j, "lang", line_no);
  s.split = read_optional(j, "split", line_no);
  if (s.split && *s.split != "train" && *s.split != "val" && *s.split != "test")
    line_error(line_no, "split '" + *s.split + "' is not train/val/test");
  if (!j.contains("moves") || !j["moves"].is_array())
    line_error(line_no, "missing or non-array field 'moves'");
  for (const auto& mv : j["moves"]) {
    if (!mv.is_array() || mv.size() != 3)
      line_error(line_no, "move is not a [dx, dy, u] triple");
    if (!mv[0].is_number() || !mv[1].is_number() || !mv[2].is_number())
      line_error(line_no, "move entries must be numbers");
    Move m;
    m.dx = mv[0].get<double>();
    m.dy = mv[1].get<double>();
    double u = mv[2].get<double>();
    if (u != 0.0 && u != 1.0)
      line_error(line_no, "pen flag " + mv[2].dump() + " is not 0 or 1");
    m.pen_down = static_cast<int>(u);
    s.moves.push_back(m);
  }
  try {
    validate(s, alphabet);
  } catch (const std::invalid_argument& e) {
    line_error(line_no, e.what());
  }
  return s;
}

}  // namespace

ReadResult read_jsonl(std::istream& in, const Alphabet* alphabet) {
  ReadResult result;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      line_error(line_no, std::string("invalid JSON: ") + e.what());
    }
    result.samples.push_back(parse_line(j, line_no, alphabet, &result.warnings));
  }
  return result;
}

ReadResult read_jsonl_file(const std::string& path, const Alphabet* alphabet) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ink file " + path);
  try {
    return read_jsonl(in, alphabet);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_jsonl(std::ostream& out, std::span<const StrokeSample> samples) {
  for (const StrokeSample& s : samples) {
    json j;
    j["id"] = s.id;
    j["text"] = s.text;
    j["writer"] = s.writer ? json(*s.writer) : json(nullptr);
    j["lang"] = s.lang ? json(*s.lang) : json(nullptr);
    j["split"] = s.split ? json(*s.split) : json(nullptr);
    json moves = json::array();
    for (const Move& m : s.moves) moves.push_back({m.dx, m.dy, m.pen_down});
    j["moves"] = std::move(moves);
    out << j.dump() << '\n';
  }
}

void write_jsonl_file(const std::string& path,
                      std::span<const StrokeSample> samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_jsonl(out, samples);
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace ink
