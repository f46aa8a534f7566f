#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ink/ink.hpp"

namespace ink {

struct ReadResult {
  std::vector<StrokeSample> samples;
  std::vector<std::string> warnings;  // one per unknown field occurrence
};

/// Reads the JSONL ink format. Malformed lines raise std::runtime_error
/// naming the 1-based line number; unknown fields only produce warnings.
/// With an alphabet, text characters outside it are errors.
ReadResult read_jsonl(std::istream& in, const Alphabet* alphabet = nullptr);
ReadResult read_jsonl_file(const std::string& path,
                           const Alphabet* alphabet = nullptr);

void write_jsonl(std::ostream& out, std::span<const StrokeSample> samples);
void write_jsonl_file(const std::string& path,
                      std::span<const StrokeSample> samples);

}  // namespace ink
