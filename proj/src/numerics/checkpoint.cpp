#include "numerics/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace numerics {

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'T', 'N', 'S', 'R', 'P', 'K', '0', '1'};
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::out_of_range("checkpoint: no tensor named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::ordered_json index;
  index["tensors"] = nlohmann::ordered_json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["rows"] = t.rows();
    e["cols"] = t.cols();
    e["offset"] = offset;
    index["tensors"].push_back(std::move(e));
    offset += static_cast<uint64_t>(t.size()) * sizeof(double);
  }
  index["meta"] = ckpt.meta;
  std::string json = index.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  uint64_t jlen = json.size();
  out.write(reinterpret_cast<const char*>(&jlen), sizeof(jlen));
  out.write(json.data(), static_cast<std::streamsize>(json.size()));
  for (const auto& [name, t] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint64_t jlen = 0;
  in.read(reinterpret_cast<char*>(&jlen), sizeof(jlen));
  if (!in) throw std::runtime_error("checkpoint: truncated index length in " + path);
  std::string json(jlen, '\0');
  in.read(json.data(), static_cast<std::streamsize>(jlen));
  if (!in) throw std::runtime_error("checkpoint: truncated index in " + path);

  nlohmann::ordered_json index;
  try {
    index = nlohmann::ordered_json::parse(json);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("checkpoint: invalid index JSON in " + path + ": " +
                             e.what());
  }

  std::streampos data_start = in.tellg();
  Checkpoint ckpt;
  if (index.contains("meta")) ckpt.meta = index["meta"];
  for (const auto& e : index.at("tensors")) {
    std::string name = e.at("name").get<std::string>();
    int rows = e.at("rows").get<int>();
    int cols = e.at("cols").get<int>();
    uint64_t offset = e.at("offset").get<uint64_t>();
    if (rows <= 0 || cols <= 0)
      throw std::runtime_error("checkpoint: bad shape for tensor '" + name + "'");
    Tensor t(rows, cols);
    in.seekg(data_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in)
      throw std::runtime_error("checkpoint: truncated data for tensor '" + name +
                               "' in " + path);
    ckpt.add(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace numerics
