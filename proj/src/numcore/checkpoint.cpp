#include <bit>
#include <cstring>
#include <fstream>

#include "hpl/error.hpp"
#include "hpl/numcore.hpp"

namespace hpl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string blob_name(const std::string& param) {
  std::string out = param;
  for (char& c : out)
    if (c == '/') c = '.';
  return out + ".bin";
}

void write_blob(const fs::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  // Row-major order, little-endian float32.
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c)));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      out.write(bytes, 4);
    }
  }
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

void read_blob(const fs::path& path, Matrix& m) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      char bytes[4];
      if (!in.read(bytes, 4)) throw Error(ErrorCode::Schema, "truncated blob " + path.string());
      std::uint32_t bits;
      std::memcpy(&bits, bytes, 4);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      m(r, c) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw Error(ErrorCode::Schema, "oversized blob " + path.string());
}

}  // namespace

void save_checkpoint(const fs::path& dir, std::span<const ParamStore* const> stores,
                     const json& hyperparameters, std::uint64_t seed) {
  fs::create_directories(dir);
  json arrays = json::array();
  for (const ParamStore* store : stores) {
    for (const auto& e : store->entries()) {
      const std::string file = blob_name(e.name);
      write_blob(dir / file, e.value);
      arrays.push_back({{"name", e.name}, {"shape", {e.value.rows(), e.value.cols()}}, {"file", file}});
    }
  }
  json manifest{{"format", "hpl-checkpoint-v1"},
                {"dtype", "float32-le"},
                {"seed", seed},
                {"hyperparameters", hyperparameters},
                {"arrays", arrays}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorCode::Io, "missing manifest in " + dir.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Schema, (dir / "manifest.json").string() + ": " + e.what());
  }
}

json load_checkpoint(const fs::path& dir, std::span<ParamStore* const> stores) {
  json manifest = read_manifest(dir);
  std::size_t expected = 0;
  for (ParamStore* store : stores) expected += store->size();
  if (manifest.at("arrays").size() != expected)
    throw Error(ErrorCode::ShapeMismatch, "checkpoint array count differs from model layout");
  for (const json& a : manifest.at("arrays")) {
    const std::string name = a.at("name").get<std::string>();
    bool found = false;
    for (ParamStore* store : stores) {
      auto id = store->find(name);
      if (!id) continue;
      Matrix& value = store->value(*id);
      if (a.at("shape")[0].get<Eigen::Index>() != value.rows() ||
          a.at("shape")[1].get<Eigen::Index>() != value.cols())
        throw Error(ErrorCode::ShapeMismatch, "checkpoint shape mismatch for " + name);
      read_blob(dir / a.at("file").get<std::string>(), value);
      found = true;
      break;
    }
    if (!found) throw Error(ErrorCode::ShapeMismatch, "checkpoint array not in model: " + name);
  }
  return manifest;
}

}  // namespace hpl
