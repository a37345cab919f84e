#include "cxs/dataset.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace cxs {

namespace {

// Files are written little-endian; every supported target here is
// little-endian, so plain byte copies are used.

template <typename T>
void put(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& off, const char* what) {
  if (off + sizeof(T) > buf.size())
    throw TruncatedError(std::string("truncated payload reading ") + what);
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return buf;
}

void write_file(const std::string& path, const std::string& buf) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DatasetError("write failed for " + path);
}

}  // namespace

void write_dataset(const std::vector<Scene>& scenes, const SceneSpec& spec,
                   const std::string& path) {
  spec.validate();
  std::string buf;
  buf.append("CXSD", 4);
  put<uint32_t>(buf, 1);
  put<uint32_t>(buf, static_cast<uint32_t>(spec.grid));
  put<uint32_t>(buf, static_cast<uint32_t>(spec.tile_px));
  put<uint32_t>(buf, static_cast<uint32_t>(spec.channels));
  put<uint32_t>(buf, static_cast<uint32_t>(spec.concepts));
  put<uint64_t>(buf, scenes.size());
  const int side = spec.mosaic_px();
  const size_t n_px = static_cast<size_t>(spec.channels) * side * side;
  for (const auto& sc : scenes) {
    if (sc.hr_mosaic.size() != static_cast<int>(n_px))
      throw DatasetError("scene geometry does not match spec");
    put<uint64_t>(buf, sc.scene_id);
    put<uint64_t>(buf, sc.labels);
    for (size_t i = 0; i < n_px; ++i)
      put<float>(buf, static_cast<float>(sc.hr_mosaic.data()[i]));
  }
  write_file(path, buf);
}

std::vector<Scene> read_dataset(const std::string& path, SceneSpec* spec_out) {
  std::string buf = read_file(path);
  if (buf.size() < 4 || buf.compare(0, 4, "CXSD") != 0)
    throw BadMagicError("bad magic in " + path);
  size_t off = 4;
  uint32_t version = take<uint32_t>(buf, off, "version");
  if (version != 1)
    throw VersionError("unsupported dataset version " + std::to_string(version));
  SceneSpec spec;
  spec.grid = static_cast<int>(take<uint32_t>(buf, off, "grid"));
  spec.tile_px = static_cast<int>(take<uint32_t>(buf, off, "tile_px"));
  spec.channels = static_cast<int>(take<uint32_t>(buf, off, "channels"));
  spec.concepts = static_cast<int>(take<uint32_t>(buf, off, "concepts"));
  uint64_t count = take<uint64_t>(buf, off, "scene_count");
  spec.validate();

  const int side = spec.mosaic_px();
  const size_t n_px = static_cast<size_t>(spec.channels) * side * side;
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    Scene sc;
    sc.scene_id = take<uint64_t>(buf, off, "scene_id");
    sc.labels = take<uint64_t>(buf, off, "labels");
    std::vector<double> px(n_px);
    for (size_t p = 0; p < n_px; ++p) px[p] = take<float>(buf, off, "mosaic");
    sc.hr_mosaic = Tensor({spec.channels, side, side}, std::move(px));
    scenes.push_back(std::move(sc));
  }
  if (off != buf.size()) throw DatasetError("trailing bytes in " + path);
  if (spec_out) *spec_out = spec;
  return scenes;
}

void write_supervision(const std::vector<std::vector<double>>& g_star_per_scene,
                       const std::string& path) {
  std::string buf;
  buf.append("CXSG", 4);
  put<uint32_t>(buf, 1);
  uint32_t tiles = g_star_per_scene.empty()
                       ? 0
                       : static_cast<uint32_t>(g_star_per_scene[0].size());
  put<uint32_t>(buf, tiles);
  put<uint64_t>(buf, g_star_per_scene.size());
  for (const auto& g : g_star_per_scene) {
    if (g.size() != tiles) throw DatasetError("inconsistent supervision map length");
    for (double v : g) put<float>(buf, static_cast<float>(v));
  }
  write_file(path, buf);
}

std::vector<std::vector<double>> read_supervision(const std::string& path) {
  std::string buf = read_file(path);
  if (buf.size() < 4 || buf.compare(0, 4, "CXSG") != 0)
    throw BadMagicError("bad magic in " + path);
  size_t off = 4;
  uint32_t version = take<uint32_t>(buf, off, "version");
  if (version != 1)
    throw VersionError("unsupported supervision version " + std::to_string(version));
  uint32_t tiles = take<uint32_t>(buf, off, "tiles");
  uint64_t count = take<uint64_t>(buf, off, "scene_count");
  std::vector<std::vector<double>> maps(count, std::vector<double>(tiles));
  for (auto& g : maps)
    for (auto& v : g) v = take<float>(buf, off, "g_star");
  if (off != buf.size()) throw DatasetError("trailing bytes in " + path);
  return maps;
}

}  // namespace cxs
