#include "cxs/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace cxs {

using nlohmann::json;

void save_checkpoint(const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::string& path_base) {
  json manifest = json::array();
  std::string blob;
  for (const auto& [name, t] : tensors) {
    json entry;
    entry["name"] = name;
    entry["dtype"] = "f32";
    entry["shape"] = t.shape();
    entry["byte_offset"] = blob.size();
    manifest.push_back(entry);
    for (int i = 0; i < t.size(); ++i) {
      float f = static_cast<float>(t.data()[i]);
      char tmp[sizeof(float)];
      std::memcpy(tmp, &f, sizeof(float));
      blob.append(tmp, sizeof(float));
    }
  }
  std::ofstream mj(path_base + ".json", std::ios::trunc);
  if (!mj) throw std::runtime_error("cannot write " + path_base + ".json");
  mj << manifest.dump(2) << "\n";
  std::ofstream mb(path_base + ".bin", std::ios::binary | std::ios::trunc);
  if (!mb) throw std::runtime_error("cannot write " + path_base + ".bin");
  mb.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path_base) {
  std::ifstream mj(path_base + ".json");
  if (!mj) throw std::runtime_error("missing checkpoint manifest " + path_base + ".json");
  json manifest;
  mj >> manifest;
  std::ifstream mb(path_base + ".bin", std::ios::binary);
  if (!mb) throw std::runtime_error("missing checkpoint blob " + path_base + ".bin");
  std::string blob((std::istreambuf_iterator<char>(mb)), std::istreambuf_iterator<char>());

  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& entry : manifest) {
    std::string name = entry.at("name");
    if (entry.at("dtype") != "f32")
      throw std::runtime_error("checkpoint " + path_base + ": unsupported dtype");
    Shape shape = entry.at("shape").get<Shape>();
    size_t offset = entry.at("byte_offset");
    size_t n = static_cast<size_t>(shape_numel(shape));
    if (offset + n * sizeof(float) > blob.size())
      throw std::runtime_error("checkpoint " + path_base + ": blob too short for " + name);
    std::vector<double> data(n);
    for (size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, blob.data() + offset + i * sizeof(float), sizeof(float));
      data[i] = f;
    }
    out.emplace_back(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void checkpoint_fill(const std::vector<std::pair<std::string, Tensor>>& loaded,
                     const std::string& name, Tensor& dst) {
  for (const auto& [n, t] : loaded) {
    if (n != name) continue;
    if (t.shape() != dst.shape())
      throw std::runtime_error("checkpoint tensor " + name + " shape mismatch: " +
                               shape_str(t.shape()) + " vs " + shape_str(dst.shape()));
    std::copy(t.data(), t.data() + t.size(), dst.data());
    return;
  }
  throw std::runtime_error("checkpoint missing tensor " + name);
}

}  // namespace cxs
