#include "densedet/autodiff/checkpoint.hpp"

#include <cstdint>
#include <cstring>

#include <json.hpp>

#include "densedet/error.hpp"
#include "densedet/geom.hpp"

namespace densedet::ad {

void save_checkpoint(const ParamStore& store, const std::string& stem) {
  nlohmann::json manifest;
  manifest["format"] = "param_checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "f64le";
  manifest["params"] = nlohmann::json::array();
  std::vector<std::uint8_t> bytes;
  std::size_t offset = 0;
  for (const auto* p : store.all()) {
    manifest["params"].push_back({{"name", p->name},
                                  {"shape", p->shape},
                                  {"offset", offset},
                                  {"count", p->value.size()},
                                  {"trainable", p->trainable}});
    const auto* raw = reinterpret_cast<const std::uint8_t*>(p->value.data());
    bytes.insert(bytes.end(), raw, raw + p->value.size() * sizeof(double));
    offset += p->value.size();
  }
  write_bytes(stem + ".bin", bytes);
  write_text(stem + ".json", manifest.dump(2));
}

void load_checkpoint(ParamStore& store, const std::string& stem, bool strict) {
  const auto bytes = read_bytes(stem + ".bin");
  try {
    const auto manifest = nlohmann::json::parse(read_text(stem + ".json"));
    for (const auto& entry : manifest.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      auto* p = store.find(name);
      if (!p) {
        if (strict) fail(ErrorCode::kShapeMismatch, "checkpoint has unknown parameter " + name);
        continue;
      }
      const auto shape = entry.at("shape").get<Shape>();
      if (shape != p->shape) {
        fail(ErrorCode::kShapeMismatch, "checkpoint shape for " + name + " is " +
                                            shape_str(shape) + ", model expects " +
                                            shape_str(p->shape));
      }
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if ((offset + count) * sizeof(double) > bytes.size()) {
        fail(ErrorCode::kIo, "checkpoint data truncated at " + name);
      }
      std::memcpy(p->value.data(), bytes.data() + offset * sizeof(double), count * sizeof(double));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed checkpoint manifest: ") + e.what());
  }
}

std::vector<std::string> copy_matching(const ParamStore& from, ParamStore& to) {
  std::vector<std::string> copied;
  for (const auto* src : from.all()) {
    auto* dst = to.find(src->name);
    if (!dst || dst->shape != src->shape) continue;
    dst->value = src->value;
    copied.push_back(src->name);
  }
  return copied;
}

}  // namespace densedet::ad
