// SPDX-License-Identifier: Apache-2.0

#include "prformer/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "prformer/error.hpp"

namespace prformer {

namespace {

constexpr std::array<char, 8> kMagic{'P', 'R', 'F', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

struct Archive {
  nlohmann::json manifest;
  std::vector<char> payload;
};

Archive read_archive(const std::string& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("'" + path + "' is not a checkpoint (bad magic)");
  const std::uint64_t manifest_len = read_u64(in);
  if (!in || manifest_len > (1ull << 32)) throw DataError("'" + path + "': corrupt manifest length");
  std::string text(manifest_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) throw DataError("'" + path + "': truncated manifest");
  Archive a;
  try {
    a.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path + "': manifest is not valid JSON: " + e.what());
  }
  if (with_payload) a.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return a;
}

}  // namespace

void save_checkpoint(const PRformerModel& model, const std::string& path) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : model.params().entries()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}, {"offset", offset}});
    offset += t.numel() * sizeof(double);
  }
  nlohmann::json manifest{{"format_version", kCheckpointFormatVersion},
                          {"run_config", model.config()},
                          {"channels", model.channels()},
                          {"payload_bytes", offset},
                          {"tensors", tensors}};
  const std::string text = manifest.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out.write(kMagic.data(), kMagic.size());
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : model.params().entries())
      out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move checkpoint into '" + path + "'");
}

nlohmann::json read_checkpoint_manifest(const std::string& path) { return read_archive(path, false).manifest; }

PRformerModel load_checkpoint(const std::string& path) {
  const Archive a = read_archive(path, true);
  const auto& m = a.manifest;
  try {
    if (m.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw DataError("'" + path + "': unsupported checkpoint format version " + m.at("format_version").dump());
    RunConfig cfg;
    merge_json(cfg, m.at("run_config"));
    PRformerModel model(cfg, m.at("channels").get<std::size_t>());
    const auto& entries = model.params().entries();
    const auto& stored = m.at("tensors");
    if (stored.size() != entries.size())
      throw DataError("'" + path + "': holds " + std::to_string(stored.size()) + " tensors, model layout needs " +
                      std::to_string(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& rec = stored[i];
      const std::string name = rec.at("name").get<std::string>();
      const Shape shape = rec.at("shape").get<Shape>();
      const std::uint64_t offset = rec.at("offset").get<std::uint64_t>();
      Tensor dst = entries[i].second;
      if (name != entries[i].first)
        throw DataError("'" + path + "': tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                        entries[i].first + "'");
      if (rec.at("dtype").get<std::string>() != "f64") throw DataError("'" + path + "': tensor '" + name + "' is not f64");
      if (shape != dst.shape())
        throw DataError("'" + path + "': tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(dst.shape()));
      const std::size_t bytes = dst.numel() * sizeof(double);
      if (offset + bytes > a.payload.size()) throw DataError("'" + path + "': payload truncated at '" + name + "'");
      std::memcpy(dst.mutable_data().data(), a.payload.data() + offset, bytes);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path + "': malformed manifest: " + e.what());
  }
}

}  // namespace prformer
