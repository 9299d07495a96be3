// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "prformer/checkpoint.hpp"
#include "prformer/error.hpp"
#include "test_util.hpp"

using namespace prformer;
using prformer::test::randn;

namespace {

RunConfig small_config() {
  RunConfig cfg;
  cfg.lookback = 48;
  cfg.pred_len = 12;
  cfg.pyramidal_windows = {4, 8};
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.conv_channels = 4;
  cfg.seed = 3;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("prformer_test_ckpt_" + name);
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_CASE("checkpoint round trip restores every tensor and the config") {
  for (Variant v : {Variant::Full, Variant::V1, Variant::V2, Variant::V3}) {
    RunConfig cfg = small_config();
    cfg.variant = v;
    PRformerModel m(cfg, 3);
    // Move parameters off their initial values.
    std::mt19937_64 rng(1);
    for (const auto& [name, t] : m.params().entries()) {
      Tensor p = t;
      for (auto& x : p.mutable_data()) x += std::normal_distribution<>(0, 0.01)(rng);
    }
    const auto path = temp_path("roundtrip.ckpt");
    save_checkpoint(m, path.string());
    const PRformerModel back = load_checkpoint(path.string());
    CHECK(back.channels() == 3);
    CHECK(back.config().variant == v);
    REQUIRE(back.params().entries().size() == m.params().entries().size());
    for (std::size_t i = 0; i < m.params().entries().size(); ++i) {
      const auto& [name, t] = m.params().entries()[i];
      CHECK(back.params().entries()[i].first == name);
      CHECK(std::equal(t.data().begin(), t.data().end(), back.params().entries()[i].second.data().begin()));
    }
    const Tensor x = randn({2, 48, 3}, rng);
    const Tensor a = m.predict(x), b = back.predict(x);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

    const auto manifest = read_checkpoint_manifest(path.string());
    CHECK(manifest["format_version"] == kCheckpointFormatVersion);
    CHECK(manifest["channels"] == 3);
    CHECK(manifest["tensors"].size() == m.params().entries().size());
    CHECK(manifest["tensors"][0]["dtype"] == "f64");
    std::filesystem::remove(path);
  }
}

TEST_CASE("same seed gives byte-identical checkpoints") {
  const auto p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
  save_checkpoint(PRformerModel(small_config(), 2), p1.string());
  save_checkpoint(PRformerModel(small_config(), 2), p2.string());
  CHECK(read_bytes(p1) == read_bytes(p2));
  CHECK(read_bytes(p1).substr(0, 8) == "PRFCKPT1");
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("corrupt or mismatched checkpoints are data errors") {
  const auto path = temp_path("bad.ckpt");
  save_checkpoint(PRformerModel(small_config(), 2), path.string());
  const std::string good = read_bytes(path);

  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(temp_path("absent.ckpt").string()), DataError); }
  SUBCASE("bad magic") {
    std::string b = good;
    b[0] = 'X';
    write_bytes(path, b);
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  SUBCASE("truncated payload") {
    write_bytes(path, good.substr(0, good.size() - 9));
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  SUBCASE("truncated header") {
    write_bytes(path, good.substr(0, 12));
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  SUBCASE("manifest length past end of file") {
    std::string b = good;
    const std::uint64_t huge = 1ull << 40;
    std::memcpy(b.data() + 8, &huge, 8);
    write_bytes(path, b);
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  auto rewrite_manifest = [&](const std::function<void(nlohmann::json&)>& edit) {
    std::uint64_t len = 0;
    std::memcpy(&len, good.data() + 8, 8);
    auto manifest = nlohmann::json::parse(good.substr(16, len));
    edit(manifest);
    const std::string text = manifest.dump();
    std::string b = good.substr(0, 8);
    const std::uint64_t new_len = text.size();
    b.append(reinterpret_cast<const char*>(&new_len), 8);
    b += text;
    b += good.substr(16 + len);
    write_bytes(path, b);
  };
  SUBCASE("shape mismatch") {
    rewrite_manifest([](nlohmann::json& m) { m["tensors"][2]["shape"][0] = 999; });
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  SUBCASE("renamed tensor") {
    rewrite_manifest([](nlohmann::json& m) { m["tensors"][1]["name"] = "nope"; });
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  SUBCASE("wrong dtype") {
    rewrite_manifest([](nlohmann::json& m) { m["tensors"][0]["dtype"] = "f32"; });
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  SUBCASE("future format version") {
    rewrite_manifest([](nlohmann::json& m) { m["format_version"] = 99; });
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  SUBCASE("config disagrees with tensors") {
    rewrite_manifest([](nlohmann::json& m) { m["run_config"]["d_model"] = 32; });
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  SUBCASE("garbage manifest") {
    std::string b = good;
    b[16] = '#';
    write_bytes(path, b);
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }
  SUBCASE("intact file still loads") {
    write_bytes(path, good);
    CHECK_NOTHROW(load_checkpoint(path.string()));
  }
  std::filesystem::remove(path);
}
