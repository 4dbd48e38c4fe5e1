#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pf/io.hpp"

using namespace pf;
namespace fs = std::filesystem;

namespace {

fs::path tmp_path(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pf_io_" + name);
  fs::remove(p);
  return p;
}

std::string slurp_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

void dump_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(f.good());
}

void put_u32(std::string& b, std::uint32_t v) {
  char raw[4];
  std::memcpy(raw, &v, 4);
  b.append(raw, 4);
}

TensorF ramp(Shape shape, float start) {
  TensorF t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = start + 0.25f * static_cast<float>(i);
  return t;
}

}  // namespace

TEST_CASE("crc32 matches the standard check value") {
  const char* s = "123456789";
  CHECK(crc32_ieee(s, 9) == 0xCBF43926u);
  CHECK(crc32_ieee(s, 0) == 0x00000000u);
  // any single-byte flip changes the CRC
  std::string m(s);
  m[4] ^= 0x01;
  CHECK(crc32_ieee(m.data(), 9) != 0xCBF43926u);
}

TEST_CASE("view names round-trip; unknown names rejected") {
  for (View v : kAllViews) CHECK(view_from_name(view_name(v)) == v);
  CHECK(std::string(view_name(View::pitch)) == "pitch");
  CHECK(std::string(view_name(View::neuralogram)) == "neuralogram");
  CHECK_THROWS_WITH_AS(view_from_name("spectrogram"),
                       "unknown view 'spectrogram' (expected pitch, timbre, waveform, or "
                       "neuralogram)",
                       Error);
}

TEST_CASE("feature cache round-trips mixed records exactly") {
  auto path = tmp_path("roundtrip.pfv1");
  std::vector<FeatureRecord> recs;
  recs.push_back({"clip_a", 0, View::pitch, ramp({80, 40}, -1.f)});
  recs.push_back({"clip_a", 1, View::timbre, ramp({12, 40}, 0.5f)});
  recs.push_back({"a-much-longer-clip-identifier", 7, View::waveform, ramp({40, 400}, 2.f)});
  recs.push_back({"n", 2, View::neuralogram, ramp({1024, 10}, -3.f)});
  recs.push_back({"emb", 0, View::pitch, ramp({64, 1}, 0.f)});
  write_feature_file(path.string(), recs);

  auto back = read_feature_file(path.string());
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].clip_id == recs[i].clip_id);
    CHECK(back[i].chunk_index == recs[i].chunk_index);
    CHECK(back[i].view == recs[i].view);
    REQUIRE(back[i].data.shape == recs[i].data.shape);
    CHECK(std::memcmp(back[i].data.data.data(), recs[i].data.data.data(),
                      recs[i].data.numel() * 4) == 0);
  }
}

TEST_CASE("streaming writer and one-shot writer produce identical bytes") {
  std::vector<FeatureRecord> recs;
  recs.push_back({"x", 0, View::pitch, ramp({3, 4}, 1.f)});
  recs.push_back({"y", 5, View::timbre, ramp({2, 2}, -8.f)});
  auto p1 = tmp_path("stream.pfv1");
  auto p2 = tmp_path("oneshot.pfv1");
  {
    FeatureFileWriter w(p1.string());
    for (const auto& r : recs) w.add(r);
  }
  write_feature_file(p2.string(), recs);
  CHECK(slurp_bytes(p1) == slurp_bytes(p2));
}

TEST_CASE("feature cache rejects non-2d records") {
  auto path = tmp_path("badrank.pfv1");
  FeatureFileWriter w(path.string());
  FeatureRecord r{"c", 0, View::pitch, TensorF({4})};
  CHECK_THROWS_WITH_AS(w.add(r), "feature cache: record for clip 'c' must be 2-d, got [4]",
                       Error);
}

TEST_CASE("feature cache reader reports bad magic and truncation offsets") {
  auto path = tmp_path("bad.pfv1");

  dump_bytes(path, "RIFFsomething");
  CHECK_THROWS_WITH(read_feature_file(path.string()),
                    doctest::Contains("bad magic (not a feature cache)"));

  // a valid one-record file, then cut it at several points
  write_feature_file(path.string(), {{"ab", 3, View::timbre, ramp({2, 3}, 0.f)}});
  const std::string full = slurp_bytes(path);
  REQUIRE(full.size() == 4 + 4 + 2 + 4 + 1 + 4 + 4 + 24);

  dump_bytes(path, full.substr(0, 6));  // mid clip_id length
  CHECK_THROWS_WITH(read_feature_file(path.string()),
                    doctest::Contains("truncated clip_id length at byte 4"));
  dump_bytes(path, full.substr(0, 9));  // clip_id cut short
  CHECK_THROWS_WITH(read_feature_file(path.string()),
                    doctest::Contains("truncated clip_id at byte 8"));
  dump_bytes(path, full.substr(0, full.size() - 1));  // last payload float cut
  CHECK_THROWS_WITH(read_feature_file(path.string()), doctest::Contains("truncated payload"));

  // view tag out of range
  std::string tagged = full;
  tagged[4 + 4 + 2 + 4] = 9;
  dump_bytes(path, tagged);
  CHECK_THROWS_WITH(read_feature_file(path.string()), doctest::Contains("invalid view tag 9"));
}

TEST_CASE("empty feature cache (magic only) reads as zero records") {
  auto path = tmp_path("empty.pfv1");
  write_feature_file(path.string(), {});
  CHECK(read_feature_file(path.string()).empty());
}

TEST_CASE("checkpoint round-trips config and tensors; rewrite is byte-identical") {
  auto path = tmp_path("ck.pfck");
  Checkpoint ck;
  ck.config_json = R"({"view":"pitch","epochs":300})";
  ck.tensors.emplace("model.head.w", ramp({200, 2048}, -0.01f));
  ck.tensors.emplace("model.head.b", ramp({200}, 0.f));
  ck.tensors.emplace("adam.m.model.head.w", ramp({200, 2048}, 0.f));
  ck.tensors.emplace("scalar", TensorF({1}, {42.5f}));
  write_checkpoint(path.string(), ck);

  Checkpoint back = read_checkpoint(path.string());
  CHECK(back.config_json == ck.config_json);
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    REQUIRE(back.tensors.count(name) == 1);
    const TensorF& u = back.tensors.at(name);
    REQUIRE(u.shape == t.shape);
    CHECK(std::memcmp(u.data.data(), t.data.data(), t.numel() * 4) == 0);
  }

  const std::string first = slurp_bytes(path);
  write_checkpoint(path.string(), ck);
  CHECK(slurp_bytes(path) == first);
  CHECK_FALSE(fs::exists(path.string() + ".tmp"));  // atomic write cleans up
}

TEST_CASE("checkpoint reader verifies CRC before anything else") {
  auto path = tmp_path("corrupt.pfck");
  Checkpoint ck;
  ck.config_json = "{}";
  ck.tensors.emplace("w", ramp({8, 8}, 1.f));
  write_checkpoint(path.string(), ck);
  std::string bytes = slurp_bytes(path);

  for (std::size_t flip : {12ul, bytes.size() / 2, bytes.size() - 5}) {
    std::string mut = bytes;
    mut[flip] = static_cast<char>(mut[flip] ^ 0x40);
    dump_bytes(path, mut);
    CHECK_THROWS_WITH(read_checkpoint(path.string()),
                      doctest::Contains("CRC mismatch (file corrupt)"));
  }

  // magic damage is reported as bad magic, not CRC
  std::string mut = bytes;
  mut[0] = 'X';
  dump_bytes(path, mut);
  CHECK_THROWS_WITH(read_checkpoint(path.string()),
                    doctest::Contains("bad magic (not a checkpoint)"));
}

TEST_CASE("checkpoint reader rejects unknown format versions") {
  auto path = tmp_path("version.pfck");
  std::string b = "PFCK";
  put_u32(b, 7);  // bumped version
  put_u32(b, 2);
  b += "{}";
  put_u32(b, crc32_ieee(b.data(), b.size()));
  dump_bytes(path, b);
  CHECK_THROWS_WITH(read_checkpoint(path.string()),
                    doctest::Contains("unsupported format version 7"));
}

TEST_CASE("checkpoint reader rejects duplicate tensor names") {
  auto path = tmp_path("dup.pfck");
  std::string b = "PFCK";
  put_u32(b, 1);
  put_u32(b, 2);
  b += "{}";
  for (int rep = 0; rep < 2; ++rep) {
    put_u32(b, 1);
    b += "w";
    put_u32(b, 1);  // rank
    put_u32(b, 2);  // dim
    put_u32(b, 0x3F800000u);  // 1.0f
    put_u32(b, 0x40000000u);  // 2.0f
  }
  put_u32(b, crc32_ieee(b.data(), b.size()));
  dump_bytes(path, b);
  CHECK_THROWS_WITH(read_checkpoint(path.string()), doctest::Contains("duplicate tensor 'w'"));
}

TEST_CASE("missing files raise open errors naming the path") {
  CHECK_THROWS_WITH(read_feature_file("/nonexistent/nope.pfv1"),
                    doctest::Contains("cannot open"));
  CHECK_THROWS_WITH(read_checkpoint("/nonexistent/nope.pfck"),
                    doctest::Contains("cannot open"));
}
