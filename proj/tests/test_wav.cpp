#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <vector>

#include "pf/common.hpp"
#include "pf/wav.hpp"

using namespace pf;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/pf_wavtest_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

// hand-assemble a WAV so the reader is tested against raw bytes, not write_wav
std::vector<unsigned char> build_wav(std::uint16_t format, std::uint16_t channels,
                                     std::uint32_t rate, std::uint16_t bits,
                                     const std::vector<unsigned char>& payload) {
  std::vector<unsigned char> b;
  auto put = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    b.insert(b.end(), c, c + n);
  };
  auto u32 = [&](std::uint32_t v) { put(&v, 4); };
  auto u16 = [&](std::uint16_t v) { put(&v, 2); };
  put("RIFF", 4);
  u32(static_cast<std::uint32_t>(36 + payload.size()));
  put("WAVE", 4);
  put("fmt ", 4);
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  put("data", 4);
  u32(static_cast<std::uint32_t>(payload.size()));
  put(payload.data(), payload.size());
  return b;
}

void dump(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("16-bit roundtrip through write_wav and read_wav") {
  TempFile tf("rt.wav");
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> d(-0.9f, 0.9f);
  std::vector<float> x(2000);
  for (auto& v : x) v = d(rng);
  write_wav(tf.path, x, 16000);
  AudioClip c = read_wav(tf.path);
  CHECK(c.sample_rate == 16000);
  REQUIRE(c.samples.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(c.samples[i] == doctest::Approx(x[i]).epsilon(0).scale(1).epsilon(1e-4));
}

TEST_CASE("resample is the identity at matching rates") {
  std::vector<float> x{0.1f, -0.2f, 0.3f, 0.0f, 0.5f};
  CHECK(resample(x, 16000, 16000) == x);
}

TEST_CASE("32 kHz 440 Hz sine resampled to 16 kHz peaks at 440 Hz in a direct DFT") {
  const std::uint32_t from = 32000;
  std::vector<float> x(from);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = 0.5f * std::sin(2.0 * M_PI * 440.0 * i / from);
  std::vector<float> y = resample(x, from, 16000);
  REQUIRE(y.size() == 16000);

  // oracle: Hann-windowed DFT of the output, 1 Hz bins; argmax over 0..2000 Hz
  const std::size_t N = y.size();
  double best = -1;
  std::size_t best_bin = 0;
  for (std::size_t f = 1; f <= 2000; ++f) {
    double re = 0, im = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (N - 1));
      const double ph = 2.0 * M_PI * f * i / N;
      re += w * y[i] * std::cos(ph);
      im -= w * y[i] * std::sin(ph);
    }
    const double mag = re * re + im * im;
    if (mag > best) {
      best = mag;
      best_bin = f;
    }
  }
  CHECK(best_bin >= 439);
  CHECK(best_bin <= 441);

  // amplitude survives resampling (440 Hz is far below the 8 kHz cutoff)
  double peak = 0;
  for (std::size_t i = 2000; i < 14000; ++i) peak = std::max(peak, std::abs((double)y[i]));
  CHECK(peak == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("stereo channels x and -x cancel to silence") {
  TempFile tf("stereo.wav");
  std::vector<unsigned char> payload;
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> d(-30000, 30000);
  for (int i = 0; i < 500; ++i) {
    const auto v = static_cast<std::int16_t>(d(rng));
    const std::int16_t neg = static_cast<std::int16_t>(-v);
    payload.insert(payload.end(), {static_cast<unsigned char>(v & 0xff),
                                   static_cast<unsigned char>((v >> 8) & 0xff),
                                   static_cast<unsigned char>(neg & 0xff),
                                   static_cast<unsigned char>((neg >> 8) & 0xff)});
  }
  dump(tf.path, build_wav(1, 2, 16000, 16, payload));
  AudioClip c = read_wav(tf.path);
  REQUIRE(c.samples.size() == 500);
  for (float s : c.samples) CHECK(s == 0.0f);
}

TEST_CASE("8-bit and 24-bit integer decoding") {
  TempFile t8("8bit.wav");
  // 8-bit unsigned: 128 -> 0, 255 -> ~+1, 0 -> -1
  dump(t8.path, build_wav(1, 1, 8000, 8, {128, 255, 0, 192}));
  AudioClip c8 = read_wav(t8.path);
  REQUIRE(c8.samples.size() == 4);
  CHECK(c8.samples[0] == doctest::Approx(0.0));
  CHECK(c8.samples[1] == doctest::Approx(127.0 / 128));
  CHECK(c8.samples[2] == doctest::Approx(-1.0));
  CHECK(c8.samples[3] == doctest::Approx(0.5));

  TempFile t24("24bit.wav");
  // 24-bit little-endian: 0x400000 = +0.5, 0xC00000 = -0.5, full scale 0x7FFFFF
  dump(t24.path, build_wav(1, 1, 8000, 24,
                           {0x00, 0x00, 0x40, 0x00, 0x00, 0xC0, 0xFF, 0xFF, 0x7F}));
  AudioClip c24 = read_wav(t24.path);
  REQUIRE(c24.samples.size() == 3);
  CHECK(c24.samples[0] == doctest::Approx(0.5));
  CHECK(c24.samples[1] == doctest::Approx(-0.5));
  CHECK(c24.samples[2] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("32-bit float decoding and unknown chunks are skipped") {
  TempFile tf("f32.wav");
  std::vector<unsigned char> payload(8);
  const float a = 0.25f, b = -0.75f;
  std::memcpy(payload.data(), &a, 4);
  std::memcpy(payload.data() + 4, &b, 4);
  auto bytes = build_wav(3, 1, 16000, 32, payload);
  // splice a LIST chunk between fmt and data
  std::vector<unsigned char> list{'L', 'I', 'S', 'T', 4, 0, 0, 0, 'I', 'N', 'F', 'O'};
  bytes.insert(bytes.begin() + 36, list.begin(), list.end());
  dump(tf.path, bytes);
  AudioClip c = read_wav(tf.path);
  REQUIRE(c.samples.size() == 2);
  CHECK(c.samples[0] == 0.25f);
  CHECK(c.samples[1] == -0.75f);
}

TEST_CASE("truncated file errors name the byte offset") {
  TempFile tf("trunc.wav");
  auto bytes = build_wav(1, 1, 16000, 16, std::vector<unsigned char>(100, 0));
  bytes.resize(50);  // cut inside the data chunk
  dump(tf.path, bytes);
  try {
    read_wav(tf.path);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
}

TEST_CASE("unsupported encoding is an explicit error") {
  TempFile tf("adpcm.wav");
  dump(tf.path, build_wav(2 /* ADPCM */, 1, 16000, 4, std::vector<unsigned char>(16, 0)));
  CHECK_THROWS_WITH_AS(read_wav(tf.path),
                       doctest::Contains("unsupported encoding (format tag 2"), Error);
}

TEST_CASE("downsampling removes content above the target Nyquist") {
  // 12 kHz tone at 32 kHz must be (almost) annihilated by the 8 kHz cutoff
  const std::uint32_t from = 32000;
  std::vector<float> x(from);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = 0.5f * std::sin(2.0 * M_PI * 12000.0 * i / from);
  std::vector<float> y = resample(x, from, 16000);
  double peak = 0;
  for (std::size_t i = 1000; i + 1000 < y.size(); ++i)
    peak = std::max(peak, std::abs(static_cast<double>(y[i])));
  CHECK(peak < 0.01);
}
