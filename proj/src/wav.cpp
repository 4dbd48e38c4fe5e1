#include "pf/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "pf/common.hpp"

namespace pf {

namespace {

// cursor over the whole file; every read error reports its byte offset
struct ByteReader {
  std::vector<unsigned char> buf;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw validation_error("wav '" + path + "': truncated " + what + " at byte " +
                             std::to_string(pos));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    std::memcpy(&v, buf.data() + pos, 2);
    pos += 2;
    return v;
  }
  std::string tag() {
    need(4, "chunk tag");
    std::string t(reinterpret_cast<const char*>(buf.data() + pos), 4);
    pos += 4;
    return t;
  }
};

double i0(double x) {  // modified Bessel I0, power series
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 64; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

}  // namespace

AudioClip read_wav(const std::string& path) {
  ByteReader r;
  r.path = path;
  {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw validation_error("wav '" + path + "': cannot open");
    r.buf.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  if (r.tag() != "RIFF")
    throw validation_error("wav '" + path + "': missing RIFF magic at byte 0");
  r.u32("RIFF size");
  if (r.tag() != "WAVE")
    throw validation_error("wav '" + path + "': missing WAVE form type at byte 8");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_pos = 0, data_len = 0;

  while (r.pos + 8 <= r.buf.size()) {
    const std::string id = r.tag();
    const std::uint32_t len = r.u32("chunk size");
    if (id == "fmt ") {
      const std::size_t fmt_at = r.pos;
      format = r.u16("format tag");
      channels = r.u16("channel count");
      rate = r.u32("sample rate");
      r.u32("byte rate");
      r.u16("block align");
      bits = r.u16("bits per sample");
      have_fmt = true;
      r.pos = fmt_at + len + (len & 1);  // skip any fmt extension
    } else if (id == "data") {
      r.need(len, "data chunk");
      data_pos = r.pos;
      data_len = len;
      r.pos += len + (len & 1);
    } else {
      r.need(len, "chunk body");  // LIST, fact, ... skipped
      r.pos += len + (len & 1);
    }
  }
  if (!have_fmt) throw validation_error("wav '" + path + "': no fmt chunk");
  if (data_len == 0) throw validation_error("wav '" + path + "': no data chunk");
  if (channels == 0 || rate == 0)
    throw validation_error("wav '" + path + "': zero channels or sample rate");
  const bool pcm_int = format == 1 && (bits == 8 || bits == 16 || bits == 24);
  const bool pcm_f32 = format == 3 && bits == 32;
  if (!pcm_int && !pcm_f32)
    throw validation_error("wav '" + path + "': unsupported encoding (format tag " +
                           std::to_string(format) + ", " + std::to_string(bits) + " bits)");

  const std::size_t bytes_per = bits / 8;
  const std::size_t frame_bytes = bytes_per * channels;
  const std::size_t frames = data_len / frame_bytes;

  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(frames);
  const unsigned char* d = r.buf.data() + data_pos;
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = d + i * frame_bytes + c * bytes_per;
      double v = 0.0;
      switch (bits) {
        case 8:
          v = (static_cast<int>(p[0]) - 128) / 128.0;
          break;
        case 16: {
          std::int16_t s;
          std::memcpy(&s, p, 2);
          v = s / 32768.0;
          break;
        }
        case 24: {
          std::int32_t s = (p[0] << 8) | (p[1] << 16) | (static_cast<std::int32_t>(p[2]) << 24);
          v = (s >> 8) / 8388608.0;
          break;
        }
        case 32: {
          float f;
          std::memcpy(&f, p, 4);
          v = f;
          break;
        }
      }
      acc += v;
    }
    clip.samples[i] = static_cast<float>(std::clamp(acc / channels, -1.0, 1.0));
  }
  return clip;
}

void write_wav(const std::string& path, const std::vector<float>& samples,
               std::uint32_t sample_rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("wav '" + path + "': cannot open for writing", Error::Kind::runtime);
  const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  f.write("RIFF", 4);
  u32(36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  u32(sample_rate);
  u32(sample_rate * 2);
  u16(2);
  u16(16);
  f.write("data", 4);
  u32(data_len);
  for (float s : samples) {
    const double clamped = std::clamp(static_cast<double>(s), -1.0, 1.0);
    const auto q =
        static_cast<std::int16_t>(std::clamp(std::lround(clamped * 32767.0), -32768L, 32767L));
    f.write(reinterpret_cast<const char*>(&q), 2);
  }
  if (!f) throw Error("wav '" + path + "': write failed", Error::Kind::runtime);
}

std::vector<float> resample(const std::vector<float>& x, std::uint32_t from_rate,
                            std::uint32_t to_rate) {
  if (from_rate == 0 || to_rate == 0) throw validation_error("resample: zero rate");
  if (from_rate == to_rate) return x;
  if (x.empty()) return {};

  constexpr int kHalf = 32;  // 64 taps per phase
  constexpr double kBeta = 8.0;
  const double i0b = i0(kBeta);
  // cutoff at the lower of the two Nyquist frequencies, in input-rate units
  const double c = std::min(1.0, static_cast<double>(to_rate) / from_rate);

  auto tap = [&](double u) -> double {  // u = distance from the sinc center
    if (std::abs(u) >= kHalf) return 0.0;
    const double s = (u == 0.0) ? 1.0 : std::sin(M_PI * c * u) / (M_PI * c * u);
    const double t = u / kHalf;
    return c * s * i0(kBeta * std::sqrt(1.0 - t * t)) / i0b;
  };

  const std::uint32_t g = std::gcd(from_rate, to_rate);
  const std::uint32_t L = to_rate / g;   // phases
  const std::uint32_t M = from_rate / g;

  // precompute the phase tables when the ratio is a small rational
  std::vector<std::array<double, 2 * kHalf>> phases;
  if (L <= 4096) {
    phases.resize(L);
    for (std::uint32_t p = 0; p < L; ++p) {
      const double frac = static_cast<double>(p) * M / L - std::floor(static_cast<double>(p) * M / L);
      for (int k = 0; k < 2 * kHalf; ++k)
        phases[p][k] = tap(static_cast<double>(k - kHalf + 1) - frac);
    }
  }

  const std::size_t n = x.size();
  const std::size_t n_out = (n * static_cast<std::size_t>(to_rate)) / from_rate;
  std::vector<float> y(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double t = static_cast<double>(i) * from_rate / to_rate;
    const auto base = static_cast<std::ptrdiff_t>(std::floor(t));
    double acc = 0.0;
    if (!phases.empty()) {
      const auto& h = phases[i % L];
      for (int k = 0; k < 2 * kHalf; ++k) {
        const std::ptrdiff_t j = base + k - kHalf + 1;
        if (j >= 0 && j < static_cast<std::ptrdiff_t>(n)) acc += x[j] * h[k];
      }
    } else {
      const double frac = t - std::floor(t);
      for (int k = 0; k < 2 * kHalf; ++k) {
        const std::ptrdiff_t j = base + k - kHalf + 1;
        if (j >= 0 && j < static_cast<std::ptrdiff_t>(n))
          acc += x[j] * tap(static_cast<double>(k - kHalf + 1) - frac);
      }
    }
    y[i] = static_cast<float>(acc);
  }
  return y;
}

}  // namespace pf
