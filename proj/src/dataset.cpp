#include "pf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pf/common.hpp"

namespace fs = std::filesystem;

namespace pf {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw validation_error("unknown split '" + s + "' (expected train, val, or test)");
}

// ---------------------------------------------------------------------------
// Vocabulary and labels
// ---------------------------------------------------------------------------

LabelVocabulary::LabelVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2)
    throw validation_error("vocabulary needs at least 2 classes, got " +
                           std::to_string(names_.size()));
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw validation_error("vocabulary contains an empty class name");
    if (!index_.emplace(names_[i], i).second)
      throw validation_error("duplicate class name '" + names_[i] + "' in vocabulary");
  }
}

std::size_t LabelVocabulary::index(const std::string& n) const {
  auto it = index_.find(n);
  if (it == index_.end()) throw validation_error("unknown label '" + n + "'");
  return it->second;
}

LabelVocabulary LabelVocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw validation_error("vocabulary '" + path + "': cannot open");
  std::vector<std::string> names;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return LabelVocabulary(std::move(names));
}

void LabelVocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("vocabulary '" + path + "': cannot open for writing", Error::Kind::runtime);
  for (const auto& n : names_) f << n << '\n';
}

std::vector<float> multi_hot(const std::set<std::size_t>& labels, std::size_t vocab_size) {
  if (labels.empty()) throw validation_error("label set is empty");
  std::vector<float> bits(vocab_size, 0.0f);
  for (std::size_t i : labels) {
    if (i >= vocab_size)
      throw validation_error("label index " + std::to_string(i) + " out of range for vocabulary of " +
                             std::to_string(vocab_size));
    bits[i] = 1.0f;
  }
  return bits;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Manifest load_manifest(const std::string& manifest_path, const std::string& vocab_path) {
  LabelVocabulary vocab = LabelVocabulary::load(vocab_path);
  std::ifstream f(manifest_path);
  if (!f) throw validation_error("manifest '" + manifest_path + "': cannot open");
  const std::string audio_dir = (fs::path(manifest_path).parent_path() / "audio").string();

  std::vector<ClipRecord> records;
  std::set<std::string> seen;
  std::string line;
  std::size_t row = 0;
  while (std::getline(f, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (row == 1 && line == "clip_id,labels,split") continue;
    const auto fields = split_on(line, ',');
    if (fields.size() != 3)
      throw validation_error("manifest '" + manifest_path + "' row " + std::to_string(row) +
                             ": expected 3 comma-separated fields, got " +
                             std::to_string(fields.size()));
    ClipRecord rec;
    rec.clip_id = fields[0];
    if (rec.clip_id.empty())
      throw validation_error("manifest '" + manifest_path + "' row " + std::to_string(row) +
                             ": empty clip_id");
    if (!seen.insert(rec.clip_id).second)
      throw validation_error("manifest '" + manifest_path + "' row " + std::to_string(row) +
                             ": duplicate clip_id '" + rec.clip_id + "'");
    for (const auto& name : split_on(fields[1], ';')) {
      if (name.empty())
        throw validation_error("manifest '" + manifest_path + "' row " + std::to_string(row) +
                               ": empty label name");
      if (!vocab.contains(name))
        throw validation_error("manifest '" + manifest_path + "' row " + std::to_string(row) +
                               ": unknown label '" + name + "'");
      rec.labels.insert(vocab.index(name));
    }
    if (rec.labels.empty())
      throw validation_error("manifest '" + manifest_path + "' row " + std::to_string(row) +
                             ": no labels");
    rec.split = split_from_name(fields[2]);
    rec.source = audio_dir + "/" + rec.clip_id + ".wav";
    records.push_back(std::move(rec));
  }
  return Manifest{std::move(vocab), std::move(records)};
}

std::vector<ClipRecord> records_for_split(const std::vector<ClipRecord>& records, Split s) {
  std::vector<ClipRecord> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Decode + chunk
// ---------------------------------------------------------------------------

AudioClip decode_and_resample(const ClipRecord& rec) {
  AudioClip clip = read_wav(rec.source);
  if (clip.sample_rate != kSampleRate) {
    clip.samples = resample(clip.samples, clip.sample_rate, kSampleRate);
    clip.sample_rate = kSampleRate;
  }
  for (float& v : clip.samples) {
    if (!std::isfinite(v))
      throw validation_error("clip '" + rec.clip_id + "': non-finite sample after decode");
    v = std::clamp(v, -1.0f, 1.0f);
  }
  return clip;
}

std::vector<Chunk> chunk_clip(const AudioClip& clip, const ClipRecord& rec,
                              std::size_t vocab_size) {
  if (clip.sample_rate != kSampleRate)
    throw validation_error("clip '" + rec.clip_id + "': expected 16000 Hz, got " +
                           std::to_string(clip.sample_rate));
  const std::size_t n = clip.samples.size();
  if (n == 0) throw validation_error("clip '" + rec.clip_id + "' is empty");

  const std::size_t full = n / kChunkSamples;
  const std::size_t rem = n % kChunkSamples;
  std::size_t count = full + (rem >= kChunkSamples / 2 ? 1 : 0);
  if (count == 0) count = 1;  // short clips always yield one padded chunk

  const std::vector<float> target = multi_hot(rec.labels, vocab_size);
  std::vector<Chunk> chunks;
  chunks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Chunk c;
    c.clip_id = rec.clip_id;
    c.chunk_index = static_cast<std::uint32_t>(i);
    c.samples.assign(kChunkSamples, 0.0f);
    const std::size_t start = i * kChunkSamples;
    const std::size_t take = std::min<std::size_t>(kChunkSamples, n - start);
    std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(start), take,
                c.samples.begin());
    c.target = target;
    chunks.push_back(std::move(c));
  }
  return chunks;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kNfft = 1024;
constexpr std::size_t kNMel = 40;
constexpr double kPitchFmax = 7600.0;   // top harmonic for pitch-coded combs
constexpr double kTimbreF0 = 98.0;      // shared fundamental of timbre classes
constexpr double kTimbreFmax = 620.0;   // band-limit of timbre envelopes

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> hann_periodic(std::size_t len) {
  std::vector<double> w(len);
  for (std::size_t i = 0; i < len; ++i)
    w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(len)));
  return w;
}

/// Dense area-normalized mel filterbank, [40][513].
std::vector<std::vector<double>> mel_bank() {
  const double mel_hi = hz_to_mel(8000.0);
  std::vector<double> edges(kNMel + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(kNMel + 1));
  std::vector<std::vector<double>> fb(kNMel, std::vector<double>(kNfft / 2 + 1, 0.0));
  for (std::size_t i = 0; i < kNMel; ++i) {
    const double lo = edges[i], cen = edges[i + 1], hi = edges[i + 2];
    for (std::size_t k = 0; k <= kNfft / 2; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / kNfft;
      const double w = std::min((f - lo) / (cen - lo), (hi - f) / (hi - cen));
      fb[i][k] = std::max(0.0, w) * 2.0 / (hi - lo);
    }
  }
  return fb;
}

/// |DTFT of the periodic Hann window|^2 at a frequency offset in Hz.
double hann_dtft_power(const std::vector<double>& win, double delta_hz) {
  const double om = 2.0 * M_PI * delta_hz / kSampleRate;
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < win.size(); ++i) {
    const double ph = om * static_cast<double>(i);
    re += win[i] * std::cos(ph);
    im -= win[i] * std::sin(ph);
  }
  return re * re + im * im;
}

/// Response of every mel band to a unit-amplitude tone at each frequency,
/// including spectral leakage over +-6 FFT bins. [40][freqs.size()]
std::vector<std::vector<double>> tone_band_response(const std::vector<std::vector<double>>& fb,
                                                    const std::vector<double>& win,
                                                    const std::vector<double>& freqs) {
  std::vector<std::vector<double>> r(kNMel, std::vector<double>(freqs.size(), 0.0));
  for (std::size_t j = 0; j < freqs.size(); ++j) {
    const double f = freqs[j];
    const long kc = std::lround(f / kSampleRate * kNfft);
    const std::size_t k0 = static_cast<std::size_t>(std::max(0L, kc - 6));
    const std::size_t k1 = static_cast<std::size_t>(std::min<long>(kNfft / 2, kc + 6));
    for (std::size_t k = k0; k <= k1; ++k) {
      const double bf = static_cast<double>(k) * kSampleRate / kNfft;
      const double leak = hann_dtft_power(win, bf - f) * 0.25;
      for (std::size_t i = 0; i < kNMel; ++i) r[i][j] += fb[i][k] * leak;
    }
  }
  return r;
}

double envelope_common(double f) { return 1.0 / (1.0 + (f / 1800.0) * (f / 1800.0)) + 0.12; }

/// Distinct band-limited shapes for the timbre family (~10 dB dynamic range).
double envelope_timbre(std::size_t j, double f) {
  const double u = f / kTimbreFmax;
  switch (j) {
    case 0: return 0.35 + 0.65 * u;
    case 1: return 1.0 - 0.65 * u;
    case 2: return 0.35 + 0.65 * std::exp(-0.5 * std::pow((f - 300.0) / 110.0, 2.0));
    case 3: return 1.0 - 0.62 * std::exp(-0.5 * std::pow((f - 320.0) / 130.0, 2.0));
    default: {
      const double cen = 240.0 + 40.0 * static_cast<double>(j);
      const double wid = 100.0 + 8.0 * static_cast<double>(j);
      const double bump = std::exp(-0.5 * std::pow((f - cen) / wid, 2.0));
      return (j % 2 == 0) ? 0.35 + 0.6 * bump : 1.0 - 0.6 * bump;
    }
  }
}

/// Mel-band power profile of the shared envelope, sampled by a dense comb.
std::vector<double> reference_band_profile(const std::vector<std::vector<double>>& fb,
                                           const std::vector<double>& win) {
  std::vector<double> freqs;
  for (double f = 35.0; f < kPitchFmax; f += 15.0) freqs.push_back(f);
  const auto r = tone_band_response(fb, win, freqs);
  std::vector<double> b(kNMel, 0.0);
  for (std::size_t i = 0; i < kNMel; ++i) {
    for (std::size_t j = 0; j < freqs.size(); ++j)
      b[i] += r[i][j] * std::pow(envelope_common(freqs[j]), 2.0);
    b[i] *= 15.0 / 45.0;  // line-density scale: dense probe comb vs ~1/45 Hz harmonics
  }
  return b;
}

struct HarmonicSet {
  std::vector<double> freqs;
  std::vector<double> amps;
};

/// Multiplicative (Richardson-Lucy style) fit of harmonic powers so the comb
/// reproduces the reference mel-band profile despite differing line spacing.
HarmonicSet matched_pitch_comb(double f0, const std::vector<double>& b_target,
                               const std::vector<std::vector<double>>& fb,
                               const std::vector<double>& win) {
  HarmonicSet hs;
  for (std::size_t m = 1; static_cast<double>(m) * f0 <= kPitchFmax; ++m)
    hs.freqs.push_back(static_cast<double>(m) * f0);
  const auto r = tone_band_response(fb, win, hs.freqs);
  const std::size_t h = hs.freqs.size();
  std::vector<double> p(h);
  for (std::size_t j = 0; j < h; ++j) p[j] = std::pow(envelope_common(hs.freqs[j]), 2.0);
  std::vector<double> s(kNMel), num(h), den(h);
  for (int iter = 0; iter < 400; ++iter) {
    for (std::size_t i = 0; i < kNMel; ++i) {
      s[i] = 0.0;
      for (std::size_t j = 0; j < h; ++j) s[i] += r[i][j] * p[j];
      s[i] = std::max(s[i], 1e-12);
    }
    for (std::size_t j = 0; j < h; ++j) {
      num[j] = den[j] = 0.0;
      for (std::size_t i = 0; i < kNMel; ++i) {
        num[j] += r[i][j] * b_target[i];
        den[j] += r[i][j] * s[i];
      }
      p[j] *= num[j] / std::max(den[j], 1e-12);
    }
  }
  hs.amps.resize(h);
  for (std::size_t j = 0; j < h; ++j) hs.amps[j] = std::sqrt(p[j]);
  return hs;
}

double pitch_fundamental(std::size_t i) {
  static const double base[4] = {40.8, 43.6, 46.8, 50.5};
  if (i < 4) return base[i];
  return 50.5 * std::pow(1.08, static_cast<double>(i - 3));
}

/// Harmonic comb with per-clip detune, random phases, slow amplitude
/// modulation, and a touch of noise; peak-normalized to 1.
std::vector<double> build_tone(const HarmonicSet& hs, std::mt19937& rng, std::size_t n) {
  std::uniform_real_distribution<double> ujit(-0.008, 0.008);
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> urate(0.5, 2.0);

  const double jit = 1.0 + ujit(rng);
  std::vector<double> sig(n, 0.0);
  for (std::size_t hIdx = 0; hIdx < hs.freqs.size(); ++hIdx) {
    const double phase = uphase(rng);
    const double w = 2.0 * M_PI * hs.freqs[hIdx] * jit / kSampleRate;
    // rotating-phasor oscillator: sin(w i + phase) = Im(e^{i phase} (e^{i w})^i)
    double cr = std::cos(phase), ci = std::sin(phase);
    const double rr = std::cos(w), ri = std::sin(w);
    const double a = hs.amps[hIdx];
    for (std::size_t i = 0; i < n; ++i) {
      sig[i] += a * ci;
      const double nr = cr * rr - ci * ri;
      ci = cr * ri + ci * rr;
      cr = nr;
    }
  }
  const double rate = urate(rng);
  const double am_phase = uphase(rng);
  for (std::size_t i = 0; i < n; ++i)
    sig[i] *= 0.6 + 0.4 * std::sin(2.0 * M_PI * rate * static_cast<double>(i) / kSampleRate +
                                   am_phase);
  double peak = 0.0;
  for (double v : sig) peak = std::max(peak, std::abs(v));
  std::normal_distribution<double> noise(0.0, 2e-4 * peak);
  for (double& v : sig) v += noise(rng);
  peak = 0.0;
  for (double v : sig) peak = std::max(peak, std::abs(v));
  for (double& v : sig) v /= peak;
  return sig;
}

std::vector<float> finalize_clip(std::vector<double> sig, std::mt19937& rng) {
  std::uniform_real_distribution<double> udb(-12.0, 0.0);
  const double gain = 0.7 * std::pow(10.0, udb(rng) / 20.0);
  std::vector<float> out(sig.size());
  for (std::size_t i = 0; i < sig.size(); ++i) out[i] = static_cast<float>(sig[i] * gain);
  return out;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const std::string& out_dir, std::uint32_t seed,
                                          std::size_t n_classes, std::size_t clips_per_class,
                                          double seconds) {
  if (n_classes < 4 || n_classes % 2 != 0)
    throw validation_error("n_classes must be even and at least 4, got " +
                           std::to_string(n_classes));
  if (clips_per_class < 1) throw validation_error("clips_per_class must be positive");
  if (seconds <= 0.0) throw validation_error("clip length must be positive");

  const std::size_t half = n_classes / 2;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < half; ++i) names.push_back("pitch_" + std::to_string(i));
  for (std::size_t j = 0; j < half; ++j) names.push_back("timbre_" + std::to_string(j));
  LabelVocabulary vocab(names);

  fs::create_directories(fs::path(out_dir) / "audio");
  const std::string audio_dir = (fs::path(out_dir) / "audio").string();

  // fixed per-class harmonic content (no RNG involved)
  const auto fb = mel_bank();
  const auto win = hann_periodic(kNfft);
  const auto b_target = reference_band_profile(fb, win);
  std::vector<HarmonicSet> comb(n_classes);
  for (std::size_t i = 0; i < half; ++i)
    comb[i] = matched_pitch_comb(pitch_fundamental(i), b_target, fb, win);
  for (std::size_t j = 0; j < half; ++j) {
    HarmonicSet hs;
    for (std::size_t m = 1; static_cast<double>(m) * kTimbreF0 <= kTimbreFmax; ++m) {
      hs.freqs.push_back(static_cast<double>(m) * kTimbreF0);
      hs.amps.push_back(envelope_timbre(j, hs.freqs.back()));
    }
    comb[half + j] = std::move(hs);
  }

  const std::size_t n_samples = static_cast<std::size_t>(seconds * kSampleRate);
  const std::size_t n_train = clips_per_class * 70 / 100;
  const std::size_t n_val = clips_per_class * 15 / 100;

  std::mt19937 rng(seed);
  std::vector<ClipRecord> records;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t idx = 0; idx < clips_per_class; ++idx) {
      char suffix[32];
      std::snprintf(suffix, sizeof(suffix), "_%03zu", idx);
      ClipRecord rec;
      rec.clip_id = vocab.name(c) + suffix;
      rec.source = audio_dir + "/" + rec.clip_id + ".wav";
      rec.labels = {c};
      rec.split = idx < n_train ? Split::train
                 : idx < n_train + n_val ? Split::val
                                         : Split::test;
      std::vector<float> samples;
      if (idx % 5 == 4) {
        // mixed clip: add a partner class from the other family
        const std::size_t other_base = c < half ? half : 0;
        std::uniform_int_distribution<std::size_t> upartner(0, half - 1);
        const std::size_t partner = other_base + upartner(rng);
        rec.labels.insert(partner);
        auto a = build_tone(comb[c], rng, n_samples);
        const auto b = build_tone(comb[partner], rng, n_samples);
        double peak = 0.0;
        for (std::size_t i = 0; i < n_samples; ++i) {
          a[i] = 0.5 * (a[i] + b[i]);
          peak = std::max(peak, std::abs(a[i]));
        }
        for (double& v : a) v /= peak;
        samples = finalize_clip(std::move(a), rng);
      } else {
        samples = finalize_clip(build_tone(comb[c], rng, n_samples), rng);
      }
      write_wav(rec.source, samples, kSampleRate);
      records.push_back(std::move(rec));
    }
  }

  const std::string vocab_path = (fs::path(out_dir) / "vocab.txt").string();
  const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  vocab.save(vocab_path);
  {
    std::ofstream mf(manifest_path, std::ios::trunc);
    if (!mf)
      throw Error("manifest '" + manifest_path + "': cannot open for writing",
                  Error::Kind::runtime);
    mf << "clip_id,labels,split\n";
    for (const auto& r : records) {
      mf << r.clip_id << ',';
      bool first = true;
      for (std::size_t l : r.labels) {
        if (!first) mf << ';';
        mf << vocab.name(l);
        first = false;
      }
      mf << ',' << split_name(r.split) << '\n';
    }
  }
  return SyntheticCorpus{std::move(vocab), std::move(records), manifest_path, vocab_path};
}

}  // namespace pf
