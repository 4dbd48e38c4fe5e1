#include "pf/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "pf/common.hpp"

namespace pf {

namespace {

void put_u32(std::string& b, std::uint32_t v) {
  b.append(reinterpret_cast<const char*>(&v), 4);
}

void put_bytes(std::string& b, const void* p, std::size_t n) {
  b.append(static_cast<const char*>(p), n);
}

struct Cursor {
  const unsigned char* p;
  std::size_t size;
  std::size_t pos = 0;
  std::string what;  // file description for errors

  void need(std::size_t n, const char* field) const {
    if (pos + n > size)
      throw validation_error(what + ": truncated " + field + " at byte " + std::to_string(pos));
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v;
    std::memcpy(&v, p + pos, 4);
    pos += 4;
    return v;
  }
  std::uint8_t u8(const char* field) {
    need(1, field);
    return p[pos++];
  }
  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
  }
  std::vector<float> floats(std::size_t n, const char* field) {
    need(n * 4, field);
    std::vector<float> v(n);
    std::memcpy(v.data(), p + pos, n * 4);
    pos += n * 4;
    return v;
  }
};

std::vector<unsigned char> slurp(const std::string& path, const char* kind) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw validation_error(std::string(kind) + " '" + path + "': cannot open");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + tmp + "' for writing", Error::Kind::runtime);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write failed for '" + tmp + "'", Error::Kind::runtime);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error("cannot rename '" + tmp + "' to '" + path + "'", Error::Kind::runtime);
}

}  // namespace

const char* view_name(View v) {
  switch (v) {
    case View::pitch: return "pitch";
    case View::timbre: return "timbre";
    case View::waveform: return "waveform";
    case View::neuralogram: return "neuralogram";
  }
  throw validation_error("unknown view tag " + std::to_string(static_cast<int>(v)));
}

View view_from_name(const std::string& name) {
  for (View v : kAllViews)
    if (name == view_name(v)) return v;
  throw validation_error("unknown view '" + name + "' (expected pitch, timbre, waveform, or neuralogram)");
}

// ---------------------------------------------------------------------------
// feature cache
// ---------------------------------------------------------------------------

struct FeatureFileWriter::Impl {
  std::ofstream f;
  std::string path;
};

FeatureFileWriter::FeatureFileWriter(const std::string& path) : impl_(new Impl) {
  impl_->path = path;
  impl_->f.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->f)
    throw Error("feature cache '" + path + "': cannot open for writing", Error::Kind::runtime);
  impl_->f.write("PFV1", 4);
}

FeatureFileWriter::~FeatureFileWriter() { close(); }

void FeatureFileWriter::add(const FeatureRecord& rec) {
  if (rec.data.rank() != 2)
    throw validation_error("feature cache: record for clip '" + rec.clip_id +
                           "' must be 2-d, got " + shape_str(rec.data.shape));
  std::string b;
  put_u32(b, static_cast<std::uint32_t>(rec.clip_id.size()));
  put_bytes(b, rec.clip_id.data(), rec.clip_id.size());
  put_u32(b, rec.chunk_index);
  b.push_back(static_cast<char>(rec.view));
  put_u32(b, static_cast<std::uint32_t>(rec.data.shape[0]));
  put_u32(b, static_cast<std::uint32_t>(rec.data.shape[1]));
  put_bytes(b, rec.data.data.data(), rec.data.numel() * 4);
  impl_->f.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!impl_->f)
    throw Error("feature cache '" + impl_->path + "': write failed", Error::Kind::runtime);
}

void FeatureFileWriter::close() {
  if (impl_ && impl_->f.is_open()) impl_->f.close();
}

void write_feature_file(const std::string& path, const std::vector<FeatureRecord>& records) {
  FeatureFileWriter w(path);
  for (const auto& r : records) w.add(r);
}

std::vector<FeatureRecord> read_feature_file(const std::string& path) {
  const auto buf = slurp(path, "feature cache");
  Cursor c{buf.data(), buf.size(), 0, "feature cache '" + path + "'"};
  if (c.bytes(4, "magic") != "PFV1")
    throw validation_error(c.what + ": bad magic (not a feature cache)");
  std::vector<FeatureRecord> out;
  while (c.pos < c.size) {
    FeatureRecord r;
    const std::uint32_t idlen = c.u32("clip_id length");
    r.clip_id = c.bytes(idlen, "clip_id");
    r.chunk_index = c.u32("chunk_index");
    const std::uint8_t tag = c.u8("view tag");
    if (tag > 3) throw validation_error(c.what + ": invalid view tag " + std::to_string(tag));
    r.view = static_cast<View>(tag);
    const std::uint32_t rows = c.u32("rows");
    const std::uint32_t cols = c.u32("cols");
    r.data = TensorF({rows, cols}, c.floats(static_cast<std::size_t>(rows) * cols, "payload"));
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CRC32 and checkpoints
// ---------------------------------------------------------------------------

std::uint32_t crc32_ieee(const void* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string b;
  put_bytes(b, "PFCK", 4);
  put_u32(b, 1);  // format version
  put_u32(b, static_cast<std::uint32_t>(ck.config_json.size()));
  put_bytes(b, ck.config_json.data(), ck.config_json.size());
  for (const auto& [name, t] : ck.tensors) {
    put_u32(b, static_cast<std::uint32_t>(name.size()));
    put_bytes(b, name.data(), name.size());
    put_u32(b, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) put_u32(b, static_cast<std::uint32_t>(d));
    put_bytes(b, t.data.data(), t.numel() * 4);
  }
  put_u32(b, crc32_ieee(b.data(), b.size()));
  write_atomic(path, b);
}

Checkpoint read_checkpoint(const std::string& path) {
  const auto buf = slurp(path, "checkpoint");
  Cursor c{buf.data(), buf.size(), 0, "checkpoint '" + path + "'"};
  if (buf.size() < 8 || c.bytes(4, "magic") != "PFCK")
    throw validation_error(c.what + ": bad magic (not a checkpoint)");
  {
    std::uint32_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
    const std::uint32_t actual = crc32_ieee(buf.data(), buf.size() - 4);
    if (stored != actual)
      throw validation_error(c.what + ": CRC mismatch (file corrupt)");
  }
  const std::uint32_t version = c.u32("format version");
  if (version != 1)
    throw validation_error(c.what + ": unsupported format version " + std::to_string(version));
  Checkpoint ck;
  ck.config_json = c.bytes(c.u32("config length"), "config blob");
  const std::size_t body_end = buf.size() - 4;
  while (c.pos < body_end) {
    const std::string name = c.bytes(c.u32("tensor name length"), "tensor name");
    const std::uint32_t rank = c.u32("tensor rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = c.u32("tensor dim");
      numel *= shape[d];
    }
    TensorF t(shape, c.floats(numel, "tensor data"));
    if (!ck.tensors.emplace(name, std::move(t)).second)
      throw validation_error(c.what + ": duplicate tensor '" + name + "'");
  }
  return ck;
}

}  // namespace pf
