#include "sdn/weight_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

namespace sdn {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void text(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  void tensor(const Tensor& t) {
    u8(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < t.size(); ++i) f32(t[i]);
  }

  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string text(std::size_t n) {
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  Tensor tensor() {
    const int rank = u8();
    if (rank < 1 || rank > 4) throw FormatError("weight file: tensor rank " + std::to_string(rank));
    Shape shape;
    for (int i = 0; i < rank; ++i) {
      const std::uint32_t d = u32();
      if (d < 1 || d > (1u << 28)) throw FormatError("weight file: tensor dimension " + std::to_string(d));
      shape.push_back(static_cast<int>(d));
    }
    if (static_cast<std::size_t>(shape_size(shape)) * 4 > size_ - pos_)
      throw TruncatedError("weight file: tensor payload runs past end of file");
    Tensor t(shape);
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = f32();
    return t;
  }

  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) throw TruncatedError("weight file ends unexpectedly");
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t le(int n) {
    const auto* p = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void write_layers(Writer& w, const WeightStore& ws) {
  w.u32(static_cast<std::uint32_t>(ws.layers.size()));
  for (const auto& layer : ws.layers) {
    w.u16(static_cast<std::uint16_t>(layer.id.size()));
    w.text(layer.id);
    if (const auto* conv = std::get_if<ConvParams>(&layer.params)) {
      w.u8(0);
      w.u32(static_cast<std::uint32_t>(conv->stride));
      w.u32(static_cast<std::uint32_t>(conv->padding));
      w.tensor(conv->weights);
      w.tensor(conv->bias);
    } else {
      const auto& fc = std::get<FcParams>(layer.params);
      w.u8(1);
      w.tensor(fc.weights);
      w.tensor(fc.bias);
    }
  }
}

WeightStore read_layers(Reader& r, const NetworkSpec& spec) {
  WeightStore ws{spec, {}};
  const std::uint32_t count = r.u32();
  if (count > 64) throw FormatError("weight file: implausible layer count " + std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    BasicLayer<float> layer;
    layer.id = r.text(r.u16());
    const std::uint8_t kind = r.u8();
    if (kind == 0) {
      ConvParams p;
      p.stride = static_cast<int>(r.u32());
      p.padding = static_cast<int>(r.u32());
      p.weights = r.tensor();
      p.bias = r.tensor();
      layer.params = std::move(p);
    } else if (kind == 1) {
      FcParams p;
      p.weights = r.tensor();
      p.bias = r.tensor();
      layer.params = std::move(p);
    } else {
      throw FormatError("weight file: unknown layer kind " + std::to_string(kind));
    }
    ws.layers.push_back(std::move(layer));
  }
  try {
    check_structure(ws);
  } catch (const ShapeError& e) {
    throw SpecMismatchError(std::string("weight file layers disagree with their spec: ") + e.what());
  }
  return ws;
}

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  check_structure(checkpoint.weights);
  if (checkpoint.velocity) check_structure(*checkpoint.velocity);

  std::string manifest = to_manifest(checkpoint.weights.spec);
  manifest += "iteration=" + std::to_string(checkpoint.iteration) + "\n";
  manifest += std::string("velocity=") + (checkpoint.velocity ? "1" : "0") + "\n";

  Writer w;
  w.text("SDNW");
  w.u16(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(manifest.size()));
  w.text(manifest);
  write_layers(w, checkpoint.weights);
  if (checkpoint.velocity) write_layers(w, *checkpoint.velocity);
  w.u32(crc32_of(w.bytes().data(), w.bytes().size()));

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<int> expected_landmarks) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 6) throw TruncatedError("weight file " + path.string() + " is too short");
  if (std::memcmp(bytes.data(), "SDNW", 4) != 0) throw FormatError(path.string() + " is not an SDNW weight file");
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kWeightFormatVersion)
    throw VersionError("weight file " + path.string() + " has format version " + std::to_string(version) +
                       ", expected " + std::to_string(kWeightFormatVersion));
  if (bytes.size() < 10) throw ChecksumError("weight file " + path.string() + " has no checksum");

  const std::size_t body = bytes.size() - 4;
  const std::uint32_t stored = Reader(bytes.data() + body, 4).u32();
  if (stored != crc32_of(bytes.data(), body))
    throw ChecksumError("weight file " + path.string() + " fails its CRC32 check (corrupt or truncated)");

  Reader r(bytes.data() + 6, body - 6);
  const std::string manifest = r.text(r.u32());
  Checkpoint ck;
  NetworkSpec spec;
  try {
    spec = spec_from_manifest(manifest);
    spec.validate();
  } catch (const SpecError& e) {
    throw FormatError(std::string("weight file spec: ") + e.what());
  }
  bool has_velocity = false;
  std::istringstream lines(manifest);
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("iteration=", 0) == 0) ck.iteration = std::stoll(line.substr(10));
    if (line == "velocity=1") has_velocity = true;
  }
  if (expected_landmarks && *expected_landmarks != spec.n_landmarks)
    throw SpecMismatchError("weight file " + path.string() + " is for " + std::to_string(spec.n_landmarks) +
                            " landmarks, expected " + std::to_string(*expected_landmarks));

  ck.weights = read_layers(r, spec);
  if (has_velocity) ck.velocity = read_layers(r, spec);
  if (!r.done()) throw FormatError("weight file " + path.string() + " has trailing bytes");
  return ck;
}

}  // namespace sdn
