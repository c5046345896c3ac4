#include "falcon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "falcon/errors.hpp"

namespace falcon {

namespace {

constexpr char kMagic[8] = {'F', 'A', 'L', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(4))); }
  double f64() { return std::bit_cast<double>(get(8)); }
  void expect(const char* p, std::size_t n) {
    need(n);
    if (std::memcmp(bytes_.data() + pos_, p, n) != 0) fail("bad magic");
    pos_ += n;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_ + ": checkpoint " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated");
  }
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int b = 0; b < bytes; ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

void write_params(Writer& w, const MlpParams& p) {
  for (const auto& layer : p.layers) {
    for (double v : layer.weight.data()) w.f64(v);
    for (double v : layer.bias) w.f64(v);
  }
}

void read_params(Reader& r, MlpParams& p) {
  for (auto& layer : p.layers) {
    for (double& v : layer.weight.data()) v = r.f64();
    for (double& v : layer.bias) v = r.f64();
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const ClassifierState& s = ckpt.state;
  if (!s.theta_ema.same_shape(s.theta) || !s.velocity.same_shape(s.theta)) {
    throw DimensionError("serialize_checkpoint: theta, theta_ema and velocity shapes differ");
  }
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(s.seed);
  w.u64(s.step);
  w.u32(static_cast<std::uint32_t>(s.theta.layers.size()));
  for (const auto& layer : s.theta.layers) {
    w.u64(layer.weight.rows());
    w.u64(layer.weight.cols());
  }
  write_params(w, s.theta);
  write_params(w, s.theta_ema);
  write_params(w, s.velocity);
  w.u32(static_cast<std::uint32_t>(ckpt.relations.size()));
  for (const auto& m : ckpt.relations) {
    w.u64(m.k_f());
    w.u64(m.k_c());
    for (int p : m.parents()) w.i32(p);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  r.expect(kMagic, sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("version " + std::to_string(version) + " unsupported");
  Checkpoint ckpt;
  ckpt.state.seed = r.u64();
  ckpt.state.step = r.u64();
  const std::uint32_t layers = r.u32();
  if (layers == 0 || layers > 1024) r.fail("implausible layer count");
  MlpParams shape;
  std::uint64_t prev_out = 0;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24)) r.fail("implausible layer shape");
    if (l > 0 && cols != prev_out) r.fail("layer shapes do not compose");
    prev_out = rows;
    shape.layers.push_back({DenseMatrix(rows, cols), std::vector<double>(rows, 0.0)});
  }
  ckpt.state.theta = shape;
  ckpt.state.theta_ema = shape;
  ckpt.state.velocity = shape;
  read_params(r, ckpt.state.theta);
  read_params(r, ckpt.state.theta_ema);
  read_params(r, ckpt.state.velocity);
  const std::uint32_t n_rel = r.u32();
  for (std::uint32_t k = 0; k < n_rel; ++k) {
    const std::uint64_t k_f = r.u64();
    const std::uint64_t k_c = r.u64();
    if (k_f > (1u << 24) || k_c == 0 || k_c > (1u << 24)) r.fail("implausible relation shape");
    std::vector<int> parents(k_f);
    for (auto& p : parents) p = r.i32();
    try {
      ckpt.relations.emplace_back(std::move(parents), k_c);
    } catch (const InfeasibleError& e) {
      r.fail(std::string("invalid relation matrix: ") + e.what());
    }
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str(), path);
}

}  // namespace falcon
