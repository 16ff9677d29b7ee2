#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "opcc/common.hpp"
#include "opcc/context.hpp"
#include "opcc/math.hpp"

namespace opcc {

struct ModelConfig {
  int d_occ = 128;  // occupancy embedding width
  int d_lvl = 6;    // level embedding width
  int d_oct = 4;    // octant embedding width
  int n_ancestors = 4;  // context slots per row, also the head count
  int max_level = 16;   // deepest tree level the level table covers
  int d_head = 32;      // per-head query/key/value width
  int d_ff = 512;       // feed-forward hidden width
  int d_mlp = 512;      // output head hidden width
  int n_layers = 2;
  int window = 1024;  // default N
  int step = 1024;    // default N0

  int d_embed() const { return d_occ + d_lvl + d_oct; }
  int d_model() const { return n_ancestors * d_embed(); }
  int n_heads() const { return n_ancestors; }

  void validate() const {
    if (d_occ < 1 || d_lvl < 1 || d_oct < 1)
      throw Error("config: embedding widths must be positive");
    if (n_ancestors < 1 || n_ancestors > FeatureRow::kMaxSlots)
      throw Error("config: n_ancestors out of range");
    if (max_level < 1 || max_level > 30)
      throw Error("config: max_level out of range");
    if (d_head < 1 || d_ff < 1 || d_mlp < 1)
      throw Error("config: layer widths must be positive");
    if (n_layers < 1 || n_layers > 8)
      throw Error("config: n_layers out of range");
    if (window < 1 || step < 1 || step > window)
      throw Error("config: need 1 <= step <= window");
  }
};

struct Tensor {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<double> v;

  double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const {
    return v.data() + static_cast<size_t>(r) * cols;
  }
  size_t size() const { return v.size(); }
};

struct FTensor {
  int rows = 0, cols = 0;
  std::vector<float> v;

  const float* row(int r) const {
    return v.data() + static_cast<size_t>(r) * cols;
  }
};

// Tensor ordering is part of the file format; index arithmetic below mirrors
// the order produced here.
struct TensorShape {
  std::string name;
  int rows, cols;
};

inline std::vector<TensorShape> tensor_layout(const ModelConfig& c) {
  std::vector<TensorShape> s;
  const int de = c.d_embed(), dm = c.d_model();
  s.push_back({"emb_occ", 256, c.d_occ});
  s.push_back({"emb_lvl", c.max_level + 1, c.d_lvl});
  s.push_back({"emb_oct", 9, c.d_oct});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    s.push_back({p + "ln_att.g", 1, dm});
    s.push_back({p + "ln_att.b", 1, dm});
    for (int h = 0; h < c.n_ancestors; ++h) {
      const std::string q = p + "h" + std::to_string(h) + ".";
      s.push_back({q + "wq", c.d_head, de});
      s.push_back({q + "bq", 1, c.d_head});
      s.push_back({q + "wk", c.d_head, de});
      s.push_back({q + "bk", 1, c.d_head});
      s.push_back({q + "wv", c.d_head, de});
      s.push_back({q + "bv", 1, c.d_head});
    }
    s.push_back({p + "att_out.w", dm, c.n_ancestors * c.d_head});
    s.push_back({p + "att_out.b", 1, dm});
    s.push_back({p + "ln_ff.g", 1, dm});
    s.push_back({p + "ln_ff.b", 1, dm});
    s.push_back({p + "ff1.w", c.d_ff, dm});
    s.push_back({p + "ff1.b", 1, c.d_ff});
    s.push_back({p + "ff2.w", dm, c.d_ff});
    s.push_back({p + "ff2.b", 1, dm});
  }
  s.push_back({"head.ln.g", 1, dm});
  s.push_back({"head.ln.b", 1, dm});
  s.push_back({"head.fc1.w", c.d_mlp, dm});
  s.push_back({"head.fc1.b", 1, c.d_mlp});
  s.push_back({"head.fc2.w", 255, c.d_mlp});
  s.push_back({"head.fc2.b", 1, 255});
  return s;
}

// Index helpers into the flat tensor vector; must match tensor_layout.
struct ParamIndex {
  int n_ancestors, n_layers;
  explicit ParamIndex(const ModelConfig& c)
      : n_ancestors(c.n_ancestors), n_layers(c.n_layers) {}

  static constexpr int kEmbOcc = 0, kEmbLvl = 1, kEmbOct = 2;
  int per_layer() const { return 6 * n_ancestors + 10; }
  int layer_base(int l) const { return 3 + l * per_layer(); }
  int ln_att_g(int l) const { return layer_base(l) + 0; }
  int ln_att_b(int l) const { return layer_base(l) + 1; }
  int head_q(int l, int h) const { return layer_base(l) + 2 + 6 * h + 0; }
  int head_qb(int l, int h) const { return layer_base(l) + 2 + 6 * h + 1; }
  int head_k(int l, int h) const { return layer_base(l) + 2 + 6 * h + 2; }
  int head_kb(int l, int h) const { return layer_base(l) + 2 + 6 * h + 3; }
  int head_v(int l, int h) const { return layer_base(l) + 2 + 6 * h + 4; }
  int head_vb(int l, int h) const { return layer_base(l) + 2 + 6 * h + 5; }
  int att_w(int l) const { return layer_base(l) + 2 + 6 * n_ancestors + 0; }
  int att_b(int l) const { return layer_base(l) + 2 + 6 * n_ancestors + 1; }
  int ln_ff_g(int l) const { return layer_base(l) + 2 + 6 * n_ancestors + 2; }
  int ln_ff_b(int l) const { return layer_base(l) + 2 + 6 * n_ancestors + 3; }
  int ff1_w(int l) const { return layer_base(l) + 2 + 6 * n_ancestors + 4; }
  int ff1_b(int l) const { return layer_base(l) + 2 + 6 * n_ancestors + 5; }
  int ff2_w(int l) const { return layer_base(l) + 2 + 6 * n_ancestors + 6; }
  int ff2_b(int l) const { return layer_base(l) + 2 + 6 * n_ancestors + 7; }
  int head_base() const { return 3 + n_layers * per_layer(); }
  int out_ln_g() const { return head_base() + 0; }
  int out_ln_b() const { return head_base() + 1; }
  int out_fc1_w() const { return head_base() + 2; }
  int out_fc1_b() const { return head_base() + 3; }
  int out_fc2_w() const { return head_base() + 4; }
  int out_fc2_b() const { return head_base() + 5; }
  int count() const { return head_base() + 6; }
};

struct ModelParams {
  ModelConfig cfg;
  std::vector<Tensor> t;
};

inline ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  Rng rng(seed);
  for (const auto& sh : tensor_layout(cfg)) {
    Tensor t;
    t.name = sh.name;
    t.rows = sh.rows;
    t.cols = sh.cols;
    t.v.resize(static_cast<size_t>(sh.rows) * sh.cols);
    const bool is_gamma = sh.name.ends_with(".g");
    const bool is_bias = sh.name.ends_with(".b") || sh.name.ends_with("bq") ||
                         sh.name.ends_with("bk") || sh.name.ends_with("bv");
    if (is_gamma) {
      for (auto& x : t.v) x = 1.0;
    } else if (is_bias) {
      // zeros
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sh.cols));
      for (auto& x : t.v) x = rng.uniform(-bound, bound);
    }
    p.t.push_back(std::move(t));
  }
  return p;
}

namespace detail {

constexpr char kModelMagic[8] = {'O', 'P', 'C', 'C', 'M', 'D', 'L', '1'};
constexpr uint32_t kModelVersion = 1;

inline uint64_t fnv1a(const uint8_t* data, size_t n,
                      uint64_t h = 1469598103934665603ull) {
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

struct ByteWriter {
  std::vector<uint8_t> buf;
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u16(uint16_t v) {
    uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
    bytes(b, 2);
  }
  void u32(uint32_t v) {
    uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    bytes(b, 8);
  }
  void f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void f64(double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    u64(u);
  }
};

struct ByteReader {
  const uint8_t* p;
  size_t n, pos = 0;
  std::string src;
  ByteReader(const uint8_t* data, size_t size, std::string source)
      : p(data), n(size), src(std::move(source)) {}
  void need(size_t k) {
    if (pos + k > n)
      throw ParseError(src + ": truncated at byte offset " +
                       std::to_string(pos));
  }
  void bytes(void* out, size_t k) {
    need(k);
    std::memcpy(out, p + pos, k);
    pos += k;
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  double f64() {
    const uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
};

inline void write_config(ByteWriter& w, const ModelConfig& c) {
  const int fields[12] = {c.d_occ, c.d_lvl, c.d_oct,  c.n_ancestors,
                          c.max_level, c.d_head, c.d_ff, c.d_mlp,
                          c.n_layers, c.n_heads(), c.window, c.step};
  for (int f : fields) w.u32(static_cast<uint32_t>(f));
}

inline ModelConfig read_config(ByteReader& r) {
  ModelConfig c;
  c.d_occ = static_cast<int>(r.u32());
  c.d_lvl = static_cast<int>(r.u32());
  c.d_oct = static_cast<int>(r.u32());
  c.n_ancestors = static_cast<int>(r.u32());
  c.max_level = static_cast<int>(r.u32());
  c.d_head = static_cast<int>(r.u32());
  c.d_ff = static_cast<int>(r.u32());
  c.d_mlp = static_cast<int>(r.u32());
  c.n_layers = static_cast<int>(r.u32());
  const uint32_t heads = r.u32();
  c.window = static_cast<int>(r.u32());
  c.step = static_cast<int>(r.u32());
  if (heads != static_cast<uint32_t>(c.n_ancestors))
    throw ParseError(r.src + ": head count must equal ancestor slots");
  c.validate();
  return c;
}

}  // namespace detail

// Model bytes: magic, version, config, tensors as f32 row-major in layout
// order, then an fnv-1a hash of everything before it.
inline std::vector<uint8_t> serialize_model(const ModelParams& p) {
  detail::ByteWriter w;
  w.bytes(detail::kModelMagic, 8);
  w.u32(detail::kModelVersion);
  detail::write_config(w, p.cfg);
  w.u32(static_cast<uint32_t>(p.t.size()));
  for (const auto& t : p.t) {
    w.u16(static_cast<uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(static_cast<uint32_t>(t.rows));
    w.u32(static_cast<uint32_t>(t.cols));
    for (double x : t.v) w.f32(static_cast<float>(x));
  }
  w.u64(detail::fnv1a(w.buf.data(), w.buf.size()));
  return w.buf;
}

// Inference-side copy of the weights. Coding always runs on these f32 values,
// which are bit-identical to what the model file stores.
struct EvalModel {
  ModelConfig cfg;
  std::vector<FTensor> t;
  uint64_t hash = 0;
};

inline EvalModel parse_model(const std::vector<uint8_t>& bytes,
                             const std::string& src) {
  detail::ByteReader r(bytes.data(), bytes.size(), src);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, detail::kModelMagic, 8) != 0)
    throw ParseError(src + ": bad model magic");
  if (r.u32() != detail::kModelVersion)
    throw ParseError(src + ": unsupported model version");
  EvalModel m;
  m.cfg = detail::read_config(r);
  const auto layout = tensor_layout(m.cfg);
  const uint32_t count = r.u32();
  if (count != layout.size())
    throw ParseError(src + ": unexpected tensor count");
  for (const auto& sh : layout) {
    const uint16_t len = r.u16();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    if (name != sh.name)
      throw ParseError(src + ": tensor '" + name + "' out of order, expected '" +
                       sh.name + "'");
    FTensor t;
    t.rows = static_cast<int>(r.u32());
    t.cols = static_cast<int>(r.u32());
    if (t.rows != sh.rows || t.cols != sh.cols)
      throw ParseError(src + ": tensor '" + name + "' has wrong shape");
    t.v.resize(static_cast<size_t>(t.rows) * t.cols);
    for (auto& x : t.v) x = r.f32();
    m.t.push_back(std::move(t));
  }
  const uint64_t stored = r.u64();
  const uint64_t computed = detail::fnv1a(bytes.data(), r.pos - 8);
  if (stored != computed) throw ParseError(src + ": model hash mismatch");
  if (r.pos != r.n) throw ParseError(src + ": trailing bytes");
  m.hash = stored;
  return m;
}

// Round-trips through the byte format so that in-memory evaluation and a
// saved-then-loaded model are the same object.
inline EvalModel snapshot(const ModelParams& p) {
  return parse_model(serialize_model(p), "<memory>");
}

inline void save_model(const std::string& path, const ModelParams& p) {
  const auto bytes = serialize_model(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(path + ": write failed");
}

inline EvalModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open model file");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_model(bytes, path);
}

// Loads the double-precision training view of a model file.
inline ModelParams load_params(const std::string& path) {
  const EvalModel m = load_model(path);
  ModelParams p;
  p.cfg = m.cfg;
  const auto layout = tensor_layout(m.cfg);
  for (size_t i = 0; i < layout.size(); ++i) {
    Tensor t;
    t.name = layout[i].name;
    t.rows = layout[i].rows;
    t.cols = layout[i].cols;
    t.v.assign(m.t[i].v.begin(), m.t[i].v.end());
    p.t.push_back(std::move(t));
  }
  return p;
}

}  // namespace opcc
