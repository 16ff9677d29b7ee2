#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "opcc/attention.hpp"
#include "opcc/context.hpp"
#include "opcc/dist.hpp"
#include "opcc/geometry.hpp"
#include "opcc/model.hpp"
#include "opcc/octree.hpp"
#include "opcc/rangecoder.hpp"

namespace opcc {

// Order-0 adaptive fallback: per-symbol counts, bumped after each coded
// symbol, identically on both sides.
class BaselineModel {
 public:
  BaselineModel() { counts_.fill(1); }

  QuantizedCDF cdf() const {
    Distribution255 p;
    const double inv = 1.0 / static_cast<double>(total_);
    for (int i = 0; i < 255; ++i)
      p[i] = static_cast<double>(counts_[i]) * inv;
    return quantize_dist(p);
  }

  void update(int index) {
    ++counts_[static_cast<size_t>(index)];
    ++total_;
  }

 private:
  std::array<uint32_t, 255> counts_;
  uint64_t total_ = 255;
};

struct StreamHeader {
  bool baseline = false;
  int levels = 0;
  int window = 0;       // N, 0 when baseline
  int n_ancestors = 0;  // K, 0 when baseline
  int step = 0;         // N0, 0 when baseline
  uint64_t node_count = 0;
  uint64_t source_count = 0;
  double qs = 1.0;
  Vec3 offset = {0, 0, 0};
  uint64_t model_hash = 0;
  uint64_t payload_size = 0;
};

namespace detail {

constexpr char kStreamMagic[4] = {'O', 'P', 'C', 'B'};
constexpr uint16_t kStreamVersion = 1;
constexpr size_t kHeaderSize = 88;

inline void write_header(ByteWriter& w, const StreamHeader& h) {
  w.bytes(kStreamMagic, 4);
  w.u16(kStreamVersion);
  w.u16(h.baseline ? 1 : 0);
  w.u32(static_cast<uint32_t>(h.levels));
  w.u32(static_cast<uint32_t>(h.window));
  w.u32(static_cast<uint32_t>(h.n_ancestors));
  w.u32(static_cast<uint32_t>(h.step));
  w.u64(h.node_count);
  w.u64(h.source_count);
  w.f64(h.qs);
  for (int d = 0; d < 3; ++d) w.f64(h.offset[d]);
  w.u64(h.model_hash);
  w.u64(h.payload_size);
}

inline StreamHeader read_header(ByteReader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kStreamMagic, 4) != 0)
    throw ParseError(r.src + ": bad bitstream magic");
  if (r.u16() != kStreamVersion)
    throw ParseError(r.src + ": unsupported bitstream version");
  StreamHeader h;
  const uint16_t flags = r.u16();
  if (flags > 1) throw ParseError(r.src + ": unknown flag bits");
  h.baseline = (flags & 1) != 0;
  h.levels = static_cast<int>(r.u32());
  h.window = static_cast<int>(r.u32());
  h.n_ancestors = static_cast<int>(r.u32());
  h.step = static_cast<int>(r.u32());
  h.node_count = r.u64();
  h.source_count = r.u64();
  h.qs = r.f64();
  for (int d = 0; d < 3; ++d) h.offset[d] = r.f64();
  h.model_hash = r.u64();
  h.payload_size = r.u64();
  if (h.levels < 1 || h.levels > 30)
    throw ParseError(r.src + ": depth out of range");
  if (!h.baseline) {
    if (h.window < 1 || h.step < 1 || h.step > h.window)
      throw ParseError(r.src + ": bad window/step");
    if (h.n_ancestors < 1 || h.n_ancestors > FeatureRow::kMaxSlots)
      throw ParseError(r.src + ": bad ancestor count");
  }
  if (h.node_count == 0) throw ParseError(r.src + ": empty node sequence");
  if (h.payload_size < 8)
    throw ParseError(r.src + ": payload shorter than the coder flush");
  return h;
}

}  // namespace detail

struct EncodeStats {
  uint64_t header_bytes = 0;
  uint64_t payload_bytes = 0;
  double ideal_bits = 0;  // sum of -log2 of the coded quantized probabilities
  uint64_t node_count = 0;
  uint64_t source_count = 0;

  double payload_bits() const { return 8.0 * static_cast<double>(payload_bytes); }
  double total_bits() const {
    return 8.0 * static_cast<double>(header_bytes + payload_bytes);
  }
  double bits_per_node() const {
    return payload_bits() / static_cast<double>(node_count);
  }
  // compressed payload bits divided by the number of input points
  double bpp() const {
    return payload_bits() / static_cast<double>(source_count);
  }
};

struct EncodedStream {
  std::vector<uint8_t> bytes;
  EncodeStats stats;
};

// Attention-model encode. window/step default to the model's configuration.
inline EncodedStream encode_quantized(const QuantizedCloud& q,
                                      const EvalModel& m, int window = 0,
                                      int step = 0) {
  if (window == 0) window = m.cfg.window;
  if (step == 0) step = std::min(m.cfg.step, window);
  if (window < 1 || step < 1 || step > window)
    throw Error("encode: need 1 <= step <= window");
  if (q.levels > m.cfg.max_level)
    throw ModelMismatchError(
        "encode: tree depth exceeds the model's level table");

  const NodeSequence ns = build_octree(q);
  const auto plan =
      plan_windows(static_cast<int64_t>(ns.size()), window, step);

  RangeEncoder enc;
  EncodeStats st;
  st.node_count = ns.size();
  st.source_count = q.source_count;
  WindowEvaluator ev(m);
  for (const auto& w : plan) {
    const ContextWindow cw = build_window(ns, w, m.cfg.n_ancestors);
    ev.reset();
    const int prefix = w.length - w.n_targets;
    for (int j = 0; j < prefix; ++j) ev.add_context_row(cw.rows[j]);
    for (int j = 0; j < w.n_targets; ++j) {
      const Distribution255 dist = ev.predict_target(cw.targets[j]);
      const QuantizedCDF cdf = quantize_dist(dist);
      const int index = cw.symbols[j] - 1;
      enc.encode(cdf, index);
      st.ideal_bits -=
          std::log2(static_cast<double>(cdf.freq(index)) / kFreqTotal);
      ev.add_context_row(cw.rows[prefix + j]);
    }
  }

  StreamHeader h;
  h.baseline = false;
  h.levels = q.levels;
  h.window = window;
  h.n_ancestors = m.cfg.n_ancestors;
  h.step = step;
  h.node_count = ns.size();
  h.source_count = q.source_count;
  h.qs = q.qs;
  h.offset = q.offset;
  h.model_hash = m.hash;

  std::vector<uint8_t> payload = enc.finish();
  h.payload_size = payload.size();
  detail::ByteWriter w;
  detail::write_header(w, h);
  st.header_bytes = w.buf.size();
  st.payload_bytes = payload.size();
  w.buf.insert(w.buf.end(), payload.begin(), payload.end());
  return {std::move(w.buf), st};
}

inline EncodedStream encode_quantized_baseline(const QuantizedCloud& q) {
  const NodeSequence ns = build_octree(q);
  RangeEncoder enc;
  EncodeStats st;
  st.node_count = ns.size();
  st.source_count = q.source_count;
  BaselineModel bm;
  for (const auto& n : ns) {
    const QuantizedCDF cdf = bm.cdf();
    const int index = n.occupancy - 1;
    enc.encode(cdf, index);
    st.ideal_bits -=
        std::log2(static_cast<double>(cdf.freq(index)) / kFreqTotal);
    bm.update(index);
  }

  StreamHeader h;
  h.baseline = true;
  h.levels = q.levels;
  h.node_count = ns.size();
  h.source_count = q.source_count;
  h.qs = q.qs;
  h.offset = q.offset;

  std::vector<uint8_t> payload = enc.finish();
  h.payload_size = payload.size();
  detail::ByteWriter w;
  detail::write_header(w, h);
  st.header_bytes = w.buf.size();
  st.payload_bytes = payload.size();
  w.buf.insert(w.buf.end(), payload.begin(), payload.end());
  return {std::move(w.buf), st};
}

namespace detail {

// Decoded nodes double as the breadth-first work queue: decoding node i
// appends placeholder children whose occupancy arrives later.
struct DecodeQueue {
  NodeSequence ns;
  uint64_t expected;
  explicit DecodeQueue(uint64_t count) : expected(count) {
    ns.reserve(count);
    ns.push_back(OctreeNode{0, 1, 0, -1});
  }

  void settle(size_t pos, uint8_t occupancy, int levels) {
    ns[pos].occupancy = occupancy;
    const OctreeNode& n = ns[pos];
    if (n.level >= levels) return;
    for (int c = 0; c < 8; ++c) {
      if (!(occupancy & (1u << c))) continue;
      if (ns.size() >= expected)
        throw DecodeError("decode: node " + std::to_string(pos) +
                          " spawns more children than the header declares");
      ns.push_back(OctreeNode{0, static_cast<uint8_t>(n.level + 1),
                              static_cast<uint8_t>(c),
                              static_cast<int64_t>(pos)});
    }
  }
};

}  // namespace detail

inline QuantizedCloud decode_stream(const std::vector<uint8_t>& bytes,
                                    const EvalModel* m,
                                    const std::string& src = "<stream>") {
  detail::ByteReader r(bytes.data(), bytes.size(), src);
  const StreamHeader h = detail::read_header(r);
  if (r.pos != detail::kHeaderSize)
    throw ParseError(src + ": malformed header");
  if (bytes.size() - r.pos != h.payload_size)
    throw ParseError(src + ": payload size mismatch");
  const uint8_t* payload = bytes.data() + r.pos;

  detail::DecodeQueue q(h.node_count);
  RangeDecoder dec(payload, h.payload_size);

  if (h.baseline) {
    BaselineModel bm;
    for (uint64_t pos = 0; pos < h.node_count; ++pos) {
      if (pos >= q.ns.size())
        throw DecodeError("decode: node queue exhausted at position " +
                          std::to_string(pos));
      const QuantizedCDF cdf = bm.cdf();
      const int index = dec.decode(cdf);
      bm.update(index);
      q.settle(pos, static_cast<uint8_t>(index + 1), h.levels);
    }
  } else {
    if (m == nullptr)
      throw ModelMismatchError(src + ": stream requires an attention model");
    if (m->hash != h.model_hash)
      throw ModelMismatchError(src + ": stream was encoded with a different model");
    if (h.n_ancestors != m->cfg.n_ancestors)
      throw ModelMismatchError(src + ": ancestor count mismatch");
    if (h.levels > m->cfg.max_level)
      throw ModelMismatchError(src + ": depth exceeds the model's level table");

    const auto plan = plan_windows(static_cast<int64_t>(h.node_count),
                                   h.window, h.step);
    WindowEvaluator ev(*m);
    const int k = m->cfg.n_ancestors;
    uint64_t pos = 0;
    for (const auto& w : plan) {
      ev.reset();
      const int prefix = w.length - w.n_targets;
      for (int j = 0; j < prefix; ++j) {
        const int64_t rp = w.row_pos(j);
        ev.add_context_row(assemble_row(q.ns, rp, k, false));
      }
      for (int j = 0; j < w.n_targets; ++j, ++pos) {
        if (pos >= q.ns.size())
          throw DecodeError("decode: node queue exhausted at position " +
                            std::to_string(pos));
        const Distribution255 dist =
            ev.predict_target(assemble_row(q.ns, static_cast<int64_t>(pos), k, true));
        const QuantizedCDF cdf = quantize_dist(dist);
        const int index = dec.decode(cdf);
        q.settle(static_cast<size_t>(pos), static_cast<uint8_t>(index + 1),
                 h.levels);
        ev.add_context_row(
            assemble_row(q.ns, static_cast<int64_t>(pos), k, false));
      }
    }
  }

  if (q.ns.size() != h.node_count)
    throw DecodeError("decode: tree yields " + std::to_string(q.ns.size()) +
                      " nodes, header declares " +
                      std::to_string(h.node_count));

  QuantizedCloud out;
  out.qs = h.qs;
  out.offset = h.offset;
  out.levels = h.levels;
  out.source_count = h.source_count;
  out.pts = reconstruct_points(occupancy_codes(q.ns), h.levels);
  std::sort(out.pts.begin(), out.pts.end());
  return out;
}

inline StreamHeader peek_header(const std::vector<uint8_t>& bytes,
                                const std::string& src = "<stream>") {
  detail::ByteReader r(bytes.data(), bytes.size(), src);
  return detail::read_header(r);
}

}  // namespace opcc
