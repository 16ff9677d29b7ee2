#pragma once

#include <cstdint>
#include <vector>

#include "opcc/common.hpp"
#include "opcc/dist.hpp"

namespace opcc {

// Byte-oriented range coder over 16-bit integer frequencies. The state is a
// 64-bit (low, range) pair renormalized one byte at a time once range drops
// below 2^48, so per-symbol truncation loss is about 2^-32 bits and the whole
// stream stays within 64 bits of the information content plus the flush.
// Carries are applied directly to the buffered output bytes.
class RangeEncoder {
 public:
  void encode(uint32_t cum, uint32_t freq) {
    const uint64_t r = range_ >> kFreqBits;
    const unsigned __int128 nl =
        static_cast<unsigned __int128>(low_) +
        static_cast<unsigned __int128>(cum) * r;
    if (static_cast<uint64_t>(nl >> 64) != 0) propagate_carry();
    low_ = static_cast<uint64_t>(nl);
    range_ = r * freq;
    while (range_ < kTop) {
      shift_low();
      range_ <<= 8;
    }
  }

  void encode(const QuantizedCDF& cdf, int index) {
    encode(cdf.cum[index], cdf.freq(index));
  }

  // emits the remaining 64 bits of low; call exactly once
  std::vector<uint8_t> finish() {
    for (int i = 0; i < 8; ++i) shift_low();
    return std::move(out_);
  }

  size_t bytes_pending() const { return out_.size(); }

 private:
  static constexpr uint64_t kTop = 1ull << 48;

  void shift_low() {
    out_.push_back(static_cast<uint8_t>(low_ >> 56));
    low_ <<= 8;
  }

  void propagate_carry() {
    size_t i = out_.size();
    while (i > 0 && out_[i - 1] == 0xFF) out_[--i] = 0x00;
    if (i == 0) throw Error("range encoder: carry past stream start");
    ++out_[i - 1];
  }

  uint64_t low_ = 0;
  uint64_t range_ = ~0ull;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* data, size_t size) : p_(data), n_(size) {
    for (int i = 0; i < 8; ++i) code_ = (code_ << 8) | next_byte();
  }

  // cumulative slot of the next symbol; pass the located entry to consume()
  uint32_t decode_slot() {
    r_ = range_ >> kFreqBits;
    uint64_t f = code_ / r_;
    if (f >= kFreqTotal) f = kFreqTotal - 1;
    return static_cast<uint32_t>(f);
  }

  void consume(uint32_t cum, uint32_t freq) {
    code_ -= static_cast<uint64_t>(cum) * r_;
    range_ = r_ * freq;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
  }

  int decode(const QuantizedCDF& cdf) {
    const int index = cdf.find(decode_slot());
    consume(cdf.cum[index], cdf.freq(index));
    return index;
  }

  size_t bytes_read() const { return pos_; }

 private:
  static constexpr uint64_t kTop = 1ull << 48;

  // a corrupt stream may legitimately run off the end; zero fill keeps the
  // decoder total, callers detect damage through structural validation
  uint8_t next_byte() { return pos_ < n_ ? p_[pos_++] : 0; }

  const uint8_t* p_;
  size_t n_, pos_ = 0;
  uint64_t code_ = 0, range_ = ~0ull, r_ = 0;
};

}  // namespace opcc
