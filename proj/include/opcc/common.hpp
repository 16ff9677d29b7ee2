#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace opcc {

using Vec3 = std::array<double, 3>;
using Vec3i = std::array<int64_t, 3>;

// Base class for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input: point cloud files, bitstream headers, config files.
struct ParseError : Error {
  using Error::Error;
};

// Bitstream was produced with a different model than the one supplied.
struct ModelMismatchError : Error {
  using Error::Error;
};

// Bitstream payload fails internal consistency checks.
struct DecodeError : Error {
  using Error::Error;
};

inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

}  // namespace opcc
