#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wdis/error.hpp"

namespace wdis {

using Digest = std::array<std::uint8_t, 32>;

// Incremental SHA-256 (OpenSSL underneath).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view bytes);
  void update_u64(std::uint64_t v);
  void update_f64(double v);
  Digest finish();

 private:
  void* ctx_;
};

Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws Error(kContractViolation) on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Little-endian primitive encoding used by every binary file format here.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);
void put_bytes(std::vector<std::uint8_t>& out, std::string_view s);

// Bounds-checked little-endian reader; throws Error with the given code on
// truncation.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, ErrorCode error_code)
      : bytes_(bytes), error_code_(error_code) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string bytes(std::size_t n);
  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n);

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  ErrorCode error_code_;
};

}  // namespace wdis
