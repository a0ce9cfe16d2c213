#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace coco {

// FNV-1a, 64 bit. Used for provenance fingerprints, never for security.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n);
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update(std::span<const double> values);
  void update_u64(std::uint64_t v);
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);

}  // namespace coco
