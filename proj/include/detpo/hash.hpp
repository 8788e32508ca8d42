#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

namespace detpo {

// 64-bit FNV-1a. Stable across platforms, used for content fingerprints.
class Fnv1a {
 public:
  void update(std::string_view s) {
    for (unsigned char ch : s) {
      state_ ^= ch;
      state_ *= 0x100000001B3ULL;
    }
  }
  void separator(char tag) { update(std::string_view(&tag, 1)); }
  std::uint64_t value() const { return state_; }
  std::string hex() const {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << state_;
    return out.str();
  }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::string fnv1a_hex(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.hex();
}

}  // namespace detpo
