#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sfnmt::utf8 {

// Length of the UTF-8 sequence starting at byte b; 1 for malformed leads.
inline std::size_t sequence_length(unsigned char b) noexcept {
  if (b < 0x80) return 1;
  if ((b & 0xE0) == 0xC0) return 2;
  if ((b & 0xF0) == 0xE0) return 3;
  if ((b & 0xF8) == 0xF0) return 4;
  return 1;  // stray continuation or invalid lead: treat as a single byte
}

// Split a string into code-point-sized chunks. Malformed bytes become
// single-byte chunks, so concatenation always reproduces the input.
inline std::vector<std::string> split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = sequence_length(static_cast<unsigned char>(text[i]));
    if (i + len > text.size()) len = 1;
    // continuation bytes must match, otherwise fall back to one byte
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace sfnmt::utf8
