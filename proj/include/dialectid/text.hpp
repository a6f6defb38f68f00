#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// UTF-8 utilities backed by ICU. Every string in the toolkit is UTF-8.
namespace dialectid::text {

bool is_valid_utf8(std::string_view s);

/// Canonical composition (NFC). Throws DataError on invalid UTF-8.
std::string nfc(std::string_view s);

/// Locale-independent lowercasing.
std::string fold_case(std::string_view s);

std::u32string decode(std::string_view s);
std::string encode(std::u32string_view s);

/// Number of Unicode scalar values.
std::size_t code_point_count(std::string_view s);

bool is_whitespace(char32_t c);

/// Splits on runs of Unicode whitespace; never yields empty pieces.
std::vector<std::string> split_whitespace(std::string_view s);

}  // namespace dialectid::text
