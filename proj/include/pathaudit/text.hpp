#pragma once

#include <string>
#include <string_view>

namespace pathaudit {

std::string ascii_lower(std::string_view s);
std::string_view trim(std::string_view s);
/// Case-insensitive (ASCII) substring test.
bool contains_ci(std::string_view haystack, std::string_view needle);

}  // namespace pathaudit
