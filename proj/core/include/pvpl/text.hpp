#pragma once

#include <string>
#include <vector>

namespace pvpl {

/// Lowercase and split on ASCII non-alphanumerics. Bytes >= 0x80 stay inside
/// words so UTF-8 letters are not broken apart.
std::vector<std::string> split_words(const std::string& text);

}  // namespace pvpl
