#pragma once

#include <iosfwd>
#include <map>
#include <set>
#include <string>

namespace sm2 {

/// Parses line-oriented `key=value` text. Blank lines and lines starting with
/// '#' are ignored; whitespace around keys and values is trimmed. Keys outside
/// `allowed` and duplicate keys are errors (ContractError).
std::map<std::string, std::string> parse_key_values(
    std::istream& in, const std::set<std::string>& allowed);

std::map<std::string, std::string> read_key_value_file(
    const std::string& path, const std::set<std::string>& allowed);

}  // namespace sm2
