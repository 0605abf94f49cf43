#include "sm2/kv_config.hpp"

#include <fstream>
#include <istream>

#include "sm2/tensor.hpp"

namespace sm2 {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> parse_key_values(
    std::istream& in, const std::set<std::string>& allowed) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(lineno) +
                          ": expected key=value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!allowed.contains(key)) {
      throw ContractError("config line " + std::to_string(lineno) +
                          ": unknown key '" + key + "'");
    }
    if (!out.emplace(key, value).second) {
      throw ContractError("config line " + std::to_string(lineno) +
                          ": duplicate key '" + key + "'");
    }
  }
  return out;
}

std::map<std::string, std::string> read_key_value_file(
    const std::string& path, const std::set<std::string>& allowed) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  return parse_key_values(in, allowed);
}

}  // namespace sm2
