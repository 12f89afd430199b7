#include "mensa/textdoc.hpp"

#include <fmt/format.h>

#include <cctype>
#include <charconv>
#include <istream>
#include <ostream>

#include "mensa/error.hpp"

namespace mensa {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

std::string format_fp64(double v) { return fmt::format("{:.17g}", v); }

double parse_fp64(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

void TextSection::set(std::string_view key, std::string_view value) {
  lines.push_back(fmt::format("{} = {}", key, value));
}

std::optional<std::string> TextSection::find(std::string_view key) const {
  for (const auto& line : lines) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    if (trim(std::string_view(line).substr(0, eq)) == key) {
      return std::string(trim(std::string_view(line).substr(eq + 1)));
    }
  }
  return std::nullopt;
}

std::string TextSection::get(std::string_view key) const {
  auto v = find(key);
  if (!v) throw DataError("section [" + name + "] is missing key '" + std::string(key) + "'");
  return *v;
}

TextSection& TextDocument::add(std::string name, std::vector<std::string> args) {
  sections.push_back({std::move(name), std::move(args), {}});
  return sections.back();
}

const TextSection* TextDocument::find(std::string_view name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const TextSection& TextDocument::get(std::string_view name) const {
  const auto* s = find(name);
  if (!s) throw DataError("missing section [" + std::string(name) + "]");
  return *s;
}

void TextDocument::write(std::ostream& out) const {
  for (const auto& s : sections) {
    out << '[' << s.name;
    for (const auto& a : s.args) out << ' ' << a;
    out << "]\n";
    for (const auto& l : s.lines) out << l << '\n';
  }
}

TextDocument TextDocument::read(std::istream& in) {
  TextDocument doc;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw DataError("line " + std::to_string(line_no) + ": unterminated section header");
      }
      auto tokens = split_ws(line.substr(1, line.size() - 2));
      if (tokens.empty()) throw DataError("line " + std::to_string(line_no) + ": empty section header");
      std::string name = tokens.front();
      tokens.erase(tokens.begin());
      doc.add(std::move(name), std::move(tokens));
      continue;
    }
    if (doc.sections.empty()) {
      throw DataError("line " + std::to_string(line_no) + ": content before first section");
    }
    doc.sections.back().lines.emplace_back(line);
  }
  return doc;
}

}  // namespace mensa
