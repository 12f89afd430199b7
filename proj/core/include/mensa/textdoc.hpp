#pragma once

// Line-oriented structured text:
//
//   # comment
//   [section arg1 arg2]
//   key = value
//   free-form line
//
// Sections keep their order; lines keep their order within a section.

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mensa {

struct TextSection {
  std::string name;
  std::vector<std::string> args;
  std::vector<std::string> lines;

  void set(std::string_view key, std::string_view value);
  std::optional<std::string> find(std::string_view key) const;
  // Throws DataError when the key is absent.
  std::string get(std::string_view key) const;
};

struct TextDocument {
  std::vector<TextSection> sections;

  TextSection& add(std::string name, std::vector<std::string> args = {});
  const TextSection* find(std::string_view name) const;
  const TextSection& get(std::string_view name) const;

  void write(std::ostream& out) const;
  static TextDocument read(std::istream& in);
};

std::string format_fp64(double v);
double parse_fp64(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);

}  // namespace mensa
