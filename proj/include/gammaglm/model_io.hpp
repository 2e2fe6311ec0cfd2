#pragma once

// Plain-text key/value model files:
//
//   # gammaglm model
//   family = linear
//   beta = 0.98, 2.01, 0, ...
//   manifest.seed = 7
//
// Doubles are written with 17 significant digits so they round-trip exactly.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gammaglm/types.hpp"

namespace gammaglm {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class KeyValueFile {
 public:
  void set(const std::string& key, std::string value) {
    for (auto& kv : entries_)
      if (kv.first == key) {
        kv.second = std::move(value);
        return;
      }
    entries_.emplace_back(key, std::move(value));
  }
  void set(const std::string& key, double v) { set(key, format_double(v)); }
  void set(const std::string& key, std::size_t v) { set(key, std::to_string(v)); }

  bool has(const std::string& key) const {
    for (const auto& kv : entries_)
      if (kv.first == key) return true;
    return false;
  }

  const std::string& get(const std::string& key) const {
    for (const auto& kv : entries_)
      if (kv.first == key) return kv.second;
    throw DataError("model file has no key '" + key + "'");
  }

  double get_double(const std::string& key) const { return parse_double(get(key), key); }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  void write(std::ostream& out, const std::string& title) const {
    out << "# " << title << '\n';
    for (const auto& [k, v] : entries_) out << k << " = " << v << '\n';
  }

  static KeyValueFile read(std::istream& in) {
    KeyValueFile f;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) {
        // "key =" with an empty value
        if (line.size() >= 2 && line.compare(line.size() - 2, 2, " =") == 0) {
          f.set(line.substr(0, line.size() - 2), std::string());
          continue;
        }
        throw DataError("model file line " + std::to_string(lineno) + ": expected 'key = value'");
      }
      f.set(line.substr(0, eq), line.substr(eq + 3));
    }
    return f;
  }

  static double parse_double(const std::string& s, const std::string& key) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw DataError("model file key '" + key + "': bad number '" + s + "'");
    return v;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::string join_doubles(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_double(v[i]);
  }
  return out;
}

inline Vector split_doubles(const std::string& s, const std::string& key) {
  std::vector<double> vals;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    vals.push_back(KeyValueFile::parse_double(cell.substr(b), key));
  }
  return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline void write_theta(KeyValueFile& f, const Theta& t) {
  f.set("beta0", t.beta0);
  f.set("beta", join_doubles(t.beta));
  if (t.sigma2) f.set("sigma2", *t.sigma2);
}

inline Theta read_theta(const KeyValueFile& f, Family family) {
  Theta t;
  t.beta0 = f.get_double("beta0");
  t.beta = split_doubles(f.get("beta"), "beta");
  if (family == Family::Linear) t.sigma2 = f.get_double("sigma2");
  return t;
}

}  // namespace gammaglm
