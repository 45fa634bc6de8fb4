#pragma once

// Strict JSON reading: every problem in a document is collected with its
// field path, unknown keys are errors, and the format/version header is
// checked before anything else.

#include "volgauss/core.hpp"
#include "volgauss/errors.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace volgauss::io {

using json = nlohmann::ordered_json;

class Problems {
 public:
  explicit Problems(std::string source) : source_(std::move(source)) {}

  void add(const std::string& path, const std::string& msg) { list_.push_back(path + ": " + msg); }
  bool empty() const { return list_.empty(); }
  const std::vector<std::string>& list() const { return list_; }
  const std::string& source() const { return source_; }

  void throw_if_any() const {
    if (list_.empty()) return;
    std::string msg = source_ + ": " + std::to_string(list_.size()) + " problem(s)";
    for (const auto& p : list_) msg += "\n  " + p;
    throw ValidationError(msg);
  }

 private:
  std::string source_;
  std::vector<std::string> list_;
};

template <typename E>
struct EnumNames;

template <typename E>
const char* enum_name(E value) {
  for (const auto& [name, v] : EnumNames<E>::list())
    if (v == value) return name;
  return "?";
}

/// Reads fields of one JSON object; call finish() to report unknown keys.
class ObjectReader {
 public:
  ObjectReader(const json* j, std::string path, Problems& problems, std::string format_tag)
      : j_(j), path_(std::move(path)), problems_(problems), tag_(std::move(format_tag)) {
    if (j_ && !j_->is_object()) {
      problems_.add(path_, "expected an object");
      j_ = nullptr;
    }
  }

  bool present() const { return j_ != nullptr; }
  bool has(const char* key) const { return j_ && j_->contains(key); }
  std::string path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  const std::string& location() const { return path_; }
  Problems& problems() { return problems_; }
  const std::string& tag() const { return tag_; }

  const json* get(const char* key) {
    if (!j_) return nullptr;
    seen_.insert(key);
    const auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  void require(const char* key) {
    if (j_ && !j_->contains(key)) problems_.add(path(key), "required field is missing");
  }

  void read(const char* key, double& out) {
    if (const json* v = get(key)) {
      if (v->is_number())
        out = v->get<double>();
      else
        problems_.add(path(key), "expected a number");
    }
  }
  void read(const char* key, int& out) {
    if (const json* v = get(key)) {
      if (v->is_number_integer() && v->get<std::int64_t>() >= INT32_MIN && v->get<std::int64_t>() <= INT32_MAX)
        out = v->get<int>();
      else
        problems_.add(path(key), "expected an integer");
    }
  }
  void read(const char* key, std::uint64_t& out) {
    if (const json* v = get(key)) {
      if (v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0))
        out = v->get<std::uint64_t>();
      else
        problems_.add(path(key), "expected a non-negative integer");
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = get(key)) {
      if (v->is_boolean())
        out = v->get<bool>();
      else
        problems_.add(path(key), "expected true or false");
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = get(key)) {
      if (v->is_string())
        out = v->get<std::string>();
      else
        problems_.add(path(key), "expected a string");
    }
  }
  template <int N>
  void read(const char* key, Eigen::Matrix<double, N, 1>& out) {
    if (const json* v = get(key)) {
      if (!read_vector(*v, out)) problems_.add(path(key), "expected an array of " + std::to_string(N) + " numbers");
    }
  }
  void read(const char* key, Mat3& out) {
    if (const json* v = get(key)) {
      bool ok = v->is_array() && v->size() == 3;
      for (int r = 0; ok && r < 3; ++r) {
        Vec3 row;
        ok = read_vector((*v)[r], row);
        if (ok) out.row(r) = row.transpose();
      }
      if (!ok) problems_.add(path(key), "expected 3 rows of 3 numbers");
    }
  }
  template <typename E>
    requires std::is_enum_v<E>
  void read(const char* key, E& out) {
    if (const json* v = get(key)) {
      std::string expected;
      if (v->is_string()) {
        for (const auto& [name, value] : EnumNames<E>::list()) {
          if (*v == name) {
            out = value;
            return;
          }
        }
      }
      for (const auto& [name, value] : EnumNames<E>::list()) expected += (expected.empty() ? "" : ", ") + std::string(name);
      problems_.add(path(key), "expected one of: " + expected);
    }
  }

  ObjectReader child(const char* key) { return ObjectReader(get(key), path(key), problems_, tag_); }

  void finish() {
    if (!j_) return;
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!seen_.count(it.key())) problems_.add(path(it.key().c_str()), "unknown field (" + tag_ + ")");
  }

  template <int N>
  static bool read_vector(const json& v, Eigen::Matrix<double, N, 1>& out) {
    if (!v.is_array() || v.size() != N) return false;
    for (int k = 0; k < N; ++k) {
      if (!v[k].is_number()) return false;
      out[k] = v[k].get<double>();
    }
    return true;
  }

 private:
  const json* j_;
  std::string path_;
  Problems& problems_;
  std::string tag_;
  std::set<std::string> seen_;
};

/// Checks "format" and "version" of a top-level document.
inline void check_header(ObjectReader& r, const std::string& format, int version) {
  std::string f;
  int v = -1;
  r.read("format", f);
  r.read("version", v);
  if (!r.has("format"))
    r.problems().add("format", "missing (expected \"" + format + "\")");
  else if (f != format)
    r.problems().add("format", "is \"" + f + "\", expected \"" + format + "\"");
  if (!r.has("version"))
    r.problems().add("version", "missing (expected " + std::to_string(version) + ")");
  else if (v != version)
    r.problems().add("version", "unsupported version " + std::to_string(v) + " of " + format +
                                    " (this build reads version " + std::to_string(version) + ")");
}

inline json header(const std::string& format, int version) {
  json j;
  j["format"] = format;
  j["version"] = version;
  return j;
}

template <int N>
json to_json(const Eigen::Matrix<double, N, 1>& v) {
  json a = json::array();
  for (int k = 0; k < N; ++k) a.push_back(v[k]);
  return a;
}

inline json to_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) a.push_back(to_json(Vec3(m.row(r).transpose())));
  return a;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(path + ": cannot write file");
  out << text;
  if (!out) throw ValidationError(path + ": write failed");
}

/// Parses JSON text; syntax errors report line and column.
inline json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    int line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    if (const auto p = what.find("syntax error"); p != std::string::npos) what = what.substr(p);
    throw ValidationError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
  }
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace volgauss::io
