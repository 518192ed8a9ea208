#pragma once

// Strict JSON reading with line diagnostics. Every value's JSON pointer is
// mapped to the line it starts on, so field errors point into the file.

#include "idemlab/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace idemlab::config {

using Json = nlohmann::ordered_json;

namespace detail {

// Forward iterator over a string that records the furthest offset read.
class TrackingIterator {
 public:
  using iterator_category = std::forward_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  TrackingIterator() = default;
  TrackingIterator(const char* base, std::size_t offset, std::size_t* high)
      : base_(base), offset_(offset), high_(high) {}

  reference operator*() const {
    if (*high_ < offset_) *high_ = offset_;
    return base_[offset_];
  }
  TrackingIterator& operator++() {
    ++offset_;
    return *this;
  }
  TrackingIterator operator++(int) {
    auto copy = *this;
    ++offset_;
    return copy;
  }
  bool operator==(const TrackingIterator& o) const { return offset_ == o.offset_; }

 private:
  const char* base_ = nullptr;
  std::size_t offset_ = 0;
  std::size_t* high_ = nullptr;
};

inline std::string escape_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

inline int line_at(const std::string& text, std::size_t offset) {
  int line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

// Builds the DOM through nlohmann's own SAX builder while recording the
// line of every pointer.
class LineSax : public nlohmann::json_sax<Json> {
 public:
  LineSax(Json& root, const std::string& text, const std::size_t* high)
      : dom_(root, true), text_(text), high_(high) {}

  bool null() override { return scalar() && dom_.null(); }
  bool boolean(bool v) override { return scalar() && dom_.boolean(v); }
  bool number_integer(number_integer_t v) override { return scalar() && dom_.number_integer(v); }
  bool number_unsigned(number_unsigned_t v) override { return scalar() && dom_.number_unsigned(v); }
  bool number_float(number_float_t v, const string_t& s) override { return scalar() && dom_.number_float(v, s); }
  bool string(string_t& v) override { return scalar() && dom_.string(v); }
  bool binary(binary_t& v) override { return scalar() && dom_.binary(v); }

  bool start_object(std::size_t n) override {
    record();
    frames_.push_back({false, {}, 0, {}});
    return dom_.start_object(n);
  }
  bool key(string_t& k) override {
    frames_.back().key = k;
    record();
    if (!frames_.back().keys.insert(k).second) {
      std::string ptr;
      for (const auto& f : frames_) ptr += "/" + (f.array ? std::to_string(f.index) : escape_token(f.key));
      throw ConfigError(ptr, "duplicate key", current_line());
    }
    return dom_.key(k);
  }
  bool end_object() override {
    frames_.pop_back();
    advance();
    return dom_.end_object();
  }
  bool start_array(std::size_t n) override {
    record();
    frames_.push_back({true, {}, 0, {}});
    return dom_.start_array(n);
  }
  bool end_array() override {
    frames_.pop_back();
    advance();
    return dom_.end_array();
  }
  bool parse_error(std::size_t position, const std::string&, const nlohmann::detail::exception& ex) override {
    std::string what = ex.what();
    if (auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
    throw ConfigError("", what, line_at(text_, position == 0 ? 0 : position - 1));
  }

  std::map<std::string, int> take_lines() { return std::move(lines_); }

 private:
  struct Frame {
    bool array;
    std::string key;
    std::size_t index;
    std::set<std::string> keys;
  };

  bool scalar() {
    record();
    advance();
    return true;
  }

  void advance() {
    if (!frames_.empty() && frames_.back().array) ++frames_.back().index;
  }

  int current_line() {
    const std::size_t upto = std::min(*high_, text_.size());
    for (; scanned_ < upto; ++scanned_)
      if (text_[scanned_] == '\n') ++line_;
    return line_;
  }

  void record() {
    std::string ptr;
    for (const auto& f : frames_) ptr += "/" + (f.array ? std::to_string(f.index) : escape_token(f.key));
    lines_.try_emplace(ptr, current_line());
  }

  nlohmann::detail::json_sax_dom_parser<Json> dom_;
  const std::string& text_;
  const std::size_t* high_;
  std::vector<Frame> frames_;
  std::map<std::string, int> lines_;
  std::size_t scanned_ = 0;
  int line_ = 1;
};

}  // namespace detail

struct Document {
  Json root;
  std::shared_ptr<const std::map<std::string, int>> lines;
};

inline Document parse_document(const std::string& text) {
  Document doc;
  std::size_t high = 0;
  detail::TrackingIterator first(text.data(), 0, &high), last(text.data(), text.size(), &high);
  detail::LineSax sax(doc.root, text, &high);
  Json::sax_parse(first, last, &sax, nlohmann::detail::input_format_t::json, true, false);
  doc.lines = std::make_shared<const std::map<std::string, int>>(sax.take_lines());
  return doc;
}

// A located JSON value. Accessors throw ConfigError naming the pointer.
class Node {
 public:
  Node(const Json& value, std::string pointer, std::shared_ptr<const std::map<std::string, int>> lines)
      : value_(&value), pointer_(std::move(pointer)), lines_(std::move(lines)) {}

  const Json& json() const { return *value_; }
  const std::string& pointer() const { return pointer_; }

  int line() const {
    if (!lines_) return 0;
    auto it = lines_->find(pointer_);
    return it == lines_->end() ? 0 : it->second;
  }

  [[noreturn]] void fail(const std::string& message) const { throw ConfigError(pointer_, message, line()); }

  double number() const {
    if (!value_->is_number()) fail("expected a number");
    const double v = value_->get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }

  double number_in(double lo, double hi, const char* what) const {
    const double v = number();
    if (!(v >= lo && v <= hi)) fail(std::string("must be ") + what);
    return v;
  }

  double positive() const {
    const double v = number();
    if (!(v > 0.0)) fail("must be > 0");
    return v;
  }

  std::uint64_t unsigned_integer(std::uint64_t lo = 0,
                                 std::uint64_t hi = std::numeric_limits<std::uint64_t>::max()) const {
    if (!value_->is_number_unsigned()) {
      if (value_->is_number_integer()) fail("must be >= 0");
      fail("expected a non-negative integer");
    }
    const auto v = value_->get<std::uint64_t>();
    if (v < lo || v > hi) fail("must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return v;
  }

  bool boolean() const {
    if (!value_->is_boolean()) fail("expected true or false");
    return value_->get<bool>();
  }

  std::string string() const {
    if (!value_->is_string()) fail("expected a string");
    return value_->get<std::string>();
  }

  std::vector<Node> array(std::size_t min_size = 0) const {
    if (!value_->is_array()) fail("expected an array");
    if (value_->size() < min_size) fail("needs at least " + std::to_string(min_size) + " entries");
    std::vector<Node> out;
    for (std::size_t i = 0; i < value_->size(); ++i) out.push_back(child((*value_)[i], std::to_string(i)));
    return out;
  }

  std::vector<double> numbers(std::size_t min_size = 0) const {
    std::vector<double> out;
    for (const auto& n : array(min_size)) out.push_back(n.number());
    return out;
  }

  Node child(const Json& value, const std::string& token) const {
    return {value, pointer_ + "/" + detail::escape_token(token), lines_};
  }

 private:
  const Json* value_;
  std::string pointer_;
  std::shared_ptr<const std::map<std::string, int>> lines_;
};

// Object reader that tracks consumed keys; finish() rejects the rest.
class Object {
 public:
  explicit Object(Node node) : node_(std::move(node)) {
    if (!node_.json().is_object()) node_.fail("expected an object");
  }

  const Node& node() const { return node_; }

  bool has(const std::string& key) const { return node_.json().contains(key); }

  Node required(const std::string& key) {
    if (!has(key)) throw ConfigError(node_.pointer() + "/" + key, "missing required field", node_.line());
    return take(key);
  }

  std::optional<Node> optional(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return take(key);
  }

  void finish() const {
    for (const auto& [key, value] : node_.json().items()) {
      if (used_.count(key)) continue;
      const Node n = node_.child(value, key);
      throw ConfigError(n.pointer(), "unknown key", n.line());
    }
  }

 private:
  Node take(const std::string& key) {
    used_.insert(key);
    return node_.child(node_.json().at(key), key);
  }

  Node node_;
  std::set<std::string> used_;
};

}  // namespace idemlab::config
