#pragma once

#include <stdexcept>
#include <string>

namespace idemlab {

// Every failure raised by the library derives from Error so callers can
// catch the family without caring which module threw.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define IDEMLAB_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  };

IDEMLAB_DEFINE_ERROR(InvalidArgument)
IDEMLAB_DEFINE_ERROR(ZeroMassCode)
IDEMLAB_DEFINE_ERROR(InvalidRate)
IDEMLAB_DEFINE_ERROR(RankDeficient)
IDEMLAB_DEFINE_ERROR(CorruptStream)
IDEMLAB_DEFINE_ERROR(NonFinite)
IDEMLAB_DEFINE_ERROR(OutOfRange)
IDEMLAB_DEFINE_ERROR(LengthMismatch)
IDEMLAB_DEFINE_ERROR(DegenerateMoments)
IDEMLAB_DEFINE_ERROR(NoOverlap)

#undef IDEMLAB_DEFINE_ERROR

// Configuration problems carry the offending field path (JSON pointer) and,
// for syntax errors, the 1-based line.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, std::string message, int line = 0)
      : Error(format(field, message, line)),
        field_(std::move(field)),
        line_(line) {}

  const std::string& field() const noexcept { return field_; }
  int line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& field, const std::string& message, int line) {
    std::string out = "config";
    if (line > 0) out += ":" + std::to_string(line);
    if (!field.empty()) out += " [" + field + "]";
    return out + ": " + message;
  }

  std::string field_;
  int line_ = 0;
};

}  // namespace idemlab
