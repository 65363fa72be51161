#pragma once

#include <stdexcept>
#include <string>

namespace kc {

// Validation errors map to CLI exit code 1, runtime/numerical errors to 2.
enum class ErrorClass { Validation, Runtime };

class Error : public std::runtime_error {
public:
  Error(ErrorClass cls, std::string code, const std::string& what)
      : std::runtime_error(what), class_(cls), code_(std::move(code)) {}

  ErrorClass error_class() const noexcept { return class_; }
  const std::string& code() const noexcept { return code_; }

private:
  ErrorClass class_;
  std::string code_;
};

class ValidationError : public Error {
public:
  ValidationError(std::string code, const std::string& what)
      : Error(ErrorClass::Validation, std::move(code), what) {}
};

class RuntimeError : public Error {
public:
  RuntimeError(std::string code, const std::string& what)
      : Error(ErrorClass::Runtime, std::move(code), what) {}
};

}  // namespace kc
