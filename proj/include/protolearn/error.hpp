#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace protolearn {

// Machine-readable error classes. The CLI maps these onto exit codes.
enum class ErrorCode {
  config,
  parse,
  unknown_symbol,
  alphabet_mismatch,
  unmappable_packet,
  transport,
  nondeterminism,
  non_distinguishing,
  synthesis,
  overflow,
  property_violation,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "CONFIG_ERROR";
    case ErrorCode::parse: return "PARSE_ERROR";
    case ErrorCode::unknown_symbol: return "UNKNOWN_SYMBOL";
    case ErrorCode::alphabet_mismatch: return "ALPHABET_MISMATCH";
    case ErrorCode::unmappable_packet: return "UNMAPPABLE_PACKET";
    case ErrorCode::transport: return "TRANSPORT_ERROR";
    case ErrorCode::nondeterminism: return "NONDETERMINISM";
    case ErrorCode::non_distinguishing: return "NON_DISTINGUISHING";
    case ErrorCode::synthesis: return "SYNTHESIS_ERROR";
    case ErrorCode::overflow: return "OVERFLOW";
    case ErrorCode::property_violation: return "PROPERTY_VIOLATION";
  }
  return "ERROR";
}

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

// Malformed document; carries the 1-based line and the offending field.
class ParseError : public Error {
public:
  ParseError(std::size_t line, std::string field, const std::string& msg)
      : Error(ErrorCode::parse,
              "line " + std::to_string(line) + (field.empty() ? "" : " [" + field + "]") + ": " + msg),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

private:
  std::size_t line_;
  std::string field_;
};

class TransportError : public Error {
public:
  TransportError(const std::string& what, bool retryable)
      : Error(ErrorCode::transport, what), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

private:
  bool retryable_;
};

} // namespace protolearn
