#pragma once

#include <stdexcept>
#include <string>

namespace crm {

/// Bad inputs: malformed files, violated preconditions, impossible configs.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Estimate exists but failed a statistical diagnostic (e.g. SNIPS with
/// zero weight mass). Maps to CLI exit code 2.
class DiagnosticError : public std::runtime_error {
 public:
  explicit DiagnosticError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace crm
