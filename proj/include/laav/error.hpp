#pragma once

#include <stdexcept>
#include <string>

namespace laav {

/// Base class for every error raised by the toolkit.
///
/// `is_user_error()` separates configuration / applicability problems (bad
/// input, unsupported method for a given label set or backend) from internal
/// failures. The CLI maps the former to exit status 2 and the latter to 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  [[nodiscard]] virtual bool is_user_error() const noexcept { return false; }
};

class UserError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] bool is_user_error() const noexcept override { return true; }
};

// Input / configuration problems.
class ConfigError : public UserError { using UserError::UserError; };
class FormatError : public UserError { using UserError::UserError; };
class LabelError : public UserError { using UserError::UserError; };
class EmptyDatasetError : public UserError { using UserError::UserError; };
class SamplingError : public UserError { using UserError::UserError; };
class TemplateError : public UserError { using UserError::UserError; };
class RenderError : public UserError { using UserError::UserError; };
class CapabilityError : public UserError { using UserError::UserError; };
class ApplicabilityError : public UserError { using UserError::UserError; };

// Runtime failures.
class LengthError : public Error { using Error::Error; };
class BackendError : public Error { using Error::Error; };
class RestoreError : public Error { using Error::Error; };
class VerbalizerError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };
class AnalysisError : public Error { using Error::Error; };
class AggregationError : public Error { using Error::Error; };

}  // namespace laav
