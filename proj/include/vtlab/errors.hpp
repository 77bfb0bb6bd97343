#pragma once

#include <stdexcept>
#include <string>

namespace vtlab {

// Error taxonomy shared by all modules. Everything derives from
// std::runtime_error so callers can catch coarsely; the concrete type is
// part of each operation's contract.

struct VocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid slice/tile specification (e.g. slice length not dividing the
// visual token count).
struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when the victim fails its post-training sanity gates. Carries the
// training diagnostics as JSON text.
struct TrainingFailure : std::runtime_error {
  std::string diagnostics;
  TrainingFailure(const std::string& msg, std::string diag)
      : std::runtime_error(msg), diagnostics(std::move(diag)) {}
};

}  // namespace vtlab
