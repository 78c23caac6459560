#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace drsmpc {

enum class Errc {
  NonContractive,
  NotPsd,
  DomainError,
  NoConvergence,
  DimensionMismatch,
  EmptySampleSet,
  InfeasibleRadius,
  AllocationError,
  BadProblem,
  TightenedSetEmpty,
  InitialInfeasible,
  ConfigError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::NonContractive: return "NonContractive";
    case Errc::NotPsd: return "NotPsd";
    case Errc::DomainError: return "DomainError";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptySampleSet: return "EmptySampleSet";
    case Errc::InfeasibleRadius: return "InfeasibleRadius";
    case Errc::AllocationError: return "AllocationError";
    case Errc::BadProblem: return "BadProblem";
    case Errc::TightenedSetEmpty: return "TightenedSetEmpty";
    case Errc::InitialInfeasible: return "InitialInfeasible";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying its code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace drsmpc
