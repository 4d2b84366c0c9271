#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctcasr {

enum class Errc {
  MissingHeader,
  DuplicatePath,
  EmptyTranscript,
  BadFractions,
  IoFailure,
  NyquistViolation,
  UnsupportedFormat,
  CorruptFile,
  TooShort,
  IndexOutOfRange,
  ShapeMismatch,
  TapeConsumed,
  TooLarge,
  EmptyReferenceSet,
  EmptyManifest,
  DivergedLoss,
  ConfigError,
  InvalidArgument,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MissingHeader: return "MissingHeader";
    case Errc::DuplicatePath: return "DuplicatePath";
    case Errc::EmptyTranscript: return "EmptyTranscript";
    case Errc::BadFractions: return "BadFractions";
    case Errc::IoFailure: return "IoFailure";
    case Errc::NyquistViolation: return "NyquistViolation";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::TooShort: return "TooShort";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::TapeConsumed: return "TapeConsumed";
    case Errc::TooLarge: return "TooLarge";
    case Errc::EmptyReferenceSet: return "EmptyReferenceSet";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::ConfigError: return "ConfigError";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the toolkit carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace ctcasr
