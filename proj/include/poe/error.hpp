#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace poe {

enum class ErrorKind {
  UnknownVehicle,
  UnregisteredVehicle,
  NoBaseStations,
  EmptyFederation,
  ThresholdNotMet,
  EmptyEventSet,
  NotFound,
  InvalidConfig,
  InvalidAttack,
  Decode,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownVehicle: return "UnknownVehicle";
    case ErrorKind::UnregisteredVehicle: return "UnregisteredVehicle";
    case ErrorKind::NoBaseStations: return "NoBaseStations";
    case ErrorKind::EmptyFederation: return "EmptyFederation";
    case ErrorKind::ThresholdNotMet: return "ThresholdNotMet";
    case ErrorKind::EmptyEventSet: return "EmptyEventSet";
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidAttack: return "InvalidAttack";
    case ErrorKind::Decode: return "Decode";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace poe
