#pragma once

#include <stdexcept>
#include <string>

namespace tbs {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidParameters : Error {
  using Error::Error;
};

// A batch whose timestamp does not exceed the previous one.
struct StaleTimestamp : Error {
  using Error::Error;
};

struct TargetOutOfRange : Error {
  using Error::Error;
};

struct EmptyInput : Error {
  using Error::Error;
};

struct RankDeficient : Error {
  using Error::Error;
};

struct PlanMismatch : Error {
  using Error::Error;
};

struct InsufficientData : Error {
  using Error::Error;
};

}  // namespace tbs
