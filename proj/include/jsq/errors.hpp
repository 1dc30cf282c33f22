#pragma once

#include <stdexcept>
#include <string>

namespace jsq {

// Precondition violations on user-supplied values.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidTopology : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// The convex solver hit its iteration budget. Never used for infeasibility.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace jsq
