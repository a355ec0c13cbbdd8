// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rkld {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Caller violated a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two models whose configs differ were combined.
class CompatibilityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage is missing one of its input artifacts.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rkld
