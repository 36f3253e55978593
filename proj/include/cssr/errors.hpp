#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cssr {

/// Base class for recoverable data and configuration failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition the caller was responsible for did not hold.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class InconsistentGridError : public Error {
 public:
  using Error::Error;
};

/// Input data is missing or unusable.
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver produced non-finite values.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
 public:
  RankDeficiencyError(const std::string& what, std::vector<int> support)
      : Error(what), support_(std::move(support)) {}
  const std::vector<int>& support() const noexcept { return support_; }

 private:
  std::vector<int> support_;
};

class InsufficientDataError : public Error {
 public:
  InsufficientDataError(const std::string& what, std::string subject, std::size_t have,
                        std::size_t needed)
      : Error(what), subject_(std::move(subject)), have_(have), needed_(needed) {}

  /// Name of the bucket that ran short (a patch class, usually).
  const std::string& subject() const noexcept { return subject_; }
  std::size_t have() const noexcept { return have_; }
  std::size_t needed() const noexcept { return needed_; }

 private:
  std::string subject_;
  std::size_t have_;
  std::size_t needed_;
};

}  // namespace cssr
