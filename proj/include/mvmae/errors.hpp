#pragma once

#include <stdexcept>
#include <string>

namespace mvmae {

/// Root of every error raised by the library. Each subclass maps onto one
/// failure category callers are expected to branch on.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or combination (bad ratios, indivisible sizes, tau <= 0).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A manifest / CSV row that does not follow its schema.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, long row = -1)
      : Error(row >= 0 ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

class MalformedMetadataError : public Error {
 public:
  using Error::Error;
};

/// Image could not be read or decoded; carries the provenance reference.
class IngestionError : public Error {
 public:
  IngestionError(const std::string& ref, const std::string& why)
      : Error("cannot ingest '" + ref + "': " + why), ref_(ref) {}
  const std::string& ref() const noexcept { return ref_; }

 private:
  std::string ref_;
};

/// Non-finite activation or zero-norm input; `where` is the layer or row index.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long where = -1) : Error(what), where_(where) {}
  long where() const noexcept { return where_; }

 private:
  long where_;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class UndefinedLossError : public Error {
 public:
  using Error::Error;
};

class DistributedContractError : public Error {
 public:
  using Error::Error;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvmae
