#pragma once

#include <stdexcept>
#include <string>

namespace pathaudit {

// Exit-status classes used by the CLI: config -> 2, data -> 3, provider -> 4.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownEntityError : public DataError {
 public:
  explicit UnknownEntityError(const std::string& id)
      : DataError("unknown entity id: " + id), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

/// Persisted artifact whose content no longer matches its recorded digest.
class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

/// Operation not valid in the current run state (incomplete run, held lock).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure talking to an external embedding or adjudication service.
class ProviderError : public std::runtime_error {
 public:
  ProviderError(const std::string& what, bool retriable)
      : std::runtime_error(what), retriable_(retriable) {}
  bool retriable() const { return retriable_; }

 private:
  bool retriable_;
};

/// Transport-level failure (timeout, connection refused, 5xx). Safe to retry.
class TransportError : public ProviderError {
 public:
  explicit TransportError(const std::string& what) : ProviderError(what, true) {}
};

/// A provider replied with something that does not match the expected schema.
/// The raw payload is kept for debugging.
class ProtocolError : public ProviderError {
 public:
  ProtocolError(const std::string& what, std::string raw_payload)
      : ProviderError(what, false), raw_payload_(std::move(raw_payload)) {}
  const std::string& raw_payload() const { return raw_payload_; }

 private:
  std::string raw_payload_;
};

}  // namespace pathaudit
