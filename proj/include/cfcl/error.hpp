#pragma once

#include <stdexcept>
#include <string>

namespace cfcl {

// Every error carries a short machine-readable kind so the CLI can emit a
// stable error line. `what()` holds the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& m) : Error("domain", m) {}
};

struct DataError : Error {
  explicit DataError(const std::string& m) : Error("data", m) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

// Upstream artifact missing: names the stage that must run first.
struct MissingArtifactError : Error {
  MissingArtifactError(const std::string& stage, const std::string& m)
      : Error("missing-artifact", m), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct StaleArtifactError : Error {
  explicit StaleArtifactError(const std::string& m) : Error("stale-artifact", m) {}
};

}  // namespace cfcl
