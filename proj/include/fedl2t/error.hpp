#pragma once

#include <stdexcept>
#include <string>

namespace fedl2t {

/// Malformed or out-of-range user input (bad labels, wrong dimensions).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A caller broke an internal precondition: incongruent layouts, stale
/// traces, missing loss terms.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Bad configuration. `key()` names the offending entry when there is one.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg, std::string key = {})
        : std::runtime_error(key.empty() ? msg : key + ": " + msg), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// File system or checkpoint format failure. The message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fedl2t
