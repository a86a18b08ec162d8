#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rotlab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Config validation collects every violation before throwing.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : Error(join(violations)), violations_(std::move(violations)) {}
    explicit ConfigError(const std::string& msg) : ConfigError(std::vector<std::string>{msg}) {}

    const std::vector<std::string>& violations() const { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "config invalid:";
        for (const auto& s : v) {
            out += "\n  - " + s;
        }
        return out;
    }
    std::vector<std::string> violations_;
};

class IdxError : public Error {
public:
    enum class Kind { WrongMagic, Truncated, CountMismatch, Io };

    IdxError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Observation with zero likelihood under every predicted state.
class ImpossibleEvidenceError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

}  // namespace rotlab
