#pragma once

#include <stdexcept>
#include <string>

namespace rmnet {

// Every error carries a short machine-parsable code used by the CLI.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error("E_DIM", what) {}
};

class SpecError : public Error {
public:
    explicit SpecError(const std::string& what) : Error("E_SPEC", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("E_CONFIG", what) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error("E_CONTRACT", what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("E_NUMERIC", what) {}
};

class IndexError : public Error {
public:
    explicit IndexError(const std::string& what) : Error("E_INDEX", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("E_IO", what) {}
};

class LoadError : public Error {
public:
    explicit LoadError(const std::string& what) : Error("E_LOAD", what) {}
};

class DatasetError : public Error {
public:
    explicit DatasetError(const std::string& what) : Error("E_DATASET", what) {}
};

// Non-fatal conditions (clamps, skipped pairs, fallbacks) go through here.
void warn(const std::string& message);

// Number of warnings emitted so far on this thread.
long warning_count();

// Silences stderr output of warnings on this thread while alive; still counted.
class QuietWarnings {
public:
    QuietWarnings();
    ~QuietWarnings();
    QuietWarnings(const QuietWarnings&) = delete;
    QuietWarnings& operator=(const QuietWarnings&) = delete;

private:
    bool previous_;
};

}  // namespace rmnet
