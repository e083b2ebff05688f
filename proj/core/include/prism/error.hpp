#pragma once

#include <stdexcept>
#include <string>

namespace prism {

/// Malformed tensor file or snapshot.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// No partition plan can satisfy the DPU memory constraints.
class PlanError : public std::runtime_error {
public:
    explicit PlanError(const std::string& what) : std::runtime_error(what) {}
};

/// Inconsistent run configuration (bad preset, mismatched plan, ...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace prism
