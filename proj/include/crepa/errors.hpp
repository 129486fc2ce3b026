// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace crepa {

/// Base of every error raised by the library. `module()` names the
/// subsystem that raised it so the CLI can print a qualified message.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(what), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }
    virtual const char* kind() const noexcept { return "error"; }

private:
    std::string module_;
};

#define CREPA_DEFINE_ERROR(Name, Kind)                                  \
    class Name : public Error {                                         \
    public:                                                             \
        Name(std::string module, const std::string& what)               \
            : Error(std::move(module), what) {}                         \
        const char* kind() const noexcept override { return Kind; }     \
    }

CREPA_DEFINE_ERROR(DimensionError, "dimension-error");
CREPA_DEFINE_ERROR(DomainError, "domain-error");
CREPA_DEFINE_ERROR(ConfigError, "config-error");
CREPA_DEFINE_ERROR(IoError, "io-error");
CREPA_DEFINE_ERROR(NumericError, "numeric-error");
CREPA_DEFINE_ERROR(IntegrityError, "integrity-error");
CREPA_DEFINE_ERROR(TrainingFailure, "training-failure");
CREPA_DEFINE_ERROR(DegenerateInput, "degenerate-input");
CREPA_DEFINE_ERROR(ComparisonInvalid, "comparison-invalid");

#undef CREPA_DEFINE_ERROR

}  // namespace crepa
