// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace neusg {

/// A caller broke a documented precondition (shape mismatch, bad order, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A math operation was asked to leave its domain (division by zero, log of a negative).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed file content. Carries the byte offset where parsing stopped.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    [[nodiscard]] std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

/// Scene, checkpoint or config loading failed. The message names the offending field.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite quantity.
class TrainingAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace neusg
