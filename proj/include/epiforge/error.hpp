#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace epiforge {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DuplicateIdError : public std::runtime_error {
public:
    explicit DuplicateIdError(const std::string& id)
        : std::runtime_error("duplicate county id '" + id + "'"), id_(id) {}
    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

class MissingColumnError : public std::runtime_error {
public:
    explicit MissingColumnError(const std::string& column)
        : std::runtime_error("missing required column '" + column + "'") {}
};

class UnknownIdError : public std::runtime_error {
public:
    explicit UnknownIdError(std::vector<std::string> ids);
    const std::vector<std::string>& ids() const noexcept { return ids_; }

private:
    std::vector<std::string> ids_;
};

/// Raised by shape checks; the message names both shapes.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace epiforge
