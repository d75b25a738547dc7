#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace agentsoc {

using json = nlohmann::ordered_json;

// Seconds since the epoch of whatever clock the input data uses.
using Timestamp = std::int64_t;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Formats epoch seconds as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_utc(Timestamp t);

// Accepts "YYYY-MM-DD HH:MM:SS", "YYYY-MM-DDTHH:MM:SS" with optional "Z" or
// "+hh:mm"/"-hh:mm" suffix, or a bare integer of epoch seconds.
Timestamp parse_timestamp(std::string_view text);

// Wall-clock UTC time, used only for audit records.
std::string now_utc();

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

}  // namespace agentsoc
