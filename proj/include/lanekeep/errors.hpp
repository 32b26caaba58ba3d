#pragma once

#include <stdexcept>
#include <string>

namespace lanekeep {

// Every error carries a short machine-readable kind so the CLI can print
// "error: <kind>: <message>" on a single line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define LANEKEEP_DEFINE_ERROR(Name, tag)                                      \
    class Name : public Error {                                               \
    public:                                                                   \
        explicit Name(const std::string& what) : Error(tag, what) {}          \
    };

LANEKEEP_DEFINE_ERROR(ConfigError, "config")
LANEKEEP_DEFINE_ERROR(IndexError, "index")
LANEKEEP_DEFINE_ERROR(ContractViolation, "contract")
LANEKEEP_DEFINE_ERROR(NumericError, "numeric")
LANEKEEP_DEFINE_ERROR(ShapeError, "shape")
LANEKEEP_DEFINE_ERROR(OffWorldError, "off-world")
LANEKEEP_DEFINE_ERROR(InputError, "input")
LANEKEEP_DEFINE_ERROR(FormatError, "format")
LANEKEEP_DEFINE_ERROR(IoError, "io")

#undef LANEKEEP_DEFINE_ERROR

}  // namespace lanekeep
