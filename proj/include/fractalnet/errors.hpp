#pragma once

#include <stdexcept>
#include <string>

namespace fractalnet {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateBatchError : std::runtime_error {
    explicit DegenerateBatchError(const std::string& msg) : std::runtime_error(msg) {}
};

struct LabelError : std::runtime_error {
    explicit LabelError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyDatasetError : std::runtime_error {
    explicit EmptyDatasetError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyResultsError : std::runtime_error {
    explicit EmptyResultsError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnknownModelError : std::runtime_error {
    explicit UnknownModelError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fractalnet
