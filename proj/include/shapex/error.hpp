#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shapex {

// Root of every domain error raised by the library. The CLI maps these to
// exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Structural problem in a dataset file (ragged rows, multivariate input).
class FormatError : public Error {
public:
    FormatError(std::size_t row, const std::string& what)
        : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class EmptyDataset : public Error {
public:
    EmptyDataset() : Error("dataset is empty") {}
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN or inf encountered; block() names the parameter block or stage.
class NumericalError : public Error {
public:
    explicit NumericalError(std::string block)
        : Error("non-finite value in " + block), block_(std::move(block)) {}
    const std::string& block() const noexcept { return block_; }

private:
    std::string block_;
};

class MissingLabel : public Error {
public:
    explicit MissingLabel(std::size_t index)
        : Error("instance " + std::to_string(index) + " has no label") {}
};

class EmptyBatch : public Error {
public:
    EmptyBatch() : Error("empty batch") {}
};

class AdapterError : public Error {
public:
    using Error::Error;
};

class AdapterTimeout : public AdapterError {
public:
    using AdapterError::AdapterError;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class DegenerateGroundTruth : public Error {
public:
    DegenerateGroundTruth() : Error("ground truth must contain both 0 and 1") {}
};

// Artifact file written by an incompatible format version.
class VersionError : public Error {
public:
    using Error::Error;
};

} // namespace shapex
