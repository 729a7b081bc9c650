// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace layerdiff {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Extent or rank mismatch between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf appeared in a computed value.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Missing, truncated or malformed files and datasets.
class DataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace layerdiff
