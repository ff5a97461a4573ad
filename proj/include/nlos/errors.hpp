// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The nlos-npr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef NLOS_ERRORS_HPP
#define NLOS_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nlos {

// Every library failure derives from Error so the CLI can map it to an exit code.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration value; field() names the offending field.
class ConfigError : public Error {
  public:
    ConfigError(std::string field, const std::string &what)
        : Error("configuration error in '" + field + "': " + what), field_(std::move(field)) {}
    const std::string &field() const noexcept { return field_; }

  private:
    std::string field_;
};

class InvalidInputError : public Error {
  public:
    using Error::Error;
};

class ShapeError : public Error {
  public:
    using Error::Error;
};

class DomainError : public Error {
  public:
    using Error::Error;
};

// Operation requires state the object does not have yet (untrained model, uninitialized stats).
class StateError : public Error {
  public:
    using Error::Error;
};

class ParseError : public Error {
  public:
    ParseError(std::size_t line, const std::string &what)
        : Error("parse error at line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class VersionError : public Error {
  public:
    using Error::Error;
};

class ConditioningError : public Error {
  public:
    using Error::Error;
};

class ProtocolError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

// A required input file (dataset, checkpoint) does not exist.
class MissingArtifactError : public Error {
  public:
    using Error::Error;
};

} // namespace nlos

#endif // NLOS_ERRORS_HPP
