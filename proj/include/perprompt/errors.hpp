// Copyright 2026 The perprompt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace perprompt {

// Base of every error the library throws. The CLI maps subclasses to exit
// codes: usage/config -> 1, data -> 2, backend/execution -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data. `line` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ReferenceError : public Error {
 public:
  using Error::Error;
};

// The code sandbox itself could not run (as opposed to tests failing).
class ExecutionError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  BackendError(const std::string& what, int status = 0, std::size_t attempts = 1)
      : Error(what), status_(status), attempts_(attempts) {}
  // HTTP status of the last response, 0 for transport failures.
  int status() const { return status_; }
  std::size_t attempts() const { return attempts_; }

 private:
  int status_;
  std::size_t attempts_;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class VerdictParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace perprompt
