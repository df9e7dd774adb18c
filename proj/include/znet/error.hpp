// Copyright 2026 The ZNet Authors. All Rights Reserved.
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

#include <stdexcept>
#include <string>

namespace znet {

/// Base of every error raised by the library. The CLI maps the subclasses
/// onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration supplied by a caller (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Shape or contract violation between tensors and operators.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing files, inconsistent volumes (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or failed numerical checks (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace znet
