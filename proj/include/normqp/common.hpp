// Copyright 2026 The normqp Authors
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

#include <cstdio>
#include <stdexcept>
#include <string>

namespace normqp {

using Index = long;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid problem data or arguments (dimension mismatch, NaN, asymmetry, ...).
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(what) {}
};

/// The feasible set of the problem (or of a subproblem) is empty.
class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what) : Error(what) {}
};

/// An iterative eigensolver failed to converge; callers may retry densely.
class ArnoldiNotConverged : public Error {
 public:
  explicit ArnoldiNotConverged(const std::string& what) : Error(what) {}
};

/// A linear system declared consistent turned out not to be.
class InconsistentSystem : public Error {
 public:
  InconsistentSystem(const std::string& what, double achieved_residual)
      : Error(what), residual(achieved_residual) {}
  double residual;
};

/// Numerical breakdown that should be impossible for valid inputs.
class InternalError : public Error {
 public:
  explicit InternalError(const std::string& what) : Error(what) {}
};

/// Text input that could not be parsed; `line` is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error("line " + std::to_string(line) + ": " + what), line(line) {}
  long line;
};

/// Formats a double with enough digits to round-trip bit-exactly.
inline std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace normqp
