// Copyright 2026 The StainForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace stainforge {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define STAINFORGE_DEFINE_ERROR(Name)      \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

STAINFORGE_DEFINE_ERROR(ShapeMismatch);
STAINFORGE_DEFINE_ERROR(SingularBasis);
STAINFORGE_DEFINE_ERROR(InvalidArgument);
STAINFORGE_DEFINE_ERROR(InvalidBox);
STAINFORGE_DEFINE_ERROR(NonFiniteError);
STAINFORGE_DEFINE_ERROR(NonScalarLoss);
STAINFORGE_DEFINE_ERROR(IoError);
STAINFORGE_DEFINE_ERROR(ManifestError);
STAINFORGE_DEFINE_ERROR(SizeMismatch);
STAINFORGE_DEFINE_ERROR(GridGap);
STAINFORGE_DEFINE_ERROR(MissingAnnotation);
STAINFORGE_DEFINE_ERROR(ConfigError);

#undef STAINFORGE_DEFINE_ERROR

/// Malformed text record; carries the 1-based line number.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Checkpoint with a version tag this build does not understand.
class UnsupportedVersion : public Error {
 public:
  using Error::Error;
};

}  // namespace stainforge
