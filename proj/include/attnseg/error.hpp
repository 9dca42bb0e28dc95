/* Copyright 2026 The attnseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef ATTNSEG_ERROR_HPP_
#define ATTNSEG_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace attnseg {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf showed up in a forward value or a gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed annotation text. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(int line, const std::string& detail, const std::string& source = "")
      : Error((source.empty() ? "" : source + ": ") + "line " + std::to_string(line) + ": " +
              detail),
        line_(line),
        detail_(detail) {}
  int line() const { return line_; }
  const std::string& detail() const { return detail_; }

 private:
  int line_;
  std::string detail_;
};

// Polygon whose rasterization covers no pixel centre.
class DegeneratePolygonError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure. Carries the offending path.
class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Checkpoint file is unreadable, truncated or inconsistent.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace attnseg

#endif  // ATTNSEG_ERROR_HPP_
