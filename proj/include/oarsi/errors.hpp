// Copyright 2026 The oarsi-mt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace oarsi {

/// Base of every error raised by the library. `kind()` is a stable,
/// machine-readable category used by the CLI's single-line error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define OARSI_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(tag, message) {}  \
  };

OARSI_DEFINE_ERROR(ConfigError, "config")
OARSI_DEFINE_ERROR(DataError, "data")
OARSI_DEFINE_ERROR(UsageError, "usage")
OARSI_DEFINE_ERROR(NumericError, "numeric")
OARSI_DEFINE_ERROR(GeometryError, "geometry")
OARSI_DEFINE_ERROR(NormalizationError, "normalization")
OARSI_DEFINE_ERROR(ParseError, "parse")
OARSI_DEFINE_ERROR(IoError, "io")
OARSI_DEFINE_ERROR(LoadError, "load")
OARSI_DEFINE_ERROR(TrainingError, "training")
OARSI_DEFINE_ERROR(UndefinedStatistic, "undefined-statistic")
OARSI_DEFINE_ERROR(BootstrapError, "bootstrap")

#undef OARSI_DEFINE_ERROR

}  // namespace oarsi
