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

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace oarsi {

// Fixed task order used by heads, manifests, predictions and reports.
// KL is graded 0-4; the six OARSI features 0-3.
inline constexpr std::size_t kNumTasks = 7;
inline constexpr std::array<std::string_view, kNumTasks> kTaskNames = {
    "KL", "FO_L", "FO_M", "TO_L", "TO_M", "JSN_L", "JSN_M"};
inline constexpr std::array<int, kNumTasks> kTaskClasses = {5, 4, 4, 4, 4, 4, 4};

enum TaskId : int { kKL = 0, kFO_L, kFO_M, kTO_L, kTO_M, kJSN_L, kJSN_M };

/// Grade at or above which an exam counts as positive for curve analysis:
/// radiographic OA for KL (>= 2), feature presence for OARSI (>= 1).
inline constexpr int positive_threshold(std::size_t task) { return task == kKL ? 2 : 1; }

inline std::optional<std::size_t> task_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumTasks; ++i)
    if (kTaskNames[i] == name) return i;
  return std::nullopt;
}

using Grades = std::array<std::optional<int>, kNumTasks>;

}  // namespace oarsi
