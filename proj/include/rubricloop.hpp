// Copyright 2026 The rubricloop Authors.
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

// Umbrella header for the rubricloop library.

#ifndef RUBRICLOOP_RUBRICLOOP_HPP_
#define RUBRICLOOP_RUBRICLOOP_HPP_

#include "rubricloop/calibration.hpp"
#include "rubricloop/dialogue.hpp"
#include "rubricloop/env.hpp"
#include "rubricloop/error.hpp"
#include "rubricloop/eval.hpp"
#include "rubricloop/parallel.hpp"
#include "rubricloop/policy.hpp"
#include "rubricloop/random.hpp"
#include "rubricloop/rubric.hpp"
#include "rubricloop/stats.hpp"
#include "rubricloop/training.hpp"
#include "rubricloop/worker.hpp"

namespace rubricloop {

inline constexpr const char* kLibraryVersion = "0.1.0";
// Schema of the eval and calibration report files.
inline constexpr int kReportVersion = 1;

}  // namespace rubricloop

#endif  // RUBRICLOOP_RUBRICLOOP_HPP_
