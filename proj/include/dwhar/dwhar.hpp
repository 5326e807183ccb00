// Copyright 2026 The DecomposeWHAR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "dwhar/config.hpp"
#include "dwhar/data.hpp"
#include "dwhar/error.hpp"
#include "dwhar/gradcheck.hpp"
#include "dwhar/metrics.hpp"
#include "dwhar/model.hpp"
#include "dwhar/ops.hpp"
#include "dwhar/scan.hpp"
#include "dwhar/serialize.hpp"
#include "dwhar/tensor.hpp"
#include "dwhar/training.hpp"
