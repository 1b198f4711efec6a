// Copyright 2026 The fedleak Authors
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

#ifndef FEDLEAK_FEDSIM_HPP_
#define FEDLEAK_FEDSIM_HPP_

#include <optional>
#include <vector>

#include "fedleak/minitransformer.hpp"

namespace fedleak::fedsim {

using minitransformer::Batch;
using minitransformer::GradientUpdate;
using minitransformer::ModelParams;
using numkernel::Rng;

enum class NoiseDist { kLaplace, kGaussian };

struct DefenseConfig {
  std::optional<double> clip_norm;  // global-norm clip target
  double noise_scale = 0.0;         // per-entry noise scale (0 = off)
  NoiseDist noise_dist = NoiseDist::kLaplace;
};

struct ProtocolConfig {
  int users_per_round = 1;
  int batch_size = 1;
  int seq_len = 32;
  DefenseConfig defense;
  bool dropout_enabled = false;

  void validate() const;
};

// One fedSGD update: the gradient of the server model averaged over the
// user's local batch.
GradientUpdate user_update(const ModelParams& params, const Batch& batch,
                           Rng* dropout_rng = nullptr);

// Arithmetic mean per tensor; token counts add up.
GradientUpdate aggregate(const std::vector<GradientUpdate>& updates);

// Global-norm clipping (when configured) followed by i.i.d. per-entry noise.
GradientUpdate apply_defense(const GradientUpdate& update, const DefenseConfig& cfg,
                             Rng& rng);

}  // namespace fedleak::fedsim

#endif  // FEDLEAK_FEDSIM_HPP_
