/*
 * Copyright (c) 2026 the dasheng-cpp authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "dasheng/tensor.hpp"

namespace dasheng::optim {

// Linear warmup to peak_lr, then cosine decay to final_fraction * peak_lr.
// Steps past total_steps clamp to the floor.
struct ScheduleConfig {
    std::int64_t warmup_steps = 1;
    std::int64_t total_steps = 2;
    double peak_lr = 3e-4;
    double final_fraction = 0.1;

    void validate() const;
};

double lr_at(std::int64_t step, const ScheduleConfig& cfg);

// Decoupled-weight-decay Adam over a named parameter list. Decay touches the
// weight matrices only; biases, LayerNorm affines, positional tables, and the
// mask token are exempt.
template <class T>
class AdamWT {
  public:
    struct Hyper {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    AdamWT(std::vector<std::pair<std::string, TensorT<T>*>> params, Hyper hp);

    // One update from the parameters' current grads. A non-finite gradient
    // aborts before any parameter or moment changes.
    void step(double lr);

    std::int64_t step_count() const { return step_; }
    void set_step_count(std::int64_t s);

    const Hyper& hyper() const { return hp_; }

    // (param name, first moment, second moment); storage for checkpoints.
    std::vector<std::tuple<std::string, TensorT<T>*, TensorT<T>*>> moments();

    // True if decoupled decay applies: the name's leaf component is a weight
    // matrix (embed.w, *.wq, *.mlp.w1, head.w, ...).
    static bool decays(const std::string& name);

  private:
    struct Slot {
        std::string name;
        TensorT<T>* param;
        TensorT<T> m;
        TensorT<T> v;
        bool decay;
    };

    std::vector<Slot> slots_;
    Hyper hp_;
    std::int64_t step_ = 0;
};

using AdamW = AdamWT<float>;

}  // namespace dasheng::optim
