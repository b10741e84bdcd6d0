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

#include "dasheng/optim.hpp"

#include <cmath>

#include "dasheng/common.hpp"

namespace dasheng::optim {

void ScheduleConfig::validate() const {
    if (warmup_steps <= 0 || warmup_steps >= total_steps) {
        throw domain_error("schedule: need 0 < warmup_steps < total_steps");
    }
    if (peak_lr <= 0.0) {
        throw domain_error("schedule: peak_lr must be positive");
    }
    if (final_fraction < 0.0 || final_fraction > 1.0) {
        throw domain_error("schedule: final_fraction must lie in [0, 1]");
    }
}

double lr_at(std::int64_t step, const ScheduleConfig& cfg) {
    cfg.validate();
    if (step < 0) {
        throw domain_error("schedule: step must be nonnegative");
    }
    if (step < cfg.warmup_steps) {
        return cfg.peak_lr * static_cast<double>(step + 1) /
               static_cast<double>(cfg.warmup_steps);
    }
    const double floor_lr = cfg.final_fraction * cfg.peak_lr;
    if (step >= cfg.total_steps) {
        return floor_lr;
    }
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    if (progress == 0.0) {
        return cfg.peak_lr;  // exact peak at the warmup/decay boundary
    }
    constexpr double kPi = 3.14159265358979323846;
    return floor_lr +
           0.5 * (cfg.peak_lr - floor_lr) * (1.0 + std::cos(kPi * progress));
}

template <class T>
AdamWT<T>::AdamWT(std::vector<std::pair<std::string, TensorT<T>*>> params, Hyper hp)
    : hp_(hp) {
    slots_.reserve(params.size());
    for (auto& [name, p] : params) {
        if (p == nullptr || !p->data) {
            throw dim_error("adamw: null parameter " + name);
        }
        Slot s;
        s.name = name;
        s.param = p;
        s.m = TensorT<T>::zeros(p->shape);
        s.v = TensorT<T>::zeros(p->shape);
        s.decay = decays(name);
        slots_.push_back(std::move(s));
    }
}

template <class T>
bool AdamWT<T>::decays(const std::string& name) {
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    return !leaf.empty() && leaf[0] == 'w';
}

template <class T>
void AdamWT<T>::set_step_count(std::int64_t s) {
    if (s < 0) {
        throw domain_error("adamw: step count must be nonnegative");
    }
    step_ = s;
}

template <class T>
std::vector<std::tuple<std::string, TensorT<T>*, TensorT<T>*>> AdamWT<T>::moments() {
    std::vector<std::tuple<std::string, TensorT<T>*, TensorT<T>*>> out;
    out.reserve(slots_.size());
    for (auto& s : slots_) {
        out.emplace_back(s.name, &s.m, &s.v);
    }
    return out;
}

template <class T>
void AdamWT<T>::step(double lr) {
    if (lr < 0.0) {
        throw domain_error("adamw: negative learning rate");
    }
    for (auto& s : slots_) {
        if (!s.param->grad) {
            throw dim_error("adamw: parameter " + s.name + " has no grad buffer");
        }
        for (T g : *s.param->grad) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw numeric_error("adamw: non-finite gradient in " + s.name);
            }
        }
    }

    ++step_;
    const double b1 = hp_.beta1;
    const double b2 = hp_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (auto& s : slots_) {
        const T* g = s.param->grad->data();
        T* p = s.param->data->data();
        T* m = s.m.data->data();
        T* v = s.v.data->data();
        const std::size_t n = s.param->data->size();
        const double wd = s.decay ? hp_.weight_decay : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = (mi / c1) / (std::sqrt(vi / c2) + hp_.eps);
            // Decoupled decay uses the pre-update parameter value.
            const double pi = static_cast<double>(p[i]);
            p[i] = static_cast<T>(pi - lr * update - lr * wd * pi);
        }
    }
}

template class AdamWT<float>;
template class AdamWT<double>;

}  // namespace dasheng::optim
