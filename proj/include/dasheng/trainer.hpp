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
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dasheng/audio.hpp"
#include "dasheng/checkpoint.hpp"
#include "dasheng/model.hpp"
#include "dasheng/optim.hpp"
#include "dasheng/rng.hpp"

namespace dasheng::train {

struct ManifestEntry {
    std::string path;
    std::string label;      // empty when absent
    double duration = 0.0;  // seconds; 0 when absent
};

// JSON-lines manifest. Malformed lines are reported (with line numbers) in
// warnings; more than half malformed aborts the load.
struct Manifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> warnings;
};

Manifest load_manifest(const std::string& path);

struct TrainConfig {
    model::ModelConfig model;
    std::string preset;  // non-empty when the model came from a named preset
    int batch_size = 32;
    int batches_per_epoch = 100;
    int epochs = 10;
    std::uint64_t seed = 0;
    double crop_seconds = 10.0;
    double peak_lr = 3e-4;
    double weight_decay = 0.01;
    int warmup_epochs = 3;

    int crop_samples() const;
    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

// Uniform random crop; clips shorter than the target are tiled by repetition
// first. Result is exactly target_samples long.
audio::Waveform crop_or_tile(const audio::Waveform& w, int target_samples, Rng& rng);

// batch_size crops drawn with replacement. Undecodable clips are skipped with
// a log line and redrawn, up to a bounded retry budget.
std::vector<audio::Waveform> sample_batch(const Manifest& m, Rng& rng,
                                          const TrainConfig& cfg);

struct EpochReport {
    int epoch = 0;
    std::int64_t step = 0;
    double train_loss_mean = 0.0;
    double val_mse = 0.0;
    double lr = 0.0;

    std::string to_json() const;
};

struct TrainResult {
    std::vector<EpochReport> reports;
    std::string final_checkpoint;
    std::string log_path;
};

// Epoch loop: per-step derived RNG streams, per-epoch validation MSE under a
// fixed mask seed, and a checkpoint per epoch. Deterministic for a given
// (config, manifests); resuming from an epoch checkpoint reproduces the
// remaining log of an uninterrupted run exactly.
TrainResult train(const TrainConfig& cfg, const Manifest& train_set,
                  const Manifest& val_set, const std::string& out_dir,
                  const std::string& resume_path = "");

// Model parameters (plus optimizer moments under optim.m./optim.v. when opt
// is non-null) with training metadata attached.
ckpt::Checkpoint snapshot(model::MaeModel& m, optim::AdamW* opt,
                          const std::string& meta_json);
void restore_params(const ckpt::Checkpoint& c, model::MaeModel& m);
void restore_moments(const ckpt::Checkpoint& c, optim::AdamW& opt);

// Frozen model for inference tools; the config comes from the metadata.
std::pair<model::ModelConfig, std::unique_ptr<model::MaeModel>> load_model(
    const std::string& path);

}  // namespace dasheng::train
