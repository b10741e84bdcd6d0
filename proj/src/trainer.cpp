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

#include "dasheng/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include <json.hpp>

#include "dasheng/common.hpp"
#include "dasheng/ops.hpp"
#include "dasheng/tokenizer.hpp"

namespace dasheng::train {

using nlohmann::json;

namespace {

// Stream tags keep batch sampling, per-example masks, and validation masks
// on independent derived generators, keyed by absolute step so resumed runs
// replay identically.
constexpr std::uint64_t kStreamBatch = 0x626174ULL;
constexpr std::uint64_t kStreamMask = 0x6d61736bULL;
constexpr std::uint64_t kStreamVal = 0x76616cULL;

}  // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw format_error("manifest: cannot open " + path);
    }
    Manifest m;
    std::string line;
    int line_no = 0;
    int malformed = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            ++malformed;
            m.warnings.push_back("line " + std::to_string(line_no) +
                                 ": bad JSON: " + e.what());
            continue;
        }
        if (!j.is_object() || !j.contains("path") || !j["path"].is_string()) {
            ++malformed;
            m.warnings.push_back("line " + std::to_string(line_no) +
                                 ": missing string field \"path\"");
            continue;
        }
        ManifestEntry e;
        e.path = j["path"].get<std::string>();
        if (j.contains("label") && j["label"].is_string()) {
            e.label = j["label"].get<std::string>();
        }
        if (j.contains("duration") && j["duration"].is_number()) {
            e.duration = j["duration"].get<double>();
        }
        m.entries.push_back(std::move(e));
    }
    if (malformed > 0 &&
        malformed * 2 > malformed + static_cast<int>(m.entries.size())) {
        throw format_error("manifest: " + std::to_string(malformed) + " of " +
                           std::to_string(malformed + m.entries.size()) +
                           " lines malformed in " + path);
    }
    if (m.entries.empty()) {
        m.warnings.push_back("manifest " + path + " is empty");
    }
    return m;
}

int TrainConfig::crop_samples() const {
    return static_cast<int>(crop_seconds * audio::kSampleRate);
}

void TrainConfig::validate() const {
    model.validate();
    if (batch_size <= 0 || batches_per_epoch <= 0) {
        throw domain_error("train config: batch_size and batches_per_epoch "
                           "must be positive");
    }
    if (epochs < 0) {
        throw domain_error("train config: epochs must be nonnegative");
    }
    if (crop_seconds <= 0.0) {
        throw domain_error("train config: crop_seconds must be positive");
    }
    if (peak_lr <= 0.0 || weight_decay < 0.0) {
        throw domain_error("train config: need peak_lr > 0 and weight_decay >= 0");
    }
    if (warmup_epochs < 0) {
        throw domain_error("train config: warmup_epochs must be nonnegative");
    }
}

std::string TrainConfig::to_json() const {
    json j;
    if (!preset.empty()) {
        j["model"] = preset;
    } else {
        j["model"] = json::parse(model.to_json());
    }
    j["batch_size"] = batch_size;
    j["batches_per_epoch"] = batches_per_epoch;
    j["epochs"] = epochs;
    j["seed"] = seed;
    j["crop_seconds"] = crop_seconds;
    j["peak_lr"] = peak_lr;
    j["weight_decay"] = weight_decay;
    j["warmup_epochs"] = warmup_epochs;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw format_error(std::string("train config: bad JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw format_error("train config: expected a JSON object");
    }
    static const char* known[] = {"model", "batch_size", "batches_per_epoch",
                                  "epochs", "seed", "crop_seconds", "peak_lr",
                                  "weight_decay", "warmup_epochs"};
    for (const auto& [key, val] : j.items()) {
        bool ok = false;
        for (const char* k : known) {
            ok = ok || key == k;
        }
        if (!ok) {
            throw format_error("train config: unknown key '" + key + "'");
        }
        (void)val;
    }
    TrainConfig c;
    try {
        if (j.contains("model")) {
            if (j["model"].is_string()) {
                c.preset = j["model"].get<std::string>();
                c.model = model::ModelConfig::preset(c.preset);
            } else {
                c.model = model::ModelConfig::from_json(j["model"].dump());
            }
        }
        c.batch_size = j.value("batch_size", c.batch_size);
        c.batches_per_epoch = j.value("batches_per_epoch", c.batches_per_epoch);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.crop_seconds = j.value("crop_seconds", c.crop_seconds);
        c.peak_lr = j.value("peak_lr", c.peak_lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    } catch (const json::exception& e) {
        throw format_error(std::string("train config: bad field type: ") + e.what());
    }
    c.validate();
    return c;
}

audio::Waveform crop_or_tile(const audio::Waveform& w, int target_samples, Rng& rng) {
    if (w.samples.empty()) {
        throw domain_error("crop: empty waveform");
    }
    if (target_samples <= 0) {
        throw domain_error("crop: target length must be positive");
    }
    const auto target = static_cast<std::size_t>(target_samples);
    std::vector<float> tiled;
    if (w.samples.size() >= target) {
        tiled = w.samples;
    } else {
        tiled.reserve(((target + w.samples.size() - 1) / w.samples.size()) *
                      w.samples.size());
        while (tiled.size() < target) {
            tiled.insert(tiled.end(), w.samples.begin(), w.samples.end());
        }
    }
    const auto start = static_cast<std::size_t>(
        rng.next_below(static_cast<std::uint64_t>(tiled.size() - target + 1)));
    audio::Waveform out;
    out.sample_rate_hz = w.sample_rate_hz;
    out.samples.assign(tiled.begin() + static_cast<std::ptrdiff_t>(start),
                       tiled.begin() + static_cast<std::ptrdiff_t>(start + target));
    return out;
}

std::vector<audio::Waveform> sample_batch(const Manifest& m, Rng& rng,
                                          const TrainConfig& cfg) {
    if (m.entries.empty()) {
        throw domain_error("sample_batch: empty manifest");
    }
    std::vector<audio::Waveform> out;
    out.reserve(static_cast<std::size_t>(cfg.batch_size));
    int budget = 10 * cfg.batch_size;
    while (static_cast<int>(out.size()) < cfg.batch_size) {
        if (budget-- <= 0) {
            throw domain_error("sample_batch: too many undecodable clips");
        }
        const auto idx = static_cast<std::size_t>(
            rng.next_below(static_cast<std::uint64_t>(m.entries.size())));
        try {
            auto w = audio::resample(audio::load_wav(m.entries[idx].path));
            out.push_back(crop_or_tile(w, cfg.crop_samples(), rng));
        } catch (const std::runtime_error& e) {
            std::cerr << "sample_batch: skipping " << m.entries[idx].path << ": "
                      << e.what() << "\n";
        }
    }
    return out;
}

std::string EpochReport::to_json() const {
    json j;
    j["epoch"] = epoch;
    j["step"] = step;
    j["train_loss_mean"] = train_loss_mean;
    if (std::isfinite(val_mse)) {
        j["val_mse"] = val_mse;
    } else {
        j["val_mse"] = nullptr;
    }
    j["lr"] = lr;
    return j.dump();
}

ckpt::Checkpoint snapshot(model::MaeModel& m, optim::AdamW* opt,
                          const std::string& meta_json) {
    ckpt::Checkpoint c;
    c.meta_json = meta_json;
    for (auto& [name, t] : m.named_params()) {
        c.add(name, *t);
    }
    if (opt != nullptr) {
        for (auto& [name, mo, vo] : opt->moments()) {
            c.add("optim.m." + name, *mo);
            c.add("optim.v." + name, *vo);
        }
    }
    return c;
}

void restore_params(const ckpt::Checkpoint& c, model::MaeModel& m) {
    for (auto& [name, t] : m.named_params()) {
        c.read_into(name, *t);
    }
}

void restore_moments(const ckpt::Checkpoint& c, optim::AdamW& opt) {
    for (auto& [name, mo, vo] : opt.moments()) {
        c.read_into("optim.m." + name, *mo);
        c.read_into("optim.v." + name, *vo);
    }
}

std::pair<model::ModelConfig, std::unique_ptr<model::MaeModel>> load_model(
    const std::string& path) {
    auto c = ckpt::load(path);
    json meta;
    try {
        meta = json::parse(c.meta_json);
    } catch (const json::exception& e) {
        throw format_error(std::string("checkpoint metadata is not JSON: ") + e.what());
    }
    if (!meta.is_object() || !meta.contains("config")) {
        throw format_error("checkpoint metadata lacks a \"config\" object");
    }
    auto cfg = model::ModelConfig::from_json(meta["config"].dump());
    auto m = std::make_unique<model::MaeModel>(cfg, 0);
    restore_params(c, *m);
    return {cfg, std::move(m)};
}

namespace {

optim::ScheduleConfig make_schedule(const TrainConfig& cfg) {
    optim::ScheduleConfig s;
    s.total_steps = static_cast<std::int64_t>(cfg.epochs) * cfg.batches_per_epoch;
    // Warmup spans warmup_epochs but is clamped to keep the schedule valid
    // for very short runs.
    s.warmup_steps = std::min<std::int64_t>(
        std::max<std::int64_t>(
            1, static_cast<std::int64_t>(cfg.warmup_epochs) * cfg.batches_per_epoch),
        s.total_steps - 1);
    s.peak_lr = cfg.peak_lr;
    return s;
}

std::string meta_for(const TrainConfig& cfg, int epoch, std::int64_t step,
                     const optim::ScheduleConfig& sched) {
    json j;
    j["kind"] = "dasheng";
    j["config"] = json::parse(cfg.model.to_json());
    j["train_config"] = json::parse(cfg.to_json());
    j["epoch"] = epoch;
    j["step"] = step;
    j["seed"] = cfg.seed;
    j["rng"] = Rng::kAlgorithm;
    j["schedule"] = {{"warmup_steps", sched.warmup_steps},
                     {"total_steps", sched.total_steps},
                     {"peak_lr", sched.peak_lr}};
    return j.dump();
}

// Mean masked-reconstruction MSE over the validation clips; masks come from a
// per-clip derived stream so the metric is comparable across epochs.
double validation_mse(model::MaeModel& m, const Manifest& val,
                      const TrainConfig& cfg) {
    NoGradGuard guard;
    double sum = 0.0;
    int counted = 0;
    for (std::size_t i = 0; i < val.entries.size(); ++i) {
        try {
            auto w = audio::resample(audio::load_wav(val.entries[i].path));
            const auto cap = static_cast<std::size_t>(cfg.crop_samples());
            if (w.samples.size() > cap) {
                w.samples.resize(cap);  // deterministic: leading crop
            }
            auto mel = audio::logmel(w);
            auto chunks = tokenizer::chunkify(mel);
            Rng mask_rng = Rng::derive(cfg.seed, {kStreamVal, i});
            auto plan = tokenizer::sample_mask(chunks.n, mask_rng);
            model::MaeModel::ForwardStats stats;
            m.forward_chunks(chunks, plan, &stats);
            sum += stats.loss;
            ++counted;
        } catch (const std::runtime_error& e) {
            std::cerr << "validation: skipping " << val.entries[i].path << ": "
                      << e.what() << "\n";
        }
    }
    if (counted == 0) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return sum / counted;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Manifest& train_set,
                  const Manifest& val_set, const std::string& out_dir,
                  const std::string& resume_path) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    auto m = std::make_unique<model::MaeModel>(cfg.model, cfg.seed);
    optim::AdamW::Hyper hp;
    hp.weight_decay = cfg.weight_decay;
    optim::AdamW opt(m->named_params(), hp);

    TrainResult result;
    result.log_path = out_dir + "/train_log.jsonl";

    if (cfg.epochs == 0) {
        const optim::ScheduleConfig none{1, 2, cfg.peak_lr, 0.1};
        result.final_checkpoint = out_dir + "/init.dshg";
        ckpt::save(result.final_checkpoint,
                   snapshot(*m, &opt, meta_for(cfg, 0, 0, none)));
        std::ofstream(result.log_path, std::ios::trunc);
        return result;
    }

    if (train_set.entries.empty()) {
        throw domain_error("train: empty training manifest");
    }
    const auto sched = make_schedule(cfg);

    int start_epoch = 0;
    std::int64_t step = 0;
    if (!resume_path.empty()) {
        auto c = ckpt::load(resume_path);
        json meta;
        try {
            meta = json::parse(c.meta_json);
        } catch (const json::exception& e) {
            throw format_error(std::string("resume: metadata is not JSON: ") +
                               e.what());
        }
        const auto stored = model::ModelConfig::from_json(meta.at("config").dump());
        if (!(stored == cfg.model)) {
            throw format_error("resume: checkpoint model config differs from the "
                               "requested one");
        }
        restore_params(c, *m);
        restore_moments(c, opt);
        start_epoch = meta.at("epoch").get<int>();
        step = meta.at("step").get<std::int64_t>();
        opt.set_step_count(step);
    }

    std::ofstream log(result.log_path, std::ios::trunc);
    if (!log) {
        throw format_error("train: cannot open log " + result.log_path);
    }

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (int b = 0; b < cfg.batches_per_epoch; ++b) {
            Rng batch_rng = Rng::derive(cfg.seed, {kStreamBatch,
                                                   static_cast<std::uint64_t>(step)});
            auto batch = sample_batch(train_set, batch_rng, cfg);
            m->zero_grads();
            double batch_loss = 0.0;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                auto mel = audio::logmel(batch[i]);
                Rng mask_rng = Rng::derive(
                    cfg.seed, {kStreamMask, static_cast<std::uint64_t>(step), i});
                model::MaeModel::ForwardStats stats;
                auto loss = m->forward_train(mel, mask_rng, &stats);
                if (!std::isfinite(stats.loss)) {
                    throw numeric_error("train: non-finite loss at step " +
                                        std::to_string(step));
                }
                backward(ops::scale(loss, 1.0f / static_cast<float>(cfg.batch_size)));
                batch_loss += stats.loss;
            }
            last_lr = optim::lr_at(step, sched);
            opt.step(last_lr);
            loss_sum += batch_loss / cfg.batch_size;
            ++step;
        }

        EpochReport r;
        r.epoch = epoch + 1;
        r.step = step;
        r.train_loss_mean = loss_sum / cfg.batches_per_epoch;
        r.val_mse = validation_mse(*m, val_set, cfg);
        r.lr = last_lr;
        result.reports.push_back(r);
        log << r.to_json() << "\n";
        log.flush();

        result.final_checkpoint =
            out_dir + "/epoch_" + std::to_string(epoch + 1) + ".dshg";
        ckpt::save(result.final_checkpoint,
                   snapshot(*m, &opt, meta_for(cfg, epoch + 1, step, sched)));
    }
    return result;
}

}  // namespace dasheng::train
