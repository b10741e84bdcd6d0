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

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dasheng/audio.hpp"
#include "dasheng/checkpoint.hpp"
#include "dasheng/common.hpp"
#include "dasheng/embedder.hpp"
#include "dasheng/eval.hpp"
#include "dasheng/model.hpp"
#include "dasheng/rng.hpp"
#include "dasheng/tokenizer.hpp"
#include "dasheng/trainer.hpp"

namespace {

using dasheng::format_error;
using nlohmann::json;

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw format_error("cannot open " + path);
    }
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

// Every run prints what it resolved to, so logs identify the exact job.
void announce(const json& resolved) {
    std::cerr << "config: " << resolved.dump() << "\n";
}

struct TrainArgs {
    std::string config, train_manifest, val_manifest, out_dir, preset, resume;
};

void run_train(const TrainArgs& a) {
    dasheng::train::TrainConfig cfg;
    if (!a.config.empty()) {
        cfg = dasheng::train::TrainConfig::from_json(slurp(a.config));
    }
    if (!a.preset.empty()) {
        cfg.preset = a.preset;
        cfg.model = dasheng::model::ModelConfig::preset(a.preset);
    }
    cfg.validate();
    json resolved = json::parse(cfg.to_json());
    resolved["command"] = "train";
    resolved["train"] = a.train_manifest;
    resolved["val"] = a.val_manifest;
    resolved["out"] = a.out_dir;
    if (!a.resume.empty()) {
        resolved["resume"] = a.resume;
    }
    announce(resolved);

    const auto train_set = dasheng::train::load_manifest(a.train_manifest);
    const auto val_set = dasheng::train::load_manifest(a.val_manifest);
    for (const auto& w : train_set.warnings) {
        std::cerr << "train manifest: " << w << "\n";
    }
    for (const auto& w : val_set.warnings) {
        std::cerr << "val manifest: " << w << "\n";
    }
    const auto result =
        dasheng::train::train(cfg, train_set, val_set, a.out_dir, a.resume);
    for (const auto& r : result.reports) {
        std::cerr << r.to_json() << "\n";
    }
    std::cerr << "final checkpoint: " << result.final_checkpoint << "\n";
}

struct EmbedArgs {
    std::string ckpt, manifest, out;
    bool pooled = false;
};

void run_embed(const EmbedArgs& a) {
    announce({{"command", "embed"},
              {"ckpt", a.ckpt},
              {"manifest", a.manifest},
              {"out", a.out},
              {"pooled", a.pooled}});
    auto [cfg, m] = dasheng::train::load_model(a.ckpt);
    const auto manifest = dasheng::train::load_manifest(a.manifest);
    for (const auto& w : manifest.warnings) {
        std::cerr << "manifest: " << w << "\n";
    }
    const auto summary = dasheng::embed::embed_batch(manifest, *m, a.out, a.pooled);
    std::cerr << "wrote " << summary.written << " records to " << a.out << " ("
              << summary.skipped.size() << " skipped)\n";
    if (summary.written == 0) {
        throw dasheng::domain_error("no clips could be embedded");
    }
}

struct EvalArgs {
    std::string train_archive, train_labels, test_archive, test_labels, out;
    int k = 10;
    int folds = 0;
    std::uint64_t seed = 0;
    bool hidden = false;  // eval-probe only
};

dasheng::eval::LabeledEmbeddings load_labeled(
    const std::string& archive, const std::map<std::string, std::string>& by_id,
    const std::vector<std::string>& class_names) {
    std::vector<std::string> warnings;
    auto e = dasheng::eval::labeled_from_archive(dasheng::embed::read_archive(archive),
                                                 by_id, class_names, &warnings);
    for (const auto& w : warnings) {
        std::cerr << archive << ": " << w << "\n";
    }
    return e;
}

void write_report(const std::string& path, const std::string& body) {
    if (path.empty()) {
        return;
    }
    std::ofstream f(path, std::ios::trunc);
    f << body << "\n";
    if (!f) {
        throw format_error("cannot write " + path);
    }
}

void run_eval_knn(const EvalArgs& a) {
    announce({{"command", "eval-knn"},
              {"train", a.train_archive},
              {"train_labels", a.train_labels},
              {"test", a.test_archive},
              {"test_labels", a.test_labels},
              {"k", a.k},
              {"folds", a.folds},
              {"seed", a.seed}});
    const auto train_map = dasheng::eval::load_label_file(a.train_labels);
    const auto test_map = dasheng::eval::load_label_file(a.test_labels);
    const auto classes = dasheng::eval::class_names_union({&train_map, &test_map});
    auto train = load_labeled(a.train_archive, train_map, classes);
    auto test = load_labeled(a.test_archive, test_map, classes);

    if (a.folds == 0) {
        auto report = dasheng::eval::knn_classify(train, test, a.k);
        std::cerr << "accuracy: " << report.accuracy << "\n";
        write_report(a.out, report.to_json());
        return;
    }

    // Cross-validation pools both archives and refolds them.
    dasheng::eval::LabeledEmbeddings pool = train;
    pool.vectors.insert(pool.vectors.end(), test.vectors.begin(),
                        test.vectors.end());
    pool.labels.insert(pool.labels.end(), test.labels.begin(), test.labels.end());
    dasheng::Rng rng(a.seed);
    std::vector<std::string> warnings;
    const auto fold = dasheng::eval::kfold_split(pool.labels, a.folds, rng, &warnings);
    for (const auto& w : warnings) {
        std::cerr << "kfold: " << w << "\n";
    }
    json out;
    out["folds"] = json::array();
    double mean = 0.0;
    for (int f = 0; f < a.folds; ++f) {
        dasheng::eval::LabeledEmbeddings tr, te;
        tr.dim = te.dim = pool.dim;
        tr.class_names = te.class_names = pool.class_names;
        for (int i = 0; i < pool.n(); ++i) {
            auto& dst = fold[i] == f ? te : tr;
            dst.vectors.insert(dst.vectors.end(), pool.row(i), pool.row(i) + pool.dim);
            dst.labels.push_back(pool.labels[i]);
        }
        auto report = dasheng::eval::knn_classify(tr, te, a.k);
        report.fold = f;
        std::cerr << "fold " << f << ": accuracy " << report.accuracy << "\n";
        mean += report.accuracy;
        out["folds"].push_back(json::parse(report.to_json()));
    }
    mean /= a.folds;
    out["mean_accuracy"] = mean;
    std::cerr << "mean accuracy: " << mean << "\n";
    write_report(a.out, out.dump());
}

void run_eval_probe(const EvalArgs& a) {
    announce({{"command", "eval-probe"},
              {"train", a.train_archive},
              {"train_labels", a.train_labels},
              {"test", a.test_archive},
              {"test_labels", a.test_labels},
              {"hidden", a.hidden},
              {"seed", a.seed}});
    const auto train_map = dasheng::eval::load_label_file(a.train_labels);
    const auto test_map = dasheng::eval::load_label_file(a.test_labels);
    const auto classes = dasheng::eval::class_names_union({&train_map, &test_map});
    auto train = load_labeled(a.train_archive, train_map, classes);
    auto test = load_labeled(a.test_archive, test_map, classes);
    dasheng::eval::ProbeSpec spec;
    spec.hidden = a.hidden;
    spec.seed = a.seed;
    auto [probe, report] = dasheng::eval::probe_train(train, test, spec);
    std::cerr << "accuracy: " << report.accuracy << "\n";
    write_report(a.out, report.to_json());
}

struct FeatureArgs {
    std::string in, out;
};

void run_features(const FeatureArgs& a) {
    announce({{"command", "features"}, {"in", a.in}, {"out", a.out}});
    const auto mel = dasheng::audio::logmel(
        dasheng::audio::resample(dasheng::audio::load_wav(a.in)));
    dasheng::embed::ArchiveRecord rec;
    rec.id = a.in;
    rec.n_frames = mel.frames;
    rec.dim = mel.bins;
    rec.pooled = false;
    rec.values = mel.values;
    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw format_error("cannot open " + a.out);
    }
    dasheng::embed::append_record(f, rec);
    f.flush();
    if (!f) {
        throw format_error("write failed for " + a.out);
    }
    std::cerr << "wrote " << mel.frames << " x " << mel.bins << " log-Mel frames\n";
}

void run_inspect(const std::string& path) {
    announce({{"command", "inspect-ckpt"}, {"ckpt", path}});
    const auto c = dasheng::ckpt::load(path);
    std::cout << c.meta_json << "\n";
    std::size_t total = 0;
    for (const auto& t : c.tensors) {
        std::cout << t.name << "  dtype=" << (t.dtype == dasheng::ckpt::kDtypeF64
                                                  ? "f64"
                                                  : "f32")
                  << "  shape=[";
        for (std::size_t i = 0; i < t.dims.size(); ++i) {
            std::cout << (i ? "," : "") << t.dims[i];
        }
        std::cout << "]  numel=" << t.numel() << "\n";
        total += t.numel();
    }
    std::cout << "tensors: " << c.tensors.size() << "  parameters: " << total
              << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dasheng: masked-autoencoder audio pretraining, embedding, "
                 "and evaluation"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Pretrain on a manifest of clips");
    train_cmd->add_option("--config", train_args.config, "Training config JSON");
    train_cmd->add_option("--train", train_args.train_manifest, "Training manifest JSONL")
        ->required();
    train_cmd->add_option("--val", train_args.val_manifest, "Validation manifest JSONL")
        ->required();
    train_cmd->add_option("--out", train_args.out_dir, "Output directory")->required();
    train_cmd->add_option("--preset", train_args.preset, "Model preset")
        ->check(CLI::IsMember({"base", "0.6b", "1.2b", "tiny"}));
    train_cmd->add_option("--resume", train_args.resume, "Checkpoint to resume from");
    train_cmd->callback([&] { run_train(train_args); });

    EmbedArgs embed_args;
    auto* embed_cmd = app.add_subcommand("embed", "Extract frozen embeddings");
    embed_cmd->add_option("--ckpt", embed_args.ckpt, "Model checkpoint")->required();
    embed_cmd->add_option("--manifest", embed_args.manifest, "Clip manifest JSONL")
        ->required();
    embed_cmd->add_option("--out", embed_args.out, "Output archive")->required();
    embed_cmd->add_flag("--pooled", embed_args.pooled, "Mean-pool to one vector per clip");
    embed_cmd->callback([&] { run_embed(embed_args); });

    EvalArgs knn_args;
    auto* knn_cmd = app.add_subcommand("eval-knn", "Cosine k-NN classification");
    knn_cmd->add_option("--train", knn_args.train_archive, "Training archive")->required();
    knn_cmd->add_option("--train-labels", knn_args.train_labels, "Training labels JSONL")
        ->required();
    knn_cmd->add_option("--test", knn_args.test_archive, "Test archive")->required();
    knn_cmd->add_option("--test-labels", knn_args.test_labels, "Test labels JSONL")
        ->required();
    knn_cmd->add_option("--k", knn_args.k, "Neighbour count")->check(CLI::PositiveNumber);
    knn_cmd->add_option("--folds", knn_args.folds, "Cross-validate over pooled data")
        ->check(CLI::PositiveNumber);
    knn_cmd->add_option("--seed", knn_args.seed, "Fold shuffle seed");
    knn_cmd->add_option("--out", knn_args.out, "Report JSON path");
    knn_cmd->callback([&] { run_eval_knn(knn_args); });

    EvalArgs probe_args;
    auto* probe_cmd = app.add_subcommand("eval-probe", "Shallow probe on frozen embeddings");
    probe_cmd->add_option("--train", probe_args.train_archive, "Training archive")
        ->required();
    probe_cmd->add_option("--train-labels", probe_args.train_labels,
                          "Training labels JSONL")
        ->required();
    probe_cmd->add_option("--test", probe_args.test_archive, "Validation archive")
        ->required();
    probe_cmd->add_option("--test-labels", probe_args.test_labels,
                          "Validation labels JSONL")
        ->required();
    probe_cmd->add_flag("--hidden", probe_args.hidden, "One 512-wide GeLU hidden layer");
    probe_cmd->add_option("--seed", probe_args.seed, "Probe init/shuffle seed");
    probe_cmd->add_option("--out", probe_args.out, "Report JSON path");
    probe_cmd->callback([&] { run_eval_probe(probe_args); });

    FeatureArgs feat_args;
    auto* feat_cmd = app.add_subcommand("features", "Dump the log-Mel frontend output");
    feat_cmd->add_option("--in", feat_args.in, "Input WAV")->required();
    feat_cmd->add_option("--out", feat_args.out, "Output record file")->required();
    feat_cmd->callback([&] { run_features(feat_args); });

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect-ckpt", "Print checkpoint contents");
    inspect_cmd->add_option("--ckpt", inspect_path, "Checkpoint file")->required();
    inspect_cmd->callback([&] { run_inspect(inspect_path); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const dasheng::numeric_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
