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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dasheng/embedder.hpp"
#include "dasheng/rng.hpp"
#include "dasheng/tensor.hpp"

namespace dasheng::eval {

// Frozen clip-level embeddings with integer class ids.
struct LabeledEmbeddings {
    int dim = 0;
    std::vector<float> vectors;  // n() x dim, row-major
    std::vector<int> labels;     // class ids in [0, num_classes)
    std::vector<std::string> class_names;

    int n() const { return static_cast<int>(labels.size()); }
    const float* row(int i) const {
        return vectors.data() + static_cast<std::size_t>(i) * dim;
    }
    int num_classes() const;
    // Checks vector/label sizes and label range.
    void validate() const;
};

struct EvalReport {
    double accuracy = 0.0;
    std::vector<double> per_class;          // recall per class id
    std::vector<std::vector<int>> confusion;  // [true][predicted]
    std::string params;                     // hyperparameters, JSON object
    int fold = -1;                          // fold id when part of a CV run
    bool zero_norm_fallback = false;        // some vector had zero norm

    std::string to_json() const;
};

// Confusion matrix, accuracy == trace/M, and per-class recall from
// ground-truth/prediction pairs over `num_classes` classes.
EvalReport make_report(const std::vector<int>& truth,
                       const std::vector<int>& preds, int num_classes);

// Exact cosine k-NN: L2-normalize then dot product, majority vote among the
// k nearest, ties broken by the single nearest neighbour within the tied
// classes. Zero-norm vectors are kept unnormalized (dot fallback) and
// flagged. Parallel over test points, identical to serial execution.
std::vector<int> knn_predict(const LabeledEmbeddings& train,
                             const LabeledEmbeddings& test, int k,
                             bool* zero_norm_seen = nullptr);
EvalReport knn_classify(const LabeledEmbeddings& train,
                        const LabeledEmbeddings& test, int k = 10);

// Fold id per index, sizes differing by at most one. The labelled overload
// stratifies per class with one global round-robin cursor; classes smaller
// than `folds` are noted in `warnings`. Deterministic under the rng seed.
std::vector<int> kfold_split(int m, int folds, Rng& rng);
std::vector<int> kfold_split(const std::vector<int>& labels, int folds,
                             Rng& rng,
                             std::vector<std::string>* warnings = nullptr);

// Shallow probe on frozen embeddings: linear, or one GeLU hidden layer.
struct ProbeSpec {
    bool hidden = false;
    int hidden_dim = 512;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int epochs = 100;
    int batch_size = 64;
    int patience = 10;  // early stop after this many epochs w/o val gain
    std::uint64_t seed = 0;
};

struct Probe {
    int in_dim = 0;
    int num_classes = 0;
    bool hidden = false;
    // linear: {w, b}; hidden: {w1, b1, w2, b2}
    std::vector<std::pair<std::string, Tensor>> params;

    std::vector<int> predict(const LabeledEmbeddings& data) const;
};

// Trains with softmax cross-entropy and AdamW at a fixed recipe, early
// stopping on validation accuracy and restoring the best epoch's weights.
// The report is the restored probe's validation performance. Inputs are
// never modified.
std::pair<Probe, EvalReport> probe_train(const LabeledEmbeddings& train,
                                         const LabeledEmbeddings& val,
                                         const ProbeSpec& spec);

// Labels JSONL: one {"id": ..., "label": ...} object per line.
std::map<std::string, std::string> load_label_file(const std::string& path);

// Sorted union of label strings across files; defines the class-id order.
std::vector<std::string> class_names_union(
    const std::vector<const std::map<std::string, std::string>*>& files);

// Joins archive records with labels by id. Frame-level records are mean
// pooled to one vector. Records without a label are skipped with a warning.
LabeledEmbeddings labeled_from_archive(
    const std::vector<embed::ArchiveRecord>& records,
    const std::map<std::string, std::string>& by_id,
    const std::vector<std::string>& class_names,
    std::vector<std::string>* warnings = nullptr);

}  // namespace dasheng::eval
