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

#include "dasheng/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "dasheng/common.hpp"
#include "dasheng/kernels.hpp"
#include "dasheng/ops.hpp"
#include "dasheng/optim.hpp"

namespace dasheng::eval {

namespace {

constexpr std::uint64_t kStreamProbeInit = 0x70726f6265ULL;     // "probe"
constexpr std::uint64_t kStreamProbeShuffle = 0x7073687566ULL;  // "pshuf"

void shuffle(std::vector<int>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng.next_below(i)]);
    }
}

// Rows L2-normalized in double; zero-norm rows pass through unnormalized.
std::vector<double> normalized_rows(const LabeledEmbeddings& e,
                                    bool* zero_seen) {
    std::vector<double> out(e.vectors.size());
    for (int i = 0; i < e.n(); ++i) {
        const float* x = e.row(i);
        double s = 0.0;
        for (int j = 0; j < e.dim; ++j) {
            s += static_cast<double>(x[j]) * x[j];
        }
        const double norm = std::sqrt(s);
        if (norm == 0.0 && zero_seen != nullptr) {
            *zero_seen = true;
        }
        const double inv = norm == 0.0 ? 1.0 : 1.0 / norm;
        double* y = out.data() + static_cast<std::size_t>(i) * e.dim;
        for (int j = 0; j < e.dim; ++j) {
            y[j] = x[j] * inv;
        }
    }
    return out;
}

}  // namespace

int LabeledEmbeddings::num_classes() const {
    int c = static_cast<int>(class_names.size());
    for (int l : labels) {
        c = std::max(c, l + 1);
    }
    return c;
}

void LabeledEmbeddings::validate() const {
    if (dim <= 0) {
        throw dim_error("embeddings: dim must be positive");
    }
    if (vectors.size() != static_cast<std::size_t>(n()) * dim) {
        throw dim_error("embeddings: vector/label count mismatch");
    }
    for (int l : labels) {
        if (l < 0) {
            throw domain_error("embeddings: negative label");
        }
    }
    if (n() < num_classes()) {
        throw domain_error("embeddings: fewer points than classes");
    }
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["accuracy"] = accuracy;
    j["per_class"] = per_class;
    j["confusion"] = confusion;
    j["params"] = nlohmann::json::parse(params.empty() ? "{}" : params);
    if (fold >= 0) {
        j["fold"] = fold;
    }
    j["zero_norm_fallback"] = zero_norm_fallback;
    return j.dump();
}

EvalReport make_report(const std::vector<int>& truth,
                       const std::vector<int>& preds, int num_classes) {
    if (truth.size() != preds.size() || truth.empty()) {
        throw dim_error("report: need one prediction per truth label");
    }
    EvalReport r;
    r.confusion.assign(num_classes, std::vector<int>(num_classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= num_classes || preds[i] < 0 ||
            preds[i] >= num_classes) {
            throw domain_error("report: label outside class range");
        }
        ++r.confusion[truth[i]][preds[i]];
    }
    int trace = 0;
    r.per_class.assign(num_classes, 0.0);
    for (int c = 0; c < num_classes; ++c) {
        trace += r.confusion[c][c];
        int row = 0;
        for (int p = 0; p < num_classes; ++p) {
            row += r.confusion[c][p];
        }
        r.per_class[c] = row == 0 ? 0.0 : static_cast<double>(r.confusion[c][c]) / row;
    }
    r.accuracy = static_cast<double>(trace) / static_cast<double>(truth.size());
    return r;
}

std::vector<int> knn_predict(const LabeledEmbeddings& train,
                             const LabeledEmbeddings& test, int k,
                             bool* zero_norm_seen) {
    train.validate();
    if (test.dim != train.dim) {
        throw dim_error("knn: train/test dims disagree");
    }
    if (test.n() == 0) {
        throw domain_error("knn: empty test set");
    }
    if (k < 1 || k > train.n()) {
        throw domain_error("knn: k must be in [1, train size]");
    }
    bool zero = false;
    const auto tr = normalized_rows(train, &zero);
    const auto te = normalized_rows(test, &zero);
    if (zero_norm_seen != nullptr) {
        *zero_norm_seen = zero;
    }
    const int m = train.n(), d = train.dim, classes = train.num_classes();
    std::vector<int> preds(test.n());

#pragma omp parallel for schedule(static) num_threads(kernels::thread_cap())
    for (int t = 0; t < test.n(); ++t) {
        const double* q = te.data() + static_cast<std::size_t>(t) * d;
        std::vector<double> sim(m);
        for (int i = 0; i < m; ++i) {
            const double* x = tr.data() + static_cast<std::size_t>(i) * d;
            double s = 0.0;
            for (int j = 0; j < d; ++j) {
                s += q[j] * x[j];
            }
            sim[i] = s;
        }
        std::vector<int> order(m);
        for (int i = 0; i < m; ++i) {
            order[i] = i;
        }
        // Nearest first; equal similarities fall back to index order so the
        // result is independent of sort internals.
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [&](int a, int b) {
                              return sim[a] != sim[b] ? sim[a] > sim[b] : a < b;
                          });
        std::vector<int> votes(classes, 0);
        for (int i = 0; i < k; ++i) {
            ++votes[train.labels[order[i]]];
        }
        const int top = *std::max_element(votes.begin(), votes.end());
        int tied = 0;
        for (int v : votes) {
            tied += v == top;
        }
        int pred = -1;
        if (tied == 1) {
            pred = static_cast<int>(std::max_element(votes.begin(), votes.end()) -
                                    votes.begin());
        } else {
            // The nearest neighbour belonging to any tied class decides.
            for (int i = 0; i < k && pred < 0; ++i) {
                const int c = train.labels[order[i]];
                if (votes[c] == top) {
                    pred = c;
                }
            }
        }
        preds[t] = pred;
    }
    return preds;
}

EvalReport knn_classify(const LabeledEmbeddings& train,
                        const LabeledEmbeddings& test, int k) {
    bool zero = false;
    auto preds = knn_predict(train, test, k, &zero);
    const int classes = std::max(train.num_classes(), test.num_classes());
    EvalReport r = make_report(test.labels, preds, classes);
    nlohmann::json p;
    p["k"] = k;
    p["metric"] = "cosine";
    r.params = p.dump();
    r.zero_norm_fallback = zero;
    return r;
}

std::vector<int> kfold_split(int m, int folds, Rng& rng) {
    if (folds < 2) {
        throw domain_error("kfold: need at least 2 folds");
    }
    if (m < folds) {
        throw domain_error("kfold: fewer points than folds");
    }
    std::vector<int> perm(m);
    for (int i = 0; i < m; ++i) {
        perm[i] = i;
    }
    shuffle(perm, rng);
    std::vector<int> fold(m);
    for (int j = 0; j < m; ++j) {
        fold[perm[j]] = j % folds;
    }
    return fold;
}

std::vector<int> kfold_split(const std::vector<int>& labels, int folds,
                             Rng& rng, std::vector<std::string>* warnings) {
    const int m = static_cast<int>(labels.size());
    if (folds < 2) {
        throw domain_error("kfold: need at least 2 folds");
    }
    if (m < folds) {
        throw domain_error("kfold: fewer points than folds");
    }
    int classes = 0;
    for (int l : labels) {
        if (l < 0) {
            throw domain_error("kfold: negative label");
        }
        classes = std::max(classes, l + 1);
    }
    std::vector<std::vector<int>> by_class(classes);
    for (int i = 0; i < m; ++i) {
        by_class[labels[i]].push_back(i);
    }
    // One cursor runs across all classes, so folds stay globally balanced
    // while each class spreads as evenly as its size allows.
    std::vector<int> fold(m);
    int cursor = 0;
    for (int c = 0; c < classes; ++c) {
        auto& members = by_class[c];
        if (!members.empty() && static_cast<int>(members.size()) < folds &&
            warnings != nullptr) {
            warnings->push_back("class " + std::to_string(c) + " has " +
                                std::to_string(members.size()) + " members for " +
                                std::to_string(folds) +
                                " folds; stratification incomplete");
        }
        shuffle(members, rng);
        for (int idx : members) {
            fold[idx] = cursor % folds;
            ++cursor;
        }
    }
    return fold;
}

namespace {

TensorT<float> rows_tensor(const LabeledEmbeddings& e,
                           const std::vector<int>& idx) {
    std::vector<float> buf(idx.size() * static_cast<std::size_t>(e.dim));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const float* src = e.row(idx[i]);
        std::copy(src, src + e.dim, buf.begin() + i * e.dim);
    }
    return TensorT<float>::from_vector({static_cast<int>(idx.size()), e.dim},
                                       std::move(buf));
}

TensorT<float> probe_logits(const Probe& p, const TensorT<float>& x) {
    if (p.hidden) {
        auto h = ops::gelu(ops::add_bias_row(ops::matmul(x, p.params[0].second),
                                             p.params[1].second));
        return ops::add_bias_row(ops::matmul(h, p.params[2].second),
                                 p.params[3].second);
    }
    return ops::add_bias_row(ops::matmul(x, p.params[0].second),
                             p.params[1].second);
}

std::vector<int> argmax_rows(const TensorT<float>& logits) {
    const int m = logits.shape[0], c = logits.shape[1];
    std::vector<int> out(m);
    for (int i = 0; i < m; ++i) {
        const float* row = logits.ptr() + static_cast<std::size_t>(i) * c;
        out[i] = static_cast<int>(std::max_element(row, row + c) - row);
    }
    return out;
}

}  // namespace

std::vector<int> Probe::predict(const LabeledEmbeddings& data) const {
    NoGradGuard guard;
    if (data.dim != in_dim) {
        throw dim_error("probe: input dim mismatch");
    }
    std::vector<int> all(data.n());
    for (int i = 0; i < data.n(); ++i) {
        all[i] = i;
    }
    return argmax_rows(probe_logits(*this, rows_tensor(data, all)));
}

std::pair<Probe, EvalReport> probe_train(const LabeledEmbeddings& train,
                                         const LabeledEmbeddings& val,
                                         const ProbeSpec& spec) {
    train.validate();
    val.validate();
    if (train.n() == 0 || val.n() == 0) {
        throw domain_error("probe: train and validation sets must be non-empty");
    }
    if (train.dim != val.dim) {
        throw dim_error("probe: train/val dims disagree");
    }
    if (spec.lr <= 0.0 || !std::isfinite(spec.lr) || spec.epochs < 1 ||
        spec.batch_size < 1 || spec.patience < 1 ||
        (spec.hidden && spec.hidden_dim < 1)) {
        throw domain_error("probe: invalid training spec");
    }
    const int classes = std::max(train.num_classes(), val.num_classes());
    if (*std::min_element(train.labels.begin(), train.labels.end()) ==
        *std::max_element(train.labels.begin(), train.labels.end())) {
        throw domain_error("probe: training set has a single class");
    }

    Probe p;
    p.in_dim = train.dim;
    p.num_classes = classes;
    p.hidden = spec.hidden;
    Rng init = Rng::derive(spec.seed, {kStreamProbeInit});
    // Hidden layer fan-in scaled for O(1) activations; the classifier layer
    // starts at zero so the first updates already point at the data, not at
    // whatever a random map happened to predict.
    if (spec.hidden) {
        const auto he = static_cast<float>(std::sqrt(2.0 / train.dim));
        p.params.emplace_back("w1", TensorT<float>::trunc_normal(
                                        {train.dim, spec.hidden_dim}, init, he, true));
        p.params.emplace_back("b1", TensorT<float>::zeros({spec.hidden_dim}, true));
        p.params.emplace_back("w2",
                              TensorT<float>::zeros({spec.hidden_dim, classes}, true));
        p.params.emplace_back("b2", TensorT<float>::zeros({classes}, true));
    } else {
        p.params.emplace_back("w", TensorT<float>::zeros({train.dim, classes}, true));
        p.params.emplace_back("b", TensorT<float>::zeros({classes}, true));
    }

    std::vector<std::pair<std::string, TensorT<float>*>> named;
    for (auto& [name, t] : p.params) {
        named.emplace_back(name, &t);
    }
    optim::AdamWT<float>::Hyper hp;
    hp.weight_decay = spec.weight_decay;
    optim::AdamWT<float> opt(named, hp);

    std::vector<int> idx(static_cast<std::size_t>(train.n()));
    for (int i = 0; i < train.n(); ++i) {
        idx[i] = i;
    }
    double best_acc = -1.0;
    int best_epoch = -1, stale = 0, epochs_run = 0;
    std::vector<std::vector<float>> best_state(p.params.size());

    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        epochs_run = epoch + 1;
        Rng order = Rng::derive(spec.seed, {kStreamProbeShuffle,
                                            static_cast<std::uint64_t>(epoch)});
        shuffle(idx, order);
        for (int start = 0; start < train.n(); start += spec.batch_size) {
            const int stop = std::min(start + spec.batch_size, train.n());
            std::vector<int> batch(idx.begin() + start, idx.begin() + stop);
            std::vector<int> yb(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) {
                yb[i] = train.labels[batch[i]];
            }
            for (auto& [name, t] : p.params) {
                std::fill(t.grad->begin(), t.grad->end(), 0.0f);
            }
            auto loss = ops::cross_entropy_mean(probe_logits(p, rows_tensor(train, batch)),
                                                std::move(yb));
            if (!std::isfinite((*loss.data)[0])) {
                throw numeric_error("probe: non-finite training loss");
            }
            backward(loss);
            opt.step(spec.lr);
        }
        const auto preds = p.predict(val);
        int hits = 0;
        for (int i = 0; i < val.n(); ++i) {
            hits += preds[i] == val.labels[i];
        }
        const double acc = static_cast<double>(hits) / val.n();
        if (acc > best_acc) {
            best_acc = acc;
            best_epoch = epoch;
            stale = 0;
            for (std::size_t i = 0; i < p.params.size(); ++i) {
                best_state[i] = *p.params[i].second.data;
            }
        } else if (++stale >= spec.patience) {
            break;
        }
    }
    for (std::size_t i = 0; i < p.params.size(); ++i) {
        *p.params[i].second.data = best_state[i];
    }

    EvalReport r = make_report(val.labels, p.predict(val), classes);
    nlohmann::json j;
    j["probe"] = spec.hidden ? "mlp" : "linear";
    j["hidden_dim"] = spec.hidden ? spec.hidden_dim : 0;
    j["lr"] = spec.lr;
    j["weight_decay"] = spec.weight_decay;
    j["batch_size"] = spec.batch_size;
    j["patience"] = spec.patience;
    j["epochs_run"] = epochs_run;
    j["best_epoch"] = best_epoch;
    r.params = j.dump();
    return {std::move(p), std::move(r)};
}

std::map<std::string, std::string> load_label_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw format_error("labels: cannot open " + path);
    }
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw format_error("labels line " + std::to_string(lineno) + ": " +
                               e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("label") ||
            !j["id"].is_string()) {
            throw format_error("labels line " + std::to_string(lineno) +
                               ": need {\"id\": str, \"label\": ...}");
        }
        const std::string id = j["id"].get<std::string>();
        std::string label;
        if (j["label"].is_string()) {
            label = j["label"].get<std::string>();
        } else if (j["label"].is_number_integer()) {
            label = std::to_string(j["label"].get<long long>());
        } else {
            throw format_error("labels line " + std::to_string(lineno) +
                               ": label must be a string or integer");
        }
        if (!out.emplace(id, label).second) {
            throw format_error("labels line " + std::to_string(lineno) +
                               ": duplicate id " + id);
        }
    }
    return out;
}

std::vector<std::string> class_names_union(
    const std::vector<const std::map<std::string, std::string>*>& files) {
    std::set<std::string> names;
    for (const auto* f : files) {
        for (const auto& [id, label] : *f) {
            names.insert(label);
        }
    }
    return {names.begin(), names.end()};
}

LabeledEmbeddings labeled_from_archive(
    const std::vector<embed::ArchiveRecord>& records,
    const std::map<std::string, std::string>& by_id,
    const std::vector<std::string>& class_names,
    std::vector<std::string>* warnings) {
    std::map<std::string, int> class_id;
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        class_id[class_names[i]] = static_cast<int>(i);
    }
    LabeledEmbeddings out;
    out.class_names = class_names;
    for (const auto& rec : records) {
        const auto it = by_id.find(rec.id);
        if (it == by_id.end()) {
            if (warnings != nullptr) {
                warnings->push_back("no label for " + rec.id + "; skipped");
            }
            continue;
        }
        const auto cls = class_id.find(it->second);
        if (cls == class_id.end()) {
            throw format_error("label '" + it->second + "' for " + rec.id +
                               " not in the class set");
        }
        if (out.dim == 0) {
            out.dim = rec.dim;
        } else if (rec.dim != out.dim) {
            throw format_error("archive mixes embedding dims (" +
                               std::to_string(out.dim) + " vs " +
                               std::to_string(rec.dim) + ")");
        }
        // Frame-level records collapse to their time mean.
        for (int j = 0; j < rec.dim; ++j) {
            double s = 0.0;
            for (int t = 0; t < rec.n_frames; ++t) {
                s += rec.values[static_cast<std::size_t>(t) * rec.dim + j];
            }
            out.vectors.push_back(static_cast<float>(s / rec.n_frames));
        }
        out.labels.push_back(cls->second);
    }
    if (out.labels.empty()) {
        throw domain_error("no labelled embeddings after joining");
    }
    return out;
}

}  // namespace dasheng::eval
