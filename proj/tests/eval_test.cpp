#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <omp.h>

#include "dasheng/eval.hpp"
#include "test_util.hpp"

using namespace dasheng;
using testutil::TempDir;

namespace {

// Brute-force cosine k-NN with the production tie rule, written
// independently: full sort over all pairs, map-based voting.
std::vector<std::vector<double>> oracle_normalize(const eval::LabeledEmbeddings& e) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < e.n(); ++i) {
        std::vector<double> r(e.row(i), e.row(i) + e.dim);
        double norm = 0.0;
        for (double v : r) {
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm != 0.0) {
            for (double& v : r) {
                v = v / norm;
            }
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<int> oracle_knn(const eval::LabeledEmbeddings& train,
                            const eval::LabeledEmbeddings& test, int k) {
    const auto tr = oracle_normalize(train);
    const auto te = oracle_normalize(test);
    std::vector<int> preds;
    for (const auto& q : te) {
        std::vector<std::pair<double, int>> sims;
        for (std::size_t i = 0; i < tr.size(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < q.size(); ++j) {
                s += q[j] * tr[i][j];
            }
            sims.emplace_back(s, static_cast<int>(i));
        }
        std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        std::map<int, int> votes;
        for (int i = 0; i < k; ++i) {
            ++votes[train.labels[sims[i].second]];
        }
        int top = 0;
        for (const auto& [cls, count] : votes) {
            top = std::max(top, count);
        }
        std::set<int> tied;
        for (const auto& [cls, count] : votes) {
            if (count == top) {
                tied.insert(cls);
            }
        }
        int pred = -1;
        if (tied.size() == 1) {
            pred = *tied.begin();
        } else {
            for (int i = 0; i < k; ++i) {
                const int cls = train.labels[sims[i].second];
                if (tied.count(cls) != 0) {
                    pred = cls;
                    break;
                }
            }
        }
        preds.push_back(pred);
    }
    return preds;
}

eval::LabeledEmbeddings cluster_data(int per_class, int classes, int dim,
                                     double center_scale, double noise,
                                     Rng& rng) {
    eval::LabeledEmbeddings e;
    e.dim = dim;
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
    for (auto& c : centers) {
        for (double& v : c) {
            v = rng.normal() * center_scale;
        }
    }
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < per_class; ++i) {
            for (int j = 0; j < dim; ++j) {
                e.vectors.push_back(
                    static_cast<float>(centers[c][j] + rng.normal() * noise));
            }
            e.labels.push_back(c);
        }
    }
    return e;
}

}  // namespace

TEST_CASE("make_report computes accuracy as trace over M with per-class recall") {
    std::vector<int> truth{0, 0, 1, 1, 2, 2};
    std::vector<int> preds{0, 1, 1, 1, 2, 0};
    auto r = eval::make_report(truth, preds, 3);
    CHECK(r.accuracy == doctest::Approx(4.0 / 6.0));
    CHECK(r.per_class[0] == doctest::Approx(0.5));
    CHECK(r.per_class[1] == doctest::Approx(1.0));
    CHECK(r.per_class[2] == doctest::Approx(0.5));
    CHECK(r.confusion[0][1] == 1);
    CHECK(r.confusion[2][0] == 1);
    int total = 0, trace = 0;
    for (int c = 0; c < 3; ++c) {
        trace += r.confusion[c][c];
        for (int p = 0; p < 3; ++p) {
            total += r.confusion[c][p];
        }
    }
    CHECK(total == 6);
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(trace) / total));

    CHECK_THROWS_AS(eval::make_report({0}, {0, 1}, 2), dim_error);
    CHECK_THROWS_AS(eval::make_report({0, 3}, {0, 0}, 2), domain_error);
    auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["accuracy"].get<double>() == doctest::Approx(r.accuracy));
    CHECK(j["confusion"][2][0].get<int>() == 1);
}

TEST_CASE("a test point equal to a training point takes the local majority label") {
    eval::LabeledEmbeddings train;
    train.dim = 2;
    // Eleven class-0 points near +e1 and one class-1 outlier near -e1: any
    // copied class-0 point sees a 10-0 majority among its 10 neighbours.
    Rng rng(5);
    for (int i = 0; i < 11; ++i) {
        train.vectors.push_back(static_cast<float>(1.0 + 0.01 * rng.normal()));
        train.vectors.push_back(static_cast<float>(0.01 * rng.normal()));
        train.labels.push_back(0);
    }
    train.vectors.push_back(-1.0f);
    train.vectors.push_back(0.0f);
    train.labels.push_back(1);

    eval::LabeledEmbeddings test;
    test.dim = 2;
    test.vectors = {train.vectors[0], train.vectors[1]};
    test.labels = {0};
    test.class_names = {"a", "b"};
    auto preds = eval::knn_predict(train, test, 10);
    CHECK(preds[0] == 0);
}

TEST_CASE("well-separated two-class data is classified perfectly") {
    Rng rng(11);
    eval::LabeledEmbeddings train, test;
    train.dim = test.dim = 4;
    for (int c = 0; c < 2; ++c) {
        const double sign = c == 0 ? 1.0 : -1.0;
        for (int i = 0; i < 10; ++i) {
            train.vectors.push_back(static_cast<float>(sign + 0.05 * rng.normal()));
            for (int j = 1; j < 4; ++j) {
                train.vectors.push_back(static_cast<float>(0.05 * rng.normal()));
            }
            train.labels.push_back(c);
        }
        for (int i = 0; i < 5; ++i) {
            test.vectors.push_back(static_cast<float>(sign + 0.05 * rng.normal()));
            for (int j = 1; j < 4; ++j) {
                test.vectors.push_back(static_cast<float>(0.05 * rng.normal()));
            }
            test.labels.push_back(c);
        }
    }
    auto r = eval::knn_classify(train, test, 10);
    CHECK(r.accuracy == 1.0);
    CHECK_FALSE(r.zero_norm_fallback);
    auto j = nlohmann::json::parse(r.params);
    CHECK(j["k"].get<int>() == 10);
    CHECK(j["metric"].get<std::string>() == "cosine");
}

TEST_CASE("knn matches the brute-force oracle on random instances") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed + 1000);
        const int classes = 2 + static_cast<int>(rng.next_below(4));
        const int dim = 3 + static_cast<int>(rng.next_below(8));
        const int train_per = 5 + static_cast<int>(rng.next_below(66));
        const int test_per = 2 + static_cast<int>(rng.next_below(30));
        // Overlapping clusters so vote ties actually occur.
        auto train = cluster_data(train_per, classes, dim, 0.5, 1.0, rng);
        auto test = cluster_data(test_per, classes, dim, 0.5, 1.0, rng);
        const int k = 1 + static_cast<int>(
                              rng.next_below(std::min(12, train.n())));
        REQUIRE(train.n() + test.n() <= 500);
        auto got = eval::knn_predict(train, test, k);
        auto want = oracle_knn(train, test, k);
        REQUIRE(got == want);
    }
}

TEST_CASE("knn predictions are invariant to positive rescaling") {
    Rng rng(77);
    auto train = cluster_data(40, 3, 6, 0.5, 1.0, rng);
    auto test = cluster_data(15, 3, 6, 0.5, 1.0, rng);
    auto base = eval::knn_predict(train, test, 10);
    for (float c : {0.25f, 4.0f, 3.7f}) {
        auto tr = train;
        auto te = test;
        for (float& v : tr.vectors) {
            v *= c;
        }
        for (float& v : te.vectors) {
            v *= c;
        }
        CHECK(eval::knn_predict(tr, te, 10) == base);
    }
}

TEST_CASE("zero-norm vectors fall back to the unnormalized dot and are flagged") {
    Rng rng(13);
    auto train = cluster_data(8, 2, 3, 0.5, 1.0, rng);
    auto test = cluster_data(3, 2, 3, 0.5, 1.0, rng);
    for (int j = 0; j < 3; ++j) {
        test.vectors[j] = 0.0f;  // first test row becomes the zero vector
    }
    bool flagged = false;
    auto got = eval::knn_predict(train, test, 5, &flagged);
    CHECK(flagged);
    CHECK(got == oracle_knn(train, test, 5));
    auto r = eval::knn_classify(train, test, 5);
    CHECK(r.zero_norm_fallback);
}

TEST_CASE("knn is identical under different thread counts") {
    Rng rng(21);
    auto train = cluster_data(50, 3, 5, 0.5, 1.0, rng);
    auto test = cluster_data(20, 3, 5, 0.5, 1.0, rng);
    const int before = omp_get_max_threads();
    omp_set_num_threads(1);
    auto serial = eval::knn_predict(train, test, 10);
    omp_set_num_threads(3);
    auto parallel = eval::knn_predict(train, test, 10);
    omp_set_num_threads(before);
    CHECK(serial == parallel);
}

TEST_CASE("knn rejects invalid inputs") {
    Rng rng(31);
    auto train = cluster_data(5, 2, 3, 0.5, 1.0, rng);
    auto test = cluster_data(2, 2, 3, 0.5, 1.0, rng);
    CHECK_THROWS_AS(eval::knn_predict(train, test, 0), domain_error);
    CHECK_THROWS_AS(eval::knn_predict(train, test, train.n() + 1), domain_error);
    auto bad = test;
    bad.dim = 2;
    CHECK_THROWS_AS(eval::knn_predict(train, bad, 3), dim_error);
    eval::LabeledEmbeddings empty;
    empty.dim = 3;
    CHECK_THROWS_AS(eval::knn_predict(train, empty, 3), domain_error);
}

TEST_CASE("kfold_split partitions evenly") {
    Rng rng(3);
    auto fold = eval::kfold_split(10, 5, rng);
    REQUIRE(fold.size() == 10);
    std::vector<int> sizes(5, 0);
    for (int f : fold) {
        REQUIRE(f >= 0);
        REQUIRE(f < 5);
        ++sizes[f];
    }
    for (int s : sizes) {
        CHECK(s == 2);
    }

    // Uneven M: sizes differ by at most one.
    Rng rng2(4);
    auto f13 = eval::kfold_split(13, 5, rng2);
    std::vector<int> s13(5, 0);
    for (int f : f13) {
        ++s13[f];
    }
    CHECK(*std::max_element(s13.begin(), s13.end()) -
              *std::min_element(s13.begin(), s13.end()) <=
          1);

    Rng a(9), b(9), c(10);
    CHECK(eval::kfold_split(20, 4, a) == eval::kfold_split(20, 4, b));
    CHECK(eval::kfold_split(20, 4, c) != eval::kfold_split(20, 4, b));

    Rng d(1);
    CHECK_THROWS_AS(eval::kfold_split(10, 1, d), domain_error);
    CHECK_THROWS_AS(eval::kfold_split(3, 5, d), domain_error);
}

TEST_CASE("stratified kfold balances classes per fold") {
    std::vector<int> labels(50);
    for (int i = 0; i < 50; ++i) {
        labels[i] = i < 25 ? 0 : 1;
    }
    Rng rng(8);
    auto fold = eval::kfold_split(labels, 5, rng);
    int counts[5][2] = {};
    for (int i = 0; i < 50; ++i) {
        ++counts[fold[i]][labels[i]];
    }
    for (int f = 0; f < 5; ++f) {
        CHECK(counts[f][0] == 5);
        CHECK(counts[f][1] == 5);
    }

    // Imbalanced classes stay within one point per fold, globally and
    // within each class.
    std::vector<int> lab2;
    for (int i = 0; i < 7; ++i) {
        lab2.push_back(0);
    }
    for (int i = 0; i < 6; ++i) {
        lab2.push_back(1);
    }
    Rng rng2(8);
    auto fold2 = eval::kfold_split(lab2, 3, rng2);
    int c2[3][2] = {};
    int tot[3] = {};
    for (std::size_t i = 0; i < lab2.size(); ++i) {
        ++c2[fold2[i]][lab2[i]];
        ++tot[fold2[i]];
    }
    for (int cls = 0; cls < 2; ++cls) {
        int lo = 100, hi = 0;
        for (int f = 0; f < 3; ++f) {
            lo = std::min(lo, c2[f][cls]);
            hi = std::max(hi, c2[f][cls]);
        }
        CHECK(hi - lo <= 1);
    }
    CHECK(*std::max_element(tot, tot + 3) - *std::min_element(tot, tot + 3) <= 1);

    // A class smaller than the fold count only warns.
    std::vector<int> lab3{0, 0, 0, 0, 0, 0, 1, 1};
    Rng rng3(5);
    std::vector<std::string> warnings;
    auto fold3 = eval::kfold_split(lab3, 4, rng3, &warnings);
    REQUIRE(fold3.size() == 8);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("class 1") != std::string::npos);

    Rng e1(9), e2(9);
    CHECK(eval::kfold_split(labels, 5, e1) == eval::kfold_split(labels, 5, e2));
}

TEST_CASE("a linear probe separates linearly separable data") {
    Rng rng(41);
    eval::LabeledEmbeddings train, val;
    train.dim = val.dim = 2;
    auto fill = [&](eval::LabeledEmbeddings& e, int per_class) {
        for (int c = 0; c < 2; ++c) {
            const double sign = c == 0 ? -1.0 : 1.0;
            for (int i = 0; i < per_class; ++i) {
                e.vectors.push_back(static_cast<float>(sign + 0.1 * rng.normal()));
                e.vectors.push_back(static_cast<float>(sign + 0.1 * rng.normal()));
                e.labels.push_back(c);
            }
        }
    };
    fill(train, 20);
    fill(val, 10);
    auto [probe, report] = eval::probe_train(train, val, {});
    CHECK(report.accuracy == 1.0);
    CHECK_FALSE(probe.hidden);
    auto j = nlohmann::json::parse(report.params);
    CHECK(j["probe"].get<std::string>() == "linear");
    CHECK(j["lr"].get<double>() == doctest::Approx(1e-3));
    CHECK(j["epochs_run"].get<int>() <= 100);
}

TEST_CASE("a probe on shuffled labels scores at chance") {
    Rng rng(43);
    eval::LabeledEmbeddings train, val;
    train.dim = val.dim = 8;
    auto fill = [&](eval::LabeledEmbeddings& e, int n) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < 8; ++j) {
                e.vectors.push_back(static_cast<float>(rng.normal()));
            }
            e.labels.push_back(i % 4);  // balanced, independent of the data
        }
    };
    fill(train, 200);
    fill(val, 200);
    eval::ProbeSpec spec;
    spec.seed = 7;
    auto [probe, report] = eval::probe_train(train, val, spec);
    CHECK(report.accuracy == doctest::Approx(0.25).epsilon(0.4));
    CHECK(std::abs(report.accuracy - 0.25) <= 0.1);
}

TEST_CASE("XOR data defeats the linear probe but not the hidden-layer probe") {
    Rng rng(47);
    eval::LabeledEmbeddings train, val;
    train.dim = val.dim = 2;
    auto fill = [&](eval::LabeledEmbeddings& e, int per_corner) {
        for (int sx : {-1, 1}) {
            for (int sy : {-1, 1}) {
                for (int i = 0; i < per_corner; ++i) {
                    e.vectors.push_back(static_cast<float>(sx + 0.15 * rng.normal()));
                    e.vectors.push_back(static_cast<float>(sy + 0.15 * rng.normal()));
                    e.labels.push_back(sx * sy > 0 ? 1 : 0);
                }
            }
        }
    };
    fill(train, 50);
    fill(val, 25);
    eval::ProbeSpec linear;
    auto [lp, lrep] = eval::probe_train(train, val, linear);
    CHECK(lrep.accuracy <= 0.75);

    eval::ProbeSpec mlp;
    mlp.hidden = true;
    auto [hp, hrep] = eval::probe_train(train, val, mlp);
    CHECK(hrep.accuracy >= 0.95);
    auto j = nlohmann::json::parse(hrep.params);
    CHECK(j["probe"].get<std::string>() == "mlp");
    CHECK(j["hidden_dim"].get<int>() == 512);
}

TEST_CASE("probe training never mutates the embeddings and stops early") {
    Rng rng(53);
    auto train = cluster_data(30, 2, 4, 1.0, 0.3, rng);
    auto val = cluster_data(10, 2, 4, 1.0, 0.3, rng);
    const auto train_before = train.vectors;
    const auto val_before = val.vectors;
    eval::ProbeSpec spec;
    spec.lr = 1e-12;  // no measurable progress: early stop must trigger
    spec.patience = 3;
    auto [probe, report] = eval::probe_train(train, val, spec);
    CHECK(train.vectors == train_before);
    CHECK(val.vectors == val_before);
    auto j = nlohmann::json::parse(report.params);
    CHECK(j["epochs_run"].get<int>() <= 5);
    CHECK(j["best_epoch"].get<int>() == 0);
}

TEST_CASE("probe rejects degenerate inputs") {
    Rng rng(59);
    auto train = cluster_data(10, 2, 4, 1.0, 0.3, rng);
    auto val = cluster_data(4, 2, 4, 1.0, 0.3, rng);
    auto flat = train;
    std::fill(flat.labels.begin(), flat.labels.end(), 0);
    CHECK_THROWS_AS(eval::probe_train(flat, val, {}), domain_error);
    eval::ProbeSpec bad;
    bad.lr = -1.0;
    CHECK_THROWS_AS(eval::probe_train(train, val, bad), domain_error);
    auto mismatched = val;
    mismatched.dim = 3;
    mismatched.vectors.resize(static_cast<std::size_t>(mismatched.n()) * 3);
    CHECK_THROWS_AS(eval::probe_train(train, mismatched, {}), dim_error);
}

TEST_CASE("label files load as id to label maps") {
    TempDir dir("labels");
    const auto path = dir.file("l.jsonl");
    std::ofstream(path) << "{\"id\": \"a.wav\", \"label\": \"dog\"}\n"
                        << "\n"
                        << "{\"id\": \"b.wav\", \"label\": 3}\n";
    auto m = eval::load_label_file(path);
    REQUIRE(m.size() == 2);
    CHECK(m.at("a.wav") == "dog");
    CHECK(m.at("b.wav") == "3");

    const auto dup = dir.file("dup.jsonl");
    std::ofstream(dup) << "{\"id\": \"x\", \"label\": \"a\"}\n"
                       << "{\"id\": \"x\", \"label\": \"b\"}\n";
    CHECK_THROWS_AS(eval::load_label_file(dup), format_error);

    const auto bad = dir.file("bad.jsonl");
    std::ofstream(bad) << "{\"id\": \"x\"}\n";
    CHECK_THROWS_AS(eval::load_label_file(bad), format_error);

    const auto junk = dir.file("junk.jsonl");
    std::ofstream(junk) << "not json\n";
    CHECK_THROWS_AS(eval::load_label_file(junk), format_error);
    CHECK_THROWS_AS(eval::load_label_file(dir.file("absent.jsonl")), format_error);

    std::map<std::string, std::string> f1{{"a", "dog"}, {"b", "cat"}};
    std::map<std::string, std::string> f2{{"c", "cat"}, {"d", "ant"}};
    auto names = eval::class_names_union({&f1, &f2});
    CHECK(names == std::vector<std::string>{"ant", "cat", "dog"});
}

TEST_CASE("archive records join with labels into labeled embeddings") {
    std::vector<embed::ArchiveRecord> records;
    records.push_back({"a", 1, 2, true, {1.0f, 2.0f}});
    records.push_back({"b", 3, 2, false, {0.0f, 3.0f, 1.0f, 6.0f, 2.0f, 0.0f}});
    records.push_back({"orphan", 1, 2, true, {9.0f, 9.0f}});
    std::map<std::string, std::string> by_id{{"a", "dog"}, {"b", "cat"}};
    std::vector<std::string> warnings;
    auto e = eval::labeled_from_archive(records, by_id, {"cat", "dog"}, &warnings);
    REQUIRE(e.n() == 2);
    CHECK(e.dim == 2);
    CHECK(e.labels == std::vector<int>{1, 0});
    CHECK(e.row(0)[0] == 1.0f);
    // Frame-level record b pools to the column means (1, 3).
    CHECK(e.row(1)[0] == doctest::Approx(1.0));
    CHECK(e.row(1)[1] == doctest::Approx(3.0));
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("orphan") != std::string::npos);

    std::map<std::string, std::string> wrong{{"a", "bird"}};
    CHECK_THROWS_AS(eval::labeled_from_archive(records, wrong, {"cat", "dog"}, nullptr),
                    format_error);
    std::map<std::string, std::string> none{{"zzz", "cat"}};
    CHECK_THROWS_AS(eval::labeled_from_archive(records, none, {"cat", "dog"}, nullptr),
                    domain_error);
    auto mixed = records;
    mixed[1].dim = 3;
    mixed[1].n_frames = 2;
    CHECK_THROWS_AS(eval::labeled_from_archive(mixed, by_id, {"cat", "dog"}, nullptr),
                    format_error);
}
