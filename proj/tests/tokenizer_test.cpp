#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dasheng/common.hpp"
#include "dasheng/tokenizer.hpp"
#include "test_util.hpp"

namespace tok = dasheng::tokenizer;
using dasheng::Rng;
using dasheng::TensorT;
using testutil::rel_err;

namespace {

dasheng::audio::MelSpectrogram fake_mel(int frames) {
    dasheng::audio::MelSpectrogram mel;
    mel.frames = frames;
    mel.bins = 64;
    mel.values.resize(static_cast<std::size_t>(frames) * 64);
    for (std::size_t i = 0; i < mel.values.size(); ++i) {
        mel.values[i] = static_cast<float>(i % 997) * 0.01f - 3.f;
    }
    return mel;
}

bool runs_ok(const std::vector<std::uint8_t>& mask) {
    int run = 0;
    for (std::size_t i = 0; i <= mask.size(); ++i) {
        if (i < mask.size() && mask[i]) {
            ++run;
        } else {
            if (run == 1) {
                return false;
            }
            run = 0;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("chunkify groups four frames per row and drops the remainder") {
    auto mel = fake_mel(1001);
    auto c = tok::chunkify(mel);
    CHECK(c.n == 250);
    CHECK(c.dropped_frames == 1);
    CHECK(c.chunk_dim == 256);

    auto tiny = tok::chunkify(fake_mel(4));
    CHECK(tiny.n == 1);
    CHECK(tiny.dropped_frames == 0);

    auto mel7 = fake_mel(7);
    auto c7 = tok::chunkify(mel7);
    CHECK(c7.n == 1);
    CHECK(c7.dropped_frames == 3);
    for (int j = 0; j < 256; ++j) {
        CHECK(c7.at(0, j) == mel7.values[static_cast<std::size_t>(j)]);
    }

    CHECK_THROWS_AS(tok::chunkify(fake_mel(3)), dasheng::domain_error);
}

TEST_CASE("chunk rows preserve time order") {
    auto mel = fake_mel(12);
    auto c = tok::chunkify(mel);
    REQUIRE(c.n == 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 256; ++j) {
            CHECK(c.at(i, j) == mel.values[static_cast<std::size_t>(i) * 256 + j]);
        }
    }
}

TEST_CASE("mask target rounds half up") {
    CHECK(tok::mask_target(250) == 188);  // 187.5 rounds up
    CHECK(tok::mask_target(4) == 3);
    CHECK(tok::mask_target(5) == 4);   // 3.75
    CHECK(tok::mask_target(6) == 5);   // 4.5 rounds up
    CHECK(tok::mask_target(100) == 75);
}

TEST_CASE("sampled masks hit the exact count with runs of at least two") {
    for (int n = 4; n <= 250; ++n) {
        Rng rng(1000 + n);
        const int trials = (n == 4 || n == 5 || n == 7 || n == 8 || n == 16 ||
                            n == 100 || n == 250)
                               ? 1000
                               : 40;
        for (int t = 0; t < trials; ++t) {
            auto plan = tok::sample_mask(n, rng);
            CAPTURE(n);
            CAPTURE(t);
            REQUIRE(plan.n() == n);
            CHECK(plan.masked_count() == tok::mask_target(n));
            CHECK(plan.masked_count() + static_cast<int>(plan.kept_indices.size()) == n);
            REQUIRE(runs_ok(plan.mask));
        }
    }
}

TEST_CASE("four tokens always yield one run of three") {
    Rng rng(7);
    for (int t = 0; t < 500; ++t) {
        auto plan = tok::sample_mask(4, rng);
        CHECK(plan.masked_count() == 3);
        // The kept token must sit at an end; a middle gap would split the
        // masked cells into runs of 1 or 2+1.
        const int kept = plan.kept_indices.at(0);
        CHECK((kept == 0 || kept == 3));
    }
}

TEST_CASE("mask sampling is deterministic under the seed") {
    Rng a(42), b(42);
    for (int t = 0; t < 20; ++t) {
        auto pa = tok::sample_mask(250, a);
        auto pb = tok::sample_mask(250, b);
        CHECK(pa.mask == pb.mask);
    }
    Rng c(43);
    bool any_diff = false;
    Rng a2(42);
    for (int t = 0; t < 20 && !any_diff; ++t) {
        any_diff = tok::sample_mask(250, a2).mask != tok::sample_mask(250, c).mask;
    }
    CHECK(any_diff);
}

TEST_CASE("interior positions are masked near the target rate") {
    const int n = 250, trials = 10000;
    std::vector<int> hits(n, 0);
    Rng rng(99);
    for (int t = 0; t < trials; ++t) {
        auto plan = tok::sample_mask(n, rng);
        for (int i = 0; i < n; ++i) {
            hits[i] += plan.mask[static_cast<std::size_t>(i)];
        }
    }
    for (int i = 5; i < n - 5; ++i) {
        const double f = static_cast<double>(hits[i]) / trials;
        CAPTURE(i);
        CHECK(f >= 0.70);
        CHECK(f <= 0.80);
    }
}

TEST_CASE("sample_mask rejects degenerate inputs") {
    Rng rng(1);
    CHECK_THROWS_AS(tok::sample_mask(3, rng), dasheng::domain_error);
    CHECK_THROWS_AS(tok::sample_mask(0, rng), dasheng::domain_error);
}

TEST_CASE("projection plus positions matches a two-step oracle") {
    const int n = 6, d = 8;
    tok::ChunkSequence chunks;
    chunks.n = n;
    chunks.values.resize(static_cast<std::size_t>(n) * 256);
    Rng rng(11);
    for (auto& v : chunks.values) {
        v = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    auto w = TensorT<double>::randn({256, d}, rng, 0.1);
    auto bias = TensorT<double>::randn({d}, rng, 0.1);
    auto table = TensorT<double>::randn({250, d}, rng, 0.1);

    dasheng::NoGradGuard ng;
    auto out = tok::project_and_position(chunks, w, bias, table);
    REQUIRE(out.shape == std::vector<int>{n, d});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < 256; ++k) {
                s += static_cast<double>(chunks.at(i, k)) * w.at(k, j);
            }
            s += bias.at(j) + table.at(i, j);
            CHECK(rel_err(s, out.at(i, j)) < 1e-6);
        }
    }
}

TEST_CASE("zero weights isolate the positional table") {
    const int n = 5, d = 4;
    tok::ChunkSequence chunks;
    chunks.n = n;
    chunks.values.assign(static_cast<std::size_t>(n) * 256, 1.f);
    auto w = TensorT<float>::zeros({256, d});
    auto bias = TensorT<float>::zeros({d});
    auto table = TensorT<float>::zeros({250, d});
    for (int i = 0; i < 250; ++i) {
        for (int j = 0; j < d; ++j) {
            table.at(i, j) = static_cast<float>(i);
        }
    }
    dasheng::NoGradGuard ng;
    auto out = tok::project_and_position(chunks, w, bias, table);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            CHECK(out.at(i, j) == static_cast<float>(i));
        }
    }
}

TEST_CASE("sequences longer than the table are rejected") {
    tok::ChunkSequence chunks;
    chunks.n = 251;
    chunks.values.assign(static_cast<std::size_t>(251) * 256, 0.f);
    auto w = TensorT<float>::zeros({256, 4});
    auto bias = TensorT<float>::zeros({4});
    auto table = TensorT<float>::zeros({250, 4});
    CHECK_THROWS_AS(tok::project_and_position(chunks, w, bias, table), dasheng::dim_error);
}

TEST_CASE("gather keeps original order and survives a scatter round-trip") {
    const int n = 10, d = 3;
    std::vector<float> vals(static_cast<std::size_t>(n) * d);
    for (std::size_t i = 0; i < vals.size(); ++i) {
        vals[i] = static_cast<float>(i);
    }
    auto tokens = TensorT<float>::from_vector({n, d}, vals);

    tok::MaskPlan all_false;
    all_false.mask.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        all_false.kept_indices.push_back(i);
    }
    dasheng::NoGradGuard ng;
    auto [same, map_id] = tok::gather_unmasked(tokens, all_false);
    CHECK(map_id == all_false.kept_indices);
    for (std::size_t i = 0; i < vals.size(); ++i) {
        CHECK((*same.data)[i] == vals[i]);
    }

    Rng rng(5);
    auto plan = tok::sample_mask(n, rng);
    auto [kept, map] = tok::gather_unmasked(tokens, plan);
    REQUIRE(static_cast<int>(map.size()) == n - plan.masked_count());
    // Scatter back into place, then regather; must reproduce the input rows.
    std::vector<float> scattered(vals.size(), -1.f);
    for (std::size_t i = 0; i < map.size(); ++i) {
        for (int j = 0; j < d; ++j) {
            scattered[static_cast<std::size_t>(map[i]) * d + j] = kept.at(static_cast<int>(i), j);
        }
    }
    for (int i = 0; i < n; ++i) {
        if (!plan.mask[static_cast<std::size_t>(i)]) {
            for (int j = 0; j < d; ++j) {
                CHECK(scattered[static_cast<std::size_t>(i) * d + j] ==
                      vals[static_cast<std::size_t>(i) * d + j]);
            }
        }
    }

    tok::MaskPlan bad;
    bad.mask.assign(n + 1, 0);
    CHECK_THROWS_AS(tok::gather_unmasked(tokens, bad), dasheng::dim_error);
}

TEST_CASE("a three-kept-one pattern gathers the single kept token") {
    auto tokens = TensorT<float>::from_vector({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    tok::MaskPlan plan;
    plan.mask = {1, 1, 1, 0};
    plan.masked_indices = {0, 1, 2};
    plan.kept_indices = {3};
    dasheng::NoGradGuard ng;
    auto [kept, map] = tok::gather_unmasked(tokens, plan);
    REQUIRE(kept.shape == std::vector<int>{1, 2});
    CHECK(kept.at(0, 0) == 6.f);
    CHECK(kept.at(0, 1) == 7.f);
    CHECK(map == std::vector<int>{3});
}
