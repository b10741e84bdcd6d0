#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dasheng/embedder.hpp"
#include "test_util.hpp"

using nlohmann::json;
using testutil::sine_clip;
using testutil::TempDir;
using testutil::write_wav_pcm16;

namespace {

std::string binary() {
    const char* env = std::getenv("DASHENG_CLI");
    REQUIRE_MESSAGE(env != nullptr, "DASHENG_CLI must point at the dasheng binary");
    return env;
}

int run(const std::string& args, const std::string& out = "/dev/null",
        const std::string& err = "/dev/null") {
    const std::string cmd = binary() + " " + args + " >" + out + " 2>" + err;
    const int rc = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

// Five short clips, two tonal classes, plus manifest and label files.
struct Corpus {
    std::string manifest, labels;
    std::vector<std::string> wavs;
};

Corpus make_corpus(TempDir& dir) {
    Corpus c;
    c.manifest = dir.file("clips.jsonl");
    c.labels = dir.file("labels.jsonl");
    std::ofstream mf(c.manifest);
    std::ofstream lf(c.labels);
    for (int i = 0; i < 5; ++i) {
        const auto path = dir.file("clip" + std::to_string(i) + ".wav");
        const double freq = i < 3 ? 220.0 : 880.0;
        write_wav_pcm16(path, sine_clip(freq + 7 * i, 1.1, 16000), 16000);
        mf << json{{"path", path}}.dump() << "\n";
        lf << json{{"id", path}, {"label", i < 3 ? "low" : "high"}}.dump() << "\n";
        c.wavs.push_back(path);
    }
    return c;
}

}  // namespace

TEST_CASE("--help prints usage and exits 0") {
    TempDir dir("cli");
    const auto out = dir.file("help.txt");
    CHECK(run("--help", out) == 0);
    const auto text = slurp(out);
    CHECK(text.find("Usage") != std::string::npos);
    CHECK(text.find("eval-knn") != std::string::npos);
    CHECK(run("embed --help", out) == 0);
}

TEST_CASE("usage errors exit 1") {
    CHECK(run("embed") == 1);                       // missing required flags
    CHECK(run("") == 1);                            // missing subcommand
    CHECK(run("frobnicate") == 1);                  // unknown subcommand
    CHECK(run("features --in a.wav --out b --bogus") == 1);  // unknown flag
}

TEST_CASE("data errors exit 2") {
    TempDir dir("cli");
    CHECK(run("inspect-ckpt --ckpt " + dir.file("absent.dshg")) == 2);
    const auto junk = dir.file("junk.wav");
    std::ofstream(junk) << "not a wav";
    CHECK(run("features --in " + junk + " --out " + dir.file("x.bin")) == 2);
    const auto badcfg = dir.file("bad.json");
    std::ofstream(badcfg) << "{\"unknown_key\": 1}";
    CHECK(run("train --config " + badcfg + " --train a --val b --out " +
              dir.path().string()) == 2);
}

TEST_CASE("features dumps the frontend deterministically") {
    TempDir dir("cli");
    const auto wav = dir.file("tone.wav");
    write_wav_pcm16(wav, sine_clip(440.0, 1.0, 16000), 16000);
    const auto out = dir.file("mel.bin");
    REQUIRE(run("features --in " + wav + " --out " + out) == 0);
    auto records = dasheng::embed::read_archive(out);
    REQUIRE(records.size() == 1);
    CHECK(records[0].dim == 64);
    CHECK(records[0].n_frames == 101);  // floor(16000/160)+1
    CHECK(records[0].id == wav);

    const auto out2 = dir.file("mel2.bin");
    REQUIRE(run("features --in " + wav + " --out " + out2) == 0);
    CHECK(slurp(out) == slurp(out2));
}

TEST_CASE("train, embed, and evaluate complete end to end") {
    const auto t0 = std::chrono::steady_clock::now();
    TempDir dir("cli");
    auto corpus = make_corpus(dir);

    const auto cfg = dir.file("config.json");
    std::ofstream(cfg) << json{
        {"model",
         {{"depth", 1},
          {"embed_dim", 16},
          {"mlp_dim", 32},
          {"num_heads", 2},
          {"n_max", 30},
          {"dec_depth", 1},
          {"dec_embed_dim", 16},
          {"dec_mlp_dim", 32},
          {"dec_num_heads", 2}}},
        {"batch_size", 2},
        {"batches_per_epoch", 3},
        {"epochs", 2},
        {"seed", 3},
        {"crop_seconds", 1.0},
        {"warmup_epochs", 1}}
                              .dump();
    const auto out_dir = dir.file("runA");
    const auto err = dir.file("train.err");
    REQUIRE_MESSAGE(run("train --config " + cfg + " --train " + corpus.manifest +
                            " --val " + corpus.manifest + " --out " + out_dir,
                        "/dev/null", err) == 0,
                    slurp(err));
    const auto ckpt = out_dir + "/epoch_2.dshg";
    CHECK(slurp(ckpt).size() > 0);
    CHECK(slurp(out_dir + "/train_log.jsonl").size() > 0);
    // The resolved config is announced on stderr.
    CHECK(slurp(err).find("\"command\":\"train\"") != std::string::npos);

    const auto emb = dir.file("emb.bin");
    REQUIRE(run("embed --ckpt " + ckpt + " --manifest " + corpus.manifest +
                " --out " + emb + " --pooled") == 0);
    auto records = dasheng::embed::read_archive(emb);
    REQUIRE(records.size() == 5);
    CHECK(records[0].dim == 16);

    // Identical flags and seeds give byte-identical outputs.
    const auto emb2 = dir.file("emb2.bin");
    REQUIRE(run("embed --ckpt " + ckpt + " --manifest " + corpus.manifest +
                " --out " + emb2 + " --pooled") == 0);
    CHECK(slurp(emb) == slurp(emb2));

    const auto report = dir.file("knn.json");
    REQUIRE(run("eval-knn --train " + emb + " --train-labels " + corpus.labels +
                " --test " + emb + " --test-labels " + corpus.labels +
                " --k 3 --out " + report) == 0);
    auto j = json::parse(slurp(report));
    CHECK(j.contains("accuracy"));
    CHECK(j["params"]["k"].get<int>() == 3);
    // Self-evaluation with k=3 on two tight tonal clusters is perfect.
    CHECK(j["accuracy"].get<double>() == 1.0);

    const auto folds = dir.file("folds.json");
    REQUIRE(run("eval-knn --train " + emb + " --train-labels " + corpus.labels +
                " --test " + emb + " --test-labels " + corpus.labels +
                " --k 1 --folds 2 --out " + folds) == 0);
    auto fj = json::parse(slurp(folds));
    CHECK(fj["folds"].size() == 2);
    CHECK(fj.contains("mean_accuracy"));

    const auto probe_report = dir.file("probe.json");
    REQUIRE(run("eval-probe --train " + emb + " --train-labels " + corpus.labels +
                " --test " + emb + " --test-labels " + corpus.labels + " --out " +
                probe_report) == 0);
    auto pj = json::parse(slurp(probe_report));
    CHECK(pj["params"]["probe"].get<std::string>() == "linear");

    // A manifest whose every clip fails to embed is an error, not a no-op.
    const auto junk_manifest = dir.file("junk.jsonl");
    const auto junk_wav = dir.file("junk.wav");
    std::ofstream(junk_wav) << "not a wav";
    std::ofstream(junk_manifest) << json{{"path", junk_wav}}.dump() << "\n";
    CHECK(run("embed --ckpt " + ckpt + " --manifest " + junk_manifest + " --out " +
              dir.file("empty.bin")) == 2);

    const auto table = dir.file("inspect.txt");
    REQUIRE(run("inspect-ckpt --ckpt " + ckpt, table) == 0);
    const auto text = slurp(table);
    CHECK(text.find("embed.w") != std::string::npos);
    CHECK(text.find("parameters:") != std::string::npos);

    const auto elapsed = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    CHECK(elapsed < 60);
}
