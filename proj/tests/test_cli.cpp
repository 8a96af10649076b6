#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlhof/cli.hpp"

using namespace mtlhof;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::path(MTLHOF_TEST_DIR) / "tmp_cli";
const std::string kFixtures = std::string(MTLHOF_TEST_DIR) + "/fixtures";

struct CaptureStdout {
    std::stringstream buffer;
    std::streambuf* old;
    CaptureStdout() : old(std::cout.rdbuf(buffer.rdbuf())) {}
    ~CaptureStdout() { std::cout.rdbuf(old); }
    std::string str() const { return buffer.str(); }
};

int run(std::vector<std::string> args) { return dispatch(args); }

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// a small unified JSONL training file from the synthetic generator
void write_training_jsonl(const fs::path& path, int n, std::uint64_t seed) {
    SynthSpec spec;
    spec.sizes = {{"hof", n}, {"sentiment", n}, {"emotion", n}, {"target", n}};
    spec.rho = 0.9;
    auto fixture = synth_fixture(spec, seed);
    std::ofstream out(path, std::ios::binary);
    for (const auto& [task, ds] : fixture) {
        std::ostringstream tmp;
        out.close();
        save_jsonl(ds, (path.string() + "." + task));
        std::ifstream part(path.string() + "." + task, std::ios::binary);
        tmp << part.rdbuf();
        out.open(path, std::ios::binary | std::ios::app);
        out << tmp.str();
        fs::remove(path.string() + "." + task);
    }
}

}  // namespace

TEST_CASE("cli requires a subcommand and rejects unknown ones") {
    CHECK(run({}) == 2);
    CHECK(run({"frobnicate"}) == 2);
    CHECK(run({"train"}) == 2);  // missing required --out
}

TEST_CASE("preprocess reproduces the golden normalization") {
    fs::create_directories(kWork);
    fs::path out = kWork / "norm.txt";
    REQUIRE(run({"preprocess", "--in", kFixtures + "/raw_tweets.txt", "--out",
                 out.string()}) == 0);
    CHECK(slurp(out) == slurp(kFixtures + "/normalized_tweets.txt"));
    CHECK(fs::exists(kWork / "norm.txt.manifest.json"));
    RunManifest manifest = read_manifest((kWork / "norm.txt.manifest.json").string());
    CHECK(manifest.command == "preprocess");
    CHECK(manifest.artifact_digests.count(out.string()) == 1);
}

TEST_CASE("build-vocab writes a loadable vocabulary") {
    fs::create_directories(kWork);
    fs::path norm = kWork / "norm_corpus.txt";
    {
        std::ofstream out(norm);
        out << "stop the hate now\nlove wins always\n<user> said :fire: things\n";
    }
    fs::path vocab_path = kWork / "vocab.txt";
    REQUIRE(run({"build-vocab", "--in", norm.string(), "--size", "120", "--out",
                 vocab_path.string()}) == 0);
    Vocab vocab = load_vocab(vocab_path.string());
    CHECK(vocab.size() <= 120);
    CHECK(vocab.contains("<user>"));
    CHECK(vocab.contains(":fire:"));
}

TEST_CASE("ingest converts tsv to unified jsonl") {
    fs::create_directories(kWork);
    fs::path out = kWork / "hof.jsonl";
    REQUIRE(run({"ingest", "--schema", kFixtures + "/hasoc_schema.json", "--in",
                 kFixtures + "/hasoc_sample.tsv", "--out", out.string()}) == 0);
    CorpusSchema schema;
    schema.format = "jsonl-unified";
    schema.task = "hof";
    Dataset ds = load_corpus(out.string(), schema);
    CHECK(ds.size() == 12);
    CHECK(run({"ingest", "--schema", kFixtures + "/hasoc_schema.json", "--in",
               kFixtures + "/empty.tsv", "--out", (kWork / "x.jsonl").string()}) == 1);
}

TEST_CASE("train produces a checkpoint, history, and manifest; same seed, same bytes") {
    fs::create_directories(kWork);
    fs::path data = kWork / "train_data.jsonl";
    write_training_jsonl(data, 48, 11);
    fs::path cfg_path = kWork / "train.cfg";
    {
        std::ofstream cfg(cfg_path);
        cfg << "# desk-scale run\n"
               "preset = all\n"
               "epochs = 1\n"
               "num_layers = 1\n"
               "hidden_dim = 32\n"
               "num_heads = 2\n"
               "ffn_dim = 48\n"
               "max_len = 24\n"
               "vocab_size = 300\n";
    }
    auto train_once = [&](const std::string& out_name) {
        fs::path ckpt = kWork / out_name;
        REQUIRE(run({"train", "--config", cfg_path.string(), "--data", data.string(),
                     "--out", ckpt.string(), "--seed", "33"}) == 0);
        REQUIRE(fs::exists(ckpt));
        REQUIRE(fs::exists(ckpt.string() + ".history.jsonl"));
        REQUIRE(fs::exists(ckpt.string() + ".manifest.json"));
        return sha256_file(ckpt.string());
    };
    std::string d1 = train_once("run_a.mtl1");
    std::string d2 = train_once("run_b.mtl1");
    CHECK(d1 == d2);

    // flags override the config file
    fs::path ckpt3 = kWork / "run_c.mtl1";
    REQUIRE(run({"train", "--config", cfg_path.string(), "--data", data.string(), "--out",
                 ckpt3.string(), "--seed", "34"}) == 0);
    CHECK(sha256_file(ckpt3.string()) != d1);

    // the recorded history is line-delimited JSON with one record per epoch
    std::ifstream hist(kWork / "run_a.mtl1.history.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(hist, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.contains("epoch"));
        CHECK(j.contains("val_macro_f1"));
        ++lines;
    }
    CHECK(lines == 1);

    // flags take precedence over config-file keys: epochs 1 in the file,
    // --epochs 2 on the command line
    fs::path ckpt4 = kWork / "run_d.mtl1";
    REQUIRE(run({"train", "--config", cfg_path.string(), "--data", data.string(), "--out",
                 ckpt4.string(), "--seed", "33", "--epochs", "2"}) == 0);
    std::ifstream hist2(ckpt4.string() + ".history.jsonl");
    int lines2 = 0;
    while (std::getline(hist2, line)) ++lines2;
    CHECK(lines2 == 2);
}

TEST_CASE("the data directory can come from the environment") {
    fs::create_directories(kWork / "envdata");
    write_training_jsonl(kWork / "envdata" / "all.jsonl", 24, 3);
    setenv("MTLHOF_DATA", (kWork / "envdata").c_str(), 1);
    fs::path ckpt = kWork / "env_run.mtl1";
    REQUIRE(run({"train", "--out", ckpt.string(), "--seed", "5", "--epochs", "1"}) == 0);
    CHECK(fs::exists(ckpt));
    unsetenv("MTLHOF_DATA");
    CHECK(run({"train", "--out", (kWork / "nope.mtl1").string()}) == 1);
}

TEST_CASE("predict emits one structured record with all four tasks") {
    fs::path ckpt = kWork / "run_a.mtl1";
    REQUIRE(fs::exists(ckpt));  // produced by the train test case above
    CaptureStdout capture;
    REQUIRE(run({"predict", "--ckpt", ckpt.string(), "--text", "@user you are awful"}) == 0);
    auto j = nlohmann::json::parse(capture.str());
    CHECK(j.at("text") == "@user you are awful");
    const auto& preds = j.at("predictions");
    REQUIRE(preds.size() == 4);
    for (const auto& task : {"hof", "sentiment", "emotion", "target"}) {
        REQUIRE(preds.contains(task));
        double sum = 0.0;
        for (const auto& [label, p] : preds.at(task).at("probs").items())
            sum += p.get<double>();
        CHECK(sum == Approx(1.0).margin(1e-6));
        CHECK(preds.at(task).contains("label"));
    }
}

TEST_CASE("eval reports macro and per-class scores as one record") {
    fs::path ckpt = kWork / "run_a.mtl1";
    fs::path data = kWork / "train_data.jsonl";
    REQUIRE(fs::exists(ckpt));
    CaptureStdout capture;
    REQUIRE(run({"eval", "--ckpt", ckpt.string(), "--data", data.string(), "--task",
                 "hof"}) == 0);
    auto j = nlohmann::json::parse(capture.str());
    CHECK(j.at("task") == "hof");
    CHECK(j.at("n").get<int>() == 48);
    CHECK(j.at("macro").contains("f1"));
    CHECK(j.at("per_class").contains("HOF"));
    CHECK(j.at("per_class").contains("NOT"));
}

TEST_CASE("experiment grids rerun byte-identically and manifests replay") {
    fs::create_directories(kWork);
    fs::path grid = kWork / "grid.json";
    {
        std::ofstream out(grid);
        out << R"({
  "presets": ["baseline"],
  "seeds": [1, 2],
  "encoder": {"num_layers": 1, "hidden_dim": 32, "num_heads": 2, "ffn_dim": 64,
              "max_len": 24, "dropout_rate": 0.0},
  "vocab_size": 300,
  "data": {"synth": {"sizes": {"hof": 96}, "rho": 0.9, "marker_pool": 8,
                     "seed": 5, "test_size": 64, "test_seed": 99}}
})";
    }
    fs::path out1 = kWork / "grid_run1";
    fs::path out2 = kWork / "grid_run2";
    REQUIRE(run({"experiment", "--grid", grid.string(), "--out", out1.string()}) == 0);
    REQUIRE(run({"experiment", "--grid", grid.string(), "--out", out2.string()}) == 0);
    CHECK(slurp(out1 / "results.jsonl") == slurp(out2 / "results.jsonl"));
    CHECK(slurp(out1 / "table.txt") == slurp(out2 / "table.txt"));
    for (const auto& name : {"baseline-seed1.mtl1", "baseline-seed2.mtl1"}) {
        CHECK(sha256_file((out1 / name).string()) == sha256_file((out2 / name).string()));
    }

    // replay: the manifest's argv alone re-executes the run and reproduces
    // the recorded artifact digests
    RunManifest manifest = read_manifest((out1 / "manifest.json").string());
    REQUIRE(run(manifest.argv) == 0);
    for (const auto& [path, digest] : manifest.artifact_digests)
        CHECK(sha256_file(path) == digest);
}

TEST_CASE("cleanup") {
    std::error_code ec;
    fs::remove_all(kWork, ec);
    CHECK(true);
}
