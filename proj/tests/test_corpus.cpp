#include <catch2/catch.hpp>

#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mtlhof/corpus.hpp"

using namespace mtlhof;

namespace {

const std::string kFixtures = std::string(MTLHOF_TEST_DIR) + "/fixtures";

CorpusSchema hasoc_schema() {
    return CorpusSchema::from_json_file(kFixtures + "/hasoc_schema.json");
}

// chi-square critical values at significance 0.01 (p > 0.01 below these)
double chi2_critical_99(int dof) {
    static const std::map<int, double> table = {
        {1, 6.635}, {2, 9.210}, {3, 11.345}, {4, 13.277}, {5, 15.086}};
    return table.at(dof);
}

}  // namespace

TEST_CASE("tsv rows map directly to examples") {
    Dataset ds = load_corpus(kFixtures + "/hasoc_sample.tsv", hasoc_schema());
    REQUIRE(ds.size() == 12);
    CHECK(ds.task.name == "hof");
    CHECK(ds.examples[0].id == "h1");
    CHECK(ds.examples[0].text == "you are awful and vile");
    CHECK(ds.examples[0].label == ds.task.label_index("HOF"));
    CHECK(ds.examples[1].label == ds.task.label_index("NOT"));
}

TEST_CASE("empty corpus file is an ingestion error") {
    CHECK_THROWS_AS(load_corpus(kFixtures + "/empty.tsv", hasoc_schema()), DataError);
    CHECK_THROWS_AS(load_corpus(kFixtures + "/no_such_file.tsv", hasoc_schema()), IoError);
}

TEST_CASE("jsonl records map directly to examples") {
    CorpusSchema schema;
    schema.format = "jsonl-unified";
    schema.task = "sentiment";
    Dataset ds = load_corpus(kFixtures + "/unified_sample.jsonl", schema);
    REQUIRE(ds.size() == 3);
    CHECK(ds.examples[0].id == "7");
    CHECK(ds.examples[0].text == "great day");
    CHECK(ds.examples[0].label == ds.task.label_index("positive"));
}

TEST_CASE("OLID-style label map matches the hand count") {
    auto schema = CorpusSchema::from_json_file(kFixtures + "/olid_schema.json");
    Dataset ds = load_corpus(kFixtures + "/olid_target.tsv", schema);
    REQUIRE(ds.size() == 20);
    std::map<std::string, int> counts;
    for (const auto& ex : ds.examples)
        ++counts[ds.task.labels[static_cast<std::size_t>(ex.label)]];
    // hand tally of the 20-row fixture
    CHECK(counts["NONE"] == 7);
    CHECK(counts["IND"] == 5);
    CHECK(counts["GRP"] == 5);
    CHECK(counts["OTH"] == 3);
}

TEST_CASE("strict mode rejects unmapped labels listing offenders") {
    auto schema = hasoc_schema();
    std::string path = kFixtures + "/tmp_badlabel.tsv";
    {
        std::ofstream out(path);
        out << "text_id\ttext\ttask_1\n";
        out << "x1\tsome text\tHOF\n";
        out << "x2\tother text\tPRFN\n";
        out << "x3\tmore text\tOFFN\n";
    }
    CHECK_THROWS_WITH(load_corpus(path, schema),
                      Catch::Contains("PRFN") && Catch::Contains("OFFN"));
    schema.strict = false;
    Dataset ds = load_corpus(path, schema);
    CHECK(ds.size() == 1);
    CHECK(ds.dropped_rows == 2);
    std::remove(path.c_str());
}

TEST_CASE("malformed rows and duplicate ids are rejected") {
    auto schema = hasoc_schema();
    std::string path = kFixtures + "/tmp_malformed.tsv";
    {
        std::ofstream out(path);
        out << "text_id\ttext\ttask_1\n";
        out << "x1\tonly two columns\n";
    }
    CHECK_THROWS_AS(load_corpus(path, schema), DataError);
    {
        std::ofstream out(path);
        out << "text_id\ttext\ttask_1\n";
        out << "x1\ta\tHOF\n";
        out << "x1\tb\tNOT\n";
    }
    CHECK_THROWS_WITH(load_corpus(path, schema), Catch::Contains("duplicate id"));
    std::remove(path.c_str());
}

TEST_CASE("load then serialize then reload is an identity") {
    Dataset ds = load_corpus(kFixtures + "/hasoc_sample.tsv", hasoc_schema());
    std::string path = kFixtures + "/tmp_roundtrip.jsonl";
    save_jsonl(ds, path);
    CorpusSchema schema;
    schema.format = "jsonl-unified";
    schema.task = "hof";
    Dataset back = load_corpus(path, schema);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.examples[i].id == ds.examples[i].id);
        CHECK(back.examples[i].text == ds.examples[i].text);
        CHECK(back.examples[i].label == ds.examples[i].label);
    }
    std::remove(path.c_str());
}

TEST_CASE("grouped jsonl loading splits records by task") {
    auto groups = load_jsonl_grouped(kFixtures + "/unified_sample.jsonl",
                                     default_task_specs());
    CHECK(groups.count("hof") == 1);
    CHECK(groups.count("sentiment") == 1);
    CHECK(groups.count("emotion") == 1);
    CHECK(groups.count("target") == 1);
    CHECK(groups.at("hof").size() == 2);
    CHECK(groups.at("emotion").size() == 2);
}

TEST_CASE("split of 10 examples at 80/20 yields 8 and 2") {
    Dataset ds;
    ds.task = default_task_spec("hof");
    for (int i = 0; i < 10; ++i)
        ds.examples.push_back({"id" + std::to_string(i), "text", i % 2});
    auto [train, val] = split_dataset(ds, 0.8, 0.2, 7);
    CHECK(train.size() == 8);
    CHECK(val.size() == 2);
}

TEST_CASE("split rejects an empty validation fraction") {
    Dataset ds;
    ds.task = default_task_spec("hof");
    for (int i = 0; i < 10; ++i) ds.examples.push_back({std::to_string(i), "t", 0});
    CHECK_THROWS_AS(split_dataset(ds, 1.0, 0.0, 1), ConfigError);
    Dataset tiny;
    tiny.task = ds.task;
    tiny.examples.push_back({"a", "t", 0});
    CHECK_THROWS_AS(split_dataset(tiny, 0.8, 0.2, 1), DataError);
}

TEST_CASE("split preserves label proportions within one example") {
    Dataset ds;
    ds.task = default_task_spec("hof");
    for (int i = 0; i < 100; ++i)
        ds.examples.push_back({std::to_string(i), "t", i < 60 ? 0 : 1});
    auto [train, val] = split_dataset(ds, 0.8, 0.2, 42);
    auto count = [](const Dataset& d, int label) {
        long long n = 0;
        for (const auto& ex : d.examples) n += ex.label == label;
        return n;
    };
    CHECK(std::abs(count(train, 0) - 48) <= 1);
    CHECK(std::abs(count(train, 1) - 32) <= 1);
    CHECK(std::abs(count(val, 0) - 12) <= 1);
    CHECK(std::abs(count(val, 1) - 8) <= 1);
}

TEST_CASE("split is deterministic disjoint and exhaustive") {
    Rng meta(3);
    for (int trial = 0; trial < 20; ++trial) {
        Dataset ds;
        ds.task = default_task_spec("sentiment");
        int n = 10 + static_cast<int>(meta.below(200));
        for (int i = 0; i < n; ++i)
            ds.examples.push_back({std::to_string(i), "t", static_cast<int>(meta.below(3))});
        std::uint64_t seed = meta.next_u64();
        auto [t1, v1] = split_dataset(ds, 0.8, 0.2, seed);
        auto [t2, v2] = split_dataset(ds, 0.8, 0.2, seed);
        REQUIRE(t1.size() == t2.size());
        for (std::size_t i = 0; i < t1.size(); ++i)
            REQUIRE(t1.examples[i].id == t2.examples[i].id);

        std::set<std::string> seen;
        for (const auto& ex : t1.examples) seen.insert(ex.id);
        for (const auto& ex : v1.examples) {
            REQUIRE(seen.count(ex.id) == 0);
            seen.insert(ex.id);
        }
        REQUIRE(seen.size() == static_cast<std::size_t>(n));
        CHECK_FALSE(v1.examples.empty());
        CHECK_FALSE(t1.examples.empty());
    }
}

TEST_CASE("synthetic fixture produces the requested sizes") {
    SynthSpec spec;
    spec.sizes = {{"hof", 500}, {"sentiment", 500}, {"emotion", 500}, {"target", 500}};
    spec.rho = 0.5;
    auto fixture = synth_fixture(spec, 11);
    REQUIRE(fixture.size() == 4);
    for (const auto& [task, ds] : fixture) CHECK(ds.size() == 500);
    CHECK(fixture.at("emotion").task.labels.size() == 14);
}

TEST_CASE("synthetic fixture rejects rho outside the unit interval") {
    SynthSpec spec;
    spec.sizes = {{"hof", 10}};
    spec.rho = 1.5;
    CHECK_THROWS_AS(synth_fixture(spec, 1), ConfigError);
}

TEST_CASE("rho one makes every HOF text carry the negative sentiment marker") {
    SynthSpec spec;
    spec.sizes = {{"hof", 300}};
    spec.rho = 1.0;
    auto fixture = synth_fixture(spec, 5);
    const Dataset& hof = fixture.at("hof");
    int hof_label = hof.task.label_index("HOF");
    int seen = 0;
    for (const auto& ex : hof.examples) {
        if (ex.label != hof_label) continue;
        ++seen;
        CHECK(ex.text.find("sourtone") != std::string::npos);
    }
    CHECK(seen > 100);
}

TEST_CASE("rho zero leaves auxiliary labels independent of the latent state") {
    SynthSpec spec;
    spec.sizes = {{"sentiment", 1000}};
    spec.rho = 0.0;
    auto fixture = synth_fixture(spec, 17);
    const Dataset& ds = fixture.at("sentiment");
    // contingency: latent h (recovered from marker words) x 3 labels
    std::map<std::pair<bool, int>, double> cell;
    std::map<bool, double> row;
    std::map<int, double> col;
    for (const auto& ex : ds.examples) {
        bool h = synth_text_is_hof_marked(ex.text);
        cell[{h, ex.label}] += 1;
        row[h] += 1;
        col[ex.label] += 1;
    }
    double n = static_cast<double>(ds.size());
    double chi2 = 0.0;
    int used_cols = 0;
    for (const auto& [label, cn] : col) used_cols += cn > 0;
    for (const auto& [h, rn] : row) {
        for (const auto& [label, cn] : col) {
            double expected = rn * cn / n;
            if (expected <= 0) continue;
            double observed = cell.count({h, label}) ? cell[{h, label}] : 0.0;
            chi2 += (observed - expected) * (observed - expected) / expected;
        }
    }
    int dof = (2 - 1) * (used_cols - 1);
    CHECK(chi2 < chi2_critical_99(dof));
}

TEST_CASE("rho one couples auxiliary labels to the latent state") {
    SynthSpec spec;
    spec.sizes = {{"emotion", 400}};
    spec.rho = 1.0;
    auto fixture = synth_fixture(spec, 23);
    const Dataset& ds = fixture.at("emotion");
    int anger = ds.task.label_index("anger");
    int hate = ds.task.label_index("hate");
    for (const auto& ex : ds.examples) {
        bool h = synth_text_is_hof_marked(ex.text);
        bool negative_label = ex.label == anger || ex.label == hate;
        CHECK(h == negative_label);
    }
}
