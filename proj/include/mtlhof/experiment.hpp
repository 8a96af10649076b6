#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlhof/common.hpp"
#include "mtlhof/corpus.hpp"
#include "mtlhof/digest.hpp"
#include "mtlhof/trainer.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// Experiment grid: for each preset x seed, train a model, evaluate the hof
// task on a held-out test set, persist the checkpoint, and aggregate
// mean +/- stdev per preset. Results land in a line-delimited records file
// plus a rendered plain-text table with Macro P/R/F1 and Class-HOF P/R/F1
// columns.
// ---------------------------------------------------------------------------

struct GridDataConfig {
    // file mode: unified JSONL with all training tasks, plus a hof test file
    std::string train_path;
    std::string test_path;
    // synthetic mode
    std::optional<SynthSpec> synth;
    std::uint64_t synth_seed = 7;
    int synth_test_size = 400;
    std::uint64_t synth_test_seed = 1007;
    double synth_test_marker_skew = 0.0;
};

struct GridConfig {
    std::vector<std::string> presets;
    std::vector<std::uint64_t> seeds;
    EncoderConfig encoder;
    int vocab_target = 1000;
    double val_fraction = 0.2;
    GridDataConfig data;
    std::optional<int> epochs_override;  // grid-level experiment control

    static GridConfig from_json(const nlohmann::json& j) {
        GridConfig g;
        g.presets = j.at("presets").get<std::vector<std::string>>();
        g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("encoder")) {
            const auto& e = j.at("encoder");
            if (e.contains("num_layers")) g.encoder.num_layers = e.at("num_layers").get<int>();
            if (e.contains("hidden_dim")) g.encoder.hidden_dim = e.at("hidden_dim").get<int>();
            if (e.contains("num_heads")) g.encoder.num_heads = e.at("num_heads").get<int>();
            if (e.contains("ffn_dim")) g.encoder.ffn_dim = e.at("ffn_dim").get<int>();
            if (e.contains("max_len")) g.encoder.max_len = e.at("max_len").get<int>();
            if (e.contains("dropout_rate"))
                g.encoder.dropout_rate = e.at("dropout_rate").get<float>();
        }
        if (j.contains("vocab_size")) g.vocab_target = j.at("vocab_size").get<int>();
        if (j.contains("val_fraction")) g.val_fraction = j.at("val_fraction").get<double>();
        if (j.contains("epochs_override"))
            g.epochs_override = j.at("epochs_override").get<int>();

        const auto& d = j.at("data");
        if (d.contains("synth")) {
            const auto& s = d.at("synth");
            SynthSpec spec;
            for (auto it = s.at("sizes").begin(); it != s.at("sizes").end(); ++it)
                spec.sizes[it.key()] = it.value().get<int>();
            if (s.contains("rho")) spec.rho = s.at("rho").get<double>();
            if (s.contains("marker_pool")) spec.marker_pool = s.at("marker_pool").get<int>();
            if (s.contains("marker_skew")) spec.marker_skew = s.at("marker_skew").get<double>();
            if (s.contains("fillers_min")) spec.fillers_min = s.at("fillers_min").get<int>();
            if (s.contains("fillers_max")) spec.fillers_max = s.at("fillers_max").get<int>();
            g.data.synth = spec;
            if (s.contains("seed")) g.data.synth_seed = s.at("seed").get<std::uint64_t>();
            if (s.contains("test_size")) g.data.synth_test_size = s.at("test_size").get<int>();
            if (s.contains("test_seed"))
                g.data.synth_test_seed = s.at("test_seed").get<std::uint64_t>();
            if (s.contains("test_marker_skew"))
                g.data.synth_test_marker_skew = s.at("test_marker_skew").get<double>();
        } else {
            g.data.train_path = d.at("train").get<std::string>();
            g.data.test_path = d.at("test").get<std::string>();
        }
        return g;
    }

    static GridConfig from_json_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open grid config: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("grid config " + path + " is not valid JSON: " + e.what());
        }
        return from_json(j);
    }
};

struct GridCell {
    std::string preset;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    EvalReport hof_report;
    std::string checkpoint;
};

struct PresetAggregate {
    std::string preset;
    int runs = 0;
    // order: macro P, R, F1, HOF-class P, R, F1
    std::array<double, 6> mean{};
    std::array<double, 6> stdev{};
};

struct GridOutcome {
    std::vector<GridCell> cells;
    std::vector<PresetAggregate> aggregates;
};

namespace grid_detail {

inline std::array<double, 6> cell_metrics(const EvalReport& rep) {
    ClassScores hof = rep.per_class.count("HOF") ? rep.per_class.at("HOF") : ClassScores{};
    return {rep.macro.precision, rep.macro.recall,  rep.macro.f1,
            hof.precision,       hof.recall,        hof.f1};
}

inline PresetAggregate aggregate_preset(const std::string& preset,
                                        const std::vector<GridCell>& cells) {
    PresetAggregate agg;
    agg.preset = preset;
    std::vector<std::array<double, 6>> rows;
    for (const auto& cell : cells)
        if (cell.preset == preset && cell.ok) rows.push_back(cell_metrics(cell.hof_report));
    agg.runs = static_cast<int>(rows.size());
    if (rows.empty()) return agg;
    for (const auto& row : rows)
        for (int i = 0; i < 6; ++i) agg.mean[static_cast<std::size_t>(i)] += row[static_cast<std::size_t>(i)];
    for (int i = 0; i < 6; ++i) agg.mean[static_cast<std::size_t>(i)] /= agg.runs;
    if (agg.runs > 1) {
        for (const auto& row : rows)
            for (int i = 0; i < 6; ++i) {
                double d = row[static_cast<std::size_t>(i)] - agg.mean[static_cast<std::size_t>(i)];
                agg.stdev[static_cast<std::size_t>(i)] += d * d;
            }
        for (int i = 0; i < 6; ++i)
            agg.stdev[static_cast<std::size_t>(i)] =
                std::sqrt(agg.stdev[static_cast<std::size_t>(i)] / (agg.runs - 1));
    }
    return agg;
}

}  // namespace grid_detail

// Renders the comparison table: one row per preset, macro and HOF-class
// precision/recall/F1 as mean+/-stdev over seeds.
inline std::string render_table(const GridOutcome& outcome) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-16s %4s  %-13s %-13s %-13s %-13s %-13s %-13s\n",
                  "model", "runs", "macro-P", "macro-R", "macro-F1", "HOF-P", "HOF-R",
                  "HOF-F1");
    out += line;
    out += std::string(108, '-') + "\n";
    for (const auto& agg : outcome.aggregates) {
        out += [&] {
            char row[256];
            std::snprintf(row, sizeof(row), "%-16s %4d", agg.preset.c_str(), agg.runs);
            std::string s = row;
            for (int i = 0; i < 6; ++i) {
                char cellbuf[64];
                std::snprintf(cellbuf, sizeof(cellbuf), "  %.3f±%.3f",
                              agg.mean[static_cast<std::size_t>(i)],
                              agg.stdev[static_cast<std::size_t>(i)]);
                s += cellbuf;
            }
            return s + "\n";
        }();
    }
    return out;
}

struct GridData {
    std::map<std::string, Dataset> train;
    Dataset test;
};

inline GridData load_grid_data(const GridConfig& config) {
    GridData data;
    if (config.data.synth) {
        data.train = synth_fixture(*config.data.synth, config.data.synth_seed);
        SynthSpec test_spec = *config.data.synth;
        test_spec.sizes = {{"hof", config.data.synth_test_size}};
        test_spec.marker_skew = config.data.synth_test_marker_skew;
        data.test = synth_fixture(test_spec, config.data.synth_test_seed).at("hof");
    } else {
        data.train = load_jsonl_grouped(config.data.train_path, default_task_specs());
        CorpusSchema schema;
        schema.format = "jsonl-unified";
        schema.task = "hof";
        data.test = load_corpus(config.data.test_path, schema);
    }
    if (!data.train.count("hof")) throw DataError("grid data has no hof training set");
    return data;
}

inline GridOutcome run_grid(const GridConfig& config, const std::string& out_dir) {
    if (config.presets.empty() || config.seeds.empty())
        throw ConfigError("grid needs at least one preset and one seed");
    std::filesystem::create_directories(out_dir);

    GridData data = load_grid_data(config);

    // one shared pipeline for every cell: vocabulary over all training text
    Pipeline pipeline;
    pipeline.normalizer = NormalizerConfig::defaults();
    std::vector<std::string> corpus;
    for (const auto& [task, ds] : data.train)
        for (const auto& ex : ds.examples)
            corpus.push_back(normalize(ex.text, pipeline.normalizer));
    pipeline.vocab = build_vocab(corpus, config.vocab_target, atomic_tokens(pipeline.normalizer));
    pipeline.max_len = config.encoder.max_len;

    EncodedDataset test_encoded = encode_dataset(data.test, pipeline);
    const TaskSpec hof_spec = data.test.task;

    GridOutcome outcome;
    for (const auto& preset : config.presets) {
        for (std::uint64_t seed : config.seeds) {
            GridCell cell;
            cell.preset = preset;
            cell.seed = seed;
            try {
                TrainConfig train_cfg = preset_config(preset);
                train_cfg.seed = seed;
                if (config.epochs_override) train_cfg.epochs = *config.epochs_override;

                auto [hof_train, hof_val] = split_dataset(
                    data.train.at("hof"), 1.0 - config.val_fraction, config.val_fraction,
                    mix_seed(seed, "grid-split"));
                std::map<std::string, Dataset> train_sets;
                std::vector<TaskSpec> specs;
                for (const auto& task : train_cfg.tasks_enabled) {
                    if (!data.train.count(task))
                        throw DataError("grid data has no dataset for task '" + task + "'");
                    train_sets[task] = task == "hof" ? hof_train : data.train.at(task);
                    specs.push_back(data.train.at(task).task);
                }

                MtlModel model =
                    make_model(config.encoder, specs, pipeline, mix_seed(seed, "grid-init"));
                train(model, train_sets, train_cfg, hof_val);

                cell.hof_report = evaluate_model(model, test_encoded, hof_spec);
                std::string name = train_cfg.preset_name + "-seed" + std::to_string(seed) + ".mtl1";
                cell.checkpoint = (std::filesystem::path(out_dir) / name).string();
                save_checkpoint(model, cell.checkpoint);
                cell.ok = true;
            } catch (const Error& e) {
                cell.ok = false;
                cell.error = std::string(e.category_name()) + ": " + e.what();
            }
            outcome.cells.push_back(std::move(cell));
        }
    }
    for (const auto& preset : config.presets)
        outcome.aggregates.push_back(grid_detail::aggregate_preset(
            preset_config(preset).preset_name, outcome.cells));
    // normalize preset aliases in cells for the records file
    for (auto& cell : outcome.cells) cell.preset = preset_config(cell.preset).preset_name;

    // structured results: one record per cell, then one per aggregate
    std::ofstream results(std::filesystem::path(out_dir) / "results.jsonl",
                          std::ios::binary);
    if (!results) throw IoError("cannot write results file in " + out_dir);
    for (const auto& cell : outcome.cells) {
        nlohmann::ordered_json j;
        j["kind"] = "cell";
        j["preset"] = cell.preset;
        j["seed"] = cell.seed;
        if (cell.ok) {
            auto m = grid_detail::cell_metrics(cell.hof_report);
            j["n"] = cell.hof_report.n;
            j["macro"] = {{"precision", m[0]}, {"recall", m[1]}, {"f1", m[2]}};
            j["class_hof"] = {{"precision", m[3]}, {"recall", m[4]}, {"f1", m[5]}};
            j["checkpoint"] = std::filesystem::path(cell.checkpoint).filename().string();
        } else {
            j["error"] = cell.error;
        }
        results << j.dump() << '\n';
    }
    for (const auto& agg : outcome.aggregates) {
        nlohmann::ordered_json j;
        j["kind"] = "aggregate";
        j["preset"] = agg.preset;
        j["runs"] = agg.runs;
        static const char* names[6] = {"macro_precision", "macro_recall", "macro_f1",
                                       "hof_precision",   "hof_recall",   "hof_f1"};
        for (int i = 0; i < 6; ++i)
            j[names[i]] = {{"mean", agg.mean[static_cast<std::size_t>(i)]},
                           {"stdev", agg.stdev[static_cast<std::size_t>(i)]}};
        results << j.dump() << '\n';
    }
    results.close();

    std::ofstream table(std::filesystem::path(out_dir) / "table.txt", std::ios::binary);
    table << render_table(outcome);
    return outcome;
}

}  // namespace mtlhof
