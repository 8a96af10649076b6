#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtlhof/common.hpp"
#include "mtlhof/corpus.hpp"
#include "mtlhof/experiment.hpp"
#include "mtlhof/manifest.hpp"
#include "mtlhof/trainer.hpp"
#include "mtlhof/version.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// Subcommand dispatcher. Exit codes: 0 success, 1 module error (one
// machine-parsable line "error: <category>: <message>" on stderr), 2 usage.
// ---------------------------------------------------------------------------

namespace cli_detail {

inline std::vector<std::string> read_lines_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open input file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

// key = value lines; '#' starts a comment
inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto strip = [](std::string s) {
            std::size_t a = s.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            std::size_t b = s.find_last_not_of(" \t");
            return s.substr(a, b - a + 1);
        };
        if (strip(line).empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              " is not 'key = value': " + line);
        kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }
    return kv;
}

inline std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t comma = s.find(',', start);
        if (comma == std::string::npos) {
            if (start < s.size()) out.push_back(s.substr(start));
            break;
        }
        if (comma > start) out.push_back(s.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

inline NormalizerConfig make_normalizer(const std::string& aliases_path,
                                        const std::string& lexicon_path) {
    NormalizerConfig cfg = NormalizerConfig::defaults();
    if (!aliases_path.empty()) cfg.emoji_aliases = load_emoji_aliases(aliases_path);
    if (!lexicon_path.empty()) cfg.segmentation_lexicon = load_lexicon(lexicon_path);
    cfg.validate();
    return cfg;
}

// All *.jsonl under a directory, or the path itself when it is a file.
inline std::vector<std::string> data_files(const std::string& data_path) {
    namespace fs = std::filesystem;
    if (fs::is_directory(data_path)) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(data_path))
            if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
                files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw DataError("no .jsonl files under data directory " + data_path);
        return files;
    }
    if (!fs::exists(data_path)) throw IoError("data path does not exist: " + data_path);
    return {data_path};
}

inline std::map<std::string, Dataset> load_training_data(const std::string& data_path) {
    std::map<std::string, Dataset> merged;
    for (const auto& file : data_files(data_path)) {
        std::map<std::string, Dataset> part;
        try {
            part = load_jsonl_grouped(file, default_task_specs());
        } catch (const DataError&) {
            continue;  // file holds no known-task records
        }
        for (auto& [task, ds] : part) {
            auto it = merged.find(task);
            if (it == merged.end()) {
                merged[task] = std::move(ds);
            } else {
                it->second.examples.insert(it->second.examples.end(), ds.examples.begin(),
                                           ds.examples.end());
                it->second.provenance += " + " + ds.provenance;
            }
        }
    }
    if (!merged.count("hof")) throw DataError("training data contains no hof records");
    return merged;
}

struct TrainOptions {
    std::string config_path;
    std::string data_path;
    std::string out_path;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
};

struct ResolvedTrain {
    TrainConfig train;
    EncoderConfig encoder;
    double val_fraction = 0.2;
    int vocab_size = 1000;
    std::string vocab_path;
    std::string aliases_path;
    std::string lexicon_path;
};

// defaults < preset < config file < flags
inline ResolvedTrain resolve_train_config(const TrainOptions& opt) {
    std::map<std::string, std::string> kv;
    if (!opt.config_path.empty()) kv = parse_kv_file(opt.config_path);

    std::string preset = opt.preset;
    if (preset.empty() && kv.count("preset")) preset = kv.at("preset");

    ResolvedTrain r;
    if (!preset.empty()) r.train = preset_config(preset);

    auto geti = [&kv](const char* key, int& slot) {
        if (kv.count(key)) slot = std::stoi(kv.at(key));
    };
    auto getd = [&kv](const char* key, double& slot) {
        if (kv.count(key)) slot = std::stod(kv.at(key));
    };
    geti("epochs", r.train.epochs);
    getd("learning_rate", r.train.learning_rate);
    geti("batch_size", r.train.batch_size);
    getd("weight_decay", r.train.adamw.weight_decay);
    getd("beta1", r.train.adamw.beta1);
    getd("beta2", r.train.adamw.beta2);
    getd("eps", r.train.adamw.eps);
    getd("clip_norm", r.train.clip_norm);
    if (kv.count("seed")) r.train.seed = std::stoull(kv.at("seed"));
    if (kv.count("tasks")) r.train.tasks_enabled = split_commas(kv.at("tasks"));
    getd("val_fraction", r.val_fraction);
    geti("vocab_size", r.vocab_size);
    if (kv.count("vocab")) r.vocab_path = kv.at("vocab");
    if (kv.count("aliases")) r.aliases_path = kv.at("aliases");
    if (kv.count("lexicon")) r.lexicon_path = kv.at("lexicon");
    geti("num_layers", r.encoder.num_layers);
    geti("hidden_dim", r.encoder.hidden_dim);
    geti("num_heads", r.encoder.num_heads);
    geti("ffn_dim", r.encoder.ffn_dim);
    geti("max_len", r.encoder.max_len);
    if (kv.count("dropout")) r.encoder.dropout_rate = std::stof(kv.at("dropout"));

    if (opt.seed) r.train.seed = *opt.seed;
    if (opt.epochs) r.train.epochs = *opt.epochs;
    r.train.validate();
    return r;
}

inline nlohmann::ordered_json train_config_json(const ResolvedTrain& r) {
    nlohmann::ordered_json j;
    j["preset"] = r.train.preset_name;
    j["epochs"] = r.train.epochs;
    j["learning_rate"] = r.train.learning_rate;
    j["batch_size"] = r.train.batch_size;
    j["adamw"] = {{"beta1", r.train.adamw.beta1},
                  {"beta2", r.train.adamw.beta2},
                  {"eps", r.train.adamw.eps},
                  {"weight_decay", r.train.adamw.weight_decay}};
    j["clip_norm"] = r.train.clip_norm;
    j["seed"] = r.train.seed;
    j["tasks"] = r.train.tasks_enabled;
    j["val_fraction"] = r.val_fraction;
    j["encoder"] = {{"num_layers", r.encoder.num_layers},
                    {"hidden_dim", r.encoder.hidden_dim},
                    {"num_heads", r.encoder.num_heads},
                    {"ffn_dim", r.encoder.ffn_dim},
                    {"max_len", r.encoder.max_len},
                    {"dropout_rate", r.encoder.dropout_rate}};
    j["vocab_size"] = r.vocab_size;
    return j;
}

inline nlohmann::ordered_json report_json(const EvalReport& rep) {
    nlohmann::ordered_json j;
    j["task"] = rep.task;
    j["n"] = rep.n;
    j["macro"] = {{"precision", rep.macro.precision},
                  {"recall", rep.macro.recall},
                  {"f1", rep.macro.f1}};
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [label, s] : rep.per_class)
        per[label] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    j["per_class"] = per;
    return j;
}

// --- subcommand bodies -----------------------------------------------------

inline int cmd_preprocess(const std::vector<std::string>& argv, const std::string& in_path,
                          const std::string& out_path, const std::string& aliases_path,
                          const std::string& lexicon_path) {
    Timer timer;
    NormalizerConfig cfg = make_normalizer(aliases_path, lexicon_path);
    auto lines = read_lines_file(in_path);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError("cannot write output file: " + out_path);
    for (const auto& line : lines) out << normalize(line, cfg) << '\n';
    out.close();

    RunManifest manifest;
    manifest.command = "preprocess";
    manifest.argv = argv;
    manifest.config = {{"aliases", aliases_path}, {"lexicon", lexicon_path}};
    manifest.add_input(in_path);
    if (!aliases_path.empty()) manifest.add_input(aliases_path);
    if (!lexicon_path.empty()) manifest.add_input(lexicon_path);
    manifest.add_artifact(out_path);
    manifest.wall_clock_seconds = timer.seconds();
    write_manifest(manifest, out_path + ".manifest.json");
    return 0;
}

inline int cmd_build_vocab(const std::vector<std::string>& argv, const std::string& in_path,
                           int size, const std::string& out_path,
                           const std::string& aliases_path) {
    Timer timer;
    NormalizerConfig norm = make_normalizer(aliases_path, "");
    Vocab vocab = build_vocab(read_lines_file(in_path), size, atomic_tokens(norm));
    save_vocab(vocab, out_path);

    RunManifest manifest;
    manifest.command = "build-vocab";
    manifest.argv = argv;
    manifest.config = {{"size", size}};
    manifest.add_input(in_path);
    manifest.add_artifact(out_path);
    manifest.wall_clock_seconds = timer.seconds();
    write_manifest(manifest, out_path + ".manifest.json");
    return 0;
}

inline int cmd_ingest(const std::vector<std::string>& argv, const std::string& schema_path,
                      const std::string& in_path, const std::string& out_path) {
    Timer timer;
    CorpusSchema schema = CorpusSchema::from_json_file(schema_path);
    Dataset dataset = load_corpus(in_path, schema);
    if (dataset.dropped_rows > 0)
        std::cerr << "ingest: dropped " << dataset.dropped_rows
                  << " rows with unmapped labels\n";
    save_jsonl(dataset, out_path);

    RunManifest manifest;
    manifest.command = "ingest";
    manifest.argv = argv;
    manifest.config = {{"schema", schema_path},
                       {"task", schema.task},
                       {"examples", dataset.examples.size()},
                       {"dropped_rows", dataset.dropped_rows}};
    manifest.add_input(schema_path);
    manifest.add_input(in_path);
    manifest.add_artifact(out_path);
    manifest.wall_clock_seconds = timer.seconds();
    write_manifest(manifest, out_path + ".manifest.json");
    return 0;
}

inline int cmd_train(const std::vector<std::string>& argv, const TrainOptions& opt) {
    Timer timer;
    ResolvedTrain r = resolve_train_config(opt);

    std::string data_path = opt.data_path;
    if (data_path.empty()) {
        const char* env = std::getenv("MTLHOF_DATA");
        if (env) data_path = env;
    }
    if (data_path.empty())
        throw ConfigError("no data path: pass --data or set MTLHOF_DATA");

    auto datasets = load_training_data(data_path);

    Pipeline pipeline;
    pipeline.normalizer = make_normalizer(r.aliases_path, r.lexicon_path);
    if (!r.vocab_path.empty()) {
        pipeline.vocab = load_vocab(r.vocab_path);
    } else {
        std::vector<std::string> corpus;
        for (const auto& task : r.train.tasks_enabled) {
            if (!datasets.count(task))
                throw DataError("training data has no records for enabled task '" + task + "'");
            for (const auto& ex : datasets.at(task).examples)
                corpus.push_back(normalize(ex.text, pipeline.normalizer));
        }
        pipeline.vocab = build_vocab(corpus, r.vocab_size, atomic_tokens(pipeline.normalizer));
    }
    pipeline.max_len = r.encoder.max_len;

    auto [hof_train, hof_val] =
        split_dataset(datasets.at("hof"), 1.0 - r.val_fraction, r.val_fraction,
                      mix_seed(r.train.seed, "train-split"));
    std::map<std::string, Dataset> train_sets;
    std::vector<TaskSpec> specs;
    for (const auto& task : r.train.tasks_enabled) {
        train_sets[task] = task == "hof" ? hof_train : datasets.at(task);
        specs.push_back(datasets.at(task).task);
    }

    MtlModel model = make_model(r.encoder, specs, pipeline, r.train.seed);
    TrainHistory history = train(model, train_sets, r.train, hof_val);

    namespace fs = std::filesystem;
    std::string ckpt_path = opt.out_path;
    if (fs::is_directory(ckpt_path) || ckpt_path.ends_with('/')) {
        fs::create_directories(ckpt_path);
        ckpt_path = (fs::path(ckpt_path) / "model.mtl1").string();
    } else if (fs::path(ckpt_path).has_parent_path()) {
        fs::create_directories(fs::path(ckpt_path).parent_path());
    }
    save_checkpoint(model, ckpt_path);

    std::string history_path = ckpt_path + ".history.jsonl";
    {
        std::ofstream hist(history_path, std::ios::binary);
        for (const auto& rec : history) {
            nlohmann::ordered_json j;
            j["epoch"] = rec.epoch;
            j["mean_loss"] = rec.mean_loss;
            j["task_loss"] = rec.task_loss;
            j["val_macro_f1"] = rec.val_macro_f1;
            hist << j.dump() << '\n';
        }
    }

    RunManifest manifest;
    manifest.command = "train";
    manifest.argv = argv;
    manifest.config = train_config_json(r);
    manifest.seed = r.train.seed;
    for (const auto& file : data_files(data_path)) manifest.add_input(file);
    if (!r.vocab_path.empty()) manifest.add_input(r.vocab_path);
    manifest.add_artifact(ckpt_path);
    manifest.add_artifact(history_path);
    manifest.wall_clock_seconds = timer.seconds();
    write_manifest(manifest, ckpt_path + ".manifest.json");

    std::cerr << "train: " << history.size() << " epochs, final val macro-F1 "
              << (history.empty() ? 0.0 : history.back().val_macro_f1) << ", checkpoint "
              << ckpt_path << "\n";
    return 0;
}

inline int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
                    const std::string& task, const std::string& out_path,
                    const std::vector<std::string>& argv) {
    Timer timer;
    MtlModel model = load_checkpoint(ckpt_path);
    const TaskSpec& spec = model.task(task).first;
    CorpusSchema schema;
    schema.format = "jsonl-unified";
    schema.task = task;
    schema.labels = spec.labels;
    Dataset dataset = load_corpus(data_path, schema);
    EncodedDataset encoded = encode_dataset(dataset, model.pipeline);
    EvalReport rep = evaluate_model(model, encoded, spec);
    nlohmann::ordered_json j = report_json(rep);
    std::cout << j.dump() << "\n";
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        out << j.dump() << '\n';
        out.close();
        RunManifest manifest;
        manifest.command = "eval";
        manifest.argv = argv;
        manifest.config = {{"task", task}};
        manifest.add_input(ckpt_path);
        manifest.add_input(data_path);
        manifest.add_artifact(out_path);
        manifest.wall_clock_seconds = timer.seconds();
        write_manifest(manifest, out_path + ".manifest.json");
    }
    return 0;
}

inline int cmd_predict(const std::string& ckpt_path, const std::string& text) {
    MtlModel model = load_checkpoint(ckpt_path);
    auto preds = predict_all(model, text);
    nlohmann::ordered_json j;
    j["text"] = text;
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& p : preds) {
        nlohmann::ordered_json probs = nlohmann::ordered_json::object();
        for (std::size_t i = 0; i < p.labels.size(); ++i) probs[p.labels[i]] = p.probs[i];
        out[p.task] = {{"label", p.label}, {"probs", probs}};
    }
    j["predictions"] = out;
    std::cout << j.dump() << "\n";
    return 0;
}

inline int cmd_experiment(const std::vector<std::string>& argv, const std::string& grid_path,
                          const std::string& out_dir) {
    Timer timer;
    GridConfig config = GridConfig::from_json_file(grid_path);
    GridOutcome outcome = run_grid(config, out_dir);
    std::cout << render_table(outcome);

    RunManifest manifest;
    manifest.command = "experiment";
    manifest.argv = argv;
    {
        std::ifstream in(grid_path);
        nlohmann::json j;
        in >> j;
        manifest.config = j;
    }
    manifest.add_input(grid_path);
    namespace fs = std::filesystem;
    manifest.add_artifact((fs::path(out_dir) / "results.jsonl").string());
    manifest.add_artifact((fs::path(out_dir) / "table.txt").string());
    for (const auto& cell : outcome.cells)
        if (cell.ok) manifest.add_artifact(cell.checkpoint);
    manifest.wall_clock_seconds = timer.seconds();
    write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());

    for (const auto& cell : outcome.cells)
        if (!cell.ok)
            std::cerr << "experiment: cell " << cell.preset << "/seed" << cell.seed
                      << " failed: " << cell.error << "\n";
    return 0;
}

}  // namespace cli_detail

// Parses argv (without the program name) and runs the selected subcommand.
inline int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"multi-task hate/offensive-language detection toolkit"};
    app.set_version_flag("--version", kVersionString);
    app.require_subcommand(1);

    using namespace cli_detail;

    std::string in_path, out_path, aliases_path, lexicon_path;
    auto* preprocess = app.add_subcommand("preprocess", "normalize raw texts, one per line");
    preprocess->add_option("--in", in_path, "input text file")->required();
    preprocess->add_option("--out", out_path, "output text file")->required();
    preprocess->add_option("--aliases", aliases_path, "emoji alias table");
    preprocess->add_option("--lexicon", lexicon_path, "hashtag segmentation lexicon");

    int vocab_size = 1000;
    auto* build_vocab_cmd = app.add_subcommand("build-vocab", "learn a subword vocabulary");
    build_vocab_cmd->add_option("--in", in_path, "normalized corpus, one text per line")
        ->required();
    build_vocab_cmd->add_option("--size", vocab_size, "target vocabulary size")->required();
    build_vocab_cmd->add_option("--out", out_path, "vocab file (token per line)")->required();
    build_vocab_cmd->add_option("--aliases", aliases_path, "emoji alias table");

    std::string schema_path;
    auto* ingest = app.add_subcommand("ingest", "convert a corpus to unified JSONL");
    ingest->add_option("--schema", schema_path, "corpus schema JSON")->required();
    ingest->add_option("--in", in_path, "source corpus file")->required();
    ingest->add_option("--out", out_path, "output JSONL path")->required();

    TrainOptions topt;
    std::uint64_t seed_flag = 0;
    int epochs_flag = 0;
    auto* train_cmd = app.add_subcommand("train", "train a multi-task model");
    train_cmd->add_option("--config", topt.config_path, "key = value training config");
    train_cmd->add_option("--data", topt.data_path,
                          "unified JSONL file or directory (default $MTLHOF_DATA)");
    train_cmd->add_option("--out", topt.out_path, "checkpoint path or directory")->required();
    train_cmd->add_option("--preset", topt.preset,
                          "baseline|sentiment|emotion|target|all or HASOC_* names");
    auto* train_seed = train_cmd->add_option("--seed", seed_flag, "run seed");
    auto* train_epochs = train_cmd->add_option("--epochs", epochs_flag, "epoch override");

    std::string ckpt_path, task_name = "hof", text;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on JSONL data");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", in_path, "unified JSONL file")->required();
    eval_cmd->add_option("--task", task_name, "task to evaluate (default hof)");
    eval_cmd->add_option("--out", out_path, "also write the report to this file");

    auto* predict_cmd = app.add_subcommand("predict", "predict all tasks for one text");
    predict_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    predict_cmd->add_option("--text", text, "raw input text")->required();

    std::string grid_path;
    auto* experiment_cmd =
        app.add_subcommand("experiment", "run a preset x seed comparison grid");
    experiment_cmd->add_option("--grid", grid_path, "grid config JSON")->required();
    experiment_cmd->add_option("--out", out_path, "output directory")->required();

    try {
        app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        std::cout << kVersionString << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (preprocess->parsed())
            return cmd_preprocess(args, in_path, out_path, aliases_path, lexicon_path);
        if (build_vocab_cmd->parsed())
            return cmd_build_vocab(args, in_path, vocab_size, out_path, aliases_path);
        if (ingest->parsed()) return cmd_ingest(args, schema_path, in_path, out_path);
        if (train_cmd->parsed()) {
            if (!train_seed->empty()) topt.seed = seed_flag;
            if (!train_epochs->empty()) topt.epochs = epochs_flag;
            return cmd_train(args, topt);
        }
        if (eval_cmd->parsed()) return cmd_eval(ckpt_path, in_path, task_name, out_path, args);
        if (predict_cmd->parsed()) return cmd_predict(ckpt_path, text);
        if (experiment_cmd->parsed()) return cmd_experiment(args, grid_path, out_path);
        std::cerr << app.help();
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.category_name() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mtlhof
