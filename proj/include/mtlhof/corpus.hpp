#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mtlhof/common.hpp"
#include "mtlhof/tasks.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// Corpus ingestion: tab-separated source files and the unified JSONL
// interchange format (one object per line: id, text, task, label). Label
// strings map through a per-schema label_map into the task's label set.
// ---------------------------------------------------------------------------

struct CorpusSchema {
    std::string format;  // "tsv-hasoc" or "jsonl-unified"
    std::string task;
    std::map<std::string, std::string> label_map;  // raw -> canonical; empty = identity
    std::string id_column = "text_id";
    std::string text_column = "text";
    std::string label_column = "task_1";
    std::vector<std::string> labels;  // optional override of the task's label set
    bool strict = true;               // lenient mode drops unmapped-label rows

    static CorpusSchema from_json(const nlohmann::json& j) {
        CorpusSchema s;
        s.format = j.at("format").get<std::string>();
        s.task = j.at("task").get<std::string>();
        if (j.contains("label_map"))
            for (auto it = j.at("label_map").begin(); it != j.at("label_map").end(); ++it)
                s.label_map[it.key()] = it.value().get<std::string>();
        if (j.contains("id_column")) s.id_column = j.at("id_column").get<std::string>();
        if (j.contains("text_column")) s.text_column = j.at("text_column").get<std::string>();
        if (j.contains("label_column")) s.label_column = j.at("label_column").get<std::string>();
        if (j.contains("labels")) s.labels = j.at("labels").get<std::vector<std::string>>();
        if (j.contains("strict")) s.strict = j.at("strict").get<bool>();
        if (s.format != "tsv-hasoc" && s.format != "jsonl-unified")
            throw ConfigError("unknown corpus format: " + s.format);
        return s;
    }

    static CorpusSchema from_json_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open schema file: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("schema file " + path + " is not valid JSON: " + e.what());
        }
        return from_json(j);
    }

    TaskSpec task_spec() const {
        TaskSpec spec = labels.empty() ? default_task_spec(task) : TaskSpec{task, labels};
        spec.validate();
        return spec;
    }
};

struct Example {
    std::string id;
    std::string text;
    int label = 0;
};

struct Dataset {
    TaskSpec task;
    std::vector<Example> examples;
    std::string provenance;
    int dropped_rows = 0;

    std::size_t size() const { return examples.size(); }
};

namespace corpus_detail {

inline std::string map_label(const CorpusSchema& schema, const std::string& raw) {
    if (schema.label_map.empty()) return raw;
    auto it = schema.label_map.find(raw);
    return it == schema.label_map.end() ? std::string() : it->second;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            cols.push_back(line.substr(start));
            break;
        }
        cols.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return cols;
}

struct RowSink {
    const CorpusSchema& schema;
    TaskSpec spec;
    Dataset out;
    std::unordered_set<std::string> seen_ids;
    std::set<std::string> unmapped;

    explicit RowSink(const CorpusSchema& s) : schema(s), spec(s.task_spec()) {
        out.task = spec;
    }

    void add(const std::string& id, const std::string& text, const std::string& raw_label,
             int lineno) {
        std::string canonical = map_label(schema, raw_label);
        int idx = canonical.empty() ? -1 : spec.label_index(canonical);
        if (idx < 0) {
            if (schema.strict) {
                unmapped.insert(raw_label);
                return;
            }
            ++out.dropped_rows;
            return;
        }
        if (!seen_ids.insert(id).second)
            throw DataError("duplicate id '" + id + "' at line " + std::to_string(lineno));
        out.examples.push_back({id, text, idx});
    }

    Dataset finish(const std::string& path) {
        if (!unmapped.empty()) {
            std::string offenders;
            for (const auto& u : unmapped) {
                if (!offenders.empty()) offenders += ", ";
                offenders += "'" + u + "'";
            }
            throw DataError("unmapped labels in " + path + ": " + offenders);
        }
        if (out.examples.empty())
            throw DataError("corpus " + path + " yielded no examples");
        out.provenance = path + " [" + schema.format + "]";
        return std::move(out);
    }
};

}  // namespace corpus_detail

inline Dataset load_corpus(const std::string& path, const CorpusSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path);
    corpus_detail::RowSink sink(schema);
    std::string line;
    int lineno = 0;

    if (schema.format == "tsv-hasoc") {
        if (!std::getline(in, line)) throw DataError("corpus " + path + " is empty");
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto header = corpus_detail::split_tabs(line);
        auto col = [&](const std::string& name) {
            auto it = std::find(header.begin(), header.end(), name);
            if (it == header.end())
                throw DataError("corpus " + path + " is missing column '" + name + "'");
            return static_cast<std::size_t>(it - header.begin());
        };
        std::size_t id_col = col(schema.id_column);
        std::size_t text_col = col(schema.text_column);
        std::size_t label_col = col(schema.label_column);
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto cols = corpus_detail::split_tabs(line);
            if (cols.size() != header.size())
                throw DataError("malformed row at line " + std::to_string(lineno) + " of " +
                                path + ": expected " + std::to_string(header.size()) +
                                " columns, got " + std::to_string(cols.size()));
            sink.add(cols[id_col], cols[text_col], cols[label_col], lineno);
        }
    } else {  // jsonl-unified
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw DataError("malformed JSON at line " + std::to_string(lineno) + " of " +
                                path + ": " + e.what());
            }
            for (const char* field : {"id", "text", "task", "label"})
                if (!j.contains(field))
                    throw DataError("record at line " + std::to_string(lineno) + " of " +
                                    path + " is missing field '" + std::string(field) + "'");
            if (j.at("task").get<std::string>() != schema.task) continue;
            sink.add(j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                     j.at("label").get<std::string>(), lineno);
        }
    }
    return sink.finish(path);
}

// Serializes a dataset to the unified JSONL interchange format.
inline void save_jsonl(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write jsonl file: " + path);
    for (const auto& ex : dataset.examples) {
        nlohmann::ordered_json j;
        j["id"] = ex.id;
        j["text"] = ex.text;
        j["task"] = dataset.task.name;
        j["label"] = dataset.task.labels[static_cast<std::size_t>(ex.label)];
        out << j.dump() << '\n';
    }
}

// Loads every record of a unified JSONL file, grouped by task.
inline std::map<std::string, Dataset> load_jsonl_grouped(
    const std::string& path, const std::vector<TaskSpec>& specs) {
    std::map<std::string, Dataset> out;
    for (const auto& spec : specs) {
        CorpusSchema schema;
        schema.format = "jsonl-unified";
        schema.task = spec.name;
        schema.labels = spec.labels;
        try {
            out[spec.name] = load_corpus(path, schema);
        } catch (const DataError&) {
            // task absent from this file
        }
    }
    if (out.empty()) throw DataError("no known task records in " + path);
    return out;
}

// Stratified train/validation split: seeded shuffle, per-label proportions
// preserved within one example.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double train_frac,
                                                 double val_frac, std::uint64_t seed) {
    if (train_frac <= 0.0 || val_frac <= 0.0 ||
        std::abs(train_frac + val_frac - 1.0) > 1e-9)
        throw ConfigError("split fractions must be positive and sum to 1 (validation "
                          "must be nonempty when requested)");
    if (dataset.size() < 2) throw DataError("cannot split a dataset of fewer than 2 examples");

    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < dataset.examples.size(); ++i)
        by_label[dataset.examples[i].label].push_back(i);

    std::vector<std::size_t> train_idx, val_idx;
    for (auto& [label, indices] : by_label) {
        Rng rng(mix_seed(seed, "split", static_cast<std::uint64_t>(label)));
        rng.shuffle(indices);
        auto n_train = static_cast<std::size_t>(
            std::llround(train_frac * static_cast<double>(indices.size())));
        n_train = std::min(n_train, indices.size());
        train_idx.insert(train_idx.end(), indices.begin(),
                         indices.begin() + static_cast<std::ptrdiff_t>(n_train));
        val_idx.insert(val_idx.end(), indices.begin() + static_cast<std::ptrdiff_t>(n_train),
                       indices.end());
    }
    // both sides must be nonempty; move one example from the larger side
    if (val_idx.empty()) {
        val_idx.push_back(train_idx.back());
        train_idx.pop_back();
    }
    if (train_idx.empty()) {
        train_idx.push_back(val_idx.back());
        val_idx.pop_back();
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    auto take = [&dataset](const std::vector<std::size_t>& idx, const char* tag) {
        Dataset d;
        d.task = dataset.task;
        d.provenance = dataset.provenance + " [" + tag + "]";
        for (std::size_t i : idx) d.examples.push_back(dataset.examples[i]);
        return d;
    };
    return {take(train_idx, "train"), take(val_idx, "val")};
}

// ---------------------------------------------------------------------------
// Synthetic fixture generator. Every text carries marker words for a latent
// binary "offensive" state h; auxiliary labels align with h with probability
// rho and are drawn uniformly otherwise, mirroring the premise that negative
// sentiment, anger/hate emotion, and individual targets co-occur with HOF.
// ---------------------------------------------------------------------------

struct SynthSpec {
    std::map<std::string, int> sizes;  // task -> example count
    double rho = 0.9;
    int marker_pool = 8;       // distinct marker words per side, up to 30
    double marker_skew = 0.0;  // 0 = uniform; >0 = zipf-like long tail
    int fillers_min = 3;       // filler words per text
    int fillers_max = 6;
};

namespace synth_detail {

inline const std::vector<std::string>& hof_markers() {
    static const std::vector<std::string> words = {
        "sludgeheap", "vermintalk", "rotmouth",  "bilespit",   "cursebark", "wrathknot",
        "scornpike",  "taintjaw",   "gallsting", "mirefling",  "venomclap", "spitegrind",
        "foulbray",   "crudlash",   "dregsnarl", "smutgrowl",  "rancorjab", "blightyap",
        "grimegnash", "stenchroar", "muckhiss",  "drossbarb",  "scumflare", "tarnishcut",
        "fetidsnap",  "banefuljeer", "viletwist", "loathegrip", "abhorrall", "despisetag"};
    return words;
}

inline const std::vector<std::string>& calm_markers() {
    static const std::vector<std::string> words = {
        "meadowglow", "gentlebrew", "sunlitpath", "calmharbor", "kindspark",  "softbreeze",
        "warmhearth", "brightfern", "mellowtide", "quietgrove", "tenderwave", "plainsong",
        "stillpond",  "lightstep",  "freshbloom", "openfield",  "clearbrook", "evenkeel",
        "mildmorn",   "snugnook",   "fairwind",   "goodcheer",  "purehush",   "greenshade",
        "honeydrift", "peacemoss",  "dawnpetal",  "truecomfort", "gladnote",  "serenecove"};
    return words;
}

inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words = {
        "today",  "really", "about",  "there",  "going",  "people", "think",  "where",
        "still",  "thing",  "again",  "every",  "around", "maybe",  "actual", "other",
        "always", "never",  "often",  "quite",  "under",  "while",  "which",  "their",
        "would",  "could",  "should", "being",  "during", "between", "because", "through",
        "before", "after",  "little", "someone", "anyone", "nothing", "whole", "certain",
        "several", "against", "toward", "without", "perhaps", "almost", "rather", "indeed",
        "anyway",  "elsewhere", "meanwhile", "somehow", "instead", "likewise", "moreover",
        "nearby",  "onward", "seldom", "thus",   "yonder"};
    return words;
}

// task -> label -> marker word
inline const std::map<std::string, std::map<std::string, std::string>>& aux_markers() {
    static const std::map<std::string, std::map<std::string, std::string>> m = {
        {"sentiment",
         {{"negative", "sourtone"}, {"positive", "brighttone"}, {"neutral", "flattone"}}},
        {"emotion",
         {{"anger", "ragecue"}, {"hate", "hatecue"}, {"joy", "joycue"}, {"neutral", "calmcue"}}},
        {"target",
         {{"IND", "youcall"}, {"GRP", "crowdcall"}, {"OTH", "thingcall"}, {"NONE", "nonecall"}}}};
    return m;
}

// label subsets the generator draws from (emotion uses 4 of the 14 classes)
inline std::vector<std::string> generated_labels(const std::string& task) {
    if (task == "hof") return {"NOT", "HOF"};
    if (task == "sentiment") return {"negative", "positive", "neutral"};
    if (task == "emotion") return {"anger", "hate", "joy", "neutral"};
    if (task == "target") return {"NONE", "IND", "GRP", "OTH"};
    throw TaskError("synth_fixture: unknown task " + task);
}

inline std::string aligned_label(const std::string& task, bool hof_state, Rng& rng) {
    if (task == "sentiment") return hof_state ? "negative" : (rng.uniform() < 0.5 ? "positive" : "neutral");
    if (task == "emotion") {
        if (hof_state) return rng.uniform() < 0.5 ? "anger" : "hate";
        return rng.uniform() < 0.5 ? "joy" : "neutral";
    }
    if (task == "target") return hof_state ? "IND" : "NONE";
    throw TaskError("synth_fixture: no alignment for task " + task);
}

// Draws a marker index in [0, pool); skew > 0 gives a zipf-like long tail.
inline int draw_marker(Rng& rng, int pool, double skew) {
    if (skew <= 0.0) return static_cast<int>(rng.below(static_cast<std::uint64_t>(pool)));
    std::vector<double> weights(static_cast<std::size_t>(pool));
    double total = 0.0;
    for (int i = 0; i < pool; ++i) {
        weights[static_cast<std::size_t>(i)] = 1.0 / std::pow(i + 1.0, skew);
        total += weights[static_cast<std::size_t>(i)];
    }
    double u = rng.uniform() * total;
    for (int i = 0; i < pool; ++i) {
        u -= weights[static_cast<std::size_t>(i)];
        if (u <= 0.0) return i;
    }
    return pool - 1;
}

}  // namespace synth_detail

// The marker word that encodes the latent state of a generated text; test
// code uses it to recover h from the text.
inline bool synth_text_is_hof_marked(const std::string& text) {
    for (const auto& w : synth_detail::hof_markers())
        if (text.find(w) != std::string::npos) return true;
    return false;
}

inline std::map<std::string, Dataset> synth_fixture(const SynthSpec& spec,
                                                    std::uint64_t seed) {
    if (spec.rho < 0.0 || spec.rho > 1.0)
        throw ConfigError("synth_fixture: rho must be in [0,1], got " +
                          std::to_string(spec.rho));
    int pool = std::clamp(spec.marker_pool, 1,
                          static_cast<int>(synth_detail::hof_markers().size()));

    std::map<std::string, Dataset> out;
    for (const auto& [task, count] : spec.sizes) {
        TaskSpec task_spec = default_task_spec(task);
        auto gen_labels = synth_detail::generated_labels(task);
        Dataset ds;
        ds.task = task_spec;
        ds.provenance = "synthetic rho=" + std::to_string(spec.rho);
        Rng rng(mix_seed(seed, "synth", tag_hash(task)));

        for (int i = 0; i < count; ++i) {
            bool h = rng.uniform() < 0.5;
            std::vector<std::string> words;

            const auto& side = h ? synth_detail::hof_markers() : synth_detail::calm_markers();
            int n_markers = 1 + static_cast<int>(rng.below(2));
            for (int m = 0; m < n_markers; ++m)
                words.push_back(side[static_cast<std::size_t>(
                    synth_detail::draw_marker(rng, pool, spec.marker_skew))]);

            std::string label;
            if (task == "hof") {
                label = h ? "HOF" : "NOT";
                for (const auto& aux : {"sentiment", "emotion", "target"}) {
                    if (rng.uniform() < spec.rho) {
                        std::string al = synth_detail::aligned_label(aux, h, rng);
                        words.push_back(synth_detail::aux_markers().at(aux).at(al));
                    }
                }
            } else {
                if (rng.uniform() < spec.rho) {
                    label = synth_detail::aligned_label(task, h, rng);
                } else {
                    label = gen_labels[rng.below(gen_labels.size())];
                }
                words.push_back(synth_detail::aux_markers().at(task).at(label));
            }

            int fill_lo = std::max(0, spec.fillers_min);
            int fill_hi = std::max(fill_lo, spec.fillers_max);
            int n_fill = fill_lo + static_cast<int>(rng.below(
                                       static_cast<std::uint64_t>(fill_hi - fill_lo + 1)));
            for (int f = 0; f < n_fill; ++f)
                words.push_back(synth_detail::filler_words()[rng.below(
                    synth_detail::filler_words().size())]);
            rng.shuffle(words);

            std::string text;
            for (std::size_t w = 0; w < words.size(); ++w) {
                if (w) text += ' ';
                text += words[w];
            }
            int idx = task_spec.label_index(label);
            ds.examples.push_back({task + "-" + std::to_string(i), text, idx});
        }
        out[task] = std::move(ds);
    }
    return out;
}

}  // namespace mtlhof
