#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mtlhof/common.hpp"
#include "mtlhof/encoder.hpp"
#include "mtlhof/normalizer.hpp"
#include "mtlhof/tasks.hpp"
#include "mtlhof/tensor.hpp"
#include "mtlhof/tokenizer.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// Multi-task model: one shared encoder plus a single affine classification
// head per task on the pooled representation. The text pipeline (normalizer
// configuration + vocabulary) travels with the model so a checkpoint is a
// self-contained inference bundle.
// ---------------------------------------------------------------------------

struct TaskHead {
    Tensor weight;  // hidden x num_labels
    Tensor bias;    // num_labels
};

struct Pipeline {
    NormalizerConfig normalizer;
    Vocab vocab;
    int max_len = 64;
};

struct MtlModel {
    EncoderConfig config;
    EncoderParams params;
    std::vector<std::pair<TaskSpec, TaskHead>> tasks;
    Pipeline pipeline;

    bool has_task(const std::string& name) const {
        for (const auto& [spec, head] : tasks)
            if (spec.name == name) return true;
        return false;
    }

    const std::pair<TaskSpec, TaskHead>& task(const std::string& name) const {
        for (const auto& t : tasks)
            if (t.first.name == name) return t;
        throw TaskError("model has no task named '" + name + "'");
    }

    std::vector<std::pair<std::string, Tensor>> head_params(const std::string& name) const {
        const auto& [spec, head] = task(name);
        return {{"head." + name + ".weight", head.weight},
                {"head." + name + ".bias", head.bias}};
    }

    std::vector<std::pair<std::string, Tensor>> all_params() const {
        auto out = params.named();
        for (const auto& [spec, head] : tasks) {
            out.emplace_back("head." + spec.name + ".weight", head.weight);
            out.emplace_back("head." + spec.name + ".bias", head.bias);
        }
        return out;
    }
};

inline MtlModel make_model(EncoderConfig config, std::vector<TaskSpec> task_specs,
                           Pipeline pipeline, std::uint64_t seed) {
    if (task_specs.empty()) throw ConfigError("model needs at least one task");
    config.vocab_size = pipeline.vocab.size();
    config.seed = seed;
    if (pipeline.max_len != config.max_len) pipeline.max_len = config.max_len;
    config.validate();

    MtlModel model;
    model.config = config;
    model.params = init_params(config);
    model.pipeline = std::move(pipeline);
    Rng rng(mix_seed(seed, "head-init"));
    for (auto& spec : task_specs) {
        spec.validate();
        if (model.has_task(spec.name))
            throw ConfigError("duplicate task in model: " + spec.name);
        TaskHead head;
        int k = static_cast<int>(spec.labels.size());
        head.weight = Tensor::randn({config.hidden_dim, k}, rng, 0.02, true);
        head.bias = Tensor::zeros({k}, true);
        model.tasks.emplace_back(std::move(spec), std::move(head));
    }
    return model;
}

// Normalizes and encodes raw texts into a fixed-length token batch.
inline TokenBatch encode_texts(const Pipeline& pipeline,
                               const std::vector<std::string>& texts) {
    TokenBatch batch;
    batch.batch_size = static_cast<int>(texts.size());
    batch.seq_len = pipeline.max_len;
    batch.ids.reserve(texts.size() * static_cast<std::size_t>(pipeline.max_len));
    batch.mask.reserve(batch.ids.capacity());
    for (const auto& text : texts) {
        std::string norm = normalize(text, pipeline.normalizer);
        EncodedText enc = encode(norm, pipeline.vocab, pipeline.max_len);
        batch.ids.insert(batch.ids.end(), enc.ids.begin(), enc.ids.end());
        batch.mask.insert(batch.mask.end(), enc.mask.begin(), enc.mask.end());
    }
    return batch;
}

// Logits for one task over an encoded batch; gradients flow into the shared
// encoder and that task's head only.
inline Tensor forward_task(const MtlModel& model, const TokenBatch& batch,
                           const std::string& task_name, bool train_mode,
                           Tape* tape = nullptr, std::uint64_t dropout_seed = 0) {
    const auto& [spec, head] = model.task(task_name);
    EncoderOutput enc =
        encode_batch(model.config, model.params, batch, train_mode, tape, dropout_seed);
    return add(tape, matmul(tape, enc.pooled, head.weight), head.bias);
}

struct TaskPrediction {
    std::string task;
    std::string label;
    std::vector<std::string> labels;
    std::vector<float> probs;
};

// One prediction per task in the model, from one raw text.
inline std::vector<TaskPrediction> predict_all(const MtlModel& model,
                                               const std::string& text) {
    TokenBatch batch = encode_texts(model.pipeline, {text});
    std::vector<TaskPrediction> out;
    for (const auto& [spec, head] : model.tasks) {
        Tensor logits = forward_task(model, batch, spec.name, false);
        Tensor probs = softmax<float>(nullptr, logits);
        TaskPrediction pred;
        pred.task = spec.name;
        pred.labels = spec.labels;
        pred.probs.assign(probs.data().begin(), probs.data().end());
        int best = 0;
        for (int j = 1; j < probs.size(); ++j)
            if (pred.probs[static_cast<std::size_t>(j)] > pred.probs[static_cast<std::size_t>(best)])
                best = j;
        pred.label = spec.labels[static_cast<std::size_t>(best)];
        out.push_back(std::move(pred));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "MTL1", u32 version, u32 manifest length, JSON
// manifest (configs, task specs, pipeline, named-array index), then the raw
// little-endian float32 arrays in index order.
// ---------------------------------------------------------------------------

namespace ckpt_detail {

inline constexpr char kMagic[4] = {'M', 'T', 'L', '1'};
inline constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw CheckpointIntegrityError("checkpoint truncated while reading header");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void write_f32_array(std::ostream& out, std::span<const float> data) {
    for (float v : data) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
        write_u32(out, bits);
    }
}

inline void read_f32_array(std::istream& in, std::span<float> data, const std::string& name) {
    std::vector<unsigned char> buf(data.size() * 4);
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size())))
        throw CheckpointIntegrityError("checkpoint truncated inside array '" + name + "'");
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint32_t bits = static_cast<std::uint32_t>(buf[4 * i]) |
                             static_cast<std::uint32_t>(buf[4 * i + 1]) << 8 |
                             static_cast<std::uint32_t>(buf[4 * i + 2]) << 16 |
                             static_cast<std::uint32_t>(buf[4 * i + 3]) << 24;
        data[i] = std::bit_cast<float>(bits);
    }
}

inline nlohmann::ordered_json manifest_json(const MtlModel& model) {
    nlohmann::ordered_json m;
    m["version"] = kVersion;
    m["encoder"] = {{"num_layers", model.config.num_layers},
                    {"hidden_dim", model.config.hidden_dim},
                    {"num_heads", model.config.num_heads},
                    {"ffn_dim", model.config.ffn_dim},
                    {"vocab_size", model.config.vocab_size},
                    {"max_len", model.config.max_len},
                    {"dropout_rate", model.config.dropout_rate},
                    {"seed", model.config.seed}};
    m["tasks"] = nlohmann::ordered_json::array();
    for (const auto& [spec, head] : model.tasks)
        m["tasks"].push_back({{"name", spec.name}, {"labels", spec.labels}});
    nlohmann::ordered_json norm;
    norm["entities"] = model.pipeline.normalizer.entity_tokens;
    nlohmann::ordered_json emoji = nlohmann::ordered_json::object();
    for (const auto& [seq, alias] : model.pipeline.normalizer.emoji_aliases)
        emoji[utf8_encode(std::vector<char32_t>(seq.begin(), seq.end()))] = alias;
    norm["emoji"] = emoji;
    norm["lexicon"] = model.pipeline.normalizer.segmentation_lexicon;
    m["normalizer"] = norm;
    m["vocab"] = model.pipeline.vocab.tokens;
    m["arrays"] = nlohmann::ordered_json::array();
    for (const auto& [name, tensor] : model.all_params())
        m["arrays"].push_back({{"name", name}, {"shape", tensor.shape()}});
    return m;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const MtlModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(ckpt_detail::kMagic, 4);
    ckpt_detail::write_u32(out, ckpt_detail::kVersion);
    std::string manifest = ckpt_detail::manifest_json(model).dump();
    ckpt_detail::write_u32(out, static_cast<std::uint32_t>(manifest.size()));
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    for (const auto& [name, tensor] : model.all_params())
        ckpt_detail::write_f32_array(out, tensor.data());
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline MtlModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4))
        throw CheckpointIntegrityError("checkpoint truncated while reading magic");
    if (std::memcmp(magic, ckpt_detail::kMagic, 4) != 0)
        throw CheckpointFormatError("bad checkpoint magic in " + path);
    std::uint32_t version = ckpt_detail::read_u32(in);
    if (version != ckpt_detail::kVersion)
        throw CheckpointFormatError("unsupported checkpoint version " +
                                    std::to_string(version));
    std::uint32_t manifest_len = ckpt_detail::read_u32(in);
    std::string manifest(manifest_len, '\0');
    if (!in.read(manifest.data(), manifest_len))
        throw CheckpointIntegrityError("checkpoint truncated inside manifest");
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(manifest);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointFormatError("checkpoint manifest is not valid JSON: " +
                                    std::string(e.what()));
    }

    MtlModel model;
    const auto& enc = m.at("encoder");
    model.config.num_layers = enc.at("num_layers").get<int>();
    model.config.hidden_dim = enc.at("hidden_dim").get<int>();
    model.config.num_heads = enc.at("num_heads").get<int>();
    model.config.ffn_dim = enc.at("ffn_dim").get<int>();
    model.config.vocab_size = enc.at("vocab_size").get<int>();
    model.config.max_len = enc.at("max_len").get<int>();
    model.config.dropout_rate = enc.at("dropout_rate").get<float>();
    model.config.seed = enc.at("seed").get<std::uint64_t>();
    model.config.validate();

    model.pipeline.max_len = model.config.max_len;
    const auto& norm = m.at("normalizer");
    for (auto it = norm.at("entities").begin(); it != norm.at("entities").end(); ++it)
        model.pipeline.normalizer.entity_tokens[it.key()] = it.value().get<std::string>();
    for (auto it = norm.at("emoji").begin(); it != norm.at("emoji").end(); ++it) {
        auto cps = utf8_decode(it.key());
        model.pipeline.normalizer.emoji_aliases[std::u32string(cps.begin(), cps.end())] =
            it.value().get<std::string>();
    }
    model.pipeline.normalizer.segmentation_lexicon =
        norm.at("lexicon").get<std::vector<std::string>>();
    model.pipeline.vocab.tokens = m.at("vocab").get<std::vector<std::string>>();
    model.pipeline.vocab.rebuild_index();
    model.pipeline.vocab.validate();

    model.params = init_params(model.config);
    for (const auto& t : m.at("tasks")) {
        TaskSpec spec{t.at("name").get<std::string>(),
                      t.at("labels").get<std::vector<std::string>>()};
        spec.validate();
        TaskHead head;
        int k = static_cast<int>(spec.labels.size());
        head.weight = Tensor::zeros({model.config.hidden_dim, k}, true);
        head.bias = Tensor::zeros({k}, true);
        model.tasks.emplace_back(std::move(spec), std::move(head));
    }

    auto params = model.all_params();
    const auto& arrays = m.at("arrays");
    if (arrays.size() != params.size())
        throw CheckpointFormatError("checkpoint array index does not match model layout");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, tensor] = params[i];
        if (arrays[i].at("name").get<std::string>() != name ||
            arrays[i].at("shape").get<std::vector<int>>() != tensor.shape())
            throw CheckpointFormatError("checkpoint array mismatch at '" + name + "'");
        ckpt_detail::read_f32_array(in, tensor.data(), name);
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw CheckpointIntegrityError("checkpoint has trailing bytes: " + path);
    return model;
}

}  // namespace mtlhof
