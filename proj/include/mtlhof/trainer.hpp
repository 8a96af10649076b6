#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlhof/common.hpp"
#include "mtlhof/corpus.hpp"
#include "mtlhof/metrics.hpp"
#include "mtlhof/model.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// Joint training: per epoch, every enabled task contributes its examples
// exactly once as task-pure mini-batches, interleaved by a seeded uniform
// shuffle; each step backpropagates the unweighted mean cross-entropy of its
// batch and applies one AdamW update to the shared encoder and that task's
// head only.
// ---------------------------------------------------------------------------

struct MiniBatch {
    std::string task;
    TokenBatch tokens;
    std::vector<int> labels;
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct TrainConfig {
    std::string preset_name = "custom";
    int epochs = 1;
    double learning_rate = 1e-3;
    int batch_size = 32;
    AdamWConfig adamw;
    std::uint64_t seed = 42;
    std::vector<std::string> tasks_enabled = {"hof"};
    double clip_norm = 1.0;  // global-norm gradient clip; 0 disables

    void validate() const {
        if (epochs < 0) throw ConfigError("epochs must be nonnegative");
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        if (adamw.weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
        if (tasks_enabled.empty()) throw ConfigError("tasks_enabled must be nonempty");
        if (std::find(tasks_enabled.begin(), tasks_enabled.end(), "hof") ==
            tasks_enabled.end())
            throw ConfigError("the hof main task must always be enabled");
    }
};

// The five named configurations, stored verbatim. Short aliases accepted.
inline TrainConfig preset_config(const std::string& name) {
    TrainConfig cfg;
    auto set = [&cfg](const std::string& preset, int epochs, double lr, int batch,
                      std::vector<std::string> tasks) {
        cfg.preset_name = preset;
        cfg.epochs = epochs;
        cfg.learning_rate = lr;
        cfg.batch_size = batch;
        cfg.tasks_enabled = std::move(tasks);
    };
    if (name == "baseline")
        set("baseline", 4, 4e-4, 32, {"hof"});
    else if (name == "HASOC_sentiment" || name == "sentiment")
        set("HASOC_sentiment", 3, 3e-5, 32, {"hof", "sentiment"});
    else if (name == "HASOC_emotion" || name == "emotion")
        set("HASOC_emotion", 3, 4e-5, 32, {"hof", "emotion"});
    else if (name == "HASOC_target" || name == "target")
        set("HASOC_target", 4, 4e-5, 16, {"hof", "target"});
    else if (name == "HASOC_all" || name == "all")
        set("HASOC_all", 2, 3e-4, 16, {"hof", "sentiment", "emotion", "target"});
    else
        throw ConfigError("unknown preset: " + name);
    return cfg;
}

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {
        "baseline", "HASOC_sentiment", "HASOC_emotion", "HASOC_target", "HASOC_all"};
    return names;
}

struct OptimizerState {
    struct Slot {
        std::vector<float> m, v;
        long long t = 0;
    };
    std::unordered_map<TensorId, Slot> slots;
    long long step = 0;
};

// One decoupled-weight-decay Adam step over the given parameters. Parameters
// without a gradient entry still decay (gradient zero); moments and the
// per-parameter step count update only for listed parameters.
inline void adamw_update(OptimizerState& state,
                         const std::vector<std::pair<std::string, Tensor>>& parameters,
                         const GradMap& grads, double learning_rate, const AdamWConfig& cfg) {
    for (const auto& [name, param] : parameters) {
        Tensor p = param;
        auto& slot = state.slots[p.id()];
        if (slot.m.empty()) {
            slot.m.assign(static_cast<std::size_t>(p.size()), 0.0f);
            slot.v.assign(static_cast<std::size_t>(p.size()), 0.0f);
        }
        ++slot.t;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.t));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.t));
        auto git = grads.find(p.id());
        const float* g = git != grads.end() ? git->second.data().data() : nullptr;
        auto w = p.data();
        for (int i = 0; i < p.size(); ++i) {
            std::size_t idx = static_cast<std::size_t>(i);
            double gi = g ? static_cast<double>(g[idx]) : 0.0;
            double m = cfg.beta1 * slot.m[idx] + (1.0 - cfg.beta1) * gi;
            double v = cfg.beta2 * slot.v[idx] + (1.0 - cfg.beta2) * gi * gi;
            slot.m[idx] = static_cast<float>(m);
            slot.v[idx] = static_cast<float>(v);
            double mhat = m / bc1;
            double vhat = v / bc2;
            double update = mhat / (std::sqrt(vhat) + cfg.eps) +
                            cfg.weight_decay * static_cast<double>(w[idx]);
            w[idx] = static_cast<float>(static_cast<double>(w[idx]) - learning_rate * update);
        }
    }
}

// Scales all gradients so their global norm is at most clip_norm.
inline double clip_gradients(GradMap& grads, double clip_norm) {
    double norm = grad_norm(grads);
    if (clip_norm <= 0.0 || norm <= clip_norm) return norm;
    float scale = static_cast<float>(clip_norm / norm);
    for (auto& [id, g] : grads)
        for (auto& v : g.data()) v *= scale;
    return norm;
}

// Interleaving of one epoch: every enabled task contributes
// ceil(n/batch_size) batch slots covering its examples exactly once; the
// combined list is a seeded uniform shuffle.
inline std::vector<std::pair<std::string, int>> plan_epoch(
    const std::map<std::string, int>& dataset_sizes, int batch_size, std::uint64_t seed) {
    if (batch_size <= 0) throw ConfigError("plan_epoch: batch_size must be positive");
    std::vector<std::pair<std::string, int>> plan;
    for (const auto& [task, n] : dataset_sizes) {
        if (n <= 0) throw DataError("plan_epoch: task '" + task + "' has no examples");
        int batches = (n + batch_size - 1) / batch_size;
        for (int b = 0; b < batches; ++b) plan.emplace_back(task, b);
    }
    Rng rng(mix_seed(seed, "epoch-plan"));
    rng.shuffle(plan);
    return plan;
}

// Pre-tokenized dataset: the per-example encodings a training run reuses.
struct EncodedDataset {
    std::vector<EncodedText> encodings;
    std::vector<int> labels;
    int max_len = 0;

    int size() const { return static_cast<int>(encodings.size()); }
};

inline EncodedDataset encode_dataset(const Dataset& dataset, const Pipeline& pipeline) {
    EncodedDataset out;
    out.max_len = pipeline.max_len;
    out.encodings.reserve(dataset.size());
    out.labels.reserve(dataset.size());
    for (const auto& ex : dataset.examples) {
        out.encodings.push_back(
            encode(normalize(ex.text, pipeline.normalizer), pipeline.vocab, pipeline.max_len));
        out.labels.push_back(ex.label);
    }
    return out;
}

inline MiniBatch gather_batch(const EncodedDataset& data, const std::vector<int>& rows,
                              const std::string& task) {
    MiniBatch batch;
    batch.task = task;
    batch.tokens.batch_size = static_cast<int>(rows.size());
    batch.tokens.seq_len = data.max_len;
    for (int row : rows) {
        const auto& enc = data.encodings[static_cast<std::size_t>(row)];
        batch.tokens.ids.insert(batch.tokens.ids.end(), enc.ids.begin(), enc.ids.end());
        batch.tokens.mask.insert(batch.tokens.mask.end(), enc.mask.begin(), enc.mask.end());
        batch.labels.push_back(data.labels[static_cast<std::size_t>(row)]);
    }
    return batch;
}

// One optimization step on one task-pure mini-batch. Returns the batch loss.
inline float train_step(MtlModel& model, OptimizerState& state, const MiniBatch& batch,
                        const TrainConfig& cfg) {
    if (std::find(cfg.tasks_enabled.begin(), cfg.tasks_enabled.end(), batch.task) ==
        cfg.tasks_enabled.end())
        throw TaskError("train_step: task '" + batch.task + "' is not enabled");

    Tape tape;
    Tensor logits = forward_task(model, batch.tokens, batch.task, true, &tape,
                                 mix_seed(cfg.seed, "dropout", static_cast<std::uint64_t>(state.step)));
    // the task objective: unweighted mean cross-entropy, coefficient 1 for
    // every task
    Tensor loss = cross_entropy_with_logits(&tape, logits, batch.labels);
    float loss_value = loss.item();
    if (!std::isfinite(loss_value))
        throw DivergenceError("non-finite loss at step " + std::to_string(state.step) +
                              " on task '" + batch.task + "'");

    GradMap grads = backward(loss, tape);
    clip_gradients(grads, cfg.clip_norm);

    auto parameters = model.params.named();
    auto head = model.head_params(batch.task);
    parameters.insert(parameters.end(), head.begin(), head.end());
    adamw_update(state, parameters, grads, cfg.learning_rate, cfg.adamw);
    ++state.step;
    return loss_value;
}

// Argmax predictions for one task over an encoded dataset, in eval batches.
inline std::vector<int> predict_dataset(const MtlModel& model, const EncodedDataset& data,
                                        const std::string& task, int eval_batch = 64) {
    std::vector<int> pred;
    pred.reserve(static_cast<std::size_t>(data.size()));
    for (int start = 0; start < data.size(); start += eval_batch) {
        int stop = std::min(data.size(), start + eval_batch);
        std::vector<int> rows;
        for (int i = start; i < stop; ++i) rows.push_back(i);
        MiniBatch batch = gather_batch(data, rows, task);
        Tensor logits = forward_task(model, batch.tokens, task, false);
        int k = logits.dim(1);
        for (int r = 0; r < logits.dim(0); ++r) {
            int best = 0;
            for (int j = 1; j < k; ++j)
                if (logits.data()[static_cast<std::size_t>(r * k + j)] >
                    logits.data()[static_cast<std::size_t>(r * k + best)])
                    best = j;
            pred.push_back(best);
        }
    }
    return pred;
}

inline EvalReport evaluate_model(const MtlModel& model, const EncodedDataset& data,
                                 const TaskSpec& spec) {
    std::vector<int> pred = predict_dataset(model, data, spec.name);
    return report(confusion(data.labels, pred, spec.labels), spec.name);
}

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    std::map<std::string, double> task_loss;
    double val_macro_f1 = 0.0;
};
using TrainHistory = std::vector<EpochRecord>;

// Full training run over the enabled tasks, tracking hof validation macro-F1
// per epoch. Deterministic for a fixed config seed.
inline TrainHistory train(MtlModel& model, const std::map<std::string, Dataset>& datasets,
                          const TrainConfig& cfg, const Dataset& hof_validation) {
    cfg.validate();
    if (hof_validation.examples.empty())
        throw ConfigError("train: hof validation set must be nonempty");
    for (const auto& task : cfg.tasks_enabled) {
        auto it = datasets.find(task);
        if (it == datasets.end() || it->second.examples.empty())
            throw DataError("train: no dataset for enabled task '" + task + "'");
        if (!model.has_task(task))
            throw TaskError("train: model has no head for enabled task '" + task + "'");
    }

    std::map<std::string, EncodedDataset> encoded;
    std::map<std::string, int> sizes;
    for (const auto& task : cfg.tasks_enabled) {
        encoded[task] = encode_dataset(datasets.at(task), model.pipeline);
        sizes[task] = encoded[task].size();
    }
    EncodedDataset val = encode_dataset(hof_validation, model.pipeline);
    const TaskSpec& hof_spec = model.task("hof").first;

    OptimizerState state;
    TrainHistory history;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::map<std::string, std::vector<int>> order;
        for (const auto& [task, data] : encoded) {
            std::vector<int>& perm = order[task];
            perm.resize(static_cast<std::size_t>(data.size()));
            for (int i = 0; i < data.size(); ++i) perm[static_cast<std::size_t>(i)] = i;
            Rng rng(mix_seed(cfg.seed, "shuffle-" + task, static_cast<std::uint64_t>(epoch)));
            rng.shuffle(perm);
        }
        auto plan = plan_epoch(sizes, cfg.batch_size,
                               mix_seed(cfg.seed, "plan", static_cast<std::uint64_t>(epoch)));

        EpochRecord record;
        record.epoch = epoch;
        std::map<std::string, std::pair<double, int>> task_acc;
        double total_loss = 0.0;
        for (const auto& [task, batch_index] : plan) {
            const auto& perm = order[task];
            int start = batch_index * cfg.batch_size;
            int stop = std::min<int>(static_cast<int>(perm.size()), start + cfg.batch_size);
            std::vector<int> rows(perm.begin() + start, perm.begin() + stop);
            float loss = train_step(model, state, gather_batch(encoded[task], rows, task), cfg);
            total_loss += loss;
            task_acc[task].first += loss;
            task_acc[task].second += 1;
        }
        record.mean_loss = plan.empty() ? 0.0 : total_loss / static_cast<double>(plan.size());
        for (const auto& [task, acc] : task_acc)
            record.task_loss[task] = acc.first / acc.second;
        record.val_macro_f1 = evaluate_model(model, val, hof_spec).macro.f1;
        history.push_back(std::move(record));
    }
    return history;
}

}  // namespace mtlhof
