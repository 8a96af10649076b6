#include <catch2/catch.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "mtlhof/model.hpp"
#include "mtlhof/trainer.hpp"

using namespace mtlhof;

namespace {

MtlModel tiny_model(std::vector<TaskSpec> specs, const std::vector<std::string>& corpus,
                    std::uint64_t seed = 3, float dropout = 0.1f) {
    Pipeline pipeline;
    pipeline.normalizer = NormalizerConfig::defaults();
    std::vector<std::string> normalized;
    for (const auto& line : corpus) normalized.push_back(normalize(line, pipeline.normalizer));
    pipeline.vocab = build_vocab(normalized, 200, atomic_tokens(pipeline.normalizer));
    pipeline.max_len = 16;

    EncoderConfig cfg;
    cfg.num_layers = 1;
    cfg.hidden_dim = 32;
    cfg.num_heads = 2;
    cfg.ffn_dim = 32;
    cfg.max_len = 16;
    cfg.dropout_rate = dropout;
    return make_model(cfg, std::move(specs), std::move(pipeline), seed);
}

const std::vector<std::string> kCorpus = {
    "utterly vile scum you are", "what a lovely morning",   "these people disgust me",
    "calm seas tonight",         "you ruin everything always", "free pizza at the office",
    "that crowd is vermin",      "gentle rain and tea"};

double head_grad_norm(const GradMap& grads, const TaskHead& head) {
    double n = 0.0;
    for (const Tensor& t : {head.weight, head.bias}) {
        auto it = grads.find(t.id());
        if (it == grads.end()) continue;
        for (float g : it->second.data()) n += static_cast<double>(g) * g;
    }
    return std::sqrt(n);
}

}  // namespace

TEST_CASE("zero-initialized head yields uniform logits and probabilities") {
    MtlModel model = tiny_model(default_task_specs(), kCorpus);
    auto& hof_head = const_cast<TaskHead&>(model.task("hof").second);
    std::fill(hof_head.weight.data().begin(), hof_head.weight.data().end(), 0.0f);
    std::fill(hof_head.bias.data().begin(), hof_head.bias.data().end(), 0.0f);

    TokenBatch batch = encode_texts(model.pipeline, {"anything at all", "more text"});
    Tensor logits = forward_task(model, batch, "hof", false);
    for (int r = 0; r < 2; ++r)
        CHECK(logits.data()[static_cast<std::size_t>(2 * r)] ==
              logits.data()[static_cast<std::size_t>(2 * r + 1)]);

    auto preds = predict_all(model, "some text");
    for (const auto& p : preds) {
        if (p.task != "hof") continue;
        CHECK(p.probs[0] == Approx(0.5).margin(1e-6));
        CHECK(p.probs[1] == Approx(0.5).margin(1e-6));
    }
}

TEST_CASE("emotion head produces batch-by-14 logits") {
    MtlModel model = tiny_model(default_task_specs(), kCorpus);
    TokenBatch batch = encode_texts(model.pipeline, {"a", "b", "c"});
    Tensor logits = forward_task(model, batch, "emotion", false);
    CHECK(logits.shape() == std::vector<int>{3, 14});
}

TEST_CASE("unknown task name raises a task-lookup error") {
    MtlModel model = tiny_model(default_task_specs(), kCorpus);
    TokenBatch batch = encode_texts(model.pipeline, {"text"});
    CHECK_THROWS_AS(forward_task(model, batch, "stance", false), TaskError);
    CHECK_THROWS_AS(model.task("nope"), TaskError);
}

TEST_CASE("model construction rejects empty and duplicate task lists") {
    CHECK_THROWS_AS(tiny_model({}, kCorpus), ConfigError);
    CHECK_THROWS_AS(tiny_model({default_task_spec("hof"), default_task_spec("hof")}, kCorpus),
                    ConfigError);
    CHECK_THROWS_AS(tiny_model({TaskSpec{"hof", {}}}, kCorpus), ConfigError);
}

TEST_CASE("loss on one task leaves other heads without gradient") {
    MtlModel model = tiny_model(default_task_specs(), kCorpus);
    TokenBatch batch = encode_texts(model.pipeline, {"you are vile", "nice day"});
    Tape tape;
    Tensor logits = forward_task(model, batch, "hof", true, &tape, 11);
    Tensor loss = cross_entropy_with_logits(&tape, logits, {1, 0});
    GradMap grads = backward(loss, tape);

    CHECK(head_grad_norm(grads, model.task("hof").second) > 0.0);
    CHECK(head_grad_norm(grads, model.task("sentiment").second) == 0.0);
    CHECK(head_grad_norm(grads, model.task("emotion").second) == 0.0);
    CHECK(head_grad_norm(grads, model.task("target").second) == 0.0);
    CHECK(grads.count(model.task("sentiment").second.weight.id()) == 0);

    double encoder_norm = 0.0;
    for (const auto& [name, p] : model.params.named()) {
        auto it = grads.find(p.id());
        REQUIRE(it != grads.end());
        for (float g : it->second.data()) encoder_norm += static_cast<double>(g) * g;
    }
    CHECK(encoder_norm > 0.0);
}

TEST_CASE("predict_all emits exactly one prediction per task") {
    MtlModel model = tiny_model(default_task_specs(), kCorpus);
    auto preds = predict_all(model, "@user you are awful");
    REQUIRE(preds.size() == 4);
    CHECK(preds[0].task == "hof");
    CHECK(preds[1].task == "sentiment");
    CHECK(preds[2].task == "emotion");
    CHECK(preds[3].task == "target");
    for (const auto& p : preds) {
        double sum = 0.0;
        for (float v : p.probs) sum += v;
        CHECK(sum == Approx(1.0).margin(1e-6));
        CHECK(p.labels.size() == p.probs.size());
        CHECK(std::find(p.labels.begin(), p.labels.end(), p.label) != p.labels.end());
    }
}

TEST_CASE("adding a constant to every logit of a row keeps the argmax label") {
    MtlModel model = tiny_model(default_task_specs(), kCorpus);
    auto before = predict_all(model, "these people are vermin");
    auto& head = const_cast<TaskHead&>(model.task("hof").second);
    for (auto& b : head.bias.data()) b += 7.5f;  // uniform shift via the bias
    auto after = predict_all(model, "these people are vermin");
    CHECK(before[0].label == after[0].label);
    CHECK(after[0].probs[0] == Approx(before[0].probs[0]).margin(1e-5));
}

TEST_CASE("a tiny model memorizes eight tweets across all four tasks") {
    MtlModel model = tiny_model(default_task_specs(), kCorpus, 5, 0.0f);

    struct Gold {
        const char* hof;
        const char* sentiment;
        const char* emotion;
        const char* target;
    };
    std::vector<Gold> gold = {
        {"HOF", "negative", "anger", "IND"},   {"NOT", "positive", "joy", "NONE"},
        {"HOF", "negative", "disgust", "IND"}, {"NOT", "neutral", "neutral", "NONE"},
        {"HOF", "negative", "hate", "IND"},    {"NOT", "positive", "fun", "NONE"},
        {"HOF", "negative", "anger", "GRP"},   {"NOT", "neutral", "relief", "NONE"}};

    std::map<std::string, Dataset> datasets;
    for (const auto& task : known_task_names()) {
        Dataset ds;
        ds.task = default_task_spec(task);
        for (std::size_t i = 0; i < kCorpus.size(); ++i) {
            const char* label = task == std::string("hof")         ? gold[i].hof
                                : task == std::string("sentiment") ? gold[i].sentiment
                                : task == std::string("emotion")   ? gold[i].emotion
                                                                   : gold[i].target;
            ds.examples.push_back({task + std::to_string(i), kCorpus[i],
                                   ds.task.label_index(label)});
        }
        datasets[task] = ds;
    }

    TrainConfig cfg;
    cfg.preset_name = "memorize";
    cfg.epochs = 250;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 8;
    cfg.seed = 9;
    cfg.tasks_enabled = {"hof", "sentiment", "emotion", "target"};
    TrainHistory history = train(model, datasets, cfg, datasets.at("hof"));
    REQUIRE(history.size() == 250);
    CHECK(history.back().mean_loss < history.front().mean_loss);

    for (std::size_t i = 0; i < kCorpus.size(); ++i) {
        auto preds = predict_all(model, kCorpus[i]);
        INFO("tweet " << i << ": " << kCorpus[i]);
        CHECK(preds[0].label == gold[i].hof);
        CHECK(preds[1].label == gold[i].sentiment);
        CHECK(preds[2].label == gold[i].emotion);
        CHECK(preds[3].label == gold[i].target);
    }
}

TEST_CASE("checkpoint round-trip reproduces parameters bit-exactly") {
    MtlModel model = tiny_model(default_task_specs(), kCorpus);
    std::string path = std::string(MTLHOF_TEST_DIR) + "/tmp_model.mtl1";
    save_checkpoint(model, path);
    MtlModel loaded = load_checkpoint(path);

    auto a = model.all_params();
    auto b = loaded.all_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        REQUIRE(a[i].second.shape() == b[i].second.shape());
        REQUIRE(std::memcmp(a[i].second.data().data(), b[i].second.data().data(),
                            sizeof(float) * static_cast<std::size_t>(a[i].second.size())) == 0);
    }
    for (std::size_t t = 0; t < model.tasks.size(); ++t) {
        CHECK(loaded.tasks[t].first.name == model.tasks[t].first.name);
        CHECK(loaded.tasks[t].first.labels == model.tasks[t].first.labels);
    }
    CHECK(loaded.pipeline.vocab.tokens == model.pipeline.vocab.tokens);
    CHECK(loaded.pipeline.normalizer.emoji_aliases == model.pipeline.normalizer.emoji_aliases);
    std::remove(path.c_str());
}

TEST_CASE("checkpoints with a wrong magic or truncation are rejected") {
    MtlModel model = tiny_model({default_task_spec("hof")}, kCorpus);
    std::string path = std::string(MTLHOF_TEST_DIR) + "/tmp_bad.mtl1";
    save_checkpoint(model, path);

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointFormatError);

    save_checkpoint(model, path);
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
    }
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointIntegrityError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint("/nonexistent.mtl1"), IoError);
}

TEST_CASE("a reloaded checkpoint predicts identically") {
    MtlModel model = tiny_model(default_task_specs(), kCorpus, 21);
    std::string path = std::string(MTLHOF_TEST_DIR) + "/tmp_eq.mtl1";
    save_checkpoint(model, path);
    MtlModel loaded = load_checkpoint(path);
    for (const auto& text : {"you are vile scum", "lovely gentle rain", "free pizza"}) {
        auto before = predict_all(model, text);
        auto after = predict_all(loaded, text);
        REQUIRE(before.size() == after.size());
        for (std::size_t i = 0; i < before.size(); ++i) {
            CHECK(before[i].label == after[i].label);
            CHECK(before[i].probs == after[i].probs);
        }
    }
    std::remove(path.c_str());
}
