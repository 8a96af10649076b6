#include <catch2/catch.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mtlhof/digest.hpp"
#include "mtlhof/trainer.hpp"

using namespace mtlhof;

namespace {

MtlModel synth_model(const std::map<std::string, Dataset>& datasets, std::uint64_t seed,
                     float dropout = 0.1f, int hidden = 32, int layers = 1) {
    Pipeline pipeline;
    pipeline.normalizer = NormalizerConfig::defaults();
    std::vector<std::string> corpus;
    for (const auto& [task, ds] : datasets)
        for (const auto& ex : ds.examples) corpus.push_back(ex.text);
    pipeline.vocab = build_vocab(corpus, 400, atomic_tokens(pipeline.normalizer));
    pipeline.max_len = 24;

    EncoderConfig cfg;
    cfg.num_layers = layers;
    cfg.hidden_dim = hidden;
    cfg.num_heads = 2;
    cfg.ffn_dim = hidden * 2;
    cfg.max_len = 24;
    cfg.dropout_rate = dropout;

    std::vector<TaskSpec> specs;
    for (const auto& [task, ds] : datasets) specs.push_back(ds.task);
    return make_model(cfg, specs, pipeline, seed);
}

}  // namespace

TEST_CASE("plan_epoch emits ceil(n/batch) batches per task covering each once") {
    auto plan = plan_epoch({{"a", 64}, {"b", 32}}, 32, 7);
    REQUIRE(plan.size() == 3);
    std::map<std::string, std::set<int>> seen;
    for (const auto& [task, idx] : plan) seen[task].insert(idx);
    CHECK(seen["a"] == std::set<int>{0, 1});
    CHECK(seen["b"] == std::set<int>{0});

    auto plan2 = plan_epoch({{"a", 64}, {"b", 32}}, 32, 7);
    CHECK(plan == plan2);

    std::set<std::vector<std::pair<std::string, int>>> orders;
    for (std::uint64_t s = 0; s < 20; ++s) orders.insert(plan_epoch({{"a", 64}, {"b", 32}}, 32, s));
    CHECK(orders.size() > 1);
}

TEST_CASE("plan_epoch with one task is just that task's batches") {
    auto plan = plan_epoch({{"hof", 100}}, 32, 3);
    REQUIRE(plan.size() == 4);
    std::set<int> indices;
    for (const auto& [task, idx] : plan) {
        CHECK(task == "hof");
        indices.insert(idx);
    }
    CHECK(indices == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("plan_epoch rejects empty task datasets") {
    CHECK_THROWS_WITH(plan_epoch({{"a", 10}, {"emotion", 0}}, 4, 1),
                      Catch::Contains("emotion"));
}

TEST_CASE("task positions are uniform across seeds") {
    // 4 tasks x 2048 examples, batch 32 -> 64 batches each, 256 plan slots.
    // Pool positions into quarters; over 200 seeds each task should fill a
    // quarter of each pool.
    std::map<std::string, int> sizes = {{"a", 2048}, {"b", 2048}, {"c", 2048}, {"d", 2048}};
    const int slots = 256, quarters = 4, per_quarter = slots / quarters;
    std::map<std::string, std::vector<long long>> counts;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto plan = plan_epoch(sizes, 32, seed);
        REQUIRE(static_cast<int>(plan.size()) == slots);
        for (int pos = 0; pos < slots; ++pos) {
            auto& c = counts[plan[static_cast<std::size_t>(pos)].first];
            if (c.empty()) c.assign(quarters, 0);
            ++c[static_cast<std::size_t>(pos / per_quarter)];
        }
    }
    for (const auto& [task, quarter_counts] : counts) {
        for (int q = 0; q < quarters; ++q) {
            double freq = static_cast<double>(quarter_counts[static_cast<std::size_t>(q)]) /
                          (200.0 * per_quarter);
            INFO("task " << task << " quarter " << q << " freq " << freq);
            CHECK(freq == Approx(0.25).margin(0.02));
        }
    }
}

TEST_CASE("AdamW with zero gradient applies pure decoupled decay") {
    Tensor w({4}, {1.0f, -2.0f, 0.5f, 3.0f}, true);
    OptimizerState state;
    AdamWConfig adamw;
    adamw.weight_decay = 0.1;
    double lr = 0.01;
    std::vector<float> before(w.data().begin(), w.data().end());
    adamw_update(state, {{"w", w}}, {}, lr, adamw);
    for (int i = 0; i < 4; ++i)
        CHECK(w.data()[static_cast<std::size_t>(i)] ==
              Approx(before[static_cast<std::size_t>(i)] * (1.0 - lr * adamw.weight_decay))
                  .margin(1e-7));
}

TEST_CASE("first AdamW step approaches -lr * sign(gradient) as eps vanishes") {
    Tensor w({3}, {0.0f, 0.0f, 0.0f}, true);
    GradMap grads;
    grads.emplace(w.id(), Tensor({3}, {0.2f, -1.7f, 0.0003f}));
    OptimizerState state;
    AdamWConfig adamw;
    adamw.eps = 1e-12;
    adamw.weight_decay = 0.0;
    double lr = 0.05;
    adamw_update(state, {{"w", w}}, grads, lr, adamw);
    CHECK(w.data()[0] == Approx(-lr).margin(1e-6));
    CHECK(w.data()[1] == Approx(lr).margin(1e-6));
    CHECK(w.data()[2] == Approx(-lr).margin(1e-6));
}

TEST_CASE("AdamW with learning rate zero leaves parameters unchanged") {
    Tensor w({3}, {1.0f, 2.0f, 3.0f}, true);
    GradMap grads;
    grads.emplace(w.id(), Tensor({3}, {0.5f, -0.5f, 1.0f}));
    OptimizerState state;
    AdamWConfig adamw;
    adamw.weight_decay = 0.5;
    std::vector<float> before(w.data().begin(), w.data().end());
    adamw_update(state, {{"w", w}}, grads, 0.0, adamw);
    CHECK(std::vector<float>(w.data().begin(), w.data().end()) == before);
}

TEST_CASE("100 AdamW steps solve a separable two-class head-only problem") {
    Rng rng(5);
    const int n = 32, dim = 8;
    Tensor features = Tensor::randn({n, dim}, rng, 1.0);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        double score = 0.0;
        for (int d = 0; d < dim; ++d)
            score += features.data()[static_cast<std::size_t>(i * dim + d)] * (d % 2 ? 1.0 : -0.5);
        labels[static_cast<std::size_t>(i)] = score > 0 ? 1 : 0;
    }
    Tensor w = Tensor::zeros({dim, 2}, true);
    Tensor b = Tensor::zeros({2}, true);
    OptimizerState state;
    AdamWConfig adamw;

    auto loss_of = [&] {
        Tensor logits = add<float>(nullptr, matmul<float>(nullptr, features, w), b);
        return cross_entropy_with_logits<float>(nullptr, logits, labels).item();
    };
    float initial = loss_of();
    CHECK(initial == Approx(std::log(2.0)).margin(1e-6));

    float last = initial;
    for (int step = 0; step < 100; ++step) {
        Tape tape;
        Tensor logits = add(&tape, matmul(&tape, features, w), b);
        Tensor loss = cross_entropy_with_logits(&tape, logits, labels);
        GradMap grads = backward(loss, tape);
        adamw_update(state, {{"w", w}, {"b", b}}, grads, 0.1, adamw);
        last = loss.item();
    }
    CHECK(last < initial);
    CHECK(loss_of() < 0.05);
}

TEST_CASE("train_step loss equals the unweighted mean cross-entropy of the batch") {
    SynthSpec spec;
    spec.sizes = {{"hof", 40}};
    auto datasets = synth_fixture(spec, 3);
    MtlModel model = synth_model(datasets, 11, 0.0f);  // no dropout: loss is exact

    EncodedDataset enc = encode_dataset(datasets.at("hof"), model.pipeline);
    std::vector<int> rows = {0, 1, 2, 3, 4, 5, 6, 7};
    MiniBatch batch = gather_batch(enc, rows, "hof");

    Tensor logits = forward_task(model, batch.tokens, "hof", false);
    double expected = 0.0;
    int k = logits.dim(1);
    for (int r = 0; r < logits.dim(0); ++r) {
        double mx = -1e30;
        for (int j = 0; j < k; ++j)
            mx = std::max(mx, static_cast<double>(
                                  logits.data()[static_cast<std::size_t>(r * k + j)]));
        double sum = 0.0;
        for (int j = 0; j < k; ++j)
            sum += std::exp(logits.data()[static_cast<std::size_t>(r * k + j)] - mx);
        expected += mx + std::log(sum) -
                    logits.data()[static_cast<std::size_t>(
                        r * k + batch.labels[static_cast<std::size_t>(r)])];
    }
    expected /= logits.dim(0);

    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 8;
    OptimizerState state;
    float loss = train_step(model, state, batch, cfg);
    CHECK(loss == Approx(expected).margin(1e-5));
}

TEST_CASE("train_step updates only the encoder and the batch task head") {
    SynthSpec spec;
    spec.sizes = {{"hof", 32}, {"sentiment", 32}, {"emotion", 32}, {"target", 32}};
    auto datasets = synth_fixture(spec, 5);
    MtlModel model = synth_model(datasets, 13);

    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 8;
    cfg.tasks_enabled = {"hof", "sentiment", "emotion", "target"};

    for (const auto& task : known_task_names()) {
        std::map<std::string, std::vector<float>> before;
        for (const auto& [name, p] : model.all_params())
            before[name] = {p.data().begin(), p.data().end()};

        EncodedDataset enc = encode_dataset(datasets.at(task), model.pipeline);
        MiniBatch batch = gather_batch(enc, {0, 1, 2, 3}, task);
        OptimizerState state;
        train_step(model, state, batch, cfg);

        for (const auto& [name, p] : model.all_params()) {
            std::vector<float> now(p.data().begin(), p.data().end());
            bool is_other_head = name.rfind("head.", 0) == 0 &&
                                 name.find("head." + task + ".") == std::string::npos;
            INFO("task " << task << " parameter " << name);
            if (is_other_head) {
                REQUIRE(now == before[name]);  // bit-identical
            } else if (name == "tok_emb") {
                CHECK(now != before[name]);
            }
        }
    }
}

TEST_CASE("train_step rejects disabled tasks and non-finite losses") {
    SynthSpec spec;
    spec.sizes = {{"hof", 16}, {"sentiment", 16}};
    auto datasets = synth_fixture(spec, 7);
    MtlModel model = synth_model(datasets, 17);
    EncodedDataset enc = encode_dataset(datasets.at("sentiment"), model.pipeline);
    MiniBatch batch = gather_batch(enc, {0, 1}, "sentiment");
    TrainConfig cfg;  // hof only
    OptimizerState state;
    CHECK_THROWS_AS(train_step(model, state, batch, cfg), TaskError);

    cfg.tasks_enabled = {"hof", "sentiment"};
    model.params.tok_emb.data()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(train_step(model, state, batch, cfg), DivergenceError);
}

TEST_CASE("training for zero epochs returns the model unchanged") {
    SynthSpec spec;
    spec.sizes = {{"hof", 24}};
    auto datasets = synth_fixture(spec, 9);
    MtlModel model = synth_model(datasets, 19);
    auto before = sha256_hex([&] {
        std::string bytes;
        for (const auto& [name, p] : model.all_params())
            bytes.append(reinterpret_cast<const char*>(p.data().data()),
                         sizeof(float) * static_cast<std::size_t>(p.size()));
        return bytes;
    }());

    TrainConfig cfg;
    cfg.epochs = 0;
    auto [train_ds, val_ds] = split_dataset(datasets.at("hof"), 0.8, 0.2, 1);
    TrainHistory history = train(model, {{"hof", train_ds}}, cfg, val_ds);
    CHECK(history.empty());

    auto after = sha256_hex([&] {
        std::string bytes;
        for (const auto& [name, p] : model.all_params())
            bytes.append(reinterpret_cast<const char*>(p.data().data()),
                         sizeof(float) * static_cast<std::size_t>(p.size()));
        return bytes;
    }());
    CHECK(after == before);
}

TEST_CASE("identical seeds produce bit-identical trained checkpoints") {
    SynthSpec spec;
    spec.sizes = {{"hof", 48}, {"sentiment", 48}};
    auto datasets = synth_fixture(spec, 21);
    auto [hof_train, hof_val] = split_dataset(datasets.at("hof"), 0.8, 0.2, 2);
    std::map<std::string, Dataset> train_sets = {{"hof", hof_train},
                                                 {"sentiment", datasets.at("sentiment")}};

    auto run = [&](const std::string& path) {
        MtlModel model = synth_model(datasets, 23);
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.learning_rate = 5e-4;
        cfg.batch_size = 16;
        cfg.seed = 31;
        cfg.tasks_enabled = {"hof", "sentiment"};
        train(model, train_sets, cfg, hof_val);
        save_checkpoint(model, path);
        return sha256_file(path);
    };
    std::string p1 = std::string(MTLHOF_TEST_DIR) + "/tmp_det1.mtl1";
    std::string p2 = std::string(MTLHOF_TEST_DIR) + "/tmp_det2.mtl1";
    CHECK(run(p1) == run(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("epoch coverage consumes every example of every enabled task once") {
    std::map<std::string, int> sizes = {{"hof", 37}, {"emotion", 18}};
    int batch_size = 8;
    auto plan = plan_epoch(sizes, batch_size, 5);
    std::map<std::string, std::vector<int>> order;
    for (const auto& [task, n] : sizes) {
        auto& perm = order[task];
        for (int i = 0; i < n; ++i) perm.push_back(i);
        Rng rng(mix_seed(99, "shuffle-" + task, 1));
        rng.shuffle(perm);
    }
    std::map<std::string, std::multiset<int>> consumed;
    for (const auto& [task, bidx] : plan) {
        const auto& perm = order[task];
        int start = bidx * batch_size;
        int stop = std::min<int>(static_cast<int>(perm.size()), start + batch_size);
        REQUIRE(start < stop);
        for (int i = start; i < stop; ++i) consumed[task].insert(perm[static_cast<std::size_t>(i)]);
    }
    for (const auto& [task, n] : sizes) {
        REQUIRE(consumed[task].size() == static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) REQUIRE(consumed[task].count(i) == 1);
    }
}

TEST_CASE("joint training improves hof validation macro-F1 across epochs") {
    SynthSpec spec;
    spec.sizes = {{"hof", 400}, {"sentiment", 400}, {"emotion", 400}, {"target", 400}};
    spec.rho = 0.9;
    spec.marker_pool = 24;
    spec.marker_skew = 1.5;

    double first_sum = 0.0, final_sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto datasets = synth_fixture(spec, seed);
        auto [hof_train, hof_val] = split_dataset(datasets.at("hof"), 0.8, 0.2, seed);
        std::map<std::string, Dataset> train_sets = datasets;
        train_sets["hof"] = hof_train;

        MtlModel model = synth_model(datasets, seed * 100 + 1, 0.0f, 64, 2);
        TrainConfig cfg = preset_config("HASOC_all");
        cfg.seed = seed;
        TrainHistory history = train(model, train_sets, cfg, hof_val);
        REQUIRE(history.size() == 2);
        first_sum += history.front().val_macro_f1;
        final_sum += history.back().val_macro_f1;
    }
    INFO("first epochs mean " << first_sum / 5 << " final epochs mean " << final_sum / 5);
    CHECK(final_sum > first_sum);
}

TEST_CASE("presets store the published configurations verbatim") {
    TrainConfig baseline = preset_config("baseline");
    CHECK(baseline.epochs == 4);
    CHECK(baseline.learning_rate == 4e-4);
    CHECK(baseline.batch_size == 32);
    CHECK(baseline.tasks_enabled == std::vector<std::string>{"hof"});

    TrainConfig sentiment = preset_config("HASOC_sentiment");
    CHECK(sentiment.epochs == 3);
    CHECK(sentiment.learning_rate == 3e-5);
    CHECK(sentiment.batch_size == 32);

    TrainConfig emotion = preset_config("emotion");
    CHECK(emotion.preset_name == "HASOC_emotion");
    CHECK(emotion.epochs == 3);
    CHECK(emotion.learning_rate == 4e-5);
    CHECK(emotion.batch_size == 32);

    TrainConfig target = preset_config("HASOC_target");
    CHECK(target.epochs == 4);
    CHECK(target.learning_rate == 4e-5);
    CHECK(target.batch_size == 16);

    TrainConfig all = preset_config("all");
    CHECK(all.preset_name == "HASOC_all");
    CHECK(all.epochs == 2);
    CHECK(all.learning_rate == 3e-4);
    CHECK(all.batch_size == 16);
    CHECK(all.tasks_enabled ==
          std::vector<std::string>{"hof", "sentiment", "emotion", "target"});

    CHECK_THROWS_AS(preset_config("bert-large"), ConfigError);
    CHECK_THROWS_AS([] {
        TrainConfig c;
        c.tasks_enabled = {"sentiment"};
        c.validate();
    }(), ConfigError);
}
