#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtlhof/common.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// Evaluation measures: confusion matrix, per-class and macro-averaged
// precision/recall/F1. The macro average runs over all K classes, counting
// classes absent from gold and predictions as (0,0,0); zero denominators
// yield 0.
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    std::vector<std::string> labels;     // ordered; size K
    std::vector<long long> counts;       // K x K row-major, rows = gold

    int num_classes() const { return static_cast<int>(labels.size()); }

    long long& at(int gold, int pred) {
        return counts[static_cast<std::size_t>(gold) * labels.size() +
                      static_cast<std::size_t>(pred)];
    }
    long long at(int gold, int pred) const {
        return counts[static_cast<std::size_t>(gold) * labels.size() +
                      static_cast<std::size_t>(pred)];
    }

    long long total() const {
        long long n = 0;
        for (long long c : counts) n += c;
        return n;
    }
};

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    std::string task;
    long long n = 0;
    ClassScores macro;
    std::map<std::string, ClassScores> per_class;
};

inline ConfusionMatrix confusion(const std::vector<int>& gold, const std::vector<int>& pred,
                                 const std::vector<std::string>& labels) {
    if (gold.size() != pred.size())
        throw ContractError("confusion: gold and prediction lengths differ (" +
                            std::to_string(gold.size()) + " vs " +
                            std::to_string(pred.size()) + ")");
    if (gold.empty()) throw ContractError("confusion: no evaluated examples");
    int k = static_cast<int>(labels.size());
    ConfusionMatrix cm;
    cm.labels = labels;
    cm.counts.assign(static_cast<std::size_t>(k) * k, 0);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] < 0 || gold[i] >= k || pred[i] < 0 || pred[i] >= k)
            throw ContractError("confusion: label index out of range at row " +
                                std::to_string(i));
        ++cm.at(gold[i], pred[i]);
    }
    return cm;
}

inline ConfusionMatrix confusion(const std::vector<int>& gold, const std::vector<int>& pred,
                                 int num_classes) {
    std::vector<std::string> labels;
    labels.reserve(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < num_classes; ++i) labels.push_back("class" + std::to_string(i));
    return confusion(gold, pred, labels);
}

inline EvalReport report(const ConfusionMatrix& cm, const std::string& task = "") {
    if (cm.num_classes() == 0 || cm.total() == 0)
        throw ContractError("report: empty confusion matrix");
    EvalReport rep;
    rep.task = task;
    rep.n = cm.total();
    int k = cm.num_classes();
    double sum_p = 0.0, sum_r = 0.0, sum_f = 0.0;
    for (int c = 0; c < k; ++c) {
        long long tp = cm.at(c, c);
        long long fp = 0, fn = 0;
        for (int o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        ClassScores s;
        s.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        s.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        s.f1 = (s.precision + s.recall) > 0.0
                   ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                   : 0.0;
        rep.per_class[cm.labels[static_cast<std::size_t>(c)]] = s;
        sum_p += s.precision;
        sum_r += s.recall;
        sum_f += s.f1;
    }
    rep.macro.precision = sum_p / k;
    rep.macro.recall = sum_r / k;
    rep.macro.f1 = sum_f / k;
    return rep;
}

}  // namespace mtlhof
