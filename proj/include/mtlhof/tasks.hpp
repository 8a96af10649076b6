#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mtlhof/common.hpp"

namespace mtlhof {

// A named classification task with an ordered label set.
struct TaskSpec {
    std::string name;
    std::vector<std::string> labels;

    int label_index(const std::string& label) const {
        auto it = std::find(labels.begin(), labels.end(), label);
        return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
    }

    void validate() const {
        if (name.empty()) throw ConfigError("task name must be nonempty");
        if (labels.empty()) throw ConfigError("task '" + name + "' has no labels");
        for (std::size_t i = 0; i < labels.size(); ++i)
            for (std::size_t j = i + 1; j < labels.size(); ++j)
                if (labels[i] == labels[j])
                    throw ConfigError("task '" + name + "' has duplicate label " + labels[i]);
    }
};

inline const std::vector<std::string>& known_task_names() {
    static const std::vector<std::string> names = {"hof", "sentiment", "emotion", "target"};
    return names;
}

// Default label inventories; corpora may override per schema.
inline TaskSpec default_task_spec(const std::string& name) {
    if (name == "hof") return {"hof", {"NOT", "HOF"}};
    if (name == "sentiment") return {"sentiment", {"negative", "positive", "neutral"}};
    if (name == "emotion")
        return {"emotion",
                {"anger", "disgust", "fear", "joy", "sadness", "surprise", "enthusiasm",
                 "fun", "hate", "neutral", "love", "boredom", "relief", "none"}};
    if (name == "target") return {"target", {"NONE", "IND", "GRP", "OTH"}};
    throw TaskError("unknown task name: " + name);
}

inline std::vector<TaskSpec> default_task_specs() {
    std::vector<TaskSpec> specs;
    for (const auto& name : known_task_names()) specs.push_back(default_task_spec(name));
    return specs;
}

}  // namespace mtlhof
