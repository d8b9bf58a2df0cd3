#pragma once

#include "aptd/ml.hpp"
#include "aptd/scenario.hpp"

namespace aptd::test {

// Small forests trained once per test binary on generated windows.
inline TrainedModel train_on(std::initializer_list<DatasetKind> kinds, std::size_t per_class, std::uint64_t seed) {
    std::vector<FeatureVector> rows;
    std::uint64_t s = seed;
    for (auto k : kinds) {
        auto part = gen_feature_dataset(k, per_class, s++);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return train_random_forest(dataset_from_features(rows), ForestParams{30, 12, 1, seed});
}

inline const TrainedModel& discovery_model() {
    static const TrainedModel m =
        train_on({DatasetKind::DISCOVERY_NORMAL, DatasetKind::DISCOVERY_SLOW}, 150, 101);
    return m;
}

inline const TrainedModel& fieldbus_model() {
    static const TrainedModel m = train_on(
        {DatasetKind::FIELDBUS_AGGRESSIVE, DatasetKind::FIELDBUS_NON_AGGRESSIVE, DatasetKind::FIELDBUS_S7}, 150, 202);
    return m;
}

}  // namespace aptd::test
