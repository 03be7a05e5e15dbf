#pragma once

#include <random>
#include <string>

#include "submeta/core_model.hpp"

namespace submeta::testing {

inline const std::string kData = SUBMETA_DATA_DIR;

inline StudyRecord two_arm(const std::string& id, double ya, double sa, double yb, double sb, std::int64_t na = 50,
                           std::int64_t nb = 50) {
    return StudyRecord::make(id, SubgroupEstimate::make(ya, sa, na), SubgroupEstimate::make(yb, sb, nb));
}

// k studies, first always two-arm; with `absences` roughly a fifth lose one subgroup.
inline MetaDataset random_dataset(std::mt19937_64& rng, int k, bool absences) {
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.15, 0.9);
    std::uniform_int_distribution<int> n(5, 200);
    std::bernoulli_distribution drop(0.2);
    MetaDataset d;
    for (int j = 0; j < k; ++j) {
        auto a = SubgroupEstimate::make(0.2 + 0.4 * z(rng), u(rng), n(rng));
        auto b = SubgroupEstimate::make(-0.3 + 0.4 * z(rng), u(rng), n(rng));
        if (absences && j > 0 && drop(rng)) (j % 2 ? a : b) = SubgroupEstimate::absent();
        d.studies.push_back(StudyRecord::make("s" + std::to_string(j), a, b));
    }
    return d;
}

}  // namespace submeta::testing
