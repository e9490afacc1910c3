#pragma once

#include "stamp/cohort/cohort.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stamp::cohort {

struct SplitPlan {
    std::uint64_t seed = 0;
    int n_splits = 0;
    std::vector<std::string> categories;
    std::vector<std::vector<std::string>> folds;   // test patients per fold, sorted

    bool operator==(const SplitPlan&) const = default;
    std::string to_json() const;
    static SplitPlan from_json(const std::string& text);
};

/// Stratified partition: each class is shuffled and dealt round-robin, the
/// dealing position carrying over between classes. labels[i] in
/// [0, n_classes). Throws TooFewClassMembers or TooManySplits.
std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<int>& labels, int n_classes,
                                                        int n_splits, std::uint64_t seed);

/// Folds over the cohort, persisted as folds.json in output_dir. An existing
/// folds.json is reused when it describes exactly this cohort and n_splits;
/// otherwise StaleFolds.
SplitPlan make_splits(const Cohort& cohort, int n_splits, std::uint64_t seed,
                      const std::filesystem::path& output_dir);

/// Stratified 80/20 split of `members` (indices into labels) into
/// (train, validation).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
train_val_split(const std::vector<std::size_t>& members, const std::vector<int>& labels, int n_classes,
                std::uint64_t seed);

} // namespace stamp::cohort
