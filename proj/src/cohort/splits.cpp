#include "stamp/cohort/splits.hpp"

#include "stamp/error.hpp"
#include "stamp/rng.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace stamp::cohort {
namespace {

namespace fs = std::filesystem;

std::vector<std::vector<std::size_t>> by_class(const std::vector<std::size_t>& members, const std::vector<int>& labels,
                                               int n_classes)
{
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(n_classes));
    for (std::size_t i : members) {
        const int l = labels[i];
        if (l < 0 || l >= n_classes) throw Error(ErrorCode::InvalidValue, "label outside the category range");
        out[static_cast<std::size_t>(l)].push_back(i);
    }
    return out;
}

// Deals every class round-robin into `parts` bins.
std::vector<std::vector<std::size_t>> deal(std::vector<std::vector<std::size_t>> classes, int parts, Rng& rng)
{
    std::vector<std::vector<std::size_t>> bins(static_cast<std::size_t>(parts));
    std::size_t offset = 0;
    for (auto& members : classes) {
        std::sort(members.begin(), members.end());
        rng.shuffle(std::span<std::size_t>(members));
        for (std::size_t k = 0; k < members.size(); ++k) bins[(offset + k) % parts].push_back(members[k]);
        offset = (offset + members.size()) % parts;
    }
    for (auto& b : bins) std::sort(b.begin(), b.end());
    return bins;
}

} // namespace

std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<int>& labels, int n_classes, int n_splits,
                                                        std::uint64_t seed)
{
    if (n_splits < 2) throw Error(ErrorCode::InvalidValue, "n_splits must be at least 2", "modeling.n_splits");
    std::vector<std::size_t> all(labels.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto classes = by_class(all, labels, n_classes);

    std::size_t least = SIZE_MAX;
    for (const auto& c : classes)
        if (!c.empty()) least = std::min(least, c.size());
    if (least == SIZE_MAX) throw Error(ErrorCode::EmptyCohort, "cannot split an empty cohort");
    if (least < 2) {
        throw Error(ErrorCode::TooFewClassMembers,
                    "The least populated class in y has only 1 member, which is too few. The minimum number of "
                    "groups for any class cannot be less than 2.",
                    "modeling.categories");
    }
    if (least < static_cast<std::size_t>(n_splits)) {
        throw Error(ErrorCode::TooManySplits,
                    "Value error: n_splits=" + std::to_string(n_splits) +
                        " cannot be greater than the number of members in each class.",
                    "modeling.n_splits");
    }
    Rng rng(mix_seed(seed, 0x5EED));
    return deal(classes, n_splits, rng);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
train_val_split(const std::vector<std::size_t>& members, const std::vector<int>& labels, int n_classes,
                std::uint64_t seed)
{
    Rng rng(mix_seed(seed, 0x7A1));
    auto parts = deal(by_class(members, labels, n_classes), 5, rng);
    std::vector<std::size_t> train, val = parts[0];
    for (std::size_t p = 1; p < parts.size(); ++p) train.insert(train.end(), parts[p].begin(), parts[p].end());
    std::sort(train.begin(), train.end());
    if (val.empty() && train.size() > 1) {
        val.push_back(train.back());
        train.pop_back();
    }
    return {train, val};
}

std::string SplitPlan::to_json() const
{
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["n_splits"] = n_splits;
    j["categories"] = categories;
    j["folds"] = folds;
    return j.dump(2) + "\n";
}

SplitPlan SplitPlan::from_json(const std::string& text)
{
    const auto j = nlohmann::json::parse(text);
    SplitPlan p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.n_splits = j.at("n_splits").get<int>();
    p.categories = j.at("categories").get<std::vector<std::string>>();
    p.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
    return p;
}

SplitPlan make_splits(const Cohort& cohort, int n_splits, std::uint64_t seed, const fs::path& output_dir)
{
    const fs::path path = output_dir / "folds.json";
    if (fs::exists(path)) {
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        SplitPlan plan;
        try {
            plan = SplitPlan::from_json(ss.str());
        } catch (const std::exception& e) {
            throw Error(ErrorCode::StaleFolds, std::string("Unreadable folds.json: ") + e.what(), path.string());
        }
        std::set<std::string> in_folds;
        for (const auto& fold : plan.folds) {
            for (const auto& id : fold) {
                if (!cohort.find(id)) {
                    throw Error(ErrorCode::StaleFolds, "Key error: '[" + id + "] not in index'", path.string());
                }
                in_folds.insert(id);
            }
        }
        if (plan.n_splits != n_splits || static_cast<int>(plan.folds.size()) != n_splits) {
            throw Error(ErrorCode::StaleFolds,
                        "folds.json was written for n_splits=" + std::to_string(plan.n_splits), path.string());
        }
        for (const auto& p : cohort.patients) {
            if (!in_folds.count(p.id)) {
                throw Error(ErrorCode::StaleFolds, "patient '" + p.id + "' is missing from folds.json", path.string());
            }
        }
        if (plan.categories != cohort.categories) {
            throw Error(ErrorCode::StaleFolds, "folds.json was written for different categories", path.string());
        }
        return plan;
    }

    const auto folds = stratified_folds(cohort.labels(), static_cast<int>(cohort.categories.size()), n_splits, seed);
    SplitPlan plan;
    plan.seed = seed;
    plan.n_splits = n_splits;
    plan.categories = cohort.categories;
    for (const auto& f : folds) {
        std::vector<std::string> ids;
        for (std::size_t i : f) ids.push_back(cohort.patients[i].id);
        std::sort(ids.begin(), ids.end());
        plan.folds.push_back(std::move(ids));
    }
    fs::create_directories(output_dir);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write folds.json", path.string());
    out << plan.to_json();
    return plan;
}

} // namespace stamp::cohort
