#include "stamp/model/pipeline.hpp"

#include "stamp/cohort/splits.hpp"
#include "stamp/error.hpp"
#include "stamp/model/training.hpp"
#include "stamp/rng.hpp"
#include "stamp/slide/image_io.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <set>
#include <string_view>

namespace stamp::model {
namespace fs = std::filesystem;
namespace {

cohort::Cohort training_cohort(const config::ModelingSettings& s)
{
    if (!s.clini_table) throw Error(ErrorCode::MissingKeys, "Missing required configuration keys: ['modeling.clini_table']");
    if (!s.feature_dir) throw Error(ErrorCode::MissingKeys, "Missing required configuration keys: ['modeling.feature_dir']");
    std::vector<std::string> required = s.cat_labels;
    required.insert(required.end(), s.cont_labels.begin(), s.cont_labels.end());
    const auto slides = cohort::load_slide_table(s.slide_table);
    const auto clini = cohort::load_clini_table(*s.clini_table, s.target_label, s.categories, required);
    return cohort::build_cohort(slides, clini, *s.feature_dir, s.cat_labels, s.cont_labels);
}

std::vector<Bag> load_bags(const cohort::Cohort& c, const std::vector<std::size_t>& idx,
                           const cohort::TabularSchema& schema, const std::string& extractor_id, int feature_dim)
{
    std::vector<Bag> bags;
    bags.reserve(idx.size());
    for (std::size_t i : idx) {
        const auto& p = c.patients[i];
        bags.push_back(load_bag(p, cohort::encode_tabular(schema, c, p), extractor_id, feature_dim));
    }
    return bags;
}

std::string data_hash(const std::vector<Bag>& bags)
{
    std::uint64_t h = hash_string("");
    for (const auto& b : bags) {
        h = mix_seed(h, hash_string(b.patient));
        h = mix_seed(h, static_cast<std::uint64_t>(b.label + 1));
        const std::string_view bytes(reinterpret_cast<const char*>(b.feats.data()), b.feats.size() * sizeof(float));
        h = mix_seed(h, hash_string(bytes));
    }
    return fmt::format("{:016x}", h);
}

ModelBundle fit(const config::ModelingSettings& s, const cohort::Cohort& c, const std::vector<std::size_t>& members,
                std::uint64_t seed, const std::string& what)
{
    const auto [extractor_id, feature_dim] = cohort_extractor(c);
    const int n_classes = static_cast<int>(c.categories.size());
    const auto labels = c.labels();
    auto [tr, va] = cohort::train_val_split(members, labels, n_classes, seed);
    std::vector<std::size_t> fit_set = tr;
    fit_set.insert(fit_set.end(), va.begin(), va.end());
    std::sort(fit_set.begin(), fit_set.end());

    ModelBundle b;
    b.tabular = cohort::fit_tabular(c, fit_set);
    b.model = s.model;
    b.model.dim_input = feature_dim + static_cast<int>(b.tabular.dim());
    b.model.n_classes = n_classes;
    b.train = s.train;
    b.train.seed = seed;
    b.categories = c.categories;
    b.target_label = c.target_label;
    b.extractor_id = extractor_id;
    b.feature_dim = feature_dim;
    b.cat_labels = c.cat_labels;
    b.cont_labels = c.cont_labels;

    const auto train = load_bags(c, tr, b.tabular, extractor_id, feature_dim);
    const auto val = load_bags(c, va, b.tabular, extractor_id, feature_dim);
    spdlog::info("{}: {} training and {} validation patients", what, train.size(), val.size());
    auto result = train_model(train, val, b.model, b.train, [&](const EpochLog& e) {
        spdlog::info("{} epoch {}: train loss {:.4f}, val loss {:.4f}", what, e.epoch, e.train_loss, e.val_loss);
    });
    spdlog::info("{}: best epoch {}", what, result.best_epoch);
    b.weights = std::move(result.weights);
    b.fingerprint = {{"seed", seed},
                     {"train_hash", data_hash(train)},
                     {"val_hash", data_hash(val)},
                     {"best_epoch", result.best_epoch},
                     {"epochs_run", result.history.size()}};
    return b;
}

Transformer<float> load_model(const ModelBundle& b)
{
    Transformer<float> m(b.model);
    std::copy(b.weights.begin(), b.weights.end(), m.params().begin());
    return m;
}

void write_text(const fs::path& path, const std::string& text)
{
    fs::create_directories(path.parent_path());
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

} // namespace

void run_crossval(const config::ModelingSettings& s)
{
    const auto c = training_cohort(s);
    fs::create_directories(s.output_dir);
    const auto plan = cohort::make_splits(c, s.n_splits, s.train.seed, s.output_dir);
    for (int fold = 0; fold < plan.n_splits; ++fold) {
        const std::set<std::string> test_ids(plan.folds[fold].begin(), plan.folds[fold].end());
        std::vector<std::size_t> members, test;
        for (std::size_t i = 0; i < c.patients.size(); ++i)
            (test_ids.count(c.patients[i].id) ? test : members).push_back(i);
        const std::string what = fmt::format("fold {}", fold);
        const auto bundle = fit(s, c, members, mix_seed(s.train.seed, static_cast<std::uint64_t>(fold) + 1), what);
        const fs::path dir = s.output_dir / fmt::format("fold-{}", fold);
        fs::create_directories(dir);
        write_bundle(dir / kBundleName, bundle);

        const auto model = load_model(bundle);
        std::vector<Prediction> preds;
        for (const auto& bag : load_bags(c, test, bundle.tabular, bundle.extractor_id, bundle.feature_dim))
            preds.push_back(predict(model, bag));
        write_text(dir / "patient-preds.csv", predictions_csv(preds, c.target_label, c.categories));
        spdlog::info("{}: wrote {}", what, (dir / "patient-preds.csv").string());
    }
}

ModelBundle run_train(const config::ModelingSettings& s)
{
    const auto c = training_cohort(s);
    std::vector<std::size_t> all(c.patients.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto bundle = fit(s, c, all, s.train.seed, "full model");
    write_bundle(s.output_dir / kBundleName, bundle);
    spdlog::info("wrote {}", (s.output_dir / kBundleName).string());
    return bundle;
}

void run_deploy(const config::ModelingSettings& s)
{
    if (!s.model_path) throw Error(ErrorCode::MissingKeys, "Missing required configuration keys: ['modeling.model_path']");
    if (!s.deploy_feature_dir)
        throw Error(ErrorCode::MissingKeys, "Missing required configuration keys: ['modeling.deploy_feature_dir']");
    const auto bundle = read_bundle(*s.model_path);
    if (bundle.target_label != s.target_label)
        spdlog::warn("model was trained on '{}' but target_label is '{}'", bundle.target_label, s.target_label);
    const auto slides = cohort::load_slide_table(s.slide_table);
    std::optional<cohort::CliniTable> clini;
    if (s.clini_table) {
        std::vector<std::string> required = bundle.cat_labels;
        required.insert(required.end(), bundle.cont_labels.begin(), bundle.cont_labels.end());
        clini = cohort::load_clini_table(*s.clini_table, s.target_label, bundle.categories, required);
    }
    const auto c = cohort::build_deploy_cohort(slides, clini ? &*clini : nullptr, *s.deploy_feature_dir,
                                               s.target_label, bundle.categories, bundle.cat_labels,
                                               bundle.cont_labels);
    const auto [extractor_id, feature_dim] = cohort_extractor(c);
    if (extractor_id != bundle.extractor_id || feature_dim != bundle.feature_dim) {
        throw Error(ErrorCode::ExtractorMismatch,
                    fmt::format("model expects '{}' features ({} dims) but deploy_feature_dir holds '{}' ({} dims)",
                                bundle.extractor_id, bundle.feature_dim, extractor_id, feature_dim),
                    s.deploy_feature_dir->string());
    }
    const auto model = load_model(bundle);
    std::vector<Prediction> preds;
    for (const auto& p : c.patients) {
        const auto bag = load_bag(p, cohort::encode_tabular(bundle.tabular, c, p), bundle.extractor_id, bundle.feature_dim);
        preds.push_back(predict(model, bag));
    }
    write_text(s.output_dir / "patient-preds.csv", predictions_csv(preds, s.target_label, bundle.categories));
    spdlog::info("wrote {}", (s.output_dir / "patient-preds.csv").string());
}

} // namespace stamp::model
