#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace stamp::cohort {

struct SlideRow {
    std::string patient;
    std::string filename;   // without extension
};

struct SlideTable {
    std::vector<SlideRow> rows;
};

/// Clinical table keyed by patient. Empty cells are missing values.
struct CliniTable {
    std::vector<std::string> columns;
    std::vector<std::string> patients;                // row order
    std::map<std::string, std::size_t> row_of;        // patient -> row
    std::vector<std::vector<std::string>> cells;      // [row][column]
    std::string target_label;
    std::vector<std::string> categories;              // explicit or inferred

    std::optional<std::string> value(const std::string& patient, const std::string& column) const;
};

/// Accepts PATIENT or PATIENTS and FILENAME or FILENAMES headers. Throws
/// KeyError naming the missing column.
SlideTable load_slide_table(const std::filesystem::path& path);

/// Throws KeyError when target_label is not a column and DuplicatePatient
/// for repeated patients. Without explicit categories they are the sorted
/// distinct non-empty target values.
CliniTable load_clini_table(const std::filesystem::path& path, const std::string& target_label,
                            const std::optional<std::vector<std::string>>& categories = std::nullopt,
                            const std::vector<std::string>& required_columns = {});

/// Encoding of the optional tabular variables: one-hot categorical columns
/// followed by z-scored continuous columns. Missing values encode as zeros.
struct TabularSchema {
    struct Categorical {
        std::string name;
        std::vector<std::string> levels;
        bool operator==(const Categorical&) const = default;
    };
    struct Continuous {
        std::string name;
        double mean = 0.0;
        double sd = 1.0;
        bool operator==(const Continuous&) const = default;
    };
    std::vector<Categorical> categorical;
    std::vector<Continuous> continuous;

    std::size_t dim() const;
    bool empty() const { return dim() == 0; }
    bool operator==(const TabularSchema&) const = default;

    nlohmann::json to_json() const;
    static TabularSchema from_json(const nlohmann::json& j);
};

struct Patient {
    std::string id;
    int label = -1;                                   // -1: no ground truth
    std::vector<std::filesystem::path> feature_files;
    std::vector<std::string> cat_values;              // per cat_label, "" = missing
    std::vector<std::optional<double>> cont_values;   // per cont_label
};

struct Cohort {
    std::string target_label;
    std::vector<std::string> categories;
    std::vector<std::string> cat_labels;
    std::vector<std::string> cont_labels;
    std::vector<Patient> patients;                    // sorted by id

    const Patient* find(const std::string& id) const;
    std::vector<int> labels() const;
};

/// Fits the tabular encoding on a subset of patients (indices into cohort).
TabularSchema fit_tabular(const Cohort& cohort, const std::vector<std::size_t>& subset);

/// Tabular vector of one patient under a frozen schema.
std::vector<float> encode_tabular(const TabularSchema& schema, const Cohort& cohort, const Patient& patient);

/// Joins slide and clinical tables with the feature files in feature_dir.
/// Patients with a missing or unknown label and files without a feature file
/// are dropped with a warning. Throws NoFeaturesFound or EmptyCohort.
Cohort build_cohort(const SlideTable& slides, const CliniTable& clini, const std::filesystem::path& feature_dir,
                    const std::vector<std::string>& cat_labels = {},
                    const std::vector<std::string>& cont_labels = {});

/// Cohort for deployment: ground truth is optional (clini may be null), and
/// categories come from the model.
Cohort build_deploy_cohort(const SlideTable& slides, const CliniTable* clini,
                           const std::filesystem::path& feature_dir, const std::string& target_label,
                           const std::vector<std::string>& categories, const std::vector<std::string>& cat_labels,
                           const std::vector<std::string>& cont_labels);

} // namespace stamp::cohort
