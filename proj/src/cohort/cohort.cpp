#include "stamp/cohort/cohort.hpp"

#include "stamp/cohort/csv.hpp"
#include "stamp/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace stamp::cohort {
namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void key_error(const std::string& column, const fs::path& path)
{
    throw Error(ErrorCode::KeyError, "Key error: ['" + column + "']", path.string());
}

CsvTable read_table(const fs::path& path)
{
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".xlsx" || ext == ".xls") {
        throw Error(ErrorCode::UnsupportedFormat, "Unsupported format error: spreadsheet tables must be exported as CSV",
                    path.string(), "Save the table as a comma-separated .csv file and point the configuration at it.");
    }
    CsvTable t = read_csv(path);
    for (auto& h : t.header) h = trim(h);
    for (auto& row : t.rows)
        for (auto& cell : row) cell = trim(cell);
    return t;
}

std::size_t patient_column(const CsvTable& t, const fs::path& path)
{
    if (auto c = t.column("PATIENT")) return *c;
    if (auto c = t.column("PATIENTS")) return *c;
    key_error("PATIENT", path);
}

std::optional<double> parse_number(const std::string& s)
{
    if (s.empty()) return std::nullopt;
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// Feature files per patient, in slide-table order; missing files are
// dropped with a warning.
std::map<std::string, std::vector<fs::path>> available_features(const SlideTable& slides, const fs::path& dir,
                                                                 std::size_t& n_missing)
{
    std::map<std::string, std::vector<fs::path>> out;
    n_missing = 0;
    for (const auto& row : slides.rows) {
        const fs::path f = dir / (row.filename + ".h5");
        if (fs::is_regular_file(f)) {
            auto& files = out[row.patient];
            if (std::find(files.begin(), files.end(), f) == files.end()) files.push_back(f);
        } else {
            ++n_missing;
        }
    }
    return out;
}

void fill_tabular(Patient& p, const CliniTable* clini, const std::vector<std::string>& cat_labels,
                  const std::vector<std::string>& cont_labels)
{
    for (const auto& c : cat_labels) p.cat_values.push_back(clini ? clini->value(p.id, c).value_or("") : "");
    for (const auto& c : cont_labels) {
        std::optional<double> v;
        if (clini) {
            if (auto s = clini->value(p.id, c)) v = parse_number(*s);
        }
        p.cont_values.push_back(v);
    }
}

} // namespace

std::optional<std::string> CliniTable::value(const std::string& patient, const std::string& column) const
{
    auto r = row_of.find(patient);
    if (r == row_of.end()) return std::nullopt;
    auto c = std::find(columns.begin(), columns.end(), column);
    if (c == columns.end()) return std::nullopt;
    const std::string& v = cells[r->second][static_cast<std::size_t>(c - columns.begin())];
    if (v.empty()) return std::nullopt;
    return v;
}

SlideTable load_slide_table(const fs::path& path)
{
    const CsvTable t = read_table(path);
    const std::size_t pc = patient_column(t, path);
    std::optional<std::size_t> fc = t.column("FILENAME");
    if (!fc) fc = t.column("FILENAMES");
    if (!fc) key_error("FILENAME", path);
    SlideTable out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& row : t.rows) {
        const std::string& patient = row[pc];
        std::string file = row[*fc];
        if (patient.empty() || file.empty()) continue;
        // Slide file names are accepted with or without their extension.
        static const std::set<std::string> kExt = {".h5",  ".tif",  ".tiff",   ".svs", ".ndpi",   ".mrxs",
                                                   ".scn", ".bif",  ".qptiff", ".vms", ".vmu",    ".svslide"};
        const auto dot = file.rfind('.');
        if (dot != std::string::npos) {
            std::string ext = file.substr(dot);
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
            if (kExt.count(ext)) file.resize(dot);
        }
        if (!seen.insert({patient, file}).second) continue;
        out.rows.push_back({patient, file});
    }
    return out;
}

CliniTable load_clini_table(const fs::path& path, const std::string& target_label,
                            const std::optional<std::vector<std::string>>& categories,
                            const std::vector<std::string>& required_columns)
{
    const CsvTable t = read_table(path);
    const std::size_t pc = patient_column(t, path);
    if (!t.column(target_label)) key_error(target_label, path);
    for (const auto& c : required_columns)
        if (!t.column(c)) key_error(c, path);

    CliniTable out;
    out.columns = t.header;
    out.target_label = target_label;
    for (const auto& row : t.rows) {
        const std::string& patient = row[pc];
        if (patient.empty()) continue;
        if (out.row_of.count(patient)) {
            throw Error(ErrorCode::DuplicatePatient, "Duplicate patient '" + patient + "' in clinical table",
                        path.string());
        }
        out.row_of[patient] = out.cells.size();
        out.patients.push_back(patient);
        out.cells.push_back(row);
    }
    if (categories) {
        out.categories = *categories;
    } else {
        const std::size_t tc = *t.column(target_label);
        std::set<std::string> distinct;
        for (const auto& row : out.cells)
            if (!row[tc].empty()) distinct.insert(row[tc]);
        out.categories.assign(distinct.begin(), distinct.end());
    }
    return out;
}

std::size_t TabularSchema::dim() const
{
    std::size_t d = continuous.size();
    for (const auto& c : categorical) d += c.levels.size();
    return d;
}

nlohmann::json TabularSchema::to_json() const
{
    nlohmann::json j = {{"categorical", nlohmann::json::array()}, {"continuous", nlohmann::json::array()}};
    for (const auto& c : categorical) j["categorical"].push_back({{"name", c.name}, {"levels", c.levels}});
    for (const auto& c : continuous) j["continuous"].push_back({{"name", c.name}, {"mean", c.mean}, {"sd", c.sd}});
    return j;
}

TabularSchema TabularSchema::from_json(const nlohmann::json& j)
{
    TabularSchema s;
    for (const auto& c : j.at("categorical"))
        s.categorical.push_back({c.at("name").get<std::string>(), c.at("levels").get<std::vector<std::string>>()});
    for (const auto& c : j.at("continuous"))
        s.continuous.push_back({c.at("name").get<std::string>(), c.at("mean").get<double>(), c.at("sd").get<double>()});
    return s;
}

const Patient* Cohort::find(const std::string& id) const
{
    auto it = std::lower_bound(patients.begin(), patients.end(), id,
                               [](const Patient& p, const std::string& v) { return p.id < v; });
    return it != patients.end() && it->id == id ? &*it : nullptr;
}

std::vector<int> Cohort::labels() const
{
    std::vector<int> out;
    out.reserve(patients.size());
    for (const auto& p : patients) out.push_back(p.label);
    return out;
}

TabularSchema fit_tabular(const Cohort& cohort, const std::vector<std::size_t>& subset)
{
    TabularSchema s;
    for (std::size_t c = 0; c < cohort.cat_labels.size(); ++c) {
        std::set<std::string> levels;
        for (std::size_t i : subset) {
            const auto& v = cohort.patients[i].cat_values[c];
            if (!v.empty()) levels.insert(v);
        }
        s.categorical.push_back({cohort.cat_labels[c], {levels.begin(), levels.end()}});
    }
    for (std::size_t c = 0; c < cohort.cont_labels.size(); ++c) {
        double sum = 0, sum2 = 0;
        std::size_t n = 0;
        for (std::size_t i : subset) {
            if (const auto& v = cohort.patients[i].cont_values[c]) {
                sum += *v;
                ++n;
            }
        }
        const double mean = n ? sum / n : 0.0;
        for (std::size_t i : subset)
            if (const auto& v = cohort.patients[i].cont_values[c]) sum2 += (*v - mean) * (*v - mean);
        double sd = n ? std::sqrt(sum2 / n) : 1.0;
        if (!(sd > 1e-12)) sd = 1.0;
        s.continuous.push_back({cohort.cont_labels[c], mean, sd});
    }
    return s;
}

std::vector<float> encode_tabular(const TabularSchema& schema, const Cohort& cohort, const Patient& p)
{
    std::vector<float> out;
    out.reserve(schema.dim());
    for (const auto& cat : schema.categorical) {
        const auto it = std::find(cohort.cat_labels.begin(), cohort.cat_labels.end(), cat.name);
        const std::string v = it == cohort.cat_labels.end()
                                  ? std::string()
                                  : p.cat_values[static_cast<std::size_t>(it - cohort.cat_labels.begin())];
        for (const auto& level : cat.levels) out.push_back(level == v ? 1.0f : 0.0f);
    }
    for (const auto& cont : schema.continuous) {
        const auto it = std::find(cohort.cont_labels.begin(), cohort.cont_labels.end(), cont.name);
        std::optional<double> v;
        if (it != cohort.cont_labels.end()) v = p.cont_values[static_cast<std::size_t>(it - cohort.cont_labels.begin())];
        out.push_back(v ? static_cast<float>((*v - cont.mean) / cont.sd) : 0.0f);
    }
    return out;
}

Cohort build_cohort(const SlideTable& slides, const CliniTable& clini, const fs::path& feature_dir,
                    const std::vector<std::string>& cat_labels, const std::vector<std::string>& cont_labels)
{
    for (const auto& c : cat_labels)
        if (std::find(clini.columns.begin(), clini.columns.end(), c) == clini.columns.end())
            throw Error(ErrorCode::KeyError, "Key error: ['" + c + "']", "modeling.cat_labels");
    for (const auto& c : cont_labels)
        if (std::find(clini.columns.begin(), clini.columns.end(), c) == clini.columns.end())
            throw Error(ErrorCode::KeyError, "Key error: ['" + c + "']", "modeling.cont_labels");

    std::size_t n_missing_files = 0;
    const auto files = available_features(slides, feature_dir, n_missing_files);
    if (files.empty()) {
        throw Error(ErrorCode::NoFeaturesFound, "No features found in feature_dir", feature_dir.string());
    }
    if (n_missing_files > 0)
        spdlog::warn("{} slide table entries have no feature file in {}", n_missing_files, feature_dir.string());

    Cohort c;
    c.target_label = clini.target_label;
    c.categories = clini.categories;
    c.cat_labels = cat_labels;
    c.cont_labels = cont_labels;
    std::size_t n_no_label = 0, n_no_clini = 0;
    for (const auto& [patient, paths] : files) {
        if (!clini.row_of.count(patient)) {
            ++n_no_clini;
            continue;
        }
        const auto v = clini.value(patient, clini.target_label);
        const auto it = v ? std::find(c.categories.begin(), c.categories.end(), *v) : c.categories.end();
        if (it == c.categories.end()) {
            ++n_no_label;
            continue;
        }
        Patient p;
        p.id = patient;
        p.label = static_cast<int>(it - c.categories.begin());
        p.feature_files = paths;
        fill_tabular(p, &clini, cat_labels, cont_labels);
        c.patients.push_back(std::move(p));
    }
    if (n_no_label > 0)
        spdlog::warn("{} patients dropped: {} missing or outside categories", n_no_label, clini.target_label);
    if (n_no_clini > 0) spdlog::warn("{} patients with features are absent from the clinical table", n_no_clini);
    if (c.patients.empty()) {
        throw Error(ErrorCode::EmptyCohort, "No patient has both features and a valid " + clini.target_label + " label",
                    feature_dir.string());
    }
    return c;
}

Cohort build_deploy_cohort(const SlideTable& slides, const CliniTable* clini, const fs::path& feature_dir,
                           const std::string& target_label, const std::vector<std::string>& categories,
                           const std::vector<std::string>& cat_labels, const std::vector<std::string>& cont_labels)
{
    std::size_t n_missing_files = 0;
    const auto files = available_features(slides, feature_dir, n_missing_files);
    if (files.empty()) throw Error(ErrorCode::MissingFeatures, "No features found in feature_dir", feature_dir.string());
    if (n_missing_files > 0)
        spdlog::warn("{} slide table entries have no feature file in {}", n_missing_files, feature_dir.string());
    Cohort c;
    c.target_label = target_label;
    c.categories = categories;
    c.cat_labels = cat_labels;
    c.cont_labels = cont_labels;
    for (const auto& [patient, paths] : files) {
        Patient p;
        p.id = patient;
        if (clini) {
            if (const auto v = clini->value(patient, target_label)) {
                const auto it = std::find(categories.begin(), categories.end(), *v);
                if (it != categories.end()) p.label = static_cast<int>(it - categories.begin());
            }
        }
        p.feature_files = paths;
        fill_tabular(p, clini, cat_labels, cont_labels);
        c.patients.push_back(std::move(p));
    }
    return c;
}

} // namespace stamp::cohort
