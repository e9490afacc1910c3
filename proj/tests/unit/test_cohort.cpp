#include "helpers.hpp"

#include "stamp/cohort/cohort.hpp"
#include "stamp/cohort/csv.hpp"
#include "stamp/cohort/splits.hpp"
#include "stamp/error.hpp"

#include <doctest.h>

#include <functional>
#include <set>

using namespace stamp;
using namespace stamp::cohort;
namespace fs = std::filesystem;

namespace {

Error error_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e;
    }
    FAIL("no error thrown");
    return Error(ErrorCode::IoError, "");
}

// Slide table with one slide per patient, clinical table with labels and a
// feature file for every slide.
struct Fixture {
    testutil::TempDir dir{"cohort"};
    fs::path slide_csv = dir / "slide.csv";
    fs::path clini_csv = dir / "clini.csv";
    fs::path feats = dir / "features";

    Fixture(int n_pos, int n_neg)
    {
        std::string slides = "PATIENT,FILENAME\n", clini = "PATIENT,isMSIH,AGE,SEX\n";
        for (int i = 0; i < n_pos + n_neg; ++i) {
            const std::string id = "P" + std::to_string(100 + i);
            slides += id + "," + id + "_slide.svs\n";
            clini += id + "," + (i < n_pos ? "MSIH" : "nonMSIH") + "," + std::to_string(40 + i) + "," +
                     (i % 2 ? "m" : "f") + "\n";
            fs::create_directories(feats);
            features::write_feature_file(feats / (id + "_slide.h5"), testutil::random_features(3, 8, i));
        }
        testutil::write_text(slide_csv, slides);
        testutil::write_text(clini_csv, clini);
    }

    Cohort cohort() const
    {
        return build_cohort(load_slide_table(slide_csv), load_clini_table(clini_csv, "isMSIH"), feats);
    }
};

} // namespace

TEST_CASE("csv parsing and quoting")
{
    const auto t = parse_csv("a,b,c\n1,\"x, y\",\"say \"\"hi\"\"\"\n2,,\r\n3\n");
    REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0][1] == "x, y");
    CHECK(t.rows[0][2] == "say \"hi\"");
    CHECK(t.rows[1][1].empty());
    CHECK(t.rows[2].size() == 3);
    CHECK(t.column("b") == 1u);
    CHECK(!t.column("d"));
    CHECK(csv_line({"plain", "with,comma", "q\"uote"}) == "plain,\"with,comma\",\"q\"\"uote\"\n");
    CHECK(parse_csv("\xEF\xBB\xBFPATIENT,X\np,1\n").header[0] == "PATIENT");
    CHECK(error_of([] { parse_csv("a\n\"open\n"); }).code() == ErrorCode::SchemaError);
}

TEST_CASE("slide table from the documented example")
{
    testutil::TempDir dir("slidetable");
    testutil::write_text(dir / "slide.csv",
                         "PATIENT,FILENAME\n"
                         "ID_1337,ID_1337_slide1.svs\n"
                         "ID_1337,ID_1337_slide2.svs\n"
                         "ID_1608,ID_1608_slide1.svs\n"
                         "ID_2001,ID_2001_slide.tiff\n");
    const auto t = load_slide_table(dir / "slide.csv");
    REQUIRE(t.rows.size() == 4);
    CHECK(t.rows[0].patient == "ID_1337");
    CHECK(t.rows[1].patient == "ID_1337");
    CHECK(t.rows[0].filename == "ID_1337_slide1");
    CHECK(t.rows[3].filename == "ID_2001_slide");

    // Plural headers and names already without an extension.
    testutil::write_text(dir / "plural.csv", "PATIENTS,FILENAMES\nA,slide.a.b\nA,slide.a.b\n");
    const auto p = load_slide_table(dir / "plural.csv");
    REQUIRE(p.rows.size() == 1);
    CHECK(p.rows[0].filename == "slide.a.b");

    testutil::write_text(dir / "bad.csv", "PATIENT,FILE\nA,x\n");
    const auto e = error_of([&] { load_slide_table(dir / "bad.csv"); });
    CHECK(e.code() == ErrorCode::KeyError);
    CHECK(std::string(e.what()) == "Key error: ['FILENAME']");
}

TEST_CASE("clinical table: missing cells, inferred categories, goldens")
{
    testutil::TempDir dir("clini");
    testutil::write_text(dir / "clini.csv",
                         "PATIENT,isMSIH\n"
                         "ID_1337,MSIH\n"
                         "ID_1608,\n"
                         "ID_2001,nonMSIH\n");
    const auto c = load_clini_table(dir / "clini.csv", "isMSIH");
    CHECK(c.categories == std::vector<std::string>{"MSIH", "nonMSIH"});
    CHECK(!c.value("ID_1608", "isMSIH"));
    CHECK(c.value("ID_1337", "isMSIH") == "MSIH");

    const auto e = error_of([&] { load_clini_table(dir / "clini.csv", "isMSIh"); });
    CHECK(e.code() == ErrorCode::KeyError);
    CHECK(std::string(e.what()) == "Key error: ['isMSIh']");
    CHECK(e.remediation().find("exactly the same") != std::string::npos);

    testutil::write_text(dir / "dup.csv", "PATIENT,isMSIH\nA,MSIH\nA,MSIH\n");
    CHECK(error_of([&] { load_clini_table(dir / "dup.csv", "isMSIH"); }).code() == ErrorCode::DuplicatePatient);

    CHECK(error_of([&] { load_clini_table(dir / "clini.xlsx", "isMSIH"); }).code() == ErrorCode::UnsupportedFormat);
}

TEST_CASE("cohort join")
{
    Fixture f(4, 4);
    // Patient with an empty label and a slide whose features are missing.
    testutil::write_text(f.clini_csv, testutil::read_text(f.clini_csv) + "P900,,50,f\nP901,NA,51,m\n");
    testutil::write_text(f.slide_csv, testutil::read_text(f.slide_csv) +
                                          "P900,P900_slide.svs\nP901,P901_slide.svs\nP100,P100_extra.svs\n");
    features::write_feature_file(f.feats / "P900_slide.h5", testutil::random_features(3, 8, 1));
    features::write_feature_file(f.feats / "P901_slide.h5", testutil::random_features(3, 8, 2));

    const auto clini = load_clini_table(f.clini_csv, "isMSIH", std::vector<std::string>{"MSIH", "nonMSIH"});
    const auto c = build_cohort(load_slide_table(f.slide_csv), clini, f.feats, {"SEX"}, {"AGE"});
    REQUIRE(c.patients.size() == 8);
    CHECK(!c.find("P900"));
    CHECK(!c.find("P901"));
    const auto* p = c.find("P100");
    REQUIRE(p);
    CHECK(p->feature_files.size() == 1);
    CHECK(p->label == 0);
    CHECK(c.find("P107")->label == 1);
    CHECK(p->cat_values == std::vector<std::string>{"f"});
    CHECK(p->cont_values[0] == 40.0);

    std::vector<std::size_t> all(c.patients.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto schema = fit_tabular(c, all);
    CHECK(schema.dim() == 3);
    CHECK(TabularSchema::from_json(schema.to_json()) == schema);
    const auto v = encode_tabular(schema, c, *p);
    CHECK(v.size() == 3);
    CHECK(v[0] + v[1] == 1.0f);
    CHECK(v[2] < 0.0f);

    const auto e = error_of([&] { build_cohort(load_slide_table(f.slide_csv), clini, f.feats, {"sex"}); });
    CHECK(e.code() == ErrorCode::KeyError);
    CHECK(std::string(e.what()) == "Key error: ['sex']");
}

TEST_CASE("no features found and empty cohort")
{
    Fixture f(3, 3);
    const auto slides = load_slide_table(f.slide_csv);
    const auto clini = load_clini_table(f.clini_csv, "isMSIH");
    fs::create_directories(f.dir / "empty");
    const auto e = error_of([&] { build_cohort(slides, clini, f.dir / "empty"); });
    CHECK(e.code() == ErrorCode::NoFeaturesFound);
    CHECK(std::string(e.what()) == "No features found in feature_dir");
    CHECK(e.remediation().rfind("Manually check the feature directory", 0) == 0);

    const auto other = load_clini_table(f.clini_csv, "isMSIH", std::vector<std::string>{"MSI-H", "MSS"});
    CHECK(error_of([&] { build_cohort(slides, other, f.feats); }).code() == ErrorCode::EmptyCohort);
}

TEST_CASE("stratified folds: forced stratification and error goldens")
{
    std::vector<int> labels{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto folds = stratified_folds(labels, 2, 5, seed);
        REQUIRE(folds.size() == 5);
        for (const auto& f : folds) {
            REQUIRE(f.size() == 2);
            CHECK(labels[f[0]] + labels[f[1]] == 1);
        }
    }

    const auto single = error_of([] { stratified_folds({0, 0, 0, 0, 0, 1}, 2, 2, 1); });
    CHECK(single.code() == ErrorCode::TooFewClassMembers);
    CHECK(std::string(single.what()).rfind("The least populated class in y has only 1 member", 0) == 0);

    const auto many = error_of([] { stratified_folds({0, 0, 0, 0, 0, 1, 1, 1}, 2, 5, 1); });
    CHECK(many.code() == ErrorCode::TooManySplits);
    CHECK(std::string(many.what()).find("n_splits=5 cannot be greater than the number of members in each class") !=
          std::string::npos);
    CHECK(many.remediation() == "Reduce the number of splits through the n_splits argument.");
}

TEST_CASE("randomized split properties")
{
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n_classes = 2 + static_cast<int>(rng.below(3));
        const int n_splits = 2 + static_cast<int>(rng.below(4));
        std::vector<int> labels;
        for (int c = 0; c < n_classes; ++c) {
            const int size = n_splits + static_cast<int>(rng.below(30));
            for (int i = 0; i < size; ++i) labels.push_back(c);
        }
        const auto folds = stratified_folds(labels, n_classes, n_splits, rng.next_u64());
        std::vector<int> seen(labels.size(), 0);
        for (const auto& f : folds) {
            std::vector<int> count(n_classes, 0);
            for (auto i : f) {
                ++seen[i];
                ++count[labels[i]];
            }
            for (int c = 0; c < n_classes; ++c) {
                const double total = static_cast<double>(std::count(labels.begin(), labels.end(), c));
                CHECK(std::abs(count[c] - total / n_splits) <= 1.0);
            }
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
    }
}

TEST_CASE("train/validation split is 80/20 and stratified")
{
    std::vector<int> labels;
    for (int i = 0; i < 50; ++i) labels.push_back(i % 2);
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < 40; ++i) members.push_back(i);
    const auto [train, val] = train_val_split(members, labels, 2, 4);
    CHECK(train.size() == 32);
    CHECK(val.size() == 8);
    CHECK(std::count_if(val.begin(), val.end(), [&](std::size_t i) { return labels[i] == 1; }) == 4);
    std::set<std::size_t> all(train.begin(), train.end());
    all.insert(val.begin(), val.end());
    CHECK(all.size() == 40);
}

TEST_CASE("folds.json persistence, reuse and stale detection")
{
    Fixture f(5, 5);
    const auto c = f.cohort();
    const auto out = f.dir / "out";
    const auto plan = make_splits(c, 5, 7, out);
    const auto bytes = testutil::read_text(out / "folds.json");
    CHECK(make_splits(c, 5, 7, out) == plan);
    fs::remove(out / "folds.json");
    make_splits(c, 5, 7, out);
    CHECK(testutil::read_text(out / "folds.json") == bytes);
    CHECK(SplitPlan::from_json(bytes) == plan);

    CHECK(error_of([&] { make_splits(c, 4, 7, out); }).code() == ErrorCode::StaleFolds);

    // A previous run over a different cohort left its folds behind.
    Fixture g(5, 6);
    const auto bigger = g.cohort();
    make_splits(bigger, 5, 7, f.dir / "other");
    const auto e = error_of([&] { make_splits(c, 5, 7, f.dir / "other"); });
    CHECK(e.code() == ErrorCode::StaleFolds);
    CHECK(std::string(e.what()) == "Key error: '[P110] not in index'");
    CHECK(e.remediation().rfind("Remove the output of previous runs", 0) == 0);

    testutil::write_text(f.dir / "broken/folds.json", "{");
    CHECK(error_of([&] { make_splits(c, 5, 7, f.dir / "broken"); }).code() == ErrorCode::StaleFolds);
}
