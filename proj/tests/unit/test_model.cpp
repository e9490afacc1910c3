#include "helpers.hpp"

#include "stamp/error.hpp"
#include "stamp/model/bundle.hpp"
#include "stamp/model/training.hpp"
#include "stamp/model/transformer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace stamp;
using namespace stamp::model;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(int din, int layers)
{
    ModelConfig c;
    c.dim_input = din;
    c.dim_model = 8;
    c.n_layers = layers;
    c.n_heads = 2;
    c.mlp_ratio = 2;
    c.dropout = 0.0;
    c.n_classes = 2;
    return c;
}

std::vector<float> random_bag(int n, int d, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<float> x(static_cast<std::size_t>(n) * d);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    return x;
}

} // namespace

TEST_CASE("softmax and argmax")
{
    const std::vector<double> z{1000.0, 1001.0, 999.0};
    const auto p = softmax(z);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p[1] > p[0]);
    CHECK(argmax(p) == 1);
    CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
}

TEST_CASE("logits are invariant to tile order and probabilities sum to one")
{
    ModelConfig cfg;
    cfg.dim_input = 48;
    cfg.dim_model = 64;
    cfg.n_layers = 2;
    cfg.n_heads = 8;
    cfg.dropout = 0.1;
    cfg.n_classes = 3;
    Transformer<float> m(cfg);
    Rng rng(3);
    m.init(rng);
    const int n = 57;
    const auto x = random_bag(n, 48, 11);
    const auto base = m.forward(x.data(), n);
    REQUIRE(base.size() == 3);

    Rng perm_rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[perm_rng.below(i + 1)]);
        std::vector<float> xp(x.size());
        for (int i = 0; i < n; ++i) std::copy_n(x.begin() + perm[i] * 48, 48, xp.begin() + i * 48);
        const auto z = m.forward(xp.data(), n);
        for (int c = 0; c < 3; ++c) CHECK(std::abs(z[c] - base[c]) <= 1e-5f);
        const std::vector<double> zd(z.begin(), z.end());
        const auto p = softmax(zd);
        CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-6);
    }
    // Single-tile bag works too.
    CHECK(m.forward(x.data(), 1).size() == 3);
}

TEST_CASE("analytic gradients match finite differences")
{
    for (int layers : {1, 2}) {
        CAPTURE(layers);
        const auto cfg = small_config(6, layers);
        const auto r = gradcheck(cfg, 5, 1, 42 + layers);
        CAPTURE(r.max_rel_error);
        CAPTURE(r.n_params);
        CHECK(r.n_params <= 2000);
        CHECK(r.max_rel_error < 1e-6);
    }
    // Multi-class head.
    auto cfg = small_config(4, 1);
    cfg.n_classes = 3;
    CHECK(gradcheck(cfg, 3, 2, 9).max_rel_error < 1e-6);
}

TEST_CASE("input gradients match finite differences")
{
    const auto cfg = small_config(5, 2);
    Transformer<double> m(cfg);
    Rng rng(8);
    m.init(rng);
    const int n = 4;
    std::vector<double> x(n * 5);
    for (auto& v : x) v = rng.normal();
    Workspace<double> ws;
    m.forward(x.data(), n, &ws);
    const std::vector<double> dz{1.0, -0.5};
    std::vector<double> grad(m.n_params()), dx(x.size());
    m.backward(ws, dz.data(), grad.data(), dx.data());
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const auto zp = m.forward(xp.data(), n), zm = m.forward(xm.data(), n);
        const double num = ((zp[0] - zm[0]) * dz[0] + (zp[1] - zm[1]) * dz[1]) / (2 * h);
        CHECK(std::abs(num - dx[i]) <= 1e-6 * std::max(1.0, std::abs(num)));
    }
}

TEST_CASE("class weights")
{
    const auto w = class_weights({0, 0, 0, 1}, 3);
    CHECK(w[0] == doctest::Approx(4.0 / 9.0));
    CHECK(w[1] == doctest::Approx(4.0 / 3.0));
    CHECK(w[2] == 0.0);
}

TEST_CASE("eight-patient overfit reaches training accuracy 1")
{
    std::vector<Bag> train;
    for (int i = 0; i < 8; ++i) {
        Bag b;
        b.patient = "P" + std::to_string(i);
        b.label = i % 2;
        b.n = 20 + i;
        b.d = 16;
        b.feats = random_bag(b.n, 16, 100 + i);
        // Positives carry a shift on a few tiles only.
        if (b.label == 1)
            for (int t = 0; t < 5; ++t)
                for (int k = 0; k < 4; ++k) b.feats[t * 16 + k] += 1.5f;
        train.push_back(std::move(b));
    }
    ModelConfig mc;
    mc.dim_input = 16;
    mc.dim_model = 32;
    mc.n_layers = 2;
    mc.n_heads = 4;
    mc.dropout = 0.0;
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_epochs = 150;
    tc.lr = 1e-3;
    tc.seed = 1;
    const auto r = train_model(train, {}, mc, tc);
    CHECK(r.history.size() == 150);
    Transformer<float> m(mc);
    std::copy(r.weights.begin(), r.weights.end(), m.params().begin());
    int correct = 0;
    for (const auto& b : train) correct += predict(m, b).pred == b.label;
    CHECK(correct == 8);
    CHECK(r.history.back().train_loss < r.history.front().train_loss);

    // Same seed, same weights.
    tc.max_epochs = 5;
    CHECK(train_model(train, {}, mc, tc).weights == train_model(train, {}, mc, tc).weights);
}

TEST_CASE("early stopping returns the best epoch")
{
    std::vector<Bag> train, val;
    for (int i = 0; i < 12; ++i) {
        Bag b;
        b.patient = "P" + std::to_string(i);
        b.label = i % 2;
        b.n = 10;
        b.d = 8;
        b.feats = random_bag(10, 8, 500 + i);   // no signal: validation loss rises
        (i < 8 ? train : val).push_back(std::move(b));
    }
    auto mc = small_config(8, 1);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_epochs = 60;
    tc.patience = 3;
    tc.lr = 1e-2;
    const auto r = train_model(train, val, mc, tc);
    CHECK(r.history.size() < 60);
    CHECK(static_cast<int>(r.history.size()) == r.best_epoch + 1 + tc.patience);
    double best = 1e300;
    for (const auto& e : r.history) best = std::min(best, e.val_loss);
    CHECK(r.history[r.best_epoch].val_loss == best);
}

TEST_CASE("768-dim bags from precomputed feature files")
{
    testutil::TempDir dir("bag768");
    features::write_feature_file(dir / "s1.h5", testutil::random_features(30, 768, 1, 0.0, features::kCtransPathId));
    features::write_feature_file(dir / "s2.h5", testutil::random_features(12, 768, 2, 0.0, features::kCtransPathId));
    cohort::Patient p;
    p.id = "A";
    p.label = 1;
    p.feature_files = {dir / "s1.h5", dir / "s2.h5"};
    const auto bag = load_bag(p, {0.5f, -1.0f}, features::kCtransPathId, 768);
    CHECK(bag.n == 42);
    CHECK(bag.d == 770);
    CHECK(bag.feats[769] == -1.0f);
    CHECK(bag.feats[768 + 770 * 41] == 0.5f);

    ModelConfig mc;
    mc.dim_input = 770;
    mc.dim_model = 64;
    mc.n_heads = 8;
    Transformer<float> m(mc);
    Rng rng(1);
    m.init(rng);
    const auto pr = predict(m, bag);
    CHECK(pr.scores.size() == 2);
    CHECK(std::abs(pr.scores[0] + pr.scores[1] - 1.0) <= 1e-6);

    try {
        load_bag(p, {}, features::kToyExtractorId, 48);
        FAIL("no error thrown");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ExtractorMismatch);
    }
}

TEST_CASE("bundle round trip and corruption")
{
    testutil::TempDir dir("bundle");
    ModelBundle b;
    b.model = small_config(10, 2);
    b.train.seed = 17;
    b.categories = {"MSI-H", "MSS"};
    b.target_label = "isMSIH";
    b.extractor_id = features::kToyExtractorId;
    b.feature_dim = 8;
    b.cat_labels = {"SEX"};
    b.tabular.categorical.push_back({"SEX", {"f", "m"}});
    b.fingerprint = {{"n_patients", 8}};
    Transformer<float> m(b.model);
    Rng rng(2);
    m.init(rng);
    b.weights.assign(m.params().begin(), m.params().end());
    write_bundle(dir / kBundleName, b);
    CHECK(read_bundle(dir / kBundleName) == b);

    const auto bytes = testutil::read_text(dir / kBundleName);
    CHECK(bytes.rfind("STAMPBDL", 0) == 0);
    const auto expect_malformed = [&](const std::string& content) {
        testutil::write_text(dir / "bad.stamp", content);
        try {
            read_bundle(dir / "bad.stamp");
            FAIL("no error thrown");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::MalformedBundle);
        }
    };
    expect_malformed(bytes.substr(0, bytes.size() - 3));
    expect_malformed("XXXXXXXX" + bytes.substr(8));
    expect_malformed(bytes + "tail");
}

TEST_CASE("patient predictions csv ordering")
{
    std::vector<Prediction> preds{
        {"B", 0, {0.4, 0.6}, 1, std::log(1 / 0.4)},
        {"A", 1, {0.1, 0.9}, 1, std::log(1 / 0.9)},
        {"C", -1, {0.7, 0.3}, 0, 0.0},
    };
    const auto csv = predictions_csv(preds, "isMSIH", {"MSS", "MSI-H"});
    const auto first = csv.substr(0, csv.find('\n'));
    CHECK(first.find("PATIENT") == 0);
    CHECK(first.find("isMSIH_MSI-H") != std::string::npos);
    const auto a = csv.find("\nA,"), b = csv.find("\nB,"), c = csv.find("\nC,");
    CHECK(a < b);
    CHECK(b < c);
}
