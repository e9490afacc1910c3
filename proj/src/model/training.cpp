#include "stamp/model/training.hpp"

#include "stamp/cohort/csv.hpp"
#include "stamp/error.hpp"
#include "stamp/features/store.hpp"
#include "stamp/rng.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stamp::model {

Bag load_bag(const cohort::Patient& patient, const std::vector<float>& tabular, const std::string& extractor_id,
             int feature_dim)
{
    Bag bag;
    bag.patient = patient.id;
    bag.label = patient.label;
    int d = feature_dim;
    std::vector<features::FeatureMatrix> parts;
    for (const auto& file : patient.feature_files) {
        auto fm = features::read_feature_file(file);
        if (!extractor_id.empty() && fm.extractor_id != extractor_id) {
            throw Error(ErrorCode::ExtractorMismatch,
                        fmt::format("feature file was made by extractor '{}' but '{}' is required", fm.extractor_id,
                                    extractor_id),
                        file.string());
        }
        if (d == 0) d = fm.d;
        if (fm.d != d) {
            throw Error(ErrorCode::ExtractorMismatch,
                        fmt::format("feature file has {} columns but {} are required", fm.d, d), file.string());
        }
        bag.n += fm.n;
        parts.push_back(std::move(fm));
    }
    const int t = static_cast<int>(tabular.size());
    bag.d = d + t;
    bag.feats.reserve(static_cast<std::size_t>(bag.n) * bag.d);
    for (const auto& fm : parts) {
        for (int i = 0; i < fm.n; ++i) {
            bag.feats.insert(bag.feats.end(), fm.row(i), fm.row(i) + fm.d);
            bag.feats.insert(bag.feats.end(), tabular.begin(), tabular.end());
        }
    }
    return bag;
}

std::pair<std::string, int> cohort_extractor(const cohort::Cohort& cohort)
{
    std::string id;
    int d = 0;
    for (const auto& p : cohort.patients) {
        for (const auto& file : p.feature_files) {
            const auto h = features::read_feature_header(file);
            if (id.empty()) {
                id = h.extractor_id;
                d = h.d;
            } else if (h.extractor_id != id || h.d != d) {
                throw Error(ErrorCode::ExtractorMismatch,
                            fmt::format("feature files mix extractors '{}' ({} dims) and '{}' ({} dims)", id, d,
                                        h.extractor_id, h.d),
                            file.string());
            }
        }
    }
    return {id, d};
}

std::vector<double> class_weights(const std::vector<int>& labels, int n_classes)
{
    std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
    for (int l : labels)
        if (l >= 0 && l < n_classes) counts[l] += 1.0;
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    std::vector<double> w(counts.size(), 0.0);
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] > 0) w[c] = total / (n_classes * counts[c]);
    return w;
}

namespace {

std::vector<float> subsample(const Bag& bag, int max_tiles, Rng& rng, int& n_out)
{
    if (bag.n <= max_tiles) {
        n_out = bag.n;
        return bag.feats;
    }
    std::vector<int> idx(static_cast<std::size_t>(bag.n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < max_tiles; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(bag.n - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(max_tiles));
    std::sort(idx.begin(), idx.end());
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(max_tiles) * bag.d);
    for (int i : idx) {
        const float* r = bag.feats.data() + static_cast<std::size_t>(i) * bag.d;
        out.insert(out.end(), r, r + bag.d);
    }
    n_out = max_tiles;
    return out;
}

double cross_entropy(const std::vector<float>& logits, int label, std::vector<double>* probs)
{
    std::vector<double> z(logits.begin(), logits.end());
    auto p = softmax(z);
    const double loss = -std::log(std::max(p[label], 1e-300));
    if (probs) *probs = std::move(p);
    return loss;
}

double weighted_loss(const Transformer<float>& model, const std::vector<Bag>& bags, const std::vector<double>& w)
{
    double num = 0.0, den = 0.0;
    for (const auto& b : bags) {
        const auto logits = model.forward(b.feats.data(), b.n, nullptr, nullptr);
        const double wl = w[b.label] > 0 ? w[b.label] : 1.0;
        num += wl * cross_entropy(logits, b.label, nullptr);
        den += wl;
    }
    return den > 0 ? num / den : 0.0;
}

} // namespace

TrainResult train_model(const std::vector<Bag>& train, const std::vector<Bag>& val, const ModelConfig& mcfg,
                        const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch)
{
    if (train.empty()) throw Error(ErrorCode::EmptyBatch, "This DataLoader does not contain any batches");
    if (cfg.batch_size < 1 || cfg.max_bag_size < 1)
        throw Error(ErrorCode::InvalidValue, "batch_size and max_bag_size must be >= 1");
    for (const auto* set : {&train, &val}) {
        for (const auto& b : *set) {
            if (b.d != mcfg.dim_input)
                throw Error(ErrorCode::DimMismatch,
                            fmt::format("bag has {} feature columns, model expects {}", b.d, mcfg.dim_input),
                            b.patient);
            if (b.n < 1) throw Error(ErrorCode::EmptyBatch, "bag without tiles", b.patient);
            if (b.label < 0 || b.label >= mcfg.n_classes)
                throw Error(ErrorCode::InvalidValue, "bag without a valid label", b.patient);
        }
    }

    Transformer<float> model(mcfg);
    Rng init_rng(mix_seed(cfg.seed, 0x1417));
    model.init(init_rng);
    Rng rng(mix_seed(cfg.seed, 0x7EA1));

    std::vector<int> labels;
    for (const auto& b : train) labels.push_back(b.label);
    const auto w = class_weights(labels, mcfg.n_classes);

    const std::size_t np = model.n_params();
    std::vector<float> grad(np), m(np, 0.0f), v(np, 0.0f);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    long step = 0;
    const int batch = std::min<int>(cfg.batch_size, static_cast<int>(train.size()));

    TrainResult result;
    result.weights.assign(model.params().begin(), model.params().end());
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    Workspace<float> ws;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_num = 0.0, epoch_den = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
            double wsum = 0.0;
            for (std::size_t i = start; i < end; ++i) wsum += w[train[order[i]].label];
            if (wsum <= 0) continue;
            std::fill(grad.begin(), grad.end(), 0.0f);
            for (std::size_t i = start; i < end; ++i) {
                const Bag& bag = train[order[i]];
                int n = 0;
                const auto x = subsample(bag, cfg.max_bag_size, rng, n);
                const auto logits = model.forward(x.data(), n, &ws, &rng);
                std::vector<double> p;
                const double ce = cross_entropy(logits, bag.label, &p);
                const double wl = w[bag.label];
                epoch_num += wl * ce;
                epoch_den += wl;
                std::vector<float> dlogits(p.size());
                for (std::size_t c = 0; c < p.size(); ++c)
                    dlogits[c] = static_cast<float>(wl * (p[c] - (static_cast<int>(c) == bag.label ? 1.0 : 0.0)) / wsum);
                model.backward(ws, dlogits.data(), grad.data());
            }
            ++step;
            const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
            auto params = model.params();
            const float decay = static_cast<float>(1.0 - cfg.lr * cfg.weight_decay);
            for (std::size_t j = 0; j < np; ++j) {
                const float g = grad[j];
                m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * g);
                v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * g * g);
                const double mhat = m[j] / bc1, vhat = v[j] / bc2;
                params[j] = static_cast<float>(params[j] * decay - cfg.lr * mhat / (std::sqrt(vhat) + eps));
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_den > 0 ? epoch_num / epoch_den : 0.0;
        if (!val.empty()) {
            log.val_loss = weighted_loss(model, val, w);
            if (log.val_loss < best) {
                best = log.val_loss;
                since_best = 0;
                result.best_epoch = epoch;
                result.weights.assign(model.params().begin(), model.params().end());
            } else {
                ++since_best;
            }
        } else {
            result.best_epoch = epoch;
            result.weights.assign(model.params().begin(), model.params().end());
        }
        result.history.push_back(log);
        if (on_epoch) on_epoch(log);
        if (!val.empty() && since_best >= cfg.patience) break;
    }
    return result;
}

Prediction predict(const Transformer<float>& model, const Bag& bag)
{
    if (bag.d != model.config().dim_input)
        throw Error(ErrorCode::DimMismatch,
                    fmt::format("bag has {} feature columns, model expects {}", bag.d, model.config().dim_input),
                    bag.patient);
    const auto logits = model.forward(bag.feats.data(), bag.n);
    Prediction p;
    p.patient = bag.patient;
    p.label = bag.label;
    const std::vector<double> z(logits.begin(), logits.end());
    p.scores = softmax(z);
    p.pred = argmax(p.scores);
    if (p.label >= 0) p.loss = -std::log(std::max(p.scores[p.label], 1e-300));
    return p;
}

std::string predictions_csv(const std::vector<Prediction>& preds, const std::string& target_label,
                            const std::vector<std::string>& categories)
{
    std::vector<const Prediction*> rows;
    for (const auto& p : preds) rows.push_back(&p);
    std::stable_sort(rows.begin(), rows.end(), [](const Prediction* a, const Prediction* b) {
        const bool ta = a->label >= 0, tb = b->label >= 0;
        if (ta != tb) return ta;
        if (ta && a->loss != b->loss) return a->loss < b->loss;
        return a->patient < b->patient;
    });
    std::vector<std::string> header{"PATIENT", target_label, "pred"};
    for (const auto& c : categories) header.push_back(target_label + "_" + c);
    header.push_back("loss");
    std::string out = cohort::csv_line(header);
    for (const auto* p : rows) {
        std::vector<std::string> f{p->patient, p->label >= 0 ? categories[p->label] : "", categories[p->pred]};
        for (double s : p->scores) f.push_back(fmt::format("{}", s));
        f.push_back(p->label >= 0 ? fmt::format("{}", p->loss) : "");
        out += cohort::csv_line(f);
    }
    return out;
}

GradcheckResult gradcheck(const ModelConfig& cfg_in, int n_tiles, int label, std::uint64_t seed, double h,
                          double floor)
{
    ModelConfig cfg = cfg_in;
    cfg.dropout = 0.0;
    Transformer<double> model(cfg);
    Rng rng(seed);
    model.init(rng);
    std::vector<double> x(static_cast<std::size_t>(n_tiles) * cfg.dim_input);
    for (auto& v : x) v = rng.normal();

    Workspace<double> ws;
    const auto logits = model.forward(x.data(), n_tiles, &ws);
    auto p = softmax(logits);
    p[label] -= 1.0;
    std::vector<double> grad(model.n_params(), 0.0);
    model.backward(ws, p.data(), grad.data());

    // The finite-difference oracle runs in extended precision so its
    // rounding noise stays far below the tolerance.
    Transformer<long double> oracle(cfg);
    auto op = oracle.params();
    std::copy(model.params().begin(), model.params().end(), op.begin());
    const std::vector<long double> xl(x.begin(), x.end());
    auto loss_of = [&] {
        const auto z = oracle.forward(xl.data(), n_tiles);
        const long double mx = *std::max_element(z.begin(), z.end());
        long double s = 0;
        for (auto v : z) s += std::exp(v - mx);
        return mx + std::log(s) - z[static_cast<std::size_t>(label)];
    };

    GradcheckResult r;
    r.n_params = model.n_params();
    for (std::size_t j = 0; j < op.size(); ++j) {
        const long double keep = op[j];
        op[j] = keep + h;
        const long double lp = loss_of();
        op[j] = keep - h;
        const long double lm = loss_of();
        op[j] = keep;
        const double num = static_cast<double>((lp - lm) / (2 * static_cast<long double>(h)));
        const double abs_err = std::abs(num - grad[j]);
        r.max_abs_error = std::max(r.max_abs_error, abs_err);
        r.max_rel_error = std::max(r.max_rel_error, abs_err / std::max({std::abs(num), std::abs(grad[j]), floor}));
    }
    return r;
}

} // namespace stamp::model
