#include "stamp/model/transformer.hpp"

#include "stamp/error.hpp"
#include "stamp/kernels/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

namespace stamp::model {
namespace {

constexpr int kAttentionChunk = 128;
constexpr double kLnEps = 1e-5;

// Accumulator type: double, or long double for the long double model.
template <typename T>
using Acc = std::conditional_t<std::is_same_v<T, long double>, long double, double>;

// C (m x n, ldc) = alpha * op(A) * op(B) + beta * C.
void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc)
{
    if (m == 0 || n == 0) return;
    if (k == 0) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) c[static_cast<std::size_t>(i) * ldc + j] *= beta;
        return;
    }
    kernels::active().sgemm(m, n, k, alpha, a, ta ? 1 : lda, ta ? lda : 1, b, tb ? 1 : ldb, tb ? ldb : 1, beta, c,
                            ldc);
}

template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta, T* c,
          int ldc)
{
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int p = 0; p < k; ++p) {
                const T av = ta ? a[static_cast<std::size_t>(p) * lda + i] : a[static_cast<std::size_t>(i) * lda + p];
                const T bv = tb ? b[static_cast<std::size_t>(j) * ldb + p] : b[static_cast<std::size_t>(p) * ldb + j];
                acc += av * bv;
            }
            T& out = c[static_cast<std::size_t>(i) * ldc + j];
            out = beta == 0 ? alpha * acc : alpha * acc + beta * out;
        }
    }
}

template <typename T>
void add_bias(T* c, const T* bias, int rows, int cols)
{
    for (int i = 0; i < rows; ++i) {
        T* r = c + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) r[j] += bias[j];
    }
}

template <typename T>
void col_sum(const T* c, int rows, int cols, T* out)
{
    for (int i = 0; i < rows; ++i) {
        const T* r = c + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) out[j] += r[j];
    }
}

template <typename T>
void layer_norm(const T* x, int rows, int d, const T* g, const T* b, T* out, T* xhat, T* rstd)
{
    for (int i = 0; i < rows; ++i) {
        const T* xr = x + static_cast<std::size_t>(i) * d;
        Acc<T> mean = 0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        Acc<T> var = 0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= d;
        const T rs = static_cast<T>(Acc<T>(1) / std::sqrt(var + static_cast<Acc<T>>(kLnEps)));
        rstd[i] = rs;
        T* xh = xhat + static_cast<std::size_t>(i) * d;
        T* o = out + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            xh[j] = static_cast<T>(xr[j] - mean) * rs;
            o[j] = xh[j] * g[j] + b[j];
        }
    }
}

// Adds the input gradient of a layer norm to dx.
template <typename T>
void layer_norm_backward(const T* dout, const T* xhat, const T* rstd, const T* g, int rows, int d, T* dg, T* db,
                         T* dx)
{
    std::vector<T> dxh(static_cast<std::size_t>(d));
    for (int i = 0; i < rows; ++i) {
        const T* dor = dout + static_cast<std::size_t>(i) * d;
        const T* xh = xhat + static_cast<std::size_t>(i) * d;
        Acc<T> m1 = 0, m2 = 0;
        for (int j = 0; j < d; ++j) {
            dg[j] += dor[j] * xh[j];
            db[j] += dor[j];
            dxh[j] = dor[j] * g[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
        }
        m1 /= d;
        m2 /= d;
        T* dxr = dx + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) dxr[j] += rstd[i] * static_cast<T>(dxh[j] - m1 - xh[j] * m2);
    }
}

template <typename T>
T gelu(T u)
{
    const Acc<T> x = u;
    return static_cast<T>(Acc<T>(0.5) * x * (1 + std::erf(x * Acc<T>(0.70710678118654752440L))));
}

template <typename T>
T gelu_grad(T u)
{
    const Acc<T> x = u;
    const Acc<T> cdf = Acc<T>(0.5) * (1 + std::erf(x * Acc<T>(0.70710678118654752440L)));
    const Acc<T> pdf = Acc<T>(0.39894228040143267794L) * std::exp(Acc<T>(-0.5) * x * x);
    return static_cast<T>(cdf + x * pdf);
}

template <typename T>
void softmax_rows(T* s, int rows, int cols)
{
    for (int i = 0; i < rows; ++i) {
        T* r = s + static_cast<std::size_t>(i) * cols;
        T mx = r[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
        Acc<T> sum = 0;
        for (int j = 0; j < cols; ++j) {
            r[j] = static_cast<T>(std::exp(static_cast<Acc<T>>(r[j] - mx)));
            sum += r[j];
        }
        const T inv = static_cast<T>(1 / sum);
        for (int j = 0; j < cols; ++j) r[j] *= inv;
    }
}

// Row-chunk `c` of the attention probabilities of head `h`.
template <typename T>
void attention_probs(const T* q, const T* k, int rows, int d, int dh, int h, int r0, int r1, T scale, T* p)
{
    gemm(false, true, r1 - r0, rows, dh, scale, q + static_cast<std::size_t>(r0) * d + h * dh, d, k + h * dh, d,
         T(0), p, rows);
    softmax_rows(p, r1 - r0, rows);
}

template <typename T>
void dropout_mask(std::vector<T>& mask, std::size_t size, double p, Rng* rng)
{
    if (rng == nullptr || p <= 0.0) {
        mask.clear();
        return;
    }
    mask.resize(size);
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    for (auto& m : mask) m = rng->uniform() < p ? T(0) : keep;
}

} // namespace

template <typename T>
std::size_t Transformer<T>::Tensor::size() const
{
    std::size_t s = 1;
    for (int d : shape) s *= static_cast<std::size_t>(d);
    return s;
}

template <typename T>
std::size_t Transformer<T>::add(const std::string& name, std::vector<int> shape)
{
    Tensor t{name, params_.size(), std::move(shape)};
    params_.resize(params_.size() + t.size());
    tensors_.push_back(t);
    return t.offset;
}

template <typename T>
Transformer<T>::Transformer(const ModelConfig& cfg) : cfg_(cfg)
{
    if (cfg.dim_input <= 0 || cfg.dim_model <= 0 || cfg.n_heads <= 0 || cfg.dim_model % cfg.n_heads != 0 ||
        cfg.n_classes < 2 || cfg.n_layers < 0 || cfg.mlp_ratio <= 0) {
        throw Error(ErrorCode::InvalidValue, "invalid model configuration");
    }
    const int d = cfg.dim_model, h = cfg.dim_model * cfg.mlp_ratio;
    w_in_ = add("proj.weight", {d, cfg.dim_input});
    b_in_ = add("proj.bias", {d});
    cls_ = add("cls_token", {d});
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        LayerOffsets o{};
        o.ln1_g = add(p + "ln1.weight", {d});
        o.ln1_b = add(p + "ln1.bias", {d});
        o.wq = add(p + "attn.q.weight", {d, d});
        o.bq = add(p + "attn.q.bias", {d});
        o.wk = add(p + "attn.k.weight", {d, d});
        o.bk = add(p + "attn.k.bias", {d});
        o.wv = add(p + "attn.v.weight", {d, d});
        o.bv = add(p + "attn.v.bias", {d});
        o.wo = add(p + "attn.out.weight", {d, d});
        o.bo = add(p + "attn.out.bias", {d});
        o.ln2_g = add(p + "ln2.weight", {d});
        o.ln2_b = add(p + "ln2.bias", {d});
        o.w1 = add(p + "mlp.fc1.weight", {h, d});
        o.b1 = add(p + "mlp.fc1.bias", {h});
        o.w2 = add(p + "mlp.fc2.weight", {d, h});
        o.b2 = add(p + "mlp.fc2.bias", {d});
        layers_.push_back(o);
    }
    lnf_g_ = add("norm.weight", {d});
    lnf_b_ = add("norm.bias", {d});
    w_head_ = add("head.weight", {cfg.n_classes, d});
    b_head_ = add("head.bias", {cfg.n_classes});
}

template <typename T>
const typename Transformer<T>::Tensor& Transformer<T>::tensor(const std::string& name) const
{
    for (const auto& t : tensors_)
        if (t.name == name) return t;
    throw Error(ErrorCode::MalformedBundle, "no tensor named " + name);
}

template <typename T>
void Transformer<T>::init(Rng& rng, bool zero_head)
{
    auto uniform = [&](std::size_t off, std::size_t n, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < n; ++i) params_[off + i] = static_cast<T>(rng.uniform(-bound, bound));
    };
    for (const auto& t : tensors_) {
        const std::string& n = t.name;
        const bool is_ln = n.find("ln") != std::string::npos || n.rfind("norm.", 0) == 0;
        if (is_ln) {
            const bool weight = n.size() >= 6 && n.compare(n.size() - 6, 6, "weight") == 0;
            std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), weight ? T(1) : T(0));
        } else if (n == "cls_token") {
            for (std::size_t i = 0; i < t.size(); ++i) params_[t.offset + i] = static_cast<T>(rng.normal());
        } else if (zero_head && n.rfind("head.", 0) == 0) {
            std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), T(0));
        } else {
            // Weights [out, in] and biases [out] share the layer's fan-in.
            const std::string weight_name = n.substr(0, n.rfind('.')) + ".weight";
            const int fan_in = tensor(weight_name).shape.back();
            uniform(t.offset, t.size(), fan_in);
        }
    }
}

template <typename T>
std::vector<T> Transformer<T>::forward(const T* x, int n, Workspace<T>* ws, Rng* dropout_rng) const
{
    if (n < 1) throw Error(ErrorCode::EmptyBatch, "a bag needs at least one tile");
    const int d = cfg_.dim_model, h = d * cfg_.mlp_ratio, din = cfg_.dim_input, rows = n + 1;
    const int heads = cfg_.n_heads, dh = d / heads;
    const std::size_t rd = static_cast<std::size_t>(rows) * d, rh = static_cast<std::size_t>(rows) * h;
    const T* p = params_.data();

    typename Workspace<T>::Layer scratch;
    if (ws) {
        ws->n = n;
        ws->din = din;
        ws->x.assign(x, x + static_cast<std::size_t>(n) * din);
        ws->layers.resize(layers_.size());
    }

    std::vector<T> z(rd);
    std::copy_n(p + cls_, d, z.data());
    gemm(false, true, n, d, din, T(1), x, din, p + w_in_, din, T(0), z.data() + d, d);
    add_bias(z.data() + d, p + b_in_, n, d);

    std::vector<T> tmp(rd), probs;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerOffsets& o = layers_[l];
        auto& L = ws ? ws->layers[l] : scratch;
        // Only the class token row feeds the head, so the last block computes
        // its queries and feed-forward for that row alone.
        const int qr = l + 1 == layers_.size() ? 1 : rows;
        const std::size_t qd = static_cast<std::size_t>(qr) * d, qh = static_cast<std::size_t>(qr) * h;
        L.ln1_xhat.resize(rd);
        L.ln1_rstd.resize(rows);
        L.a.resize(rd);
        L.q.resize(qd);
        L.k.resize(rd);
        L.v.resize(rd);
        L.o.resize(qd);
        layer_norm(z.data(), rows, d, p + o.ln1_g, p + o.ln1_b, L.a.data(), L.ln1_xhat.data(), L.ln1_rstd.data());
        gemm(false, true, qr, d, d, T(1), L.a.data(), d, p + o.wq, d, T(0), L.q.data(), d);
        add_bias(L.q.data(), p + o.bq, qr, d);
        gemm(false, true, rows, d, d, T(1), L.a.data(), d, p + o.wk, d, T(0), L.k.data(), d);
        add_bias(L.k.data(), p + o.bk, rows, d);
        gemm(false, true, rows, d, d, T(1), L.a.data(), d, p + o.wv, d, T(0), L.v.data(), d);
        add_bias(L.v.data(), p + o.bv, rows, d);

        for (int hd = 0; hd < heads; ++hd) {
            for (int r0 = 0; r0 < qr; r0 += kAttentionChunk) {
                const int r1 = std::min(qr, r0 + kAttentionChunk);
                probs.resize(static_cast<std::size_t>(r1 - r0) * rows);
                attention_probs(L.q.data(), L.k.data(), rows, d, dh, hd, r0, r1, scale, probs.data());
                gemm(false, false, r1 - r0, dh, rows, T(1), probs.data(), rows, L.v.data() + hd * dh, d, T(0),
                     L.o.data() + static_cast<std::size_t>(r0) * d + hd * dh, d);
            }
        }
        gemm(false, true, qr, d, d, T(1), L.o.data(), d, p + o.wo, d, T(0), tmp.data(), d);
        add_bias(tmp.data(), p + o.bo, qr, d);
        dropout_mask(L.drop1, qd, cfg_.dropout, dropout_rng);
        for (std::size_t i = 0; i < qd; ++i) z[i] += L.drop1.empty() ? tmp[i] : tmp[i] * L.drop1[i];

        L.ln2_xhat.resize(qd);
        L.ln2_rstd.resize(qr);
        L.b.resize(qd);
        L.u.resize(qh);
        L.g.resize(qh);
        layer_norm(z.data(), qr, d, p + o.ln2_g, p + o.ln2_b, L.b.data(), L.ln2_xhat.data(), L.ln2_rstd.data());
        gemm(false, true, qr, h, d, T(1), L.b.data(), d, p + o.w1, d, T(0), L.u.data(), h);
        add_bias(L.u.data(), p + o.b1, qr, h);
        for (std::size_t i = 0; i < qh; ++i) L.g[i] = gelu(L.u[i]);
        gemm(false, true, qr, d, h, T(1), L.g.data(), h, p + o.w2, h, T(0), tmp.data(), d);
        add_bias(tmp.data(), p + o.b2, qr, d);
        dropout_mask(L.drop2, qd, cfg_.dropout, dropout_rng);
        for (std::size_t i = 0; i < qd; ++i) z[i] += L.drop2.empty() ? tmp[i] : tmp[i] * L.drop2[i];
    }

    std::vector<T> xhat(d), y(d);
    T rstd;
    layer_norm(z.data(), 1, d, p + lnf_g_, p + lnf_b_, y.data(), xhat.data(), &rstd);
    std::vector<T> logits(static_cast<std::size_t>(cfg_.n_classes));
    for (int c = 0; c < cfg_.n_classes; ++c) {
        Acc<T> acc = p[b_head_ + c];
        const T* w = p + w_head_ + static_cast<std::size_t>(c) * d;
        for (int j = 0; j < d; ++j) acc += static_cast<Acc<T>>(w[j]) * y[j];
        logits[c] = static_cast<T>(acc);
    }
    if (ws) {
        ws->lnf_xhat = std::move(xhat);
        ws->lnf_rstd = rstd;
        ws->y = std::move(y);
    }
    return logits;
}

template <typename T>
void Transformer<T>::backward(const Workspace<T>& ws, const T* dlogits, T* grad, T* dx) const
{
    const int n = ws.n, d = cfg_.dim_model, h = d * cfg_.mlp_ratio, din = cfg_.dim_input, rows = n + 1;
    const int heads = cfg_.n_heads, dh = d / heads;
    const std::size_t rd = static_cast<std::size_t>(rows) * d, rh = static_cast<std::size_t>(rows) * h;
    const T* p = params_.data();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    std::vector<T> dy(d, T(0));
    for (int c = 0; c < cfg_.n_classes; ++c) {
        const T dl = dlogits[c];
        grad[b_head_ + c] += dl;
        T* gw = grad + w_head_ + static_cast<std::size_t>(c) * d;
        const T* w = p + w_head_ + static_cast<std::size_t>(c) * d;
        for (int j = 0; j < d; ++j) {
            gw[j] += dl * ws.y[j];
            dy[j] += w[j] * dl;
        }
    }
    std::vector<T> dz(rd, T(0));
    layer_norm_backward(dy.data(), ws.lnf_xhat.data(), &ws.lnf_rstd, p + lnf_g_, 1, d, grad + lnf_g_, grad + lnf_b_,
                        dz.data());

    std::vector<T> dbr(rd), dgh(rh), dq(rd), dk(rd), dv(rd), dO(rd), probs, dprobs;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const LayerOffsets& o = layers_[li];
        const auto& L = ws.layers[li];
        const int qr = li + 1 == layers_.size() ? 1 : rows;
        const std::size_t qd = static_cast<std::size_t>(qr) * d, qh = static_cast<std::size_t>(qr) * h;

        // Feed-forward branch.
        std::vector<T> df(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(qd));
        if (!L.drop2.empty())
            for (std::size_t i = 0; i < qd; ++i) df[i] *= L.drop2[i];
        col_sum(df.data(), qr, d, grad + o.b2);
        gemm(true, false, d, h, qr, T(1), df.data(), d, L.g.data(), h, T(1), grad + o.w2, h);
        gemm(false, false, qr, h, d, T(1), df.data(), d, p + o.w2, h, T(0), dgh.data(), h);
        for (std::size_t i = 0; i < qh; ++i) dgh[i] *= gelu_grad(L.u[i]);
        col_sum(dgh.data(), qr, h, grad + o.b1);
        gemm(true, false, h, d, qr, T(1), dgh.data(), h, L.b.data(), d, T(1), grad + o.w1, d);
        gemm(false, false, qr, d, h, T(1), dgh.data(), h, p + o.w1, d, T(0), dbr.data(), d);
        layer_norm_backward(dbr.data(), L.ln2_xhat.data(), L.ln2_rstd.data(), p + o.ln2_g, qr, d, grad + o.ln2_g,
                            grad + o.ln2_b, dz.data());

        // Attention branch.
        std::vector<T> dt(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(qd));
        if (!L.drop1.empty())
            for (std::size_t i = 0; i < qd; ++i) dt[i] *= L.drop1[i];
        col_sum(dt.data(), qr, d, grad + o.bo);
        gemm(true, false, d, d, qr, T(1), dt.data(), d, L.o.data(), d, T(1), grad + o.wo, d);
        gemm(false, false, qr, d, d, T(1), dt.data(), d, p + o.wo, d, T(0), dO.data(), d);

        std::fill(dk.begin(), dk.end(), T(0));
        std::fill(dv.begin(), dv.end(), T(0));
        for (int hd = 0; hd < heads; ++hd) {
            for (int r0 = 0; r0 < qr; r0 += kAttentionChunk) {
                const int r1 = std::min(qr, r0 + kAttentionChunk), cr = r1 - r0;
                probs.resize(static_cast<std::size_t>(cr) * rows);
                dprobs.resize(probs.size());
                attention_probs(L.q.data(), L.k.data(), rows, d, dh, hd, r0, r1, scale, probs.data());
                const T* dO_c = dO.data() + static_cast<std::size_t>(r0) * d + hd * dh;
                gemm(false, true, cr, rows, dh, T(1), dO_c, d, L.v.data() + hd * dh, d, T(0), dprobs.data(), rows);
                // dV_h += P^T dO_h
                gemm(true, false, rows, dh, cr, T(1), probs.data(), rows, dO_c, d, T(1), dv.data() + hd * dh, d);
                for (int i = 0; i < cr; ++i) {
                    T* dp = dprobs.data() + static_cast<std::size_t>(i) * rows;
                    const T* pr = probs.data() + static_cast<std::size_t>(i) * rows;
                    Acc<T> dot = 0;
                    for (int j = 0; j < rows; ++j) dot += static_cast<Acc<T>>(dp[j]) * pr[j];
                    for (int j = 0; j < rows; ++j) dp[j] = pr[j] * static_cast<T>(dp[j] - dot) * scale;
                }
                gemm(false, false, cr, dh, rows, T(1), dprobs.data(), rows, L.k.data() + hd * dh, d, T(0),
                     dq.data() + static_cast<std::size_t>(r0) * d + hd * dh, d);
                gemm(true, false, rows, dh, cr, T(1), dprobs.data(), rows,
                     L.q.data() + static_cast<std::size_t>(r0) * d + hd * dh, d, T(1), dk.data() + hd * dh, d);
            }
        }
        col_sum(dq.data(), qr, d, grad + o.bq);
        col_sum(dk.data(), rows, d, grad + o.bk);
        col_sum(dv.data(), rows, d, grad + o.bv);
        gemm(true, false, d, d, qr, T(1), dq.data(), d, L.a.data(), d, T(1), grad + o.wq, d);
        gemm(true, false, d, d, rows, T(1), dk.data(), d, L.a.data(), d, T(1), grad + o.wk, d);
        gemm(true, false, d, d, rows, T(1), dv.data(), d, L.a.data(), d, T(1), grad + o.wv, d);
        gemm(false, false, rows, d, d, T(1), dk.data(), d, p + o.wk, d, T(0), dbr.data(), d);
        gemm(false, false, rows, d, d, T(1), dv.data(), d, p + o.wv, d, T(1), dbr.data(), d);
        gemm(false, false, qr, d, d, T(1), dq.data(), d, p + o.wq, d, T(1), dbr.data(), d);
        layer_norm_backward(dbr.data(), L.ln1_xhat.data(), L.ln1_rstd.data(), p + o.ln1_g, rows, d, grad + o.ln1_g,
                            grad + o.ln1_b, dz.data());
    }

    for (int j = 0; j < d; ++j) grad[cls_ + j] += dz[j];
    const T* dproj = dz.data() + d;
    col_sum(dproj, n, d, grad + b_in_);
    gemm(true, false, d, din, n, T(1), dproj, d, ws.x.data(), din, T(1), grad + w_in_, din);
    if (dx) gemm(false, false, n, din, d, T(1), dproj, d, p + w_in_, din, T(0), dx, din);
}

template class Transformer<float>;
template class Transformer<double>;
template class Transformer<long double>;

std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> out(logits.begin(), logits.end());
    if (out.empty()) return out;
    const double mx = *std::max_element(out.begin(), out.end());
    double sum = 0.0;
    for (auto& v : out) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : out) v /= sum;
    return out;
}

int argmax(std::span<const double> scores)
{
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

} // namespace stamp::model
