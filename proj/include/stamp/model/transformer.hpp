#pragma once

#include "stamp/model/settings.hpp"
#include "stamp/rng.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace stamp::model {

/// Activations of one forward pass, kept for the backward pass.
template <typename T>
struct Workspace {
    struct Layer {
        std::vector<T> ln1_xhat, ln1_rstd, a, q, k, v, o, drop1;
        std::vector<T> ln2_xhat, ln2_rstd, b, u, g, drop2;
    };
    int n = 0;          // tiles
    int din = 0;
    std::vector<T> x;   // n x din
    std::vector<Layer> layers;
    std::vector<T> lnf_xhat;   // class token only
    T lnf_rstd = 0;
    std::vector<T> y;
};

/// Transformer bag classifier: linear tile projection, a learned class
/// token, pre-norm self-attention blocks without positional encoding, a
/// final layer norm and a linear head on the class token.
template <typename T>
class Transformer {
public:
    struct Tensor {
        std::string name;
        std::size_t offset = 0;
        std::vector<int> shape;
        std::size_t size() const;
    };

    explicit Transformer(const ModelConfig& config);

    const ModelConfig& config() const { return cfg_; }
    std::size_t n_params() const { return params_.size(); }
    std::span<T> params() { return params_; }
    std::span<const T> params() const { return params_; }
    const std::vector<Tensor>& tensors() const { return tensors_; }
    const Tensor& tensor(const std::string& name) const;

    /// Linear layers uniform in +-1/sqrt(fan_in), layer norms at identity,
    /// class token standard normal.
    void init(Rng& rng, bool zero_head = false);

    /// Logits for a bag x (n x dim_input, row-major). With `ws` the
    /// activations needed by backward() are recorded; with `dropout_rng`
    /// dropout is active.
    std::vector<T> forward(const T* x, int n, Workspace<T>* ws = nullptr, Rng* dropout_rng = nullptr) const;

    /// Accumulates dLoss/dparams into `grad` given dLoss/dlogits; writes
    /// dLoss/dx (n x dim_input) when dx is non-null.
    void backward(const Workspace<T>& ws, const T* dlogits, T* grad, T* dx = nullptr) const;

private:
    struct LayerOffsets {
        std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::size_t add(const std::string& name, std::vector<int> shape);

    ModelConfig cfg_;
    std::vector<T> params_;
    std::vector<Tensor> tensors_;
    std::size_t w_in_ = 0, b_in_ = 0, cls_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_head_ = 0, b_head_ = 0;
    std::vector<LayerOffsets> layers_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;
extern template class Transformer<long double>;

/// Softmax of logits (computed in double).
std::vector<double> softmax(std::span<const double> logits);

/// Index of the largest score; ties go to the lower index.
int argmax(std::span<const double> scores);

} // namespace stamp::model
