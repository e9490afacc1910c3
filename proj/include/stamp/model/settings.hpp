#pragma once

#include <cstdint>

namespace stamp::model {

struct ModelConfig {
    int dim_input = 0;
    int dim_model = 512;
    int n_layers = 2;
    int n_heads = 8;
    int mlp_ratio = 2;
    double dropout = 0.1;
    int n_classes = 2;

    bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
    int batch_size = 64;
    int max_bag_size = 512;
    int max_epochs = 32;
    int patience = 8;
    double lr = 1e-4;
    double weight_decay = 1e-2;
    std::uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

} // namespace stamp::model
