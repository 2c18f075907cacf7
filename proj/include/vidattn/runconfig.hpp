#pragma once

#include <cstdint>
#include <string>

#include "vidattn/dit.hpp"

namespace vidattn {

// Everything a training or sampling run needs, loadable from a JSON file.
// Model hyperparameters map onto ToyDiTConfig; the rest drive the run loop
// and the synthetic dataset.
struct RunConfig {
    ToyDiTConfig model;
    std::uint64_t seed = 0;
    int steps = 200;
    std::uint64_t data_seed = 1234;
    int dataset_count = 8;
};

// Parses a JSON object with optional keys (missing keys keep the defaults
// above): layers, heads, head_dim, ffn_mult, n_text, channels, grid,
// proxy_grid, cube (3-element arrays, [t, h, w]), radius, detail_to_global
// ("full"/"none"), detail_rope_scales, scale_global_rope, rope_base, lr,
// beta1, beta2, adam_eps, batch_size, freeze_ffn, seed, steps, data_seed,
// dataset_count. Unknown keys and malformed values throw
// std::invalid_argument; IO failures throw std::runtime_error. The resulting
// model config is validated.
RunConfig load_run_config(const std::string& path);

}  // namespace vidattn
