#pragma once

#include <cstdint>
#include <vector>

#include "vidattn/grid.hpp"

namespace vidattn {

// One synthetic clip: a Gaussian blob drifting at constant velocity across
// the frame, identical in every channel up to a per-channel offset, plus its
// exact block-mean downsampled proxy. Tensors are row-major (t, y, x, d).
struct SyntheticSample {
    GridDims grid;        // detail dims
    GridDims proxy_grid;  // proxy dims; detail dims are divisible by these
    int channels = 0;
    std::vector<double> detail;
    std::vector<double> proxy;
    int prompt_id = 0;
};

// Exact block mean over (grid/proxy) factor blocks, per channel. Throws
// std::invalid_argument unless every detail dim is divisible by the matching
// proxy dim.
std::vector<double> block_mean_downsample(const std::vector<double>& detail, const GridDims& grid,
                                          int channels, const GridDims& proxy);

std::vector<SyntheticSample> make_synthetic_dataset(std::uint64_t seed, const GridDims& grid,
                                                    const GridDims& proxy, int channels, int count);

}  // namespace vidattn
