#include "vidattn/synthetic.hpp"

#include <cmath>
#include <stdexcept>

#include "vidattn/rng.hpp"

namespace vidattn {

std::vector<double> block_mean_downsample(const std::vector<double>& detail, const GridDims& grid,
                                          int channels, const GridDims& proxy) {
    if (!grid.positive() || !proxy.positive() || channels <= 0)
        throw std::invalid_argument("block_mean_downsample: dims must be positive");
    if (grid.t % proxy.t != 0 || grid.h % proxy.h != 0 || grid.w % proxy.w != 0)
        throw std::invalid_argument("block_mean_downsample: detail dims must be divisible by proxy dims");
    const std::int64_t d = channels;
    if (static_cast<std::int64_t>(detail.size()) != grid.count() * d)
        throw std::invalid_argument("block_mean_downsample: detail size mismatch");

    const std::int64_t ft = grid.t / proxy.t;
    const std::int64_t fy = grid.h / proxy.h;
    const std::int64_t fx = grid.w / proxy.w;
    const double inv_count = 1.0 / static_cast<double>(ft * fy * fx);

    std::vector<double> out(static_cast<std::size_t>(proxy.count() * d), 0.0);
    for (std::int64_t pt = 0; pt < proxy.t; ++pt)
        for (std::int64_t py = 0; py < proxy.h; ++py)
            for (std::int64_t px = 0; px < proxy.w; ++px)
                for (std::int64_t c = 0; c < d; ++c) {
                    double acc = 0.0;
                    for (std::int64_t lt = 0; lt < ft; ++lt)
                        for (std::int64_t ly = 0; ly < fy; ++ly)
                            for (std::int64_t lx = 0; lx < fx; ++lx) {
                                const std::int64_t tok =
                                    ((pt * ft + lt) * grid.h + (py * fy + ly)) * grid.w + (px * fx + lx);
                                acc += detail[static_cast<std::size_t>(tok * d + c)];
                            }
                    const std::int64_t ptok = (pt * proxy.h + py) * proxy.w + px;
                    out[static_cast<std::size_t>(ptok * d + c)] = acc * inv_count;
                }
    return out;
}

std::vector<SyntheticSample> make_synthetic_dataset(std::uint64_t seed, const GridDims& grid,
                                                    const GridDims& proxy, int channels, int count) {
    if (count < 0) throw std::invalid_argument("make_synthetic_dataset: count must be >= 0");
    Rng rng(seed);
    const double sigma = static_cast<double>(std::min(grid.h, grid.w)) / 4.0;

    std::vector<SyntheticSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int s = 0; s < count; ++s) {
        SyntheticSample smp;
        smp.grid = grid;
        smp.proxy_grid = proxy;
        smp.channels = channels;
        smp.prompt_id = s;
        smp.detail.resize(static_cast<std::size_t>(grid.count() * channels));

        const double cy0 = rng.uniform(0.0, static_cast<double>(grid.h));
        const double cx0 = rng.uniform(0.0, static_cast<double>(grid.w));
        const double vy = rng.uniform(-1.0, 1.0);
        const double vx = rng.uniform(-1.0, 1.0);

        std::size_t i = 0;
        for (std::int64_t t = 0; t < grid.t; ++t) {
            const double cy = cy0 + vy * static_cast<double>(t);
            const double cx = cx0 + vx * static_cast<double>(t);
            for (std::int64_t y = 0; y < grid.h; ++y)
                for (std::int64_t x = 0; x < grid.w; ++x) {
                    const double dy = static_cast<double>(y) - cy;
                    const double dx = static_cast<double>(x) - cx;
                    const double blob = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                    for (std::int64_t c = 0; c < channels; ++c)
                        smp.detail[i++] = blob + 0.25 * static_cast<double>(c);
                }
        }
        smp.proxy = block_mean_downsample(smp.detail, grid, channels, proxy);
        out.push_back(std::move(smp));
    }
    return out;
}

}  // namespace vidattn
