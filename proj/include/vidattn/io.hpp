#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vidattn/dit.hpp"
#include "vidattn/grid.hpp"

namespace vidattn {

// Video tensor container for the .avt format: magic "AVT1", u32 version (1),
// u32 T, H, W, D, then T*H*W*D little-endian f32 values, row-major in
// (t, y, x, d). All IO errors throw std::runtime_error.
struct VideoTensor {
    GridDims grid;
    int channels = 0;
    std::vector<float> data;  // [t][y][x][d]

    std::size_t expected_size() const {
        return static_cast<std::size_t>(grid.count()) * static_cast<std::size_t>(channels);
    }
};

void write_video_tensor(const std::string& path, const VideoTensor& v);
VideoTensor read_video_tensor(const std::string& path);

// Lossless round-trip helpers between the double-precision row-major layout
// used internally ([tokens, channels]) and the f32 file container.
VideoTensor video_tensor_from(const GridDims& grid, int channels, const std::vector<double>& data);
std::vector<double> to_doubles(const VideoTensor& v);

// Model checkpoint: magic "TDW1", u32 version (1), u32 tensor count, then per
// tensor (in ToyDiTWeights::tensors() order): u32 name length, name bytes,
// u32 rows, u32 cols, rows*cols little-endian f64 values. read_weights
// validates every name and shape against weights freshly shaped from cfg.
void write_weights(const std::string& path, const ToyDiTWeights& w);
ToyDiTWeights read_weights(const std::string& path, const ToyDiTConfig& cfg);

// "step,loss" header, then 1-based step and %.17g loss per line.
void write_loss_csv(const std::string& path, const std::vector<double>& losses);

}  // namespace vidattn
