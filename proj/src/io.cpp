#include "vidattn/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need byte swaps");

namespace vidattn {

namespace {

void write_exact(std::ofstream& out, const void* p, std::size_t n, const std::string& path) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out) throw std::runtime_error("write failed: " + path);
}

void read_exact(std::ifstream& in, void* p, std::size_t n, const std::string& path) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
        throw std::runtime_error("truncated file: " + path);
}

void write_u32(std::ofstream& out, std::uint32_t v, const std::string& path) {
    write_exact(out, &v, sizeof(v), path);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    read_exact(in, &v, sizeof(v), path);
    return v;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    return in;
}

constexpr char kVideoMagic[4] = {'A', 'V', 'T', '1'};
constexpr char kWeightsMagic[4] = {'T', 'D', 'W', '1'};

}  // namespace

void write_video_tensor(const std::string& path, const VideoTensor& v) {
    if (!v.grid.positive() || v.channels < 1)
        throw std::invalid_argument("write_video_tensor: dims must be positive");
    if (v.data.size() != v.expected_size())
        throw std::invalid_argument("write_video_tensor: data size does not match dims");
    std::ofstream out = open_out(path);
    write_exact(out, kVideoMagic, 4, path);
    write_u32(out, 1, path);
    write_u32(out, static_cast<std::uint32_t>(v.grid.t), path);
    write_u32(out, static_cast<std::uint32_t>(v.grid.h), path);
    write_u32(out, static_cast<std::uint32_t>(v.grid.w), path);
    write_u32(out, static_cast<std::uint32_t>(v.channels), path);
    if (!v.data.empty()) write_exact(out, v.data.data(), v.data.size() * sizeof(float), path);
}

VideoTensor read_video_tensor(const std::string& path) {
    std::ifstream in = open_in(path);
    char magic[4];
    read_exact(in, magic, 4, path);
    if (std::memcmp(magic, kVideoMagic, 4) != 0)
        throw std::runtime_error("not a video tensor file (bad magic): " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != 1) throw std::runtime_error("unsupported video tensor version: " + path);
    VideoTensor v;
    v.grid.t = read_u32(in, path);
    v.grid.h = read_u32(in, path);
    v.grid.w = read_u32(in, path);
    v.channels = static_cast<int>(read_u32(in, path));
    if (!v.grid.positive() || v.channels < 1)
        throw std::runtime_error("video tensor has non-positive dims: " + path);
    v.data.resize(v.expected_size());
    read_exact(in, v.data.data(), v.data.size() * sizeof(float), path);
    char extra;
    if (in.read(&extra, 1).gcount() != 0)
        throw std::runtime_error("trailing bytes after video tensor payload: " + path);
    return v;
}

VideoTensor video_tensor_from(const GridDims& grid, int channels, const std::vector<double>& data) {
    VideoTensor v;
    v.grid = grid;
    v.channels = channels;
    if (data.size() != v.expected_size())
        throw std::invalid_argument("video_tensor_from: data size does not match dims");
    v.data.reserve(data.size());
    for (double d : data) v.data.push_back(static_cast<float>(d));
    return v;
}

std::vector<double> to_doubles(const VideoTensor& v) {
    return std::vector<double>(v.data.begin(), v.data.end());
}

void write_weights(const std::string& path, const ToyDiTWeights& w) {
    const auto tensors = w.tensors();
    std::ofstream out = open_out(path);
    write_exact(out, kWeightsMagic, 4, path);
    write_u32(out, 1, path);
    write_u32(out, static_cast<std::uint32_t>(tensors.size()), path);
    for (const auto& [name, mat] : tensors) {
        write_u32(out, static_cast<std::uint32_t>(name.size()), path);
        write_exact(out, name.data(), name.size(), path);
        write_u32(out, static_cast<std::uint32_t>(mat->rows), path);
        write_u32(out, static_cast<std::uint32_t>(mat->cols), path);
        if (!mat->data.empty())
            write_exact(out, mat->data.data(), mat->data.size() * sizeof(double), path);
    }
}

ToyDiTWeights read_weights(const std::string& path, const ToyDiTConfig& cfg) {
    ToyDiTWeights w = init_weights(cfg, 0);
    auto tensors = w.tensors();

    std::ifstream in = open_in(path);
    char magic[4];
    read_exact(in, magic, 4, path);
    if (std::memcmp(magic, kWeightsMagic, 4) != 0)
        throw std::runtime_error("not a weights file (bad magic): " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != 1) throw std::runtime_error("unsupported weights version: " + path);
    const std::uint32_t count = read_u32(in, path);
    if (count != tensors.size())
        throw std::runtime_error("weights file tensor count does not match config: " + path);

    for (auto& [name, mat] : tensors) {
        const std::uint32_t name_len = read_u32(in, path);
        std::string file_name(name_len, '\0');
        read_exact(in, file_name.data(), name_len, path);
        if (file_name != name)
            throw std::runtime_error("weights file tensor '" + file_name + "' where '" + name +
                                     "' was expected: " + path);
        const std::uint32_t rows = read_u32(in, path);
        const std::uint32_t cols = read_u32(in, path);
        if (rows != static_cast<std::uint32_t>(mat->rows) ||
            cols != static_cast<std::uint32_t>(mat->cols))
            throw std::runtime_error("weights file tensor '" + name +
                                     "' shape does not match config: " + path);
        read_exact(in, mat->data.data(), mat->data.size() * sizeof(double), path);
    }
    char extra;
    if (in.read(&extra, 1).gcount() != 0)
        throw std::runtime_error("trailing bytes after weights payload: " + path);
    return w;
}

void write_loss_csv(const std::string& path, const std::vector<double>& losses) {
    std::ofstream out = open_out(path);
    out << "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, losses[i]);
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace vidattn
