#include "vidattn/runconfig.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "vidattn/mask.hpp"

namespace vidattn {

namespace {

using nlohmann::json;

GridDims grid_from(const json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 3)
        throw std::invalid_argument("run config: '" + key + "' must be a 3-element array");
    return GridDims{j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open run config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("run config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");

    static const std::set<std::string> known = {
        "layers",     "heads",      "head_dim",       "ffn_mult",
        "n_text",     "channels",   "grid",           "proxy_grid",
        "cube",       "radius",     "detail_to_global", "detail_rope_scales",
        "scale_global_rope", "rope_base", "lr",       "beta1",
        "beta2",      "adam_eps",   "batch_size",     "freeze_ffn",
        "seed",       "steps",      "data_seed",      "dataset_count"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (known.find(key) == known.end())
            throw std::invalid_argument("run config: unknown key '" + key + "'");
    }

    RunConfig rc;
    ToyDiTConfig& m = rc.model;
    try {
        if (j.contains("layers")) m.layers = j["layers"].get<int>();
        if (j.contains("heads")) m.heads = j["heads"].get<int>();
        if (j.contains("head_dim")) m.head_dim = j["head_dim"].get<int>();
        if (j.contains("ffn_mult")) m.ffn_mult = j["ffn_mult"].get<int>();
        if (j.contains("n_text")) m.n_text = j["n_text"].get<int>();
        if (j.contains("channels")) m.channels = j["channels"].get<int>();
        if (j.contains("grid")) m.grid = grid_from(j["grid"], "grid");
        if (j.contains("proxy_grid")) m.proxy_grid = grid_from(j["proxy_grid"], "proxy_grid");
        if (j.contains("cube")) {
            const GridDims g = grid_from(j["cube"], "cube");
            m.cube = CubeDims{g.t, g.h, g.w};
        }
        if (j.contains("radius")) m.radius = j["radius"].get<int>();
        if (j.contains("detail_to_global"))
            m.policy = parse_detail_to_global(j["detail_to_global"].get<std::string>());
        if (j.contains("detail_rope_scales")) {
            const json& s = j["detail_rope_scales"];
            if (!s.is_array() || s.size() != 3)
                throw std::invalid_argument(
                    "run config: 'detail_rope_scales' must be a 3-element array");
            m.detail_rope_scales = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
        }
        if (j.contains("scale_global_rope")) m.scale_global_rope = j["scale_global_rope"].get<bool>();
        if (j.contains("rope_base")) m.rope_base = j["rope_base"].get<double>();
        if (j.contains("lr")) m.lr = j["lr"].get<double>();
        if (j.contains("beta1")) m.beta1 = j["beta1"].get<double>();
        if (j.contains("beta2")) m.beta2 = j["beta2"].get<double>();
        if (j.contains("adam_eps")) m.adam_eps = j["adam_eps"].get<double>();
        if (j.contains("batch_size")) m.batch_size = j["batch_size"].get<int>();
        if (j.contains("freeze_ffn")) m.freeze_ffn = j["freeze_ffn"].get<bool>();
        if (j.contains("seed")) rc.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("steps")) rc.steps = j["steps"].get<int>();
        if (j.contains("data_seed")) rc.data_seed = j["data_seed"].get<std::uint64_t>();
        if (j.contains("dataset_count")) rc.dataset_count = j["dataset_count"].get<int>();
    } catch (const json::exception& e) {
        throw std::invalid_argument("run config: malformed value: " + std::string(e.what()));
    }

    if (rc.steps < 0) throw std::invalid_argument("run config: steps must be >= 0");
    if (rc.dataset_count < 1) throw std::invalid_argument("run config: dataset_count must be >= 1");
    m.validate();
    return rc;
}

}  // namespace vidattn
