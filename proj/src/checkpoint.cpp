#include "flowsel/checkpoint.hpp"

#include "flowsel/error.hpp"
#include "flowsel/io.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>

namespace flowsel::nn {

using nlohmann::json;

std::string save_checkpoint(const ParamStore& params) {
    json entries = json::array();
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Param& p = params[k];
        const Shape& s = p.value.shape();
        entries.push_back({{"name", p.name},
                           {"shape", {s.n, s.c, s.h, s.w}},
                           {"values", p.value.data()},
                           {"trainable", p.trainable},
                           {"buffer", p.buffer}});
    }
    return json{{"format_version", kCheckpointVersion}, {"params", std::move(entries)}}.dump();
}

void load_checkpoint(ParamStore& params, const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("malformed checkpoint: ") + e.what());
    }
    if (doc.value("format_version", 0) != kCheckpointVersion) throw Error("unsupported checkpoint format version");
    for (const auto& entry : doc.at("params")) {
        const auto name = entry.at("name").get<std::string>();
        Param* p = params.find(name);
        if (p == nullptr) throw Error("checkpoint parameter '" + name + "' not present in model");
        const auto dims = entry.at("shape").get<std::vector<std::size_t>>();
        if (dims.size() != 4) throw ShapeError("checkpoint shape must have 4 dims");
        const Shape s{dims[0], dims[1], dims[2], dims[3]};
        if (!(s == p->value.shape()))
            throw ShapeError("checkpoint shape " + s.str() + " for '" + name + "' does not match " + p->value.shape().str());
        p->value = Tensor4(s, entry.at("values").get<std::vector<double>>());
        p->trainable = entry.at("trainable").get<bool>();
    }
}

void save_checkpoint_file(const ParamStore& params, const std::filesystem::path& path) {
    write_file_atomic(path, save_checkpoint(params));
}

void load_checkpoint_file(ParamStore& params, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    load_checkpoint(params, ss.str());
}

}  // namespace flowsel::nn
