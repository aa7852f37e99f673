#include "flowsel/manifest.hpp"

#include "flowsel/error.hpp"

#include "json.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

namespace flowsel {

namespace {

FrameRecord parse_record(const std::string& line, std::size_t lineno) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ManifestError(lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ManifestError(lineno, "expected a JSON object");

    FrameRecord r;
    const auto id = j.find("id");
    if (id == j.end() || !id->is_string()) throw ManifestError(lineno, "missing string field 'id'");
    r.id = id->get<std::string>();

    const auto t = j.find("t_us");
    if (t == j.end() || !t->is_number_integer()) throw ManifestError(lineno, "missing integer field 't_us'");
    r.t_us = t->get<std::int64_t>();
    if (r.t_us < 0) throw ManifestError(lineno, "'t_us' must be non-negative");

    const auto pose = j.find("pose");
    if (pose == j.end() || !pose->is_array() || pose->size() != 3)
        throw ManifestError(lineno, "'pose' must be an array of 3 numbers");
    for (std::size_t k = 0; k < 3; ++k) {
        if (!(*pose)[k].is_number()) throw ManifestError(lineno, "'pose' must be an array of 3 numbers");
        r.pose[k] = (*pose)[k].get<double>();
    }

    if (const auto p = j.find("payload_path"); p != j.end() && !p->is_null()) {
        if (!p->is_string()) throw ManifestError(lineno, "'payload_path' must be a string");
        r.payload_path = p->get<std::string>();
    }
    return r;
}

}  // namespace

std::vector<FrameRecord> read_manifest(std::istream& in) {
    std::vector<FrameRecord> frames;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        FrameRecord r = parse_record(line, lineno);
        if (!seen.insert(r.id).second) throw ManifestError(lineno, "duplicate id '" + r.id + "'");
        frames.push_back(std::move(r));
        if (frames.size() > kMaxFrames)
            throw InstanceTooLarge("manifest exceeds " + std::to_string(kMaxFrames) + " frames");
    }
    return frames;
}

std::vector<FrameRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest '" + path.string() + "'");
    return read_manifest(in);
}

void write_manifest(std::ostream& out, std::span<const FrameRecord> frames) {
    for (const auto& f : frames) {
        nlohmann::json j = {{"id", f.id}, {"t_us", f.t_us}, {"pose", f.pose}};
        if (f.payload_path) j["payload_path"] = *f.payload_path;
        out << j.dump() << '\n';
    }
}

}  // namespace flowsel
