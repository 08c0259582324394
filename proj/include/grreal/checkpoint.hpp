#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "grreal/errors.hpp"
#include "grreal/numerics.hpp"

namespace grreal {

/// Checkpoints are JSON documents shared by the predictive model and the
/// decision policy: a format tag, a kind ("rgrn" or "qnet"), and the full
/// parameter list with shapes. nlohmann::json emits shortest-round-trip
/// decimal for doubles, so a save/load cycle reproduces values bit for bit.
inline constexpr const char* kCheckpointFormat = "grreal-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const ParamStore& params, const std::string& kind) {
    nlohmann::json doc;
    doc["format"] = kCheckpointFormat;
    doc["version"] = kCheckpointVersion;
    doc["kind"] = kind;
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& e : params.entries()) {
        for (double v : e.value.data)
            if (!std::isfinite(v))
                throw data_error("checkpoint: non-finite value in parameter " + e.name);
        plist.push_back({{"name", e.name},
                         {"rows", e.value.rows},
                         {"cols", e.value.cols},
                         {"data", e.value.data}});
    }
    doc["params"] = std::move(plist);
    return doc;
}

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const std::string& kind) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open checkpoint for writing: " + path);
    out << checkpoint_to_json(params, kind).dump(2) << '\n';
    if (!out) throw data_error("failed writing checkpoint: " + path);
}

/// Load values into an already-shaped ParamStore. The file must carry exactly
/// the parameters the store declares, with matching shapes; anything else is
/// a hard error rather than a silent partial restore.
inline void load_checkpoint_into(const std::string& path, ParamStore& params,
                                 const std::string& kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": invalid checkpoint JSON: " + e.what());
    }
    if (doc.value("format", "") != kCheckpointFormat)
        throw data_error(path + ": not a checkpoint file");
    if (doc.value("version", -1) != kCheckpointVersion)
        throw data_error(path + ": unsupported checkpoint version");
    if (doc.value("kind", "") != kind)
        throw data_error(path + ": checkpoint kind '" + doc.value("kind", "") +
                         "' does not match expected '" + kind + "'");

    const auto& plist = doc.at("params");
    if (plist.size() != params.count())
        throw data_error(path + ": checkpoint has " + std::to_string(plist.size()) +
                         " parameters, expected " + std::to_string(params.count()));
    for (const auto& p : plist) {
        const std::string name = p.at("name").get<std::string>();
        if (!params.has(name)) throw data_error(path + ": unexpected parameter " + name);
        Matrix& m = params.param(name);
        if (p.at("rows").get<int>() != m.rows || p.at("cols").get<int>() != m.cols)
            throw data_error(path + ": shape mismatch for parameter " + name);
        const auto data = p.at("data").get<std::vector<double>>();
        if (data.size() != m.data.size())
            throw data_error(path + ": data length mismatch for parameter " + name);
        m.data = data;
    }
}

}  // namespace grreal
