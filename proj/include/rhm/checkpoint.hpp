#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rhm/io.hpp"
#include "rhm/siamese.hpp"

namespace rhm {

constexpr char kCheckpointMagic[9] = "RHMCKP01";

/// Serialized model: a JSON manifest (architecture recipe, batchnorm
/// running statistics, and whatever bookkeeping the caller attaches) plus
/// the trainable parameters as 64-bit little-endian floats in manifest
/// order. The manifest is kept verbatim so load + re-save is
/// byte-identical.
struct Checkpoint {
    nlohmann::json manifest;
    std::vector<double> payload;
};

inline nlohmann::json spec_to_json(const BackboneSpec& spec) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : spec.layers) {
        nlohmann::json row;
        switch (l.kind) {
            case LayerKind::conv:
                row["kind"] = "conv";
                row["kernel"] = {l.kernel_h, l.kernel_w};
                row["stride"] = l.stride;
                row["units"] = l.units;
                break;
            case LayerKind::batchnorm:
                row["kind"] = "batchnorm";
                break;
            case LayerKind::dropout:
                row["kind"] = "dropout";
                row["rate"] = l.rate;
                break;
            case LayerKind::flatten:
                row["kind"] = "flatten";
                break;
            case LayerKind::dense:
                row["kind"] = "dense";
                row["units"] = l.units;
                break;
        }
        layers.push_back(row);
    }
    nlohmann::json out;
    out["input"] = {{"c", spec.input_c}, {"h", spec.input_h}, {"w", spec.input_w}};
    out["layers"] = layers;
    return out;
}

inline BackboneSpec spec_from_json(const nlohmann::json& j) {
    BackboneSpec spec;
    try {
        spec.input_h = j.at("input").at("h").get<int>();
        spec.input_w = j.at("input").at("w").get<int>();
        spec.input_c = j.at("input").at("c").get<int>();
        for (const auto& row : j.at("layers")) {
            const std::string kind = row.at("kind").get<std::string>();
            if (kind == "conv") {
                spec.layers.push_back(LayerSpec::conv(row.at("kernel").at(0).get<int>(),
                                                      row.at("kernel").at(1).get<int>(),
                                                      row.at("stride").get<int>(),
                                                      row.at("units").get<int>()));
            } else if (kind == "batchnorm") {
                spec.layers.push_back(LayerSpec::batchnorm());
            } else if (kind == "dropout") {
                spec.layers.push_back(LayerSpec::dropout(row.at("rate").get<double>()));
            } else if (kind == "flatten") {
                spec.layers.push_back(LayerSpec::flatten());
            } else if (kind == "dense") {
                spec.layers.push_back(LayerSpec::dense(row.at("units").get<int>()));
            } else {
                throw FormatError("checkpoint: unknown layer kind " + kind);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed backbone spec: ") + e.what());
    }
    return spec;
}

inline std::string distance_to_string(DistanceKind k) {
    return k == DistanceKind::elementwise_abs ? "elementwise_abs" : "scalar_norm";
}

inline DistanceKind distance_from_string(const std::string& s) {
    if (s == "elementwise_abs") return DistanceKind::elementwise_abs;
    if (s == "scalar_norm") return DistanceKind::scalar_norm;
    throw FormatError("checkpoint: unknown distance kind " + s);
}

namespace detail {

inline nlohmann::json shapes_json(const std::vector<Tensor*>& tensors) {
    nlohmann::json out = nlohmann::json::array();
    for (const Tensor* t : tensors) out.push_back(t->shape);
    return out;
}

inline nlohmann::json state_json(const std::vector<Tensor*>& tensors) {
    nlohmann::json out = nlohmann::json::array();
    for (const Tensor* t : tensors) out.push_back(t->data);
    return out;
}

inline void restore_state(const std::vector<Tensor*>& tensors, const nlohmann::json& arrays) {
    if (!arrays.is_array() || arrays.size() != tensors.size())
        throw FormatError("checkpoint: running-statistics count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto vals = arrays[i].get<std::vector<double>>();
        if (vals.size() != tensors[i]->data.size())
            throw FormatError("checkpoint: running-statistics size mismatch");
        tensors[i]->data = vals;
    }
}

inline nlohmann::json base_manifest(const nlohmann::json& extra) {
    nlohmann::json m;
    m["format_version"] = 1;
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    return m;
}

}  // namespace detail

/// Captures the full trainable state of a siamese model. `extra` fields
/// (training config, seeds, history) are merged into the manifest.
inline Checkpoint checkpoint_from_siamese(SiameseModel& model,
                                          const nlohmann::json& extra = nlohmann::json::object()) {
    Checkpoint ckpt;
    ckpt.manifest = detail::base_manifest(extra);
    ckpt.manifest["model"] = "siamese";
    ckpt.manifest["backbone"] = spec_to_json(model.spec);
    ckpt.manifest["distance"] = distance_to_string(model.distance);
    ckpt.manifest["param_shapes"] = detail::shapes_json(model.params());
    ckpt.manifest["param_count"] = model.param_count();
    ckpt.manifest["running_stats"] = detail::state_json(model.state());
    ckpt.payload = snapshot_values(model.params());
    return ckpt;
}

inline Checkpoint checkpoint_from_cnn(CnnModel& model,
                                      const nlohmann::json& extra = nlohmann::json::object()) {
    Checkpoint ckpt;
    ckpt.manifest = detail::base_manifest(extra);
    ckpt.manifest["model"] = "cnn";
    ckpt.manifest["backbone"] = spec_to_json(model.spec);
    ckpt.manifest["n_classes"] = model.n_classes;
    ckpt.manifest["param_shapes"] = detail::shapes_json(model.net.params());
    ckpt.manifest["param_count"] = model.net.param_count();
    ckpt.manifest["running_stats"] = detail::state_json(model.net.state());
    ckpt.payload = snapshot_values(model.net.params());
    return ckpt;
}

inline std::string checkpoint_model_kind(const Checkpoint& ckpt) {
    try {
        return ckpt.manifest.at("model").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: missing model kind: ") + e.what());
    }
}

inline SiameseModel siamese_from_checkpoint(const Checkpoint& ckpt) {
    if (checkpoint_model_kind(ckpt) != "siamese")
        throw FormatError("checkpoint: not a siamese model");
    SiameseModel model;
    try {
        model = make_siamese(spec_from_json(ckpt.manifest.at("backbone")),
                             distance_from_string(ckpt.manifest.at("distance").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
    }
    if (static_cast<std::int64_t>(ckpt.payload.size()) != model.param_count())
        throw FormatError("checkpoint: payload size does not match architecture");
    restore_values(model.params(), ckpt.payload);
    detail::restore_state(model.state(), ckpt.manifest.value("running_stats", nlohmann::json::array()));
    return model;
}

inline CnnModel cnn_from_checkpoint(const Checkpoint& ckpt) {
    if (checkpoint_model_kind(ckpt) != "cnn") throw FormatError("checkpoint: not a cnn model");
    CnnModel model;
    try {
        model = make_cnn(spec_from_json(ckpt.manifest.at("backbone")));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
    }
    if (static_cast<std::int64_t>(ckpt.payload.size()) != model.net.param_count())
        throw FormatError("checkpoint: payload size does not match architecture");
    restore_values(model.net.params(), ckpt.payload);
    detail::restore_state(model.net.state(), ckpt.manifest.value("running_stats", nlohmann::json::array()));
    return model;
}

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
    const std::string mj = ckpt.manifest.dump();
    std::string out;
    out.reserve(8 + 4 + mj.size() + 8 * ckpt.payload.size());
    out.append(kCheckpointMagic, 8);
    io::put_u32(out, static_cast<std::uint32_t>(mj.size()));
    out += mj;
    for (double v : ckpt.payload) io::put_f64(out, v);
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    io::Reader r(bytes);
    if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw FormatError("checkpoint: bad magic");
    const std::uint32_t mlen = r.u32();
    Checkpoint ckpt;
    try {
        ckpt.manifest = nlohmann::json::parse(r.bytes(mlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
    }
    if (r.remaining() % 8 != 0) throw FormatError("checkpoint: truncated payload");
    const std::size_t count = r.remaining() / 8;
    const std::int64_t declared = ckpt.manifest.value("param_count", std::int64_t{-1});
    if (declared >= 0 && declared != static_cast<std::int64_t>(count))
        throw FormatError("checkpoint: payload does not match declared parameter count");
    ckpt.payload.resize(count);
    for (std::size_t i = 0; i < count; ++i) ckpt.payload[i] = r.f64();
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    io::atomic_write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path));
}

}  // namespace rhm
