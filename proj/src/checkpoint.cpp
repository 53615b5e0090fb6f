#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace spnn::ckpt {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'P', 'N', 'N'};
constexpr uint32_t kVersion = 1;

json spec_to_json(const nn::ModelSpec& spec) {
    json layers = json::array();
    for (const nn::LayerSpec& l : spec.layers) {
        json j;
        j["kind"] = nn::layer_kind_name(l.kind);
        if (l.kind == nn::LayerKind::dense) j["units"] = l.units;
        if (l.kind == nn::LayerKind::conv) {
            j["channels"] = l.channels;
            j["kernel"] = l.kernel;
            j["pad"] = l.pad;
        }
        layers.push_back(j);
    }
    return json{{"input", spec.input_shape},
                {"layers", layers},
                {"classes", spec.classes},
                {"init_seed", spec.init_seed},
                {"bayesian", spec.bayesian}};
}

nn::ModelSpec spec_from_json(const json& j) {
    nn::ModelSpec spec;
    spec.input_shape = j.at("input").get<Shape>();
    spec.classes = j.at("classes").get<size_t>();
    spec.init_seed = j.at("init_seed").get<uint64_t>();
    spec.bayesian = j.value("bayesian", false);
    for (const json& lj : j.at("layers")) {
        std::string kind = lj.at("kind").get<std::string>();
        if (kind == "dense")
            spec.layers.push_back(nn::LayerSpec::dense(lj.at("units").get<size_t>()));
        else if (kind == "conv")
            spec.layers.push_back(nn::LayerSpec::conv(lj.at("channels").get<size_t>(),
                                                      lj.at("kernel").get<size_t>(),
                                                      lj.value("pad", size_t{0})));
        else if (kind == "relu")
            spec.layers.push_back(nn::LayerSpec::relu());
        else if (kind == "pool")
            spec.layers.push_back(nn::LayerSpec::pool());
        else if (kind == "flatten")
            spec.layers.push_back(nn::LayerSpec::flatten());
        else
            throw Error::format("checkpoint: unknown layer kind in header: " + kind);
    }
    return spec;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& out, double d) {
    uint64_t u;
    std::memcpy(&u, &d, 8);
    put_u64(out, u);
}

}  // namespace

std::vector<uint8_t> encode(const nn::Model& model, uint64_t seed) {
    json manifest = json::array();
    for (const nn::Param& p : model.params()) {
        manifest.push_back(json{{"name", p.name}, {"shape", p.value.shape()}, {"kind", "param"}});
        if (model.spec().bayesian)
            manifest.push_back(
                json{{"name", p.name + ".rho"}, {"shape", p.rho.shape()}, {"kind", "rho"}});
    }
    json header = {{"model", spec_to_json(model.spec())},
                   {"seed", seed},
                   {"dtype", "f64"},
                   {"manifest", manifest}};
    std::string htext = header.dump();

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u64(out, htext.size());
    out.insert(out.end(), htext.begin(), htext.end());
    for (const nn::Param& p : model.params()) {
        for (size_t i = 0; i < p.value.numel(); ++i) put_f64(out, p.value[i]);
        if (model.spec().bayesian)
            for (size_t i = 0; i < p.rho.numel(); ++i) put_f64(out, p.rho[i]);
    }
    for (const nn::Param& p : model.params()) {
        for (size_t i = 0; i < p.mask.numel(); ++i)
            out.push_back(p.mask[i] == 0.0 ? 0 : 1);
    }
    return out;
}

size_t encoded_size(const nn::Model& model, uint64_t seed) {
    // 16 header bytes + json + 8 bytes per tensor element + 1 byte per mask bit
    size_t params = 0, masks = 0;
    for (const nn::Param& p : model.params()) {
        params += p.value.numel();
        if (model.spec().bayesian) params += p.rho.numel();
        masks += p.mask.numel();
    }
    std::vector<uint8_t> probe = encode(model, seed);  // header length depends on json text
    (void)params;
    (void)masks;
    return probe.size();
}

Checkpoint decode(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 16) throw Error::format("checkpoint: file shorter than fixed header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw Error::format("checkpoint: bad magic, expected \"SPNN\"");
    uint32_t version = 0;
    for (int i = 3; i >= 0; --i) version = (version << 8) | bytes[4 + i];
    if (version != kVersion)
        throw Error::format("checkpoint: unsupported version " + std::to_string(version));
    uint64_t hlen = 0;
    for (int i = 7; i >= 0; --i) hlen = (hlen << 8) | bytes[8 + i];
    if (bytes.size() < 16 + hlen) throw Error::format("checkpoint: truncated header");

    json header;
    try {
        header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(hlen));
    } catch (const json::exception& e) {
        throw Error::format(std::string("checkpoint: invalid header json: ") + e.what());
    }
    if (header.value("dtype", "") != "f64")
        throw Error::format("checkpoint: unsupported dtype tag");

    Checkpoint ck;
    ck.seed = header.at("seed").get<uint64_t>();
    ck.model = nn::Model::build(spec_from_json(header.at("model")));

    // Validate the manifest against the rebuilt model.
    const json& manifest = header.at("manifest");
    std::vector<std::pair<std::string, Shape>> expected;
    for (const nn::Param& p : ck.model.params()) {
        expected.emplace_back(p.name, p.value.shape());
        if (ck.model.spec().bayesian) expected.emplace_back(p.name + ".rho", p.rho.shape());
    }
    if (manifest.size() != expected.size())
        throw Error::shape("checkpoint: manifest lists " + std::to_string(manifest.size()) +
                           " tensors, model has " + std::to_string(expected.size()));
    for (size_t i = 0; i < expected.size(); ++i) {
        Shape s = manifest[i].at("shape").get<Shape>();
        if (manifest[i].at("name").get<std::string>() != expected[i].first || s != expected[i].second)
            throw Error::shape("checkpoint: manifest entry " + std::to_string(i) +
                               " does not match model tensor " + expected[i].first);
    }

    size_t off = 16 + hlen;
    auto need = [&](size_t n) {
        if (bytes.size() < off + n)
            throw Error::format("checkpoint: truncated payload at offset " + std::to_string(off));
    };
    auto get_f64 = [&]() {
        uint64_t u = 0;
        for (int i = 7; i >= 0; --i) u = (u << 8) | bytes[off + static_cast<size_t>(i)];
        off += 8;
        double d;
        std::memcpy(&d, &u, 8);
        return d;
    };
    for (nn::Param& p : ck.model.params()) {
        need(8 * p.value.numel());
        for (size_t i = 0; i < p.value.numel(); ++i) p.value[i] = get_f64();
        if (ck.model.spec().bayesian) {
            need(8 * p.rho.numel());
            for (size_t i = 0; i < p.rho.numel(); ++i) p.rho[i] = get_f64();
        }
    }
    for (nn::Param& p : ck.model.params()) {
        need(p.mask.numel());
        for (size_t i = 0; i < p.mask.numel(); ++i) {
            uint8_t b = bytes[off++];
            if (b > 1)
                throw Error::format("checkpoint: non-binary mask byte at offset " +
                                    std::to_string(off - 1));
            p.mask[i] = static_cast<double>(b);
        }
    }
    if (off != bytes.size())
        throw Error::format("checkpoint: trailing bytes at offset " + std::to_string(off));
    return ck;
}

void write_file(const std::string& path, const nn::Model& model, uint64_t seed) {
    std::vector<uint8_t> bytes = encode(model, seed);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error::io("checkpoint: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error::io("checkpoint: short write on " + path);
}

Checkpoint read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error::io("checkpoint: cannot open " + path);
    f.seekg(0, std::ios::end);
    std::streamoff len = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(len));
    f.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!f) throw Error::io("checkpoint: short read on " + path);
    return decode(bytes);
}

}  // namespace spnn::ckpt
