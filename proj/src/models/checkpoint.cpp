#include "dfkd/models/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace dfkd::models {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'D', 'F', 'K', 'D', 'C', 'K', 'P', 'T'};

struct NamedTensor {
    std::string name;
    Tensor<float>* value;
};

void write_all(const std::string& path, const json& header,
               const std::vector<NamedTensor>& tensors) {
    json h = header;
    h["format_version"] = kCheckpointVersion;
    std::size_t offset = 0;
    json manifest = json::array();
    for (const auto& t : tensors) {
        json entry;
        entry["name"] = t.name;
        entry["shape"] = t.value->shape();
        entry["offset"] = offset;
        entry["count"] = t.value->size();
        manifest.push_back(entry);
        offset += t.value->size() * sizeof(float);
    }
    h["tensors"] = manifest;
    const std::string hs = h.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& t : tensors)
        out.write(reinterpret_cast<const char*>(t.value->data()),
                  static_cast<std::streamsize>(t.value->size() * sizeof(float)));
    if (!out) throw IoError("short write on checkpoint: " + path);
}

json read_header(std::ifstream& in, const std::string& path) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError("bad checkpoint magic in " + path, 0);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version in " + path, 8);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in) throw FormatError("truncated checkpoint header length in " + path, 12);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw FormatError("truncated checkpoint header in " + path, 20);
    json h = json::parse(hs, nullptr, false);
    if (h.is_discarded()) throw FormatError("unparsable checkpoint header in " + path, 20);
    return h;
}

void read_payload(std::ifstream& in, const std::string& path, const json& header,
                  std::vector<NamedTensor> tensors) {
    const std::size_t base = static_cast<std::size_t>(in.tellg());
    auto manifest = header.at("tensors");
    if (manifest.size() != tensors.size())
        throw FormatError("checkpoint tensor count mismatch in " + path, base);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& entry = manifest[i];
        if (entry.at("name").get<std::string>() != tensors[i].name)
            throw FormatError("checkpoint tensor name mismatch: expected " + tensors[i].name +
                                  ", found " + entry.at("name").get<std::string>(),
                              base);
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != tensors[i].value->shape())
            throw FormatError("checkpoint tensor shape mismatch for " + tensors[i].name, base);
        in.read(reinterpret_cast<char*>(tensors[i].value->data()),
                static_cast<std::streamsize>(tensors[i].value->size() * sizeof(float)));
        if (!in)
            throw FormatError("truncated checkpoint payload at tensor " + tensors[i].name,
                              static_cast<std::size_t>(in.gcount()) + base);
    }
}

std::vector<NamedTensor> classifier_tensors(Classifier& net) {
    std::vector<NamedTensor> out;
    for (auto& p : net.params()) out.push_back({p.name, p.value});
    for (auto& b : net.buffers()) out.push_back({b.name, b.value});
    return out;
}

std::vector<NamedTensor> generator_tensors(ConditionalGenerator& gen) {
    std::vector<NamedTensor> out;
    for (auto& p : gen.params()) out.push_back({p.name, p.value});
    for (auto& b : gen.buffers()) out.push_back({b.name, b.value});
    return out;
}

json spec_to_json(const GeneratorSpec& s) {
    json j;
    j["noise_dim"] = s.noise_dim;
    j["class_count"] = s.class_count;
    j["embedding_dim"] = s.embedding_dim;
    j["image_shape"] = s.image_shape;
    j["conditioning_mode"] = to_string(s.mode);
    j["base_grid"] = s.base_grid;
    j["widths"] = s.widths;
    j["upsample"] = s.upsample;
    return j;
}

GeneratorSpec spec_from_json(const json& j) {
    GeneratorSpec s;
    s.noise_dim = j.at("noise_dim").get<int>();
    s.class_count = j.at("class_count").get<int>();
    s.embedding_dim = j.at("embedding_dim").get<int>();
    const auto shape = j.at("image_shape").get<std::vector<int>>();
    s.image_shape = {shape.at(0), shape.at(1), shape.at(2)};
    s.mode = conditioning_from_string(j.at("conditioning_mode").get<std::string>());
    s.base_grid = j.at("base_grid").get<int>();
    s.widths = j.at("widths").get<std::vector<int>>();
    s.upsample = j.at("upsample").get<std::vector<int>>();
    s.validate();
    return s;
}

}  // namespace

void save_classifier(const std::string& path, Classifier& net) {
    json h;
    h["kind"] = "classifier";
    h["architecture"] = net.arch_id();
    h["class_count"] = net.class_count();
    h["in_channels"] = net.in_channels();
    h["input_size"] = net.input_size();
    write_all(path, h, classifier_tensors(net));
}

std::unique_ptr<Classifier> load_classifier(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    const json h = read_header(in, path);
    if (h.at("kind").get<std::string>() != "classifier")
        throw FormatError("checkpoint is not a classifier: " + path, 20);
    auto net = make_classifier(h.at("architecture").get<std::string>(),
                               h.at("class_count").get<int>(), h.at("in_channels").get<int>(),
                               h.at("input_size").get<int>());
    read_payload(in, path, h, classifier_tensors(*net));
    return net;
}

void save_generator(const std::string& path, ConditionalGenerator& gen) {
    json h;
    h["kind"] = "generator";
    h["generator_spec"] = spec_to_json(gen.spec());
    write_all(path, h, generator_tensors(gen));
}

std::unique_ptr<ConditionalGenerator> load_generator(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    const json h = read_header(in, path);
    if (h.at("kind").get<std::string>() != "generator")
        throw FormatError("checkpoint is not a generator: " + path, 20);
    auto gen = std::make_unique<ConditionalGenerator>(spec_from_json(h.at("generator_spec")));
    read_payload(in, path, h, generator_tensors(*gen));
    return gen;
}

std::string checkpoint_kind(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    return read_header(in, path).at("kind").get<std::string>();
}

}  // namespace dfkd::models
