#include "palsyfuse/nn/weights.hpp"

#include <bit>
#include <cstring>

#include "palsyfuse/error.hpp"
#include "palsyfuse/io.hpp"

namespace palsyfuse::nn {

namespace {

std::vector<Tensor*> layer_tensors(Layer& layer) {
    std::vector<Tensor*> out;
    for (auto* p : layer.own_params()) out.push_back(&p->value);
    for (auto* b : layer.own_buffers()) out.push_back(b);
    return out;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& out, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
        pos_ += 4;
        return v;
    }

    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(bytes_[i]); }
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("weights: truncated at byte " + std::to_string(pos_));
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string save_weights_bytes(Layer& model) {
    std::string body;
    std::uint32_t records = 0;
    for (auto* layer : all_layers(model)) {
        auto tensors = layer_tensors(*layer);
        if (tensors.empty()) continue;
        ++records;
        put_u32(body, static_cast<std::uint32_t>(layer->kind()));
        put_u32(body, static_cast<std::uint32_t>(tensors.size()));
        for (auto* t : tensors) {
            put_u32(body, static_cast<std::uint32_t>(t->rank()));
            for (auto d : t->shape()) put_u32(body, static_cast<std::uint32_t>(d));
            for (double v : t->values()) put_f64(body, v);
        }
    }
    std::string out = "NNW1";
    put_u32(out, kWeightsVersion);
    put_u32(out, records);
    return out + body;
}

void load_weights_bytes(Layer& model, const std::string& bytes) {
    if (bytes.size() < 4 || bytes.compare(0, 4, "NNW1") != 0) {
        throw FormatError("weights: bad magic '" + bytes.substr(0, 4) + "' (expected NNW1)");
    }
    Reader r(bytes);
    r.u32();
    const auto version = r.u32();
    if (version != kWeightsVersion) {
        throw FormatError("weights: unsupported version " + std::to_string(version));
    }
    std::vector<Layer*> targets;
    for (auto* layer : all_layers(model)) {
        if (!layer_tensors(*layer).empty()) targets.push_back(layer);
    }
    const auto records = r.u32();
    if (records != targets.size()) {
        throw ShapeError("weights: file has " + std::to_string(records) + " layer records, model expects " +
                         std::to_string(targets.size()));
    }
    // Decode everything before touching the model so a bad file leaves it intact.
    std::vector<std::vector<Tensor>> decoded;
    for (auto* layer : targets) {
        const auto kind = r.u32();
        if (kind != static_cast<std::uint32_t>(layer->kind())) {
            throw ShapeError("weights: " + layer->label() + ": file record has kind tag " + std::to_string(kind));
        }
        auto tensors = layer_tensors(*layer);
        const auto count = r.u32();
        if (count != tensors.size()) {
            throw ShapeError("weights: " + layer->label() + ": expected " + std::to_string(tensors.size()) +
                             " tensors, file has " + std::to_string(count));
        }
        std::vector<Tensor> loaded;
        for (auto* t : tensors) {
            const auto rank = r.u32();
            Shape shape(rank);
            for (auto& d : shape) d = r.u32();
            if (shape != t->shape()) {
                throw ShapeError("weights: " + layer->label() + ": expected tensor " + shape_string(t->shape()) +
                                 ", file has " + shape_string(shape));
            }
            std::vector<double> data(t->size());
            for (auto& v : data) v = r.f64();
            loaded.emplace_back(shape, std::move(data));
        }
        decoded.push_back(std::move(loaded));
    }
    if (!r.done()) throw FormatError("weights: trailing bytes after last record");
    for (std::size_t i = 0; i < targets.size(); ++i) {
        auto tensors = layer_tensors(*targets[i]);
        for (std::size_t j = 0; j < tensors.size(); ++j) *tensors[j] = std::move(decoded[i][j]);
    }
}

void save_weights(Layer& model, const std::filesystem::path& path) {
    io::write_file_atomic(path, save_weights_bytes(model));
}

void load_weights(Layer& model, const std::filesystem::path& path) {
    load_weights_bytes(model, io::read_file(path));
}

}  // namespace palsyfuse::nn
