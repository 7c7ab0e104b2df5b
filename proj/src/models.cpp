#include "palsyfuse/models.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "palsyfuse/error.hpp"
#include "palsyfuse/nn/layers.hpp"
#include "palsyfuse/nn/loss.hpp"
#include "palsyfuse/rng.hpp"

namespace palsyfuse::models {

using nn::Init;
using nn::LayerKind;
using nn::Shape;
using Json = nlohmann::ordered_json;

namespace {

const std::vector<std::pair<Modality, std::string>>& modality_names() {
    static const std::vector<std::pair<Modality, std::string>> names{
        {Modality::Handcrafted, "handcrafted"}, {Modality::Expression, "expression"},
        {Modality::Coordinates, "coordinates"}, {Modality::RgbImage, "rgb_image"},
        {Modality::BnwImage, "bnw_image"},      {Modality::Embedding, "embedding"},
    };
    return names;
}

}  // namespace

std::string to_string(Modality m) {
    for (const auto& [k, n] : modality_names()) {
        if (k == m) return n;
    }
    return "?";
}

Modality parse_modality(const std::string& s) {
    for (const auto& [k, n] : modality_names()) {
        if (n == s) return k;
    }
    throw ConfigError("unknown modality '" + s + "'");
}

bool is_image(Modality m) { return m == Modality::RgbImage || m == Modality::BnwImage; }

// ---------------------------------------------------------------- plan helpers

namespace {

LayerSpec linear(std::string name, std::size_t in, std::size_t out, Init init) {
    LayerSpec s;
    s.kind = LayerKind::Linear;
    s.name = std::move(name);
    s.in = in;
    s.out = out;
    s.init = init;
    return s;
}

LayerSpec simple(LayerKind kind, std::string name) {
    LayerSpec s;
    s.kind = kind;
    s.name = std::move(name);
    return s;
}

LayerSpec batchnorm(std::string name, std::size_t f) {
    LayerSpec s = simple(LayerKind::BatchNorm1d, std::move(name));
    s.features = f;
    return s;
}

LayerSpec layernorm(std::string name, std::size_t f) {
    LayerSpec s = simple(LayerKind::LayerNorm, std::move(name));
    s.features = f;
    return s;
}

LayerSpec dropout(std::string name, double p) {
    LayerSpec s = simple(LayerKind::Dropout, std::move(name));
    s.p = p;
    return s;
}

LayerSpec conv(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
               std::size_t pad) {
    LayerSpec s = simple(LayerKind::Conv2d, std::move(name));
    s.in = in;
    s.out = out;
    s.kernel = k;
    s.stride = stride;
    s.padding = pad;
    s.init = Init::KaimingUniform;
    return s;
}

std::string num(std::size_t i) { return std::to_string(i); }

[[noreturn]] void plan_fail(const LayerSpec& l, const std::string& msg) {
    throw ConfigError("layer '" + l.name + "' (" + std::string(nn::kind_name(l.kind)) + "): " + msg);
}

Shape infer(const LayerSpec& l, const Shape& in, std::set<std::string>& names);

Shape infer_chain(const std::vector<LayerSpec>& layers, Shape shape, std::vector<Shape>* per_layer,
                  std::set<std::string>& names) {
    for (const auto& l : layers) {
        if (l.name.empty()) throw ConfigError("layer plan: unnamed " + std::string(nn::kind_name(l.kind)) + " layer");
        if (!names.insert(l.name).second) throw ConfigError("layer plan: duplicate layer name '" + l.name + "'");
        shape = infer(l, shape, names);
        if (per_layer) per_layer->push_back(shape);
    }
    return shape;
}

Shape infer(const LayerSpec& l, const Shape& in, std::set<std::string>& names) {
    auto need_rank = [&](std::size_t r) {
        if (in.size() != r) plan_fail(l, "expected a rank-" + num(r) + " input, got " + nn::shape_string(in));
    };
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) plan_fail(l, msg + ", input " + nn::shape_string(in));
    };
    switch (l.kind) {
        case LayerKind::Linear: {
            need(!in.empty() && in.back() == l.in && l.in > 0 && l.out > 0, "in features " + num(l.in));
            Shape out = in;
            out.back() = l.out;
            return out;
        }
        case LayerKind::ReLU:
        case LayerKind::LeakyReLU:
        case LayerKind::GELU:
        case LayerKind::Sigmoid:
            return in;
        case LayerKind::Dropout:
            need(l.p >= 0.0 && l.p < 1.0, "dropout probability must be in [0, 1)");
            return in;
        case LayerKind::BatchNorm1d:
            need_rank(1);
            need(in[0] == l.features, "features " + num(l.features));
            return in;
        case LayerKind::LayerNorm:
            need(!in.empty() && in.back() == l.features, "features " + num(l.features));
            return in;
        case LayerKind::PatchEmbed:
            need_rank(3);
            need(in[0] == l.in && in[1] == l.image && in[2] == l.image, "expected (" + num(l.in) + ", " +
                                                                             num(l.image) + ", " + num(l.image) + ")");
            if (l.patch == 0 || l.image % l.patch != 0) {
                plan_fail(l, "image size " + num(l.image) + " is not divisible by patch " + num(l.patch));
            }
            return {(l.image / l.patch) * (l.image / l.patch), l.out};
        case LayerKind::TokenMix:
            need_rank(2);
            need(in[0] == l.tokens && l.hidden > 0, "tokens " + num(l.tokens));
            return in;
        case LayerKind::ChannelMix:
            need_rank(2);
            need(in[1] == l.features && l.hidden > 0, "channels " + num(l.features));
            return in;
        case LayerKind::Conv2d: {
            need_rank(3);
            need(in[0] == l.in && l.kernel > 0 && l.stride > 0, "in channels " + num(l.in));
            need(in[1] + 2 * l.padding >= l.kernel && in[2] + 2 * l.padding >= l.kernel, "input smaller than kernel");
            return {l.out, (in[1] + 2 * l.padding - l.kernel) / l.stride + 1,
                    (in[2] + 2 * l.padding - l.kernel) / l.stride + 1};
        }
        case LayerKind::GlobalAvgPool:
            if (l.spatial) {
                need_rank(3);
                return {in[0]};
            }
            need_rank(2);
            return {in[1]};
        case LayerKind::Flatten:
            return {nn::shape_size(in)};
        case LayerKind::Residual: {
            if (l.body.empty()) plan_fail(l, "empty residual body");
            const Shape body = infer_chain(l.body, in, nullptr, names);
            const Shape skip = l.shortcut.empty() ? in : infer_chain(l.shortcut, in, nullptr, names);
            if (body != skip) {
                plan_fail(l, "body output " + nn::shape_string(body) + " does not match shortcut output " +
                                 nn::shape_string(skip));
            }
            return body;
        }
        case LayerKind::Sequential:
            plan_fail(l, "nested Sequential is not allowed in a layer plan");
    }
    plan_fail(l, "unknown layer kind");
}

}  // namespace

std::vector<Shape> validate(const ModelSpec& spec) {
    if (spec.name.empty()) throw ConfigError("model spec: empty name");
    if (spec.input_shape.empty()) throw ConfigError("model '" + spec.name + "': empty input shape");
    if (spec.layers.empty()) throw ConfigError("model '" + spec.name + "': empty layer plan");
    std::vector<Shape> shapes;
    std::set<std::string> names;
    try {
        const Shape out = infer_chain(spec.layers, spec.input_shape, &shapes, names);
        if (out != Shape{1}) throw ConfigError("output shape " + nn::shape_string(out) + ", expected (1)");
    } catch (const ConfigError& e) {
        throw ConfigError("model '" + spec.name + "': " + e.what());
    }
    bool tap_found = false;
    for (const auto& l : spec.layers) tap_found = tap_found || l.name == spec.embedding_tap;
    if (!tap_found) {
        throw ConfigError("model '" + spec.name + "': embedding tap '" + spec.embedding_tap +
                          "' does not name a top-level layer");
    }
    const auto& p = spec.plan;
    if (p.batch_size == 0 || p.max_epochs == 0) {
        throw ConfigError("model '" + spec.name + "': batch size and max epochs must be positive");
    }
    if (!(p.optimizer.lr > 0.0)) throw ConfigError("model '" + spec.name + "': learning rate must be positive");
    return shapes;
}

std::size_t tap_width(const ModelSpec& spec) {
    const auto shapes = validate(spec);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].name == spec.embedding_tap) return nn::shape_size(shapes[i]);
    }
    return 0;
}

// ---------------------------------------------------------------- JSON

namespace {

LayerKind parse_kind(const std::string& s) {
    for (std::uint32_t t = 1; t <= 16; ++t) {
        if (nn::kind_name(static_cast<LayerKind>(t)) == s) return static_cast<LayerKind>(t);
    }
    throw ConfigError("unknown layer kind '" + s + "'");
}

std::string init_name(Init i) { return i == Init::KaimingUniform ? "kaiming_uniform" : "xavier_uniform"; }

Init parse_init(const std::string& s) {
    if (s == "kaiming_uniform") return Init::KaimingUniform;
    if (s == "xavier_uniform") return Init::XavierUniform;
    throw ConfigError("unknown init '" + s + "'");
}

Json layer_json(const LayerSpec& l) {
    Json j;
    j["kind"] = std::string(nn::kind_name(l.kind));
    j["name"] = l.name;
    switch (l.kind) {
        case LayerKind::Linear:
            j["in"] = l.in;
            j["out"] = l.out;
            j["init"] = init_name(l.init);
            break;
        case LayerKind::LeakyReLU: j["slope"] = l.slope; break;
        case LayerKind::Dropout: j["p"] = l.p; break;
        case LayerKind::BatchNorm1d:
        case LayerKind::LayerNorm: j["features"] = l.features; break;
        case LayerKind::PatchEmbed:
            j["in"] = l.in;
            j["image"] = l.image;
            j["patch"] = l.patch;
            j["out"] = l.out;
            j["init"] = init_name(l.init);
            break;
        case LayerKind::TokenMix:
            j["tokens"] = l.tokens;
            j["hidden"] = l.hidden;
            j["init"] = init_name(l.init);
            break;
        case LayerKind::ChannelMix:
            j["features"] = l.features;
            j["hidden"] = l.hidden;
            j["init"] = init_name(l.init);
            break;
        case LayerKind::Conv2d:
            j["in"] = l.in;
            j["out"] = l.out;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            j["padding"] = l.padding;
            j["init"] = init_name(l.init);
            break;
        case LayerKind::GlobalAvgPool: j["over"] = l.spatial ? "spatial" : "tokens"; break;
        case LayerKind::Residual: {
            Json body = Json::array(), skip = Json::array();
            for (const auto& c : l.body) body.push_back(layer_json(c));
            for (const auto& c : l.shortcut) skip.push_back(layer_json(c));
            j["body"] = body;
            j["shortcut"] = skip;
            break;
        }
        default: break;
    }
    return j;
}

template <class T>
T field(const Json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("field '") + key + "' has the wrong type");
    }
}

template <class T>
T required(const Json& j, const char* key) {
    if (!j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
    return field<T>(j, key, T{});
}

LayerSpec layer_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("layer entry must be an object");
    LayerSpec l;
    l.kind = parse_kind(required<std::string>(j, "kind"));
    l.name = required<std::string>(j, "name");
    l.in = field<std::size_t>(j, "in", 0);
    l.out = field<std::size_t>(j, "out", 0);
    l.features = field<std::size_t>(j, "features", 0);
    l.hidden = field<std::size_t>(j, "hidden", 0);
    l.tokens = field<std::size_t>(j, "tokens", 0);
    l.kernel = field<std::size_t>(j, "kernel", 0);
    l.stride = field<std::size_t>(j, "stride", 1);
    l.padding = field<std::size_t>(j, "padding", 0);
    l.image = field<std::size_t>(j, "image", 0);
    l.patch = field<std::size_t>(j, "patch", 0);
    l.p = field<double>(j, "p", 0.0);
    l.slope = field<double>(j, "slope", 0.01);
    const auto over = field<std::string>(j, "over", "tokens");
    if (over != "tokens" && over != "spatial") throw ConfigError("layer '" + l.name + "': unknown pooling '" + over + "'");
    l.spatial = over == "spatial";
    l.init = parse_init(field<std::string>(j, "init", "kaiming_uniform"));
    for (const auto& c : field<Json>(j, "body", Json::array())) l.body.push_back(layer_from_json(c));
    for (const auto& c : field<Json>(j, "shortcut", Json::array())) l.shortcut.push_back(layer_from_json(c));
    return l;
}

}  // namespace

std::string to_json(const ModelSpec& spec) {
    Json j;
    j["name"] = spec.name;
    j["modality"] = to_string(spec.modality);
    j["input_shape"] = spec.input_shape;
    j["embedding_tap"] = spec.embedding_tap;
    Json t;
    const auto& p = spec.plan;
    t["optimizer"] = nn::to_string(p.optimizer.kind);
    t["lr"] = p.optimizer.lr;
    if (p.optimizer.kind == nn::OptimizerKind::AdamW) {
        t["beta1"] = p.optimizer.beta1;
        t["beta2"] = p.optimizer.beta2;
        t["eps"] = p.optimizer.eps;
        t["weight_decay"] = p.optimizer.weight_decay;
    }
    t["batch_size"] = p.batch_size;
    t["max_epochs"] = p.max_epochs;
    t["patience"] = p.patience;
    t["seed"] = p.seed;
    if (p.target_accuracy) t["target_accuracy"] = *p.target_accuracy;
    j["training"] = t;
    Json layers = Json::array();
    for (const auto& l : spec.layers) layers.push_back(layer_json(l));
    j["layers"] = layers;
    return j.dump(2);
}

namespace {

ModelSpec spec_from(const Json& j) {
    if (!j.is_object()) throw ConfigError("model spec must be a JSON object");
    ModelSpec s;
    s.name = required<std::string>(j, "name");
    s.modality = parse_modality(required<std::string>(j, "modality"));
    s.input_shape = required<Shape>(j, "input_shape");
    s.embedding_tap = required<std::string>(j, "embedding_tap");
    const Json t = required<Json>(j, "training");
    auto& p = s.plan;
    p.optimizer.kind = nn::parse_optimizer(field<std::string>(t, "optimizer", "sgd"));
    p.optimizer.lr = required<double>(t, "lr");
    p.optimizer.beta1 = field<double>(t, "beta1", 0.9);
    p.optimizer.beta2 = field<double>(t, "beta2", 0.999);
    p.optimizer.eps = field<double>(t, "eps", 1e-8);
    p.optimizer.weight_decay = field<double>(t, "weight_decay", 0.0);
    p.batch_size = required<std::size_t>(t, "batch_size");
    p.max_epochs = required<std::size_t>(t, "max_epochs");
    p.patience = field<std::size_t>(t, "patience", 0);
    p.seed = field<std::uint64_t>(t, "seed", 0);
    if (t.contains("target_accuracy") && !t["target_accuracy"].is_null()) {
        p.target_accuracy = field<double>(t, "target_accuracy", 1.0);
    }
    for (const auto& l : required<Json>(j, "layers")) s.layers.push_back(layer_from_json(l));
    validate(s);
    return s;
}

}  // namespace

ModelSpec spec_from_json(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("model spec: ") + e.what());
    }
    return spec_from(j);
}

std::string config_hash(const ModelSpec& spec) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(spec))));
    return buf;
}

// ---------------------------------------------------------------- builders

namespace {

TrainingPlan sgd_plan(double lr, std::size_t batch, std::size_t epochs, std::size_t patience = 0) {
    TrainingPlan p;
    p.optimizer.kind = nn::OptimizerKind::SGD;
    p.optimizer.lr = lr;
    p.batch_size = batch;
    p.max_epochs = epochs;
    p.patience = patience;
    return p;
}

constexpr double kFfnLr = 0.2045;

}  // namespace

ModelSpec build_ffn_expression() {
    ModelSpec s;
    s.name = "ffn_expression";
    s.modality = Modality::Expression;
    s.input_shape = {52};
    s.layers = {
        linear("fc1", 52, 32, Init::KaimingUniform), batchnorm("bn1", 32), simple(LayerKind::ReLU, "relu1"),
        linear("fc2", 32, 10, Init::KaimingUniform), batchnorm("bn2", 10), simple(LayerKind::ReLU, "relu2"),
        linear("head", 10, 1, Init::XavierUniform),  simple(LayerKind::Sigmoid, "sigmoid"),
    };
    s.embedding_tap = "relu2";
    s.plan = sgd_plan(kFfnLr, 256, 1000);
    return s;
}

ModelSpec build_ffn_coordinates() {
    ModelSpec s;
    s.name = "ffn_coordinates";
    s.modality = Modality::Coordinates;
    s.input_shape = {956};
    const std::size_t widths[] = {956, 512, 256, 128, 64, 32};
    const double drops[] = {0.25, 0.3, 0.5, 0.1};
    for (std::size_t i = 1; i < 6; ++i) {
        s.layers.push_back(linear("fc" + num(i), widths[i - 1], widths[i], Init::KaimingUniform));
        s.layers.push_back(batchnorm("bn" + num(i), widths[i]));
        s.layers.push_back(simple(LayerKind::ReLU, "relu" + num(i)));
        if (i <= 4) s.layers.push_back(dropout("drop" + num(i), drops[i - 1]));
    }
    s.layers.push_back(linear("head", 32, 1, Init::XavierUniform));
    s.layers.push_back(simple(LayerKind::Sigmoid, "sigmoid"));
    s.embedding_tap = "relu5";
    s.plan = sgd_plan(kFfnLr, 256, 3000);
    return s;
}

ModelSpec build_ffn_handcrafted() {
    ModelSpec s;
    s.name = "ffn_handcrafted";
    s.modality = Modality::Handcrafted;
    s.input_shape = {29};
    std::size_t in = 29;
    for (std::size_t i = 1; i <= 15; ++i) {
        s.layers.push_back(linear("fc" + num(i), in, 59, Init::KaimingUniform));
        s.layers.push_back(simple(LayerKind::ReLU, "relu" + num(i)));
        s.layers.push_back(batchnorm("bn" + num(i), 59));
        in = 59;
    }
    s.layers.push_back(linear("head", 59, 1, Init::XavierUniform));
    s.layers.push_back(simple(LayerKind::Sigmoid, "sigmoid"));
    s.embedding_tap = "bn15";
    s.plan = sgd_plan(kFfnLr, 256, 3000);
    return s;
}

ModelSpec build_mixer_mini(const MixerConfig& c) {
    if (c.patch == 0 || c.image_size % c.patch != 0) {
        throw ConfigError("mixer: image size " + num(c.image_size) + " is not divisible by patch " + num(c.patch));
    }
    if (c.depth == 0 || c.dim == 0 || c.token_mlp == 0 || c.channel_mlp == 0) {
        throw ConfigError("mixer: depth and widths must be positive");
    }
    const std::size_t tokens = (c.image_size / c.patch) * (c.image_size / c.patch);
    ModelSpec s;
    s.name = "mixer_mini";
    s.modality = c.channels == 1 ? Modality::BnwImage : Modality::RgbImage;
    s.input_shape = {c.channels, c.image_size, c.image_size};
    LayerSpec embed = simple(LayerKind::PatchEmbed, "patch_embed");
    embed.in = c.channels;
    embed.image = c.image_size;
    embed.patch = c.patch;
    embed.out = c.dim;
    embed.init = Init::XavierUniform;
    s.layers.push_back(embed);
    for (std::size_t b = 1; b <= c.depth; ++b) {
        const std::string p = "block" + num(b);
        LayerSpec tok = simple(LayerKind::Residual, p + ".token");
        LayerSpec tm = simple(LayerKind::TokenMix, p + ".token_mix");
        tm.tokens = tokens;
        tm.hidden = c.token_mlp;
        tm.init = Init::XavierUniform;
        tok.body = {layernorm(p + ".token_norm", c.dim), tm};
        LayerSpec ch = simple(LayerKind::Residual, p + ".channel");
        LayerSpec cm = simple(LayerKind::ChannelMix, p + ".channel_mix");
        cm.features = c.dim;
        cm.hidden = c.channel_mlp;
        cm.init = Init::XavierUniform;
        ch.body = {layernorm(p + ".channel_norm", c.dim), cm};
        s.layers.push_back(tok);
        s.layers.push_back(ch);
    }
    s.layers.push_back(layernorm("final_norm", c.dim));
    s.layers.push_back(simple(LayerKind::GlobalAvgPool, "pool"));
    s.layers.push_back(linear("head", c.dim, 1, Init::XavierUniform));
    s.layers.push_back(simple(LayerKind::Sigmoid, "sigmoid"));
    s.embedding_tap = "pool";
    s.plan = sgd_plan(0.01, 256, 40);
    return s;
}

ModelSpec build_resnet_mini(const ResNetConfig& c, bool bnw) {
    if (c.widths.empty() || c.blocks_per_stage == 0 || c.head == 0) {
        throw ConfigError("resnet: stages, blocks and head width must be positive");
    }
    ModelSpec s;
    s.name = bnw ? "resnet_mini_bnw" : "resnet_mini";
    s.modality = bnw ? Modality::BnwImage : Modality::RgbImage;
    const std::size_t channels = bnw ? 1 : c.channels;
    s.input_shape = {channels, c.image_size, c.image_size};
    s.layers.push_back(conv("stem", channels, c.stem, 3, 1, 1));
    std::size_t in = c.stem;
    for (std::size_t st = 0; st < c.widths.size(); ++st) {
        for (std::size_t b = 0; b < c.blocks_per_stage; ++b) {
            const std::string p = "stage" + num(st + 1) + ".block" + num(b + 1);
            const std::size_t out = c.widths[st];
            const std::size_t stride = (st > 0 && b == 0) ? 2 : 1;
            LayerSpec r = simple(LayerKind::Residual, p);
            r.body = {simple(LayerKind::ReLU, p + ".relu1"), conv(p + ".conv1", in, out, 3, stride, 1),
                      simple(LayerKind::ReLU, p + ".relu2"), conv(p + ".conv2", out, out, 3, 1, 1)};
            if (stride != 1 || in != out) r.shortcut = {conv(p + ".proj", in, out, 1, stride, 0)};
            s.layers.push_back(r);
            in = out;
        }
    }
    s.layers.push_back(simple(LayerKind::ReLU, "final_relu"));
    LayerSpec gap = simple(LayerKind::GlobalAvgPool, "pool");
    gap.spatial = true;
    s.layers.push_back(gap);
    s.layers.push_back(linear("fc", in, c.head, Init::KaimingUniform));
    s.layers.push_back(simple(LayerKind::ReLU, "fc_relu"));
    s.layers.push_back(dropout("fc_drop", c.dropout));
    s.layers.push_back(batchnorm("fc_bn", c.head));
    s.layers.push_back(linear("head", c.head, 1, Init::XavierUniform));
    s.layers.push_back(simple(LayerKind::Sigmoid, "sigmoid"));
    s.embedding_tap = "fc_bn";
    s.plan = bnw ? sgd_plan(0.01, 128, 100, 3) : sgd_plan(0.01, 256, 20);
    return s;
}

ModelSpec build_fusion_head(std::size_t input_width, double lr) {
    if (input_width == 0) throw ConfigError("fusion head: input width must be positive");
    ModelSpec s;
    s.name = "fusion_head";
    s.modality = Modality::Embedding;
    s.input_shape = {input_width};
    const std::size_t widths[] = {input_width, 256, 64, 16};
    for (std::size_t i = 1; i < 4; ++i) {
        s.layers.push_back(linear("fc" + num(i), widths[i - 1], widths[i], Init::KaimingUniform));
        s.layers.push_back(batchnorm("bn" + num(i), widths[i]));
        LayerSpec act = simple(LayerKind::LeakyReLU, "act" + num(i));
        act.slope = 0.01;
        s.layers.push_back(act);
    }
    s.layers.push_back(linear("head", 16, 1, Init::XavierUniform));
    s.layers.push_back(simple(LayerKind::Sigmoid, "sigmoid"));
    s.embedding_tap = "act3";
    s.plan = sgd_plan(lr, 128, 100, 3);
    return s;
}

// ---------------------------------------------------------------- instantiate

namespace {

void build_into(nn::Sequential& seq, const std::vector<LayerSpec>& specs,
                std::vector<std::pair<nn::Layer*, Init>>& inits);

std::unique_ptr<nn::Layer> build_layer(const LayerSpec& l, std::vector<std::pair<nn::Layer*, Init>>& inits) {
    std::unique_ptr<nn::Layer> out;
    switch (l.kind) {
        case LayerKind::Linear: out = std::make_unique<nn::Linear>(l.name, l.in, l.out); break;
        case LayerKind::ReLU: out = std::make_unique<nn::ReLU>(l.name); break;
        case LayerKind::LeakyReLU: out = std::make_unique<nn::LeakyReLU>(l.name, l.slope); break;
        case LayerKind::GELU: out = std::make_unique<nn::GELU>(l.name); break;
        case LayerKind::Sigmoid: out = std::make_unique<nn::Sigmoid>(l.name); break;
        case LayerKind::Dropout: out = std::make_unique<nn::Dropout>(l.name, l.p); break;
        case LayerKind::BatchNorm1d: out = std::make_unique<nn::BatchNorm1d>(l.name, l.features); break;
        case LayerKind::LayerNorm: out = std::make_unique<nn::LayerNorm>(l.name, l.features); break;
        case LayerKind::PatchEmbed:
            out = std::make_unique<nn::PatchEmbed>(l.name, l.in, l.image, l.patch, l.out);
            break;
        case LayerKind::TokenMix: out = std::make_unique<nn::TokenMix>(l.name, l.tokens, l.hidden); break;
        case LayerKind::ChannelMix: out = std::make_unique<nn::ChannelMix>(l.name, l.features, l.hidden); break;
        case LayerKind::Conv2d:
            out = std::make_unique<nn::Conv2d>(l.name, l.in, l.out, l.kernel, l.stride, l.padding);
            break;
        case LayerKind::GlobalAvgPool:
            out = std::make_unique<nn::GlobalAvgPool>(
                l.name, l.spatial ? nn::GlobalAvgPool::Over::Spatial : nn::GlobalAvgPool::Over::Tokens);
            break;
        case LayerKind::Flatten: out = std::make_unique<nn::Flatten>(l.name); break;
        case LayerKind::Residual: {
            inits.emplace_back(nullptr, l.init);
            const std::size_t slot = inits.size() - 1;
            auto body = std::make_unique<nn::Sequential>(l.name + ".body");
            build_into(*body, l.body, inits);
            std::unique_ptr<nn::Sequential> skip;
            if (!l.shortcut.empty()) {
                skip = std::make_unique<nn::Sequential>(l.name + ".shortcut");
                build_into(*skip, l.shortcut, inits);
            }
            out = std::make_unique<nn::Residual>(l.name, std::move(body), std::move(skip));
            inits[slot].first = out.get();
            return out;
        }
        case LayerKind::Sequential: throw ConfigError("nested Sequential is not allowed in a layer plan");
    }
    inits.emplace_back(out.get(), l.init);
    return out;
}

void build_into(nn::Sequential& seq, const std::vector<LayerSpec>& specs,
                std::vector<std::pair<nn::Layer*, Init>>& inits) {
    for (const auto& l : specs) seq.add(build_layer(l, inits));
}

}  // namespace

std::unique_ptr<nn::Sequential> instantiate(const ModelSpec& spec) {
    validate(spec);
    auto net = std::make_unique<nn::Sequential>(spec.name);
    std::vector<std::pair<nn::Layer*, Init>> inits;
    build_into(*net, spec.layers, inits);
    Rng rng(derive_seed(spec.plan.seed, "init"));
    for (auto& [layer, scheme] : inits) layer->init(rng, scheme);
    nn::reseed_all(*net, derive_seed(spec.plan.seed, "dropout"));
    return net;
}

// ---------------------------------------------------------------- TrainedModel

TrainedModel::TrainedModel(ModelSpec spec, std::unique_ptr<nn::Sequential> net, std::vector<EpochStats> log)
    : spec_(std::move(spec)), net_(std::move(net)), log_(std::move(log)), hash_(models::config_hash(spec_)) {}

TrainedModel TrainedModel::untrained(ModelSpec spec) {
    auto net = instantiate(spec);
    return TrainedModel(std::move(spec), std::move(net), {});
}

// ---------------------------------------------------------------- training

namespace {

void check_inputs(const ModelSpec& spec, const nn::Tensor& inputs) {
    Shape per_sample(inputs.shape().begin() + (inputs.rank() > 0 ? 1 : 0), inputs.shape().end());
    if (inputs.rank() == 0 || per_sample != spec.input_shape) {
        throw ShapeError("modality mismatch: model '" + spec.name + "' expects " + to_string(spec.modality) +
                         " input " + nn::shape_string(spec.input_shape) + " per sample, got batch " +
                         nn::shape_string(inputs.shape()));
    }
}

nn::Tensor run_chunks(nn::Sequential& net, const nn::Tensor& inputs, std::size_t chunk, std::size_t last) {
    const std::size_t n = inputs.dim(0);
    if (chunk == 0) chunk = n;
    nn::Tensor out;
    for (std::size_t b = 0; b < n; b += chunk) {
        const std::size_t count = std::min(chunk, n - b);
        nn::Tensor y = net.forward_until(inputs.rows(b, count), last, nn::Mode::Eval);
        const std::size_t width = y.size() / count;
        if (out.empty()) out = nn::Tensor({n, width});
        std::copy(y.data(), y.data() + y.size(), out.data() + b * width);
    }
    return out;
}

std::vector<double> eval_forward(nn::Sequential& net, const nn::Tensor& inputs, std::size_t chunk) {
    return run_chunks(net, inputs, chunk, net.size() - 1).storage();
}

}  // namespace

double accuracy(const std::vector<double>& p, const std::vector<double>& labels) {
    if (p.size() != labels.size() || p.empty()) throw ShapeError("accuracy: size mismatch or empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < p.size(); ++i) hit += ((p[i] >= 0.5) == (labels[i] >= 0.5)) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(p.size());
}

TrainedModel train(const ModelSpec& spec, const Dataset& data, const EpochCallback& on_epoch) {
    validate(spec);
    if (data.inputs.empty() || data.labels.empty()) throw ConfigError("train '" + spec.name + "': empty dataset");
    check_inputs(spec, data.inputs);
    const std::size_t n = data.inputs.dim(0);
    if (data.labels.size() != n) {
        throw ShapeError("train '" + spec.name + "': " + num(n) + " inputs but " + num(data.labels.size()) + " labels");
    }
    for (double y : data.labels) {
        if (y != 0.0 && y != 1.0) throw ConfigError("train '" + spec.name + "': labels must be 0 or 1");
    }
    for (std::size_t i = 0; i < data.inputs.size(); ++i) {
        if (!std::isfinite(data.inputs[i])) {
            throw ConfigError("train '" + spec.name + "': input value " + num(i) + " is not finite");
        }
    }

    auto net = instantiate(spec);
    const auto& plan = spec.plan;
    nn::Optimizer opt(plan.optimizer, nn::all_params(*net));
    Rng order_rng(derive_seed(plan.seed, "order"));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    // A trailing single-sample batch would give BatchNorm zero variance; fold it
    // into the previous batch.
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t b = 0; b < n; b += plan.batch_size) batches.emplace_back(b, std::min(plan.batch_size, n - b));
    if (batches.size() > 1 && batches.back().second < 2) {
        batches[batches.size() - 2].second += batches.back().second;
        batches.pop_back();
    }

    std::vector<EpochStats> log;
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    for (std::size_t epoch = 1; epoch <= plan.max_epochs; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t hits = 0;
        for (const auto& [begin, count] : batches) {
            const std::span<const std::size_t> idx(order.data() + begin, count);
            const nn::Tensor x = data.inputs.gather(idx);
            nn::Tensor y({count, 1});
            for (std::size_t i = 0; i < count; ++i) y[i] = data.labels[idx[i]];
            const nn::Tensor p = net->forward(x, nn::Mode::Train);
            const auto loss = nn::bce_loss(p, y);
            if (!std::isfinite(loss.loss)) {
                throw TrainingDiverged("train '" + spec.name + "': loss is not finite at epoch " + num(epoch), epoch);
            }
            net->backward(loss.grad);
            opt.step();
            loss_sum += loss.loss * static_cast<double>(count);
            for (std::size_t i = 0; i < count; ++i) hits += ((p[i] >= 0.5) == (y[i] >= 0.5)) ? 1 : 0;
        }
        EpochStats st{epoch, loss_sum / static_cast<double>(n), static_cast<double>(hits) / static_cast<double>(n)};
        log.push_back(st);
        if (on_epoch) on_epoch(st);

        if (plan.target_accuracy &&
            accuracy(eval_forward(*net, data.inputs, 256), data.labels) >= *plan.target_accuracy) {
            break;
        }
        if (plan.patience > 0) {
            if (st.loss < best - 1e-6) {
                best = st.loss;
                stale = 0;
            } else if (++stale >= plan.patience) {
                break;
            }
        }
    }
    return TrainedModel(spec, std::move(net), std::move(log));
}

std::vector<double> predict_proba(TrainedModel& model, const nn::Tensor& inputs, std::size_t chunk) {
    check_inputs(model.spec(), inputs);
    return eval_forward(model.network(), inputs, chunk);
}

nn::Tensor embed(TrainedModel& model, const nn::Tensor& inputs, std::size_t chunk) {
    check_inputs(model.spec(), inputs);
    auto& net = model.network();
    return run_chunks(net, inputs, chunk, net.index_of(model.spec().embedding_tap));
}

}  // namespace palsyfuse::models
