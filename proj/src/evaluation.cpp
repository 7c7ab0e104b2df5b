#include "palsyfuse/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include <json.hpp>

#include "palsyfuse/error.hpp"
#include "palsyfuse/io.hpp"
#include "palsyfuse/rng.hpp"

namespace palsyfuse::evaluation {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- metrics

MetricsRecord metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
    MetricsRecord m{tp, fp, fn, tn};
    const auto ratio = [](std::size_t a, std::size_t b) {
        return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
    };
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

MetricsRecord compute_metrics(std::span<const BinaryLabel> predicted, std::span<const BinaryLabel> truth) {
    if (predicted.size() != truth.size()) {
        throw ShapeError("metrics: " + std::to_string(predicted.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " labels");
    }
    if (predicted.empty()) throw ShapeError("metrics: no predictions");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool p = predicted[i] == BinaryLabel::Palsy, t = truth[i] == BinaryLabel::Palsy;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
        tn += !p && !t;
    }
    return metrics_from_counts(tp, fp, fn, tn);
}

// ---------------------------------------------------------------- sampling

std::vector<std::size_t> round_robin_sample(std::span<const SampleKey> frames, std::size_t n, std::uint64_t) {
    if (n == 0) throw ConfigError("round_robin_sample: n must be positive");
    std::map<int, std::vector<std::size_t>> classes;
    for (std::size_t i = 0; i < frames.size(); ++i) classes[frames[i].class_key].push_back(i);
    for (auto& [key, idx] : classes) {
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return frames[a].frame_id < frames[b].frame_id; });
    }
    std::vector<std::size_t> out;
    const std::size_t want = std::min(n, frames.size());
    out.reserve(want);
    std::map<int, std::size_t> next;
    while (out.size() < want) {
        for (const auto& [key, idx] : classes) {
            if (out.size() == want) break;
            auto& k = next[key];
            if (k < idx.size()) out.push_back(idx[k++]);
        }
    }
    return out;
}

std::vector<const LandmarkFrame*> round_robin_sample(std::span<const LandmarkFrame* const> frames, std::size_t n,
                                                     std::uint64_t seed) {
    std::vector<SampleKey> keys;
    keys.reserve(frames.size());
    for (const auto* f : frames) keys.push_back({f->frame_id, f->effective_label().class_key()});
    std::vector<const LandmarkFrame*> out;
    for (auto i : round_robin_sample(keys, n, seed)) out.push_back(frames[i]);
    return out;
}

// ---------------------------------------------------------------- LOPO plan

std::size_t SplitPlan::train_target() const {
    std::size_t n = 0;
    for (const auto& d : train_palsy) n += d.target;
    for (const auto& d : train_healthy) n += d.target;
    return n;
}

std::size_t SplitPlan::test_target() const {
    std::size_t n = 0;
    for (const auto& d : test) n += d.target;
    return n;
}

std::vector<SplitPlan> make_lopo_plan(const DatasetManifest& manifest, const ProtocolConfig& c, std::uint64_t seed) {
    if (c.train_healthy == 0 || c.test_healthy == 0 || c.train_samples == 0 || c.test_palsy_samples == 0 ||
        c.test_healthy_samples == 0) {
        throw ConfigError("protocol: subject and sample counts must be positive");
    }
    std::vector<std::string> palsy, healthy;
    for (const auto& s : manifest.subjects) (is_palsy_subject(s) ? palsy : healthy).push_back(s.subject_id);
    const std::size_t need_healthy = c.train_healthy + c.test_healthy;
    if (healthy.size() < need_healthy) {
        throw PlanError("LOPO plan needs " + std::to_string(need_healthy) + " healthy subjects (" +
                        std::to_string(c.train_healthy) + " train + " + std::to_string(c.test_healthy) +
                        " disjoint test), manifest has " + std::to_string(healthy.size()));
    }
    if (palsy.size() < 2) {
        throw PlanError("LOPO plan needs at least 2 palsy subjects, manifest has " + std::to_string(palsy.size()));
    }
    std::sort(healthy.begin(), healthy.end());

    std::vector<SplitPlan> plans;
    for (std::size_t k = 0; k < palsy.size(); ++k) {
        const std::string tag = "fold" + std::to_string(k);
        SplitPlan p;
        p.fold = k;
        p.held_out = palsy[k];
        p.seed = derive_seed(seed, tag);
        for (std::size_t j = 0; j < palsy.size(); ++j) {
            if (j != k) p.train_palsy.push_back({palsy[j], c.train_samples});
        }
        auto order = healthy;
        Rng rng(derive_seed(seed, tag + "/healthy"));
        rng.shuffle(order.begin(), order.end());
        p.test.push_back({p.held_out, c.test_palsy_samples});
        for (std::size_t j = 0; j < need_healthy; ++j) {
            if (j < c.train_healthy) {
                p.train_healthy.push_back({order[j], c.train_samples});
            } else {
                p.test.push_back({order[j], c.test_healthy_samples});
            }
        }
        plans.push_back(std::move(p));
    }
    return plans;
}

FrameIndex index_frames(std::span<const LandmarkFrame> frames) {
    FrameIndex index;
    for (const auto& f : frames) index[f.subject_id].push_back(&f);
    return index;
}

FoldSamples draw_samples(const SplitPlan& plan, const FrameIndex& index) {
    auto draw = [&](const std::vector<SubjectDraw>& list, std::vector<const LandmarkFrame*>& out) {
        for (const auto& d : list) {
            auto it = index.find(d.subject_id);
            if (it == index.end()) throw PlanError("fold " + std::to_string(plan.fold) + ": no frames for " + d.subject_id);
            auto picked = round_robin_sample(it->second, d.target, plan.seed);
            out.insert(out.end(), picked.begin(), picked.end());
        }
    };
    FoldSamples s;
    draw(plan.train_palsy, s.train);
    draw(plan.train_healthy, s.train);
    draw(plan.test, s.test);
    return s;
}

// ---------------------------------------------------------------- run config

namespace {

const std::set<std::string> kArchitectures = {"ffn_handcrafted", "ffn_expression", "ffn_coordinates", "mixer_mini",
                                              "resnet_mini"};

models::Modality default_modality(const std::string& arch) {
    if (arch == "ffn_handcrafted") return models::Modality::Handcrafted;
    if (arch == "ffn_expression") return models::Modality::Expression;
    if (arch == "ffn_coordinates") return models::Modality::Coordinates;
    return models::Modality::RgbImage;
}

void check_keys(const ojson& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

template <class T>
T get(const ojson& obj, const char* key, const std::string& where, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + ": '" + key + "' has the wrong type");
    }
}

std::size_t get_count(const ojson& obj, const char* key, const std::string& where, std::size_t fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where + ": '" + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::optional<fs::path> get_path(const ojson& obj, const char* key, const std::string& where, const fs::path& base) {
    if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
    return resolve(base, get<std::string>(obj, key, where, ""));
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: malformed JSON: ") + e.what());
    }
    check_keys(j, "run config",
               {"format", "seed", "data", "roles", "contours", "image_size", "rgb_dir", "bnw_dir", "protocol",
                "models", "fusions", "threads", "output_dir"});
    const std::string format = get<std::string>(j, "format", "run config", "palsyfuse-run/1");
    if (format != "palsyfuse-run/1") throw ConfigError("run config: unsupported format '" + format + "'");

    RunConfig c;
    if (j.contains("seed") && !j["seed"].is_number_unsigned()) {
        throw ConfigError("run config: 'seed' must be a non-negative integer");
    }
    c.seed = get<std::uint64_t>(j, "seed", "run config", 42);

    if (!j.contains("data")) throw ConfigError("run config: missing 'data'");
    const auto& d = j["data"];
    check_keys(d, "data", {"frames", "synthetic"});
    if (d.contains("frames") == d.contains("synthetic")) {
        throw ConfigError("data: give exactly one of 'frames' or 'synthetic'");
    }
    c.data.frames = get_path(d, "frames", "data", base_dir);
    if (d.contains("synthetic")) {
        const auto& s = d["synthetic"];
        check_keys(s, "data.synthetic",
                   {"palsy_subjects", "healthy_subjects", "frames_per_subject", "min_severity", "max_severity",
                    "jitter", "seed"});
        auto& cs = c.data.synthetic;
        cs.palsy_subjects = get_count(s, "palsy_subjects", "data.synthetic", cs.palsy_subjects);
        cs.healthy_subjects = get_count(s, "healthy_subjects", "data.synthetic", cs.healthy_subjects);
        cs.frames_per_subject = get_count(s, "frames_per_subject", "data.synthetic", cs.frames_per_subject);
        cs.min_severity = get<double>(s, "min_severity", "data.synthetic", cs.min_severity);
        cs.max_severity = get<double>(s, "max_severity", "data.synthetic", cs.max_severity);
        cs.jitter_sigma = get<double>(s, "jitter", "data.synthetic", cs.jitter_sigma);
        cs.seed = get<std::uint64_t>(s, "seed", "data.synthetic", c.seed);
    }
    c.roles = get_path(j, "roles", "run config", base_dir);
    c.contours = get_path(j, "contours", "run config", base_dir);
    c.rgb_dir = get_path(j, "rgb_dir", "run config", base_dir);
    c.bnw_dir = get_path(j, "bnw_dir", "run config", base_dir);
    c.output_dir = get_path(j, "output_dir", "run config", base_dir);
    c.image_size = get_count(j, "image_size", "run config", c.image_size);
    if (c.image_size == 0) throw ConfigError("run config: image_size must be positive");
    if (j.contains("threads")) {
        c.threads = get_count(j, "threads", "run config", 1);
        if (*c.threads == 0) throw ConfigError("run config: threads must be positive");
    }

    if (j.contains("protocol")) {
        const auto& p = j["protocol"];
        check_keys(p, "protocol",
                   {"train_healthy", "test_healthy", "train_samples", "test_palsy_samples", "test_healthy_samples"});
        auto& pc = c.protocol;
        pc.train_healthy = get_count(p, "train_healthy", "protocol", pc.train_healthy);
        pc.test_healthy = get_count(p, "test_healthy", "protocol", pc.test_healthy);
        pc.train_samples = get_count(p, "train_samples", "protocol", pc.train_samples);
        pc.test_palsy_samples = get_count(p, "test_palsy_samples", "protocol", pc.test_palsy_samples);
        pc.test_healthy_samples = get_count(p, "test_healthy_samples", "protocol", pc.test_healthy_samples);
    }

    if (!j.contains("models") || !j["models"].is_array() || j["models"].empty()) {
        throw ConfigError("run config: 'models' must be a nonempty array");
    }
    std::set<std::string> names;
    for (const auto& m : j["models"]) {
        check_keys(m, "model", {"name", "architecture", "modality", "mixer", "resnet", "overrides"});
        ModelEntry e;
        e.name = get<std::string>(m, "name", "model", "");
        const std::string where = "model '" + e.name + "'";
        if (e.name.empty()) throw ConfigError("model: missing 'name'");
        if (!names.insert(e.name).second) throw ConfigError(where + ": duplicate name");
        e.architecture = get<std::string>(m, "architecture", where, "");
        if (!kArchitectures.count(e.architecture)) {
            throw ConfigError(where + ": unknown architecture '" + e.architecture + "'");
        }
        e.modality = default_modality(e.architecture);
        if (m.contains("modality")) {
            try {
                e.modality = models::parse_modality(get<std::string>(m, "modality", where, ""));
            } catch (const Error& err) {
                throw ConfigError(where + ": " + err.what());
            }
        }
        const bool image_arch = e.architecture == "mixer_mini" || e.architecture == "resnet_mini";
        if (image_arch ? !(e.modality == models::Modality::RgbImage || e.modality == models::Modality::BnwImage)
                       : e.modality != default_modality(e.architecture)) {
            throw ConfigError(where + ": architecture " + e.architecture + " cannot consume " +
                              models::to_string(e.modality));
        }
        if (m.contains("mixer")) {
            if (e.architecture != "mixer_mini") throw ConfigError(where + ": 'mixer' only applies to mixer_mini");
            const auto& x = m["mixer"];
            check_keys(x, where + ".mixer", {"patch", "dim", "token_mlp", "channel_mlp", "depth"});
            e.mixer.patch = get_count(x, "patch", where, e.mixer.patch);
            e.mixer.dim = get_count(x, "dim", where, e.mixer.dim);
            e.mixer.token_mlp = get_count(x, "token_mlp", where, e.mixer.token_mlp);
            e.mixer.channel_mlp = get_count(x, "channel_mlp", where, e.mixer.channel_mlp);
            e.mixer.depth = get_count(x, "depth", where, e.mixer.depth);
        }
        if (m.contains("resnet")) {
            if (e.architecture != "resnet_mini") throw ConfigError(where + ": 'resnet' only applies to resnet_mini");
            const auto& x = m["resnet"];
            check_keys(x, where + ".resnet", {"stem", "widths", "blocks_per_stage", "head", "dropout"});
            e.resnet.stem = get_count(x, "stem", where, e.resnet.stem);
            e.resnet.widths = get<std::vector<std::size_t>>(x, "widths", where, e.resnet.widths);
            e.resnet.blocks_per_stage = get_count(x, "blocks_per_stage", where, e.resnet.blocks_per_stage);
            e.resnet.head = get_count(x, "head", where, e.resnet.head);
            e.resnet.dropout = get<double>(x, "dropout", where, e.resnet.dropout);
        }
        if (m.contains("overrides")) {
            const auto& o = m["overrides"];
            check_keys(o, where + ".overrides",
                       {"optimizer", "lr", "weight_decay", "batch_size", "max_epochs", "patience"});
            auto& ov = e.overrides;
            if (o.contains("optimizer")) {
                try {
                    ov.optimizer = nn::parse_optimizer(get<std::string>(o, "optimizer", where, ""));
                } catch (const Error& err) {
                    throw ConfigError(where + ": " + err.what());
                }
            }
            if (o.contains("lr")) ov.lr = get<double>(o, "lr", where, 0.0);
            if (o.contains("weight_decay")) ov.weight_decay = get<double>(o, "weight_decay", where, 0.0);
            if (o.contains("batch_size")) ov.batch_size = get_count(o, "batch_size", where, 0);
            if (o.contains("max_epochs")) ov.max_epochs = get_count(o, "max_epochs", where, 0);
            if (o.contains("patience")) ov.patience = get_count(o, "patience", where, 0);
        }
        c.models.push_back(std::move(e));
    }

    if (j.contains("fusions")) {
        if (!j["fusions"].is_array()) throw ConfigError("run config: 'fusions' must be an array");
        for (const auto& f : j["fusions"]) {
            check_keys(f, "fusion", {"name", "mode", "members", "lr", "batch_size", "max_epochs", "patience"});
            fusion::FusionSpec s;
            s.name = get<std::string>(f, "name", "fusion", "");
            const std::string where = "fusion '" + s.name + "'";
            if (s.name.empty()) throw ConfigError("fusion: missing 'name'");
            if (!names.insert(s.name).second) throw ConfigError(where + ": duplicate name");
            s.mode = fusion::parse_fusion_mode(get<std::string>(f, "mode", where, ""));
            const auto members = get<std::vector<std::string>>(f, "members", where, {});
            if (members.size() != 2) throw ConfigError(where + ": exactly 2 members required");
            for (std::size_t i = 0; i < 2; ++i) {
                const bool known = std::any_of(c.models.begin(), c.models.end(),
                                               [&](const ModelEntry& e) { return e.name == members[i]; });
                if (!known) throw ConfigError(where + ": unknown member '" + members[i] + "'");
                s.members[i] = members[i];
            }
            s.lr = get<double>(f, "lr", where, s.lr);
            s.batch_size = get_count(f, "batch_size", where, s.batch_size);
            s.max_epochs = get_count(f, "max_epochs", where, s.max_epochs);
            s.patience = get_count(f, "patience", where, s.patience);
            fusion::validate(s);
            c.fusions.push_back(std::move(s));
        }
    }
    // Building every spec once surfaces shape errors before any training.
    for (const auto& e : c.models) models::validate(model_spec(e, c.seed, c.image_size));
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    return parse_run_config(io::read_file(path), path.parent_path());
}

std::string run_config_to_json(const RunConfig& c) {
    ojson j;
    j["format"] = "palsyfuse-run/1";
    j["seed"] = c.seed;
    ojson d = ojson::object();
    if (c.data.frames) {
        d["frames"] = c.data.frames->generic_string();
    } else {
        const auto& s = c.data.synthetic;
        d["synthetic"] = {{"palsy_subjects", s.palsy_subjects}, {"healthy_subjects", s.healthy_subjects},
                          {"frames_per_subject", s.frames_per_subject}, {"min_severity", s.min_severity},
                          {"max_severity", s.max_severity}, {"jitter", s.jitter_sigma}, {"seed", s.seed}};
    }
    j["data"] = d;
    auto opt_path = [&](const char* key, const std::optional<fs::path>& p) {
        if (p) j[key] = p->generic_string();
    };
    opt_path("roles", c.roles);
    opt_path("contours", c.contours);
    j["image_size"] = c.image_size;
    opt_path("rgb_dir", c.rgb_dir);
    opt_path("bnw_dir", c.bnw_dir);
    const auto& p = c.protocol;
    j["protocol"] = {{"train_healthy", p.train_healthy}, {"test_healthy", p.test_healthy},
                     {"train_samples", p.train_samples}, {"test_palsy_samples", p.test_palsy_samples},
                     {"test_healthy_samples", p.test_healthy_samples}};
    ojson ms = ojson::array();
    for (const auto& e : c.models) {
        ojson m = {{"name", e.name}, {"architecture", e.architecture}, {"modality", models::to_string(e.modality)}};
        if (e.architecture == "mixer_mini") {
            m["mixer"] = {{"patch", e.mixer.patch}, {"dim", e.mixer.dim}, {"token_mlp", e.mixer.token_mlp},
                          {"channel_mlp", e.mixer.channel_mlp}, {"depth", e.mixer.depth}};
        }
        if (e.architecture == "resnet_mini") {
            m["resnet"] = {{"stem", e.resnet.stem}, {"widths", e.resnet.widths},
                           {"blocks_per_stage", e.resnet.blocks_per_stage}, {"head", e.resnet.head},
                           {"dropout", e.resnet.dropout}};
        }
        ojson o = ojson::object();
        const auto& ov = e.overrides;
        if (ov.optimizer) o["optimizer"] = nn::to_string(*ov.optimizer);
        if (ov.lr) o["lr"] = *ov.lr;
        if (ov.weight_decay) o["weight_decay"] = *ov.weight_decay;
        if (ov.batch_size) o["batch_size"] = *ov.batch_size;
        if (ov.max_epochs) o["max_epochs"] = *ov.max_epochs;
        if (ov.patience) o["patience"] = *ov.patience;
        if (!o.empty()) m["overrides"] = o;
        ms.push_back(m);
    }
    j["models"] = ms;
    ojson fs_ = ojson::array();
    for (const auto& f : c.fusions) {
        fs_.push_back({{"name", f.name}, {"mode", fusion::to_string(f.mode)}, {"members", f.members},
                       {"lr", f.lr}, {"batch_size", f.batch_size}, {"max_epochs", f.max_epochs},
                       {"patience", f.patience}});
    }
    j["fusions"] = fs_;
    if (c.threads) j["threads"] = *c.threads;
    opt_path("output_dir", c.output_dir);
    return j.dump(2);
}

std::string config_hash(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(run_config_to_json(c))));
    return buf;
}

models::ModelSpec model_spec(const ModelEntry& e, std::uint64_t seed, std::size_t image_size) {
    models::ModelSpec s;
    const bool bnw = e.modality == models::Modality::BnwImage;
    if (e.architecture == "ffn_handcrafted") {
        s = models::build_ffn_handcrafted();
    } else if (e.architecture == "ffn_expression") {
        s = models::build_ffn_expression();
    } else if (e.architecture == "ffn_coordinates") {
        s = models::build_ffn_coordinates();
    } else if (e.architecture == "mixer_mini") {
        auto mc = e.mixer;
        mc.image_size = image_size;
        mc.channels = bnw ? 1 : 3;
        s = models::build_mixer_mini(mc);
    } else if (e.architecture == "resnet_mini") {
        auto rc = e.resnet;
        rc.image_size = image_size;
        rc.channels = bnw ? 1 : 3;
        s = models::build_resnet_mini(rc, bnw);
    } else {
        throw ConfigError("model '" + e.name + "': unknown architecture '" + e.architecture + "'");
    }
    s.name = e.name;
    s.modality = e.modality;
    const auto& ov = e.overrides;
    if (ov.optimizer) s.plan.optimizer.kind = *ov.optimizer;
    if (ov.lr) s.plan.optimizer.lr = *ov.lr;
    if (ov.weight_decay) s.plan.optimizer.weight_decay = *ov.weight_decay;
    if (ov.batch_size) s.plan.batch_size = *ov.batch_size;
    if (ov.max_epochs) s.plan.max_epochs = *ov.max_epochs;
    if (ov.patience) s.plan.patience = *ov.patience;
    s.plan.seed = seed;
    return s;
}

std::vector<LandmarkFrame> load_frames(const RunConfig& c) {
    if (c.data.frames) return io::read_frames(*c.data.frames);
    return synth::generate_cohort(c.data.synthetic);
}

modalities::ModalitySources modality_sources(const RunConfig& c) {
    modalities::ModalitySources s;
    if (c.roles) s.roles = geometry::RoleMap::load(*c.roles);
    if (c.contours) s.contours = raster::ContourSet::load(*c.contours);
    s.image_size = c.image_size;
    s.rgb_dir = c.rgb_dir;
    s.bnw_dir = c.bnw_dir;
    return s;
}

// ---------------------------------------------------------------- display

std::string modality_display(models::Modality m) {
    switch (m) {
        case models::Modality::Handcrafted: return "Handcrafted features";
        case models::Modality::Expression: return "Expression features";
        case models::Modality::Coordinates: return "Landmark coordinates";
        case models::Modality::RgbImage: return "RGB image";
        case models::Modality::BnwImage: return "Line-segment image (BnW)";
        case models::Modality::Embedding: return "Embeddings";
    }
    return "";
}

std::string architecture_display(const std::string& a) {
    if (a.rfind("ffn_", 0) == 0) return "FFN";
    if (a == "mixer_mini") return "MLP-Mixer (mini)";
    if (a == "resnet_mini") return "ResNet (mini)";
    return a;
}

// ---------------------------------------------------------------- experiment

namespace {

using Manifest = std::vector<std::pair<std::string, std::vector<std::string>>>;

Manifest manifest_of(std::span<const LandmarkFrame* const> frames) {
    Manifest m;
    for (const auto* f : frames) {
        if (m.empty() || m.back().first != f->subject_id) m.push_back({f->subject_id, {}});
        m.back().second.push_back(f->frame_id);
    }
    return m;
}

std::vector<double> labels_of(std::span<const LandmarkFrame* const> frames) {
    std::vector<double> y;
    y.reserve(frames.size());
    for (const auto* f : frames) y.push_back(f->binary_label() == BinaryLabel::Palsy ? 1.0 : 0.0);
    return y;
}

std::string fold_dir_name(std::size_t fold) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fold-%02zu", fold);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

FoldResult run_fold(const RunConfig& config, const SplitPlan& plan, const FrameIndex& index,
                    const modalities::ModalitySources& sources, const RunOptions& options) {
    FoldResult r;
    r.plan = plan;
    const std::string tag = "fold " + std::to_string(plan.fold) + " (" + plan.held_out + ")";
    auto log = [&](const std::string& line) {
        if (options.log) options.log(tag + ": " + line);
    };
    try {
        const auto samples = draw_samples(plan, index);
        r.train_manifest = manifest_of(samples.train);
        r.test_manifest = manifest_of(samples.test);
        const auto y_train = labels_of(samples.train);
        std::vector<BinaryLabel> truth;
        for (const auto* f : samples.test) truth.push_back(f->binary_label());

        std::map<models::Modality, std::pair<nn::Tensor, nn::Tensor>> inputs;
        auto inputs_for = [&](models::Modality m) -> const std::pair<nn::Tensor, nn::Tensor>& {
            auto it = inputs.find(m);
            if (it == inputs.end()) {
                it = inputs
                         .emplace(m, std::pair{modalities::build_inputs(m, samples.train, sources),
                                               modalities::build_inputs(m, samples.test, sources)})
                         .first;
            }
            return it->second;
        };

        std::map<std::string, models::TrainedModel> trained;
        std::map<std::string, models::Modality> modality_of;
        std::vector<std::pair<std::string, std::vector<double>>> probabilities;
        for (const auto& e : config.models) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto spec = model_spec(e, derive_seed(plan.seed, e.name), config.image_size);
            const auto& [x_train, x_test] = inputs_for(e.modality);
            auto model = models::train(spec, {x_train, y_train});
            probabilities.emplace_back(e.name, models::predict_proba(model, x_test));
            modality_of.emplace(e.name, e.modality);
            trained.emplace(e.name, std::move(model));
            char buf[96];
            std::snprintf(buf, sizeof buf, " trained in %.1f s", seconds_since(t0));
            log(e.name + buf);
        }
        auto probs_of = [&](const std::string& name) -> const std::vector<double>& {
            for (const auto& [n, p] : probabilities) {
                if (n == name) return p;
            }
            throw ConfigError("fusion member '" + name + "' was not trained");
        };
        for (const auto& f : config.fusions) {
            const auto t0 = std::chrono::steady_clock::now();
            std::vector<double> p;
            if (f.mode == fusion::FusionMode::Late) {
                p = fusion::late_fuse(probs_of(f.members[0]), probs_of(f.members[1]));
            } else {
                auto spec = f;
                spec.seed = derive_seed(plan.seed, f.name);
                auto& a = trained.at(f.members[0]);
                auto& b = trained.at(f.members[1]);
                const auto& xa = inputs_for(modality_of.at(f.members[0]));
                const auto& xb = inputs_for(modality_of.at(f.members[1]));
                auto head = fusion::early_fuse_train(spec, a, xa.first, b, xb.first, y_train);
                p = fusion::early_fuse_predict(head, a, xa.second, b, xb.second);
            }
            probabilities.emplace_back(f.name, std::move(p));
            char buf[96];
            std::snprintf(buf, sizeof buf, " fused in %.1f s", seconds_since(t0));
            log(f.name + buf);
        }

        for (const auto& [name, p] : probabilities) {
            const auto preds = fusion::make_predictions(samples.test, p);
            std::vector<BinaryLabel> predicted;
            for (const auto& row : preds) predicted.push_back(row.label);
            r.metrics[name] = compute_metrics(predicted, truth);
            if (config.output_dir) {
                fusion::write_predictions_csv(preds, *config.output_dir / fold_dir_name(plan.fold) / (name + ".csv"));
            }
            char buf[128];
            std::snprintf(buf, sizeof buf, " F1 %.4f precision %.4f recall %.4f", r.metrics[name].f1,
                          r.metrics[name].precision, r.metrics[name].recall);
            log(name + buf);
        }
        r.complete = true;
    } catch (const std::exception& e) {
        r.complete = false;
        r.error = e.what();
        r.metrics.clear();
        log(std::string("aborted: ") + e.what());
    }
    return r;
}

}  // namespace

bool RunReport::complete() const {
    return std::all_of(folds.begin(), folds.end(), [](const FoldResult& f) { return f.complete; });
}

void summarize(RunReport& report) {
    for (auto& row : report.rows) {
        row.average.reset();
        row.pooled.reset();
        if (!report.complete() || report.folds.empty()) continue;
        MetricsRecord avg;
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (const auto& f : report.folds) {
            const auto& m = f.metrics.at(row.name);
            avg.precision += m.precision;
            avg.recall += m.recall;
            avg.f1 += m.f1;
            tp += m.tp;
            fp += m.fp;
            fn += m.fn;
            tn += m.tn;
        }
        const auto n = static_cast<double>(report.folds.size());
        avg.precision /= n;
        avg.recall /= n;
        avg.f1 /= n;
        row.average = avg;
        row.pooled = metrics_from_counts(tp, fp, fn, tn);
    }
}

RunReport run_experiment(const RunConfig& config, const RunOptions& options) {
    const auto frames = load_frames(config);
    validate_unique_ids(frames);
    const auto manifest = build_manifest(frames);
    const auto plans = make_lopo_plan(manifest, config.protocol, config.seed);
    const auto sources = modality_sources(config);
    const auto index = index_frames(frames);

    RunReport report;
    report.config_hash = config_hash(config);
    report.seed = config.seed;
    std::map<std::string, const ModelEntry*> entries;
    for (const auto& e : config.models) {
        entries[e.name] = &e;
        report.rows.push_back({e.name, modality_display(e.modality), architecture_display(e.architecture), {}, {}});
    }
    for (const auto& f : config.fusions) {
        const auto* a = entries.at(f.members[0]);
        const auto* b = entries.at(f.members[1]);
        report.rows.push_back({f.name, modality_display(a->modality) + " + " + modality_display(b->modality),
                               std::string(f.mode == fusion::FusionMode::Early ? "Early fusion" : "Late fusion") +
                                   " (" + architecture_display(a->architecture) + " + " +
                                   architecture_display(b->architecture) + ")",
                               {},
                               {}});
    }

    report.folds.resize(plans.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    RunOptions locked = options;
    if (options.log) {
        locked.log = [&](const std::string& line) {
            std::lock_guard lock(log_mutex);
            options.log(line);
        };
    }
    auto worker = [&] {
        for (std::size_t k = next++; k < plans.size(); k = next++) {
            report.folds[k] = run_fold(config, plans[k], index, sources, locked);
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(plans.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    summarize(report);
    return report;
}

// ---------------------------------------------------------------- report IO

namespace {

ojson metrics_json(const MetricsRecord& m) {
    return {{"tp", m.tp},
            {"fp", m.fp},
            {"fn", m.fn},
            {"tn", m.tn},
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1}};
}

MetricsRecord metrics_from_json(const ojson& j) {
    MetricsRecord m;
    m.tp = j.at("tp").get<std::size_t>();
    m.fp = j.at("fp").get<std::size_t>();
    m.fn = j.at("fn").get<std::size_t>();
    m.tn = j.at("tn").get<std::size_t>();
    m.precision = j.at("precision").get<double>();
    m.recall = j.at("recall").get<double>();
    m.f1 = j.at("f1").get<double>();
    return m;
}

ojson draws_json(const std::vector<SubjectDraw>& draws) {
    ojson a = ojson::array();
    for (const auto& d : draws) a.push_back({{"subject_id", d.subject_id}, {"target", d.target}});
    return a;
}

std::vector<SubjectDraw> draws_from_json(const ojson& j) {
    std::vector<SubjectDraw> out;
    for (const auto& d : j) out.push_back({d.at("subject_id").get<std::string>(), d.at("target").get<std::size_t>()});
    return out;
}

ojson manifest_json(const Manifest& m) {
    ojson a = ojson::array();
    for (const auto& [subject, frames] : m) a.push_back({{"subject_id", subject}, {"frames", frames}});
    return a;
}

Manifest manifest_from_json(const ojson& j) {
    Manifest m;
    for (const auto& s : j) {
        m.push_back({s.at("subject_id").get<std::string>(), s.at("frames").get<std::vector<std::string>>()});
    }
    return m;
}

std::size_t manifest_size(const Manifest& m) {
    std::size_t n = 0;
    for (const auto& [s, f] : m) n += f.size();
    return n;
}

}  // namespace

std::string report_to_json(const RunReport& r) {
    ojson j;
    j["format"] = "palsyfuse-report/1";
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    j["status"] = r.complete() ? "complete" : "incomplete";
    ojson folds = ojson::array();
    for (const auto& f : r.folds) {
        ojson fj;
        fj["fold"] = f.plan.fold;
        fj["held_out"] = f.plan.held_out;
        fj["seed"] = f.plan.seed;
        fj["status"] = f.complete ? "complete" : "incomplete";
        fj["error"] = f.complete ? ojson(nullptr) : ojson(f.error);
        fj["plan"] = {{"train_palsy", draws_json(f.plan.train_palsy)},
                      {"train_healthy", draws_json(f.plan.train_healthy)},
                      {"test", draws_json(f.plan.test)}};
        fj["train_size"] = manifest_size(f.train_manifest);
        fj["test_size"] = manifest_size(f.test_manifest);
        fj["train"] = manifest_json(f.train_manifest);
        fj["test"] = manifest_json(f.test_manifest);
        ojson results = ojson::object();
        for (const auto& row : r.rows) {
            auto it = f.metrics.find(row.name);
            if (it != f.metrics.end()) results[row.name] = metrics_json(it->second);
        }
        fj["results"] = results;
        folds.push_back(fj);
    }
    j["folds"] = folds;
    ojson rows = ojson::array();
    for (const auto& row : r.rows) {
        ojson rj = {{"name", row.name}, {"data_modality", row.data_modality}, {"model", row.model}};
        if (row.average) {
            rj["average"] = {{"precision", row.average->precision},
                             {"recall", row.average->recall},
                             {"f1", row.average->f1}};
        } else {
            rj["average"] = nullptr;
        }
        rj["pooled"] = row.pooled ? metrics_json(*row.pooled) : ojson(nullptr);
        rows.push_back(rj);
    }
    j["rows"] = rows;
    return j.dump(2) + "\n";
}

RunReport report_from_json(std::string_view text) {
    try {
        const auto j = ojson::parse(text);
        if (j.at("format").get<std::string>() != "palsyfuse-report/1") {
            throw SchemaError("report: unsupported format '" + j.at("format").get<std::string>() + "'");
        }
        RunReport r;
        r.config_hash = j.at("config_hash").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& fj : j.at("folds")) {
            FoldResult f;
            f.plan.fold = fj.at("fold").get<std::size_t>();
            f.plan.held_out = fj.at("held_out").get<std::string>();
            f.plan.seed = fj.at("seed").get<std::uint64_t>();
            f.plan.train_palsy = draws_from_json(fj.at("plan").at("train_palsy"));
            f.plan.train_healthy = draws_from_json(fj.at("plan").at("train_healthy"));
            f.plan.test = draws_from_json(fj.at("plan").at("test"));
            f.complete = fj.at("status").get<std::string>() == "complete";
            if (!fj.at("error").is_null()) f.error = fj.at("error").get<std::string>();
            f.train_manifest = manifest_from_json(fj.at("train"));
            f.test_manifest = manifest_from_json(fj.at("test"));
            for (const auto& [name, m] : fj.at("results").items()) f.metrics[name] = metrics_from_json(m);
            r.folds.push_back(std::move(f));
        }
        for (const auto& rj : j.at("rows")) {
            RowSummary row;
            row.name = rj.at("name").get<std::string>();
            row.data_modality = rj.at("data_modality").get<std::string>();
            row.model = rj.at("model").get<std::string>();
            if (!rj.at("average").is_null()) {
                MetricsRecord a;
                a.precision = rj["average"].at("precision").get<double>();
                a.recall = rj["average"].at("recall").get<double>();
                a.f1 = rj["average"].at("f1").get<double>();
                row.average = a;
            }
            if (!rj.at("pooled").is_null()) row.pooled = metrics_from_json(rj["pooled"]);
            r.rows.push_back(std::move(row));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("report: ") + e.what());
    }
}

std::string report_to_markdown(const RunReport& r) {
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
        return std::string(buf);
    };
    std::size_t complete = 0;
    for (const auto& f : r.folds) complete += f.complete;
    std::string s = "# Results\n\n";
    s += "Leave-one-patient-out, " + std::to_string(r.folds.size()) + " folds (" + std::to_string(complete) +
         " complete), seed " + std::to_string(r.seed) + ", config " + r.config_hash + ".\n\n";
    s += "| Data Modality | Model | Average F1 | Average Precision | Average Recall |\n";
    s += "|---|---|---|---|---|\n";
    for (const auto& row : r.rows) {
        s += "| " + row.data_modality + " | " + row.model + " | ";
        if (row.average) {
            s += pct(row.average->f1) + " | " + pct(row.average->precision) + " | " + pct(row.average->recall) + " |\n";
        } else {
            s += "n/a | n/a | n/a |\n";
        }
    }
    if (!r.complete()) {
        s += "\nAverages withheld: incomplete folds";
        for (const auto& f : r.folds) {
            if (!f.complete) s += " " + std::to_string(f.plan.fold) + " (" + f.error + ")";
        }
        s += ".\n";
        return s;
    }
    s += "\nAverages are the mean of per-fold metrics. Pooled metrics (one confusion matrix over all test "
         "frames) for reference:\n\n";
    s += "| Name | Pooled F1 | Pooled Precision | Pooled Recall | TP | FP | FN | TN |\n";
    s += "|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : r.rows) {
        if (!row.pooled) continue;
        const auto& p = *row.pooled;
        s += "| " + row.name + " | " + pct(p.f1) + " | " + pct(p.precision) + " | " + pct(p.recall) + " | " +
             std::to_string(p.tp) + " | " + std::to_string(p.fp) + " | " + std::to_string(p.fn) + " | " +
             std::to_string(p.tn) + " |\n";
    }
    return s;
}

}  // namespace palsyfuse::evaluation
