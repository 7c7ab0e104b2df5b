#include "palsyfuse/fusion.hpp"

#include <charconv>
#include <map>
#include <set>
#include <utility>

#include "palsyfuse/error.hpp"
#include "palsyfuse/io.hpp"

namespace palsyfuse::fusion {

std::string to_string(FusionMode m) { return m == FusionMode::Early ? "early" : "late"; }

FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "early") return FusionMode::Early;
    if (s == "late") return FusionMode::Late;
    throw ConfigError("fusion mode must be 'early' or 'late', got '" + s + "'");
}

void validate(const FusionSpec& spec) {
    const std::string who = "fusion '" + spec.name + "': ";
    if (spec.name.empty()) throw ConfigError("fusion: name must not be empty");
    for (const auto& m : spec.members) {
        if (m.empty()) throw ConfigError(who + "member names must not be empty");
    }
    if (spec.members[0] == spec.members[1]) throw ConfigError(who + "members must differ");
    if (spec.mode == FusionMode::Early) {
        if (!(spec.lr > 0.0)) throw ConfigError(who + "lr must be positive");
        if (spec.batch_size == 0) throw ConfigError(who + "batch_size must be positive");
        if (spec.max_epochs == 0) throw ConfigError(who + "max_epochs must be positive");
    }
}

models::ModelSpec head_spec(const FusionSpec& spec, const models::ModelSpec& a, const models::ModelSpec& b) {
    validate(spec);
    auto head = models::build_fusion_head(models::tap_width(a) + models::tap_width(b), spec.lr);
    head.name = spec.name;
    head.plan.batch_size = spec.batch_size;
    head.plan.max_epochs = spec.max_epochs;
    head.plan.patience = spec.patience;
    head.plan.seed = spec.seed;
    return head;
}

nn::Tensor fused_embeddings(models::TrainedModel& a, const nn::Tensor& xa, models::TrainedModel& b,
                            const nn::Tensor& xb) {
    if (xa.rank() == 0 || xb.rank() == 0 || xa.dim(0) != xb.dim(0)) {
        throw ShapeError("fusion: members received " + nn::shape_string(xa.shape()) + " and " +
                         nn::shape_string(xb.shape()) + " (every sample needs both modalities)");
    }
    return nn::concat_columns(models::embed(a, xa), models::embed(b, xb));
}

models::TrainedModel early_fuse_train(const FusionSpec& spec, models::TrainedModel& a, const nn::Tensor& xa,
                                      models::TrainedModel& b, const nn::Tensor& xb,
                                      const std::vector<double>& labels, const models::EpochCallback& on_epoch) {
    if (spec.mode != FusionMode::Early) throw ConfigError("fusion '" + spec.name + "': not an early fusion");
    const auto head = head_spec(spec, a.spec(), b.spec());
    models::Dataset data{fused_embeddings(a, xa, b, xb), labels};
    if (data.inputs.dim(1) != head.input_shape[0]) {
        throw ShapeError("fusion '" + spec.name + "': embedding width " + std::to_string(data.inputs.dim(1)) +
                         " does not match head input " + std::to_string(head.input_shape[0]));
    }
    return models::train(head, data, on_epoch);
}

std::vector<double> early_fuse_predict(models::TrainedModel& head, models::TrainedModel& a,
                                       const nn::Tensor& xa, models::TrainedModel& b, const nn::Tensor& xb) {
    auto z = fused_embeddings(a, xa, b, xb);
    if (z.dim(1) != head.spec().input_shape.at(0)) {
        throw ShapeError("fusion '" + head.spec().name + "': embedding width " + std::to_string(z.dim(1)) +
                         " does not match head input " + std::to_string(head.spec().input_shape.at(0)));
    }
    return models::predict_proba(head, z);
}

BinaryLabel decide(double p) { return p >= 0.5 ? BinaryLabel::Palsy : BinaryLabel::NoPalsy; }

std::vector<double> late_fuse(std::span<const double> pa, std::span<const double> pb) {
    if (pa.size() != pb.size()) {
        throw ShapeError("late fusion: " + std::to_string(pa.size()) + " vs " + std::to_string(pb.size()) +
                         " probabilities");
    }
    std::vector<double> out(pa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) out[i] = (pa[i] + pb[i]) / 2.0;
    return out;
}

std::vector<Prediction> late_fuse_predict(std::span<const Prediction> a, std::span<const Prediction> b) {
    if (a.size() != b.size()) {
        throw ShapeError("late fusion: frame sets differ (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + " frames)");
    }
    std::set<std::pair<std::string, std::string>> keys_a;
    for (const auto& r : a) {
        if (!keys_a.emplace(r.subject_id, r.frame_id).second) {
            throw SchemaError("late fusion: duplicate frame " + r.subject_id + "/" + r.frame_id);
        }
    }
    std::map<std::pair<std::string, std::string>, double> pb;
    for (const auto& r : b) {
        if (!pb.emplace(std::pair{r.subject_id, r.frame_id}, r.probability).second) {
            throw SchemaError("late fusion: duplicate frame " + r.subject_id + "/" + r.frame_id);
        }
    }
    std::vector<Prediction> out;
    out.reserve(a.size());
    for (const auto& r : a) {
        auto it = pb.find({r.subject_id, r.frame_id});
        if (it == pb.end()) {
            throw ShapeError("late fusion: frame " + r.subject_id + "/" + r.frame_id + " missing from second member");
        }
        const double p = (r.probability + it->second) / 2.0;
        out.push_back({r.subject_id, r.frame_id, p, decide(p)});
        pb.erase(it);
    }
    return out;
}

std::vector<Prediction> make_predictions(std::span<const LandmarkFrame* const> frames,
                                         std::span<const double> probabilities) {
    if (frames.size() != probabilities.size()) {
        throw ShapeError("predictions: " + std::to_string(frames.size()) + " frames but " +
                         std::to_string(probabilities.size()) + " probabilities");
    }
    std::vector<Prediction> out;
    out.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        out.push_back({frames[i]->subject_id, frames[i]->frame_id, probabilities[i], decide(probabilities[i])});
    }
    return out;
}

std::string serialize_predictions_csv(std::span<const Prediction> rows) {
    std::string s = "subject_id,frame_id,probability,label\n";
    for (const auto& r : rows) {
        for (const auto* id : {&r.subject_id, &r.frame_id}) {
            if (id->find_first_of(",\"\r\n") != std::string::npos) {
                throw SchemaError("identifier '" + *id + "' cannot be written to CSV (contains a separator)");
            }
        }
        s += r.subject_id + ',' + r.frame_id + ',' + io::format_number(r.probability) + ',' +
             std::string(to_string(r.label)) + '\n';
    }
    return s;
}

std::vector<Prediction> parse_predictions_csv(std::string_view text) {
    std::vector<Prediction> out;
    std::size_t pos = 0, line_number = 0;
    bool header = true;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_number;
        if (header) {
            if (line != "subject_id,frame_id,probability,label") {
                throw SchemaError("predictions CSV: header must be subject_id,frame_id,probability,label");
            }
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string_view> cells;
        std::size_t p = 0;
        for (auto c = line.find(','); c != std::string_view::npos; c = line.find(',', p)) {
            cells.push_back(line.substr(p, c - p));
            p = c + 1;
        }
        cells.push_back(line.substr(p));
        const std::string where = "predictions CSV line " + std::to_string(line_number) + ": ";
        if (cells.size() != 4) throw SchemaError(where + "expected 4 columns, got " + std::to_string(cells.size()));
        Prediction r;
        r.subject_id = std::string(cells[0]);
        r.frame_id = std::string(cells[1]);
        auto [ptr, ec] = std::from_chars(cells[2].data(), cells[2].data() + cells[2].size(), r.probability);
        if (ec != std::errc{} || ptr != cells[2].data() + cells[2].size() || !(r.probability >= 0.0) ||
            !(r.probability <= 1.0)) {
            throw ParseError(where + "probability must be a number in [0,1]");
        }
        r.label = parse_binary_label(cells[3]);
        out.push_back(std::move(r));
    }
    if (header) throw SchemaError("predictions CSV: missing header row");
    return out;
}

void write_predictions_csv(std::span<const Prediction> rows, const std::filesystem::path& path) {
    io::write_file_atomic(path, serialize_predictions_csv(rows));
}

std::vector<Prediction> read_predictions_csv(const std::filesystem::path& path) {
    return parse_predictions_csv(io::read_file(path));
}

}  // namespace palsyfuse::fusion
