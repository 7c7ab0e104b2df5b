// palsyfuse command-line front end.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "palsyfuse/error.hpp"
#include "palsyfuse/evaluation.hpp"
#include "palsyfuse/geometry.hpp"
#include "palsyfuse/io.hpp"
#include "palsyfuse/modalities.hpp"
#include "palsyfuse/nn/weights.hpp"
#include "palsyfuse/rasterizer.hpp"
#include "palsyfuse/synthgen.hpp"

namespace fs = std::filesystem;
using namespace palsyfuse;

namespace {

constexpr int kValidationError = 1;
constexpr int kRuntimeError = 2;

class ValidationError : public Error {
public:
    using Error::Error;
};

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw ValidationError(what + " not found: " + p.string());
}

std::size_t resolve_threads(std::size_t flag, const std::optional<std::size_t>& from_config) {
    if (const char* env = std::getenv("PALSYFUSE_THREADS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v <= 0) throw ValidationError("PALSYFUSE_THREADS must be a positive integer");
        return static_cast<std::size_t>(v);
    }
    if (flag > 0) return flag;
    if (from_config) return *from_config;
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct SynthArgs {
    std::size_t subjects = 50;
    double palsy_fraction = 0.2;
    std::size_t frames = 50;
    std::uint64_t seed = 42;
    double jitter = 0.01;
    double min_severity = 0.5;
    double max_severity = 1.0;
    fs::path out;
};

int cmd_synth(const SynthArgs& a) {
    if (a.subjects == 0) throw ValidationError("--subjects must be positive");
    if (!(a.palsy_fraction >= 0.0 && a.palsy_fraction <= 1.0)) throw ValidationError("--palsy-fraction must be in [0,1]");
    if (a.frames == 0) throw ValidationError("--frames must be positive");
    synth::CohortSpec c;
    c.palsy_subjects = static_cast<std::size_t>(std::llround(a.palsy_fraction * static_cast<double>(a.subjects)));
    c.healthy_subjects = a.subjects - c.palsy_subjects;
    c.frames_per_subject = a.frames;
    c.min_severity = a.min_severity;
    c.max_severity = a.max_severity;
    c.jitter_sigma = a.jitter;
    c.seed = a.seed;
    const auto frames = synth::generate_cohort(c);
    io::write_frames(frames, a.out / "frames.jsonl");
    io::write_file_atomic(a.out / "manifest.json", io::serialize_manifest(build_manifest(frames)));
    std::cout << "wrote " << frames.size() << " frames of " << a.subjects << " subjects (" << c.palsy_subjects
              << " palsy) to " << a.out.string() << "\n";
    return 0;
}

struct ExtractArgs {
    fs::path frames;
    std::optional<fs::path> roles;
    std::optional<fs::path> contours;
    std::optional<fs::path> out_features;
    std::optional<fs::path> out_images;
    std::string modalities = "handcrafted,expression,coordinates";
    std::size_t image_size = 64;
};

int cmd_extract(const ExtractArgs& a) {
    require_file(a.frames, "frames file");
    if (a.roles) require_file(*a.roles, "roles file");
    if (a.contours) require_file(*a.contours, "contours file");
    if (a.image_size == 0) throw ValidationError("--image-size must be positive");
    std::vector<models::Modality> wanted;
    for (const auto& name : split_list(a.modalities)) {
        try {
            const auto m = models::parse_modality(name);
            if (m == models::Modality::Embedding) throw ConfigError("embedding is not an extractable modality");
            wanted.push_back(m);
        } catch (const Error& e) {
            throw ValidationError(std::string("--modalities: ") + e.what());
        }
    }
    if (wanted.empty()) throw ValidationError("--modalities names no modality");
    const bool any_features = std::any_of(wanted.begin(), wanted.end(), [](auto m) { return !models::is_image(m); });
    const bool any_images = std::any_of(wanted.begin(), wanted.end(), [](auto m) { return models::is_image(m); });
    if (any_features && !a.out_features) throw ValidationError("--out-features is required for feature modalities");
    if (any_images && !a.out_images) throw ValidationError("--out-images is required for image modalities");

    modalities::ModalitySources src;
    if (a.roles) src.roles = geometry::RoleMap::load(*a.roles);
    if (a.contours) src.contours = raster::ContourSet::load(*a.contours);
    src.image_size = a.image_size;
    const auto frames = io::read_frames(a.frames);
    validate_unique_ids(frames);

    for (const auto m : wanted) {
        if (models::is_image(m)) {
            const bool rgb = m == models::Modality::RgbImage;
            const fs::path dir = *a.out_images / (rgb ? "rgb" : "bnw");
            for (const auto& f : frames) {
                io::write_image(modalities::frame_image(f, m, src),
                                dir / f.subject_id / (f.frame_id + (rgb ? ".ppm" : ".pgm")));
            }
            std::cout << models::to_string(m) << ": " << frames.size() << " images in " << dir.string() << "\n";
            continue;
        }
        std::vector<FeatureVector> rows;
        rows.reserve(frames.size());
        for (const auto& f : frames) {
            if (m == models::Modality::Handcrafted) {
                rows.push_back(geometry::handcrafted29(f, src.roles));
            } else if (m == models::Modality::Expression) {
                rows.push_back(geometry::expression_features(f));
            } else {
                rows.push_back(geometry::flatten_coordinates(f, src.roles));
            }
        }
        const fs::path out = *a.out_features / (models::to_string(m) + ".csv");
        io::write_features_csv(rows, out);
        std::cout << models::to_string(m) << ": " << rows.size() << " rows in " << out.string() << "\n";
    }
    return 0;
}

evaluation::RunConfig load_config(const fs::path& p) {
    require_file(p, "config file");
    return evaluation::load_run_config(p);
}

int cmd_train(const fs::path& config_path, const std::string& model, const fs::path& out_weights) {
    const auto config = load_config(config_path);
    const evaluation::ModelEntry* entry = nullptr;
    for (const auto& e : config.models) {
        if (e.name == model) entry = &e;
    }
    if (!entry) throw ValidationError("model '" + model + "' is not defined in " + config_path.string());

    const auto frames = evaluation::load_frames(config);
    validate_unique_ids(frames);
    const auto index = evaluation::index_frames(frames);
    const std::uint64_t seed = derive_seed(config.seed, "train/" + model);
    std::vector<const LandmarkFrame*> picked;
    std::vector<double> labels;
    for (const auto& [subject, list] : index) {
        for (const auto* f : evaluation::round_robin_sample(list, config.protocol.train_samples, seed)) {
            picked.push_back(f);
            labels.push_back(f->binary_label() == BinaryLabel::Palsy ? 1.0 : 0.0);
        }
    }
    const auto spec = evaluation::model_spec(*entry, seed, config.image_size);
    const auto inputs = modalities::build_inputs(entry->modality, picked, evaluation::modality_sources(config));
    auto trained = models::train(spec, {inputs, labels});
    nn::save_weights(trained.network(), out_weights);
    fs::path spec_path = out_weights;
    spec_path += ".spec.json";
    io::write_file_atomic(spec_path, models::to_json(spec) + "\n");
    const auto& last = trained.log().back();
    std::cout << model << ": " << picked.size() << " samples, " << last.epoch << " epochs, loss "
              << io::format_number(last.loss) << ", accuracy " << io::format_number(last.accuracy) << "\n"
              << "weights " << out_weights.string() << " (config " << trained.config_hash() << ")\n";
    return 0;
}

int cmd_eval(const fs::path& config_path, const fs::path& out_report, std::size_t threads_flag) {
    const auto config = load_config(config_path);
    evaluation::RunOptions options;
    options.threads = resolve_threads(threads_flag, config.threads);
    options.log = [](const std::string& line) { std::cerr << line << std::endl; };
    const auto report = evaluation::run_experiment(config, options);
    io::write_file_atomic(out_report, evaluation::report_to_json(report));
    fs::path md = out_report;
    md.replace_extension(".md");
    io::write_file_atomic(md, evaluation::report_to_markdown(report));
    std::cout << "report " << out_report.string() << " (" << report.folds.size() << " folds, "
              << (report.complete() ? "complete" : "incomplete") << ")\n";
    return report.complete() ? 0 : kRuntimeError;
}

int cmd_report(const fs::path& path, const std::string& format) {
    require_file(path, "report file");
    const auto report = evaluation::report_from_json(io::read_file(path));
    std::cout << (format == "md" ? evaluation::report_to_markdown(report) : evaluation::report_to_json(report));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal facial palsy detection: synthetic data, feature extraction, training and LOPO evaluation.",
                 "palsyfuse"};
    app.require_subcommand(1);
    // Top-level help expands every subcommand so one page lists all flags.
    app.set_help_flag();
    app.set_help_all_flag("-h,--help", "Print this help message and exit");
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads (default: logical cores; PALSYFUSE_THREADS overrides)")
        ->check(CLI::PositiveNumber);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort as frames.jsonl + manifest.json");
    synth->add_option("--subjects", synth_args.subjects, "Number of subjects")->capture_default_str();
    synth->add_option("--palsy-fraction", synth_args.palsy_fraction, "Fraction of palsy subjects")->capture_default_str();
    synth->add_option("--frames", synth_args.frames, "Frames per subject")->capture_default_str();
    synth->add_option("--seed", synth_args.seed, "Generator seed")->capture_default_str();
    synth->add_option("--jitter", synth_args.jitter, "Landmark noise in interocular units")->capture_default_str();
    synth->add_option("--min-severity", synth_args.min_severity, "Lowest palsy severity")->capture_default_str();
    synth->add_option("--max-severity", synth_args.max_severity, "Highest palsy severity")->capture_default_str();
    synth->add_option("--out", synth_args.out, "Output directory")->required();

    ExtractArgs extract_args;
    auto* extract = app.add_subcommand("extract", "Compute feature CSVs and modality images from frames.jsonl");
    extract->add_option("--frames", extract_args.frames, "Input frames.jsonl")->required();
    extract->add_option("--roles", extract_args.roles, "Landmark role map (default: built-in)");
    extract->add_option("--contours", extract_args.contours, "Contour set (default: built-in)");
    extract->add_option("--out-features", extract_args.out_features, "Directory for <modality>.csv files");
    extract->add_option("--out-images", extract_args.out_images, "Directory for rgb/ and bnw/ image trees");
    extract->add_option("--modalities", extract_args.modalities,
                        "Comma-separated: handcrafted,expression,coordinates,rgb_image,bnw_image")
        ->capture_default_str();
    extract->add_option("--image-size", extract_args.image_size, "Image side in pixels")->capture_default_str();

    fs::path train_config, train_weights;
    std::string train_model;
    auto* train = app.add_subcommand("train", "Train one configured model on every subject and save NNW1 weights");
    train->add_option("--config", train_config, "Run config JSON")->required();
    train->add_option("--model", train_model, "Model name from the config")->required();
    train->add_option("--out-weights", train_weights, "Output weights file")->required();

    fs::path eval_config, eval_report;
    auto* eval = app.add_subcommand("eval", "Run leave-one-patient-out evaluation; writes report.json and report.md");
    eval->add_option("--config", eval_config, "Run config JSON")->required();
    eval->add_option("--out-report", eval_report, "Output report.json (report.md is written alongside)")->required();

    fs::path report_path;
    std::string report_format = "md";
    auto* report = app.add_subcommand("report", "Render a report.json");
    report->add_option("--report", report_path, "Input report.json")->required();
    report->add_option("--format", report_format, "md or json")
        ->check(CLI::IsMember({"md", "json"}))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "palsyfuse: error: " << e.what() << "\nRun with --help for more information.\n";
        return kValidationError;
    }

    try {
        if (*synth) return cmd_synth(synth_args);
        if (*extract) return cmd_extract(extract_args);
        if (*train) return cmd_train(train_config, train_model, train_weights);
        if (*eval) return cmd_eval(eval_config, eval_report, threads);
        if (*report) return cmd_report(report_path, report_format);
    } catch (const ValidationError& e) {
        std::cerr << "palsyfuse: error: " << e.what() << "\n";
        return kValidationError;
    } catch (const ConfigError& e) {
        std::cerr << "palsyfuse: error: " << e.what() << "\n";
        return kValidationError;
    } catch (const SchemaError& e) {
        std::cerr << "palsyfuse: error: " << e.what() << "\n";
        return kValidationError;
    } catch (const ParseError& e) {
        std::cerr << "palsyfuse: error: " << e.what() << "\n";
        return kValidationError;
    } catch (const PlanError& e) {
        std::cerr << "palsyfuse: error: " << e.what() << "\n";
        return kValidationError;
    } catch (const std::exception& e) {
        std::cerr << "palsyfuse: error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kRuntimeError;
}
