// Acceptance suite: one PASS/FAIL line per criterion P1..P11.
// Usage: acceptance [P1 P2 ...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "palsyfuse/evaluation.hpp"
#include "palsyfuse/fusion.hpp"
#include "palsyfuse/geometry.hpp"
#include "palsyfuse/io.hpp"
#include "palsyfuse/modalities.hpp"
#include "palsyfuse/models.hpp"
#include "palsyfuse/nn/layers.hpp"
#include "palsyfuse/nn/loss.hpp"
#include "palsyfuse/nn/weights.hpp"
#include "palsyfuse/rasterizer.hpp"
#include "palsyfuse/rng.hpp"
#include "palsyfuse/synthgen.hpp"

using namespace palsyfuse;
namespace fs = std::filesystem;
using nn::Tensor;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kSource = PALSYFUSE_SOURCE_DIR;

// Collects failed sub-checks; a criterion passes when none failed.
class Tally {
public:
    void check(bool ok, const std::string& what) {
        ++checks_;
        if (!ok && failures_.size() < 8) failures_.push_back(what);
        failed_ += !ok;
    }
    void note(const std::string& s) { notes_.push_back(s); }
    bool ok() const { return failed_ == 0; }
    std::string summary() const {
        std::ostringstream os;
        os << checks_ - failed_ << "/" << checks_ << " checks";
        for (const auto& n : notes_) os << "; " << n;
        if (failed_) {
            os << "; failed:";
            for (const auto& f : failures_) os << " [" << f << "]";
            if (failed_ > failures_.size()) os << " ...";
        }
        return os.str();
    }

private:
    std::size_t checks_ = 0, failed_ = 0;
    std::vector<std::string> failures_, notes_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::size_t worker_threads() {
    if (const char* env = std::getenv("PALSYFUSE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------- P1

template <class L, class... A>
std::unique_ptr<L> initialized(std::uint64_t seed, nn::Init init, A&&... args) {
    auto l = std::make_unique<L>(std::forward<A>(args)...);
    Rng rng(seed);
    l->init(rng, init);
    return l;
}

void grad_case(Tally& t, double& worst, const std::string& name, nn::Layer& layer, const Tensor& x,
               const testing::Objective& objective, std::size_t samples, std::uint64_t seed) {
    const auto r = testing::check_gradients(layer, x, objective, samples, seed);
    worst = std::max(worst, r.worst());
    t.check(r.worst() < 1e-4 && r.checked() > 0,
            name + " rel err " + fmt("%.2e", r.worst()) + " at " + r.worst_name());
}

void grad_layer(Tally& t, double& worst, const std::string& name, nn::Layer& layer, const Tensor& x,
                std::uint64_t seed) {
    layer.reseed(seed);
    const Tensor probe = layer.forward(x, nn::Mode::Eval);
    grad_case(t, worst, name, layer, x, testing::projection_objective(probe.shape(), seed + 1), 40, seed);
}

void grad_model(Tally& t, double& worst, const models::ModelSpec& spec, std::size_t batch, std::size_t samples,
                std::uint64_t seed) {
    auto net = models::instantiate(spec);
    nn::Shape shape{batch};
    shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
    const Tensor x = testing::random_tensor(shape, seed, 0.0, 1.0);
    Tensor labels({batch, 1});
    for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<double>(i % 2);
    grad_case(t, worst, spec.name, *net, x, testing::bce_objective(labels), samples, seed);
}

Tally p1() {
    using namespace nn;
    Tally t;
    const auto t0 = Clock::now();
    double worst = 0.0;

    {
        auto l = initialized<Linear>(1, Init::KaimingUniform, "lin", 5, 4);
        grad_layer(t, worst, "Linear", *l, testing::random_tensor({3, 5}, 2), 3);
    }
    {
        ReLU l("relu");
        grad_layer(t, worst, "ReLU", l, testing::random_tensor({4, 6}, 4), 5);
    }
    {
        LeakyReLU l("leaky");
        grad_layer(t, worst, "LeakyReLU", l, testing::random_tensor({4, 6}, 6), 7);
    }
    {
        GELU l("gelu");
        grad_layer(t, worst, "GELU", l, testing::random_tensor({4, 6}, 8, -3.0, 3.0), 9);
    }
    {
        Sigmoid l("sig");
        grad_layer(t, worst, "Sigmoid", l, testing::random_tensor({4, 6}, 10, -4.0, 4.0), 11);
    }
    {
        Dropout l("drop", 0.4);
        grad_layer(t, worst, "Dropout", l, testing::random_tensor({4, 6}, 12), 13);
    }
    {
        BatchNorm1d l("bn", 5);
        l.gamma().value = testing::random_tensor({5}, 14, 0.5, 1.5);
        l.beta().value = testing::random_tensor({5}, 15);
        grad_layer(t, worst, "BatchNorm1d", l, testing::random_tensor({6, 5}, 16, -2.0, 2.0), 17);
    }
    {
        LayerNorm l("ln", 6);
        grad_layer(t, worst, "LayerNorm", l, testing::random_tensor({2, 3, 6}, 18, -2.0, 2.0), 19);
    }
    {
        auto l = initialized<PatchEmbed>(20, Init::XavierUniform, "pe", 2, 8, 4, 5);
        grad_layer(t, worst, "PatchEmbed", *l, testing::random_tensor({2, 2, 8, 8}, 21), 22);
    }
    {
        auto l = initialized<TokenMix>(23, Init::XavierUniform, "tm", 4, 6);
        grad_layer(t, worst, "TokenMix", *l, testing::random_tensor({2, 4, 3}, 24), 25);
    }
    {
        auto l = initialized<ChannelMix>(26, Init::XavierUniform, "cm", 5, 7);
        grad_layer(t, worst, "ChannelMix", *l, testing::random_tensor({2, 3, 5}, 27), 28);
    }
    {
        auto l = initialized<Conv2d>(29, Init::KaimingUniform, "conv", 3, 2, 3, 2, 1);
        grad_layer(t, worst, "Conv2d", *l, testing::random_tensor({2, 3, 6, 7}, 30), 31);
    }
    {
        GlobalAvgPool l("gap", GlobalAvgPool::Over::Spatial);
        grad_layer(t, worst, "GlobalAvgPool", l, testing::random_tensor({2, 3, 4, 5}, 32), 33);
    }
    {
        Flatten l("flat");
        grad_layer(t, worst, "Flatten", l, testing::random_tensor({2, 3, 4}, 34), 35);
    }
    {
        auto body = std::make_unique<Sequential>("body");
        body->add(initialized<Linear>(36, Init::KaimingUniform, "b1", 4, 6));
        body->add(std::make_unique<GELU>("g"));
        body->add(initialized<Linear>(37, Init::KaimingUniform, "b2", 6, 4));
        Residual r("res", std::move(body));
        grad_layer(t, worst, "Residual", r, testing::random_tensor({5, 4}, 38), 39);
    }

    grad_model(t, worst, models::build_ffn_expression(), 8, 40, 101);
    grad_model(t, worst, models::build_ffn_coordinates(), 8, 40, 102);
    grad_model(t, worst, models::build_ffn_handcrafted(), 16, 40, 103);
    grad_model(t, worst, models::build_mixer_mini(models::MixerConfig{16, 3, 4, 8, 8, 16, 2}), 3, 30, 104);
    grad_model(t, worst, models::build_resnet_mini(models::ResNetConfig{16, 3, 4, {4, 8}, 1, 16, 0.5}), 4, 30, 105);
    grad_model(t, worst, models::build_fusion_head(12, 0.01), 16, 40, 106);

    const double secs = seconds_since(t0);
    t.check(secs < 120.0, "runtime " + fmt("%.1f s", secs));
    t.note("worst rel err " + fmt("%.2e", worst));
    return t;
}

// ---------------------------------------------------------------- P2

Tally p2() {
    Tally t;
    const double l = nn::bce_loss(Tensor({1, 1}, 0.5), Tensor({1, 1}, 1.0)).loss;
    t.check(std::abs(l - std::numbers::ln2) <= 1e-9, "loss(0.5, 1) = " + fmt("%.17g", l));
    Rng rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        Tensor p({n, 1}), y({n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.uniform(0.05, 0.95);
            y[i] = static_cast<double>(rng.below(2));
        }
        const auto r = nn::bce_loss(p, y);
        for (std::size_t i = 0; i < n; ++i) {
            Tensor hi = p, lo = p;
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            const double fd = (nn::bce_loss(hi, y).loss - nn::bce_loss(lo, y).loss) / 2e-6;
            worst = std::max(worst, std::abs(fd - r.grad[i]));
        }
    }
    t.check(worst <= 1e-6, "gradient vs FD " + fmt("%.2e", worst));
    t.note("max |grad - FD| " + fmt("%.2e", worst));
    return t;
}

// ---------------------------------------------------------------- P3

std::vector<Point2> similarity(const std::vector<Point2>& pts, double angle, double scale, double tx, double ty) {
    const double c = std::cos(angle), s = std::sin(angle);
    std::vector<Point2> out;
    for (auto p : pts) out.push_back({tx + scale * (c * p.x - s * p.y), ty + scale * (s * p.x + c * p.y)});
    return out;
}

Tally p3() {
    Tally t;
    const auto& roles = geometry::default_role_map();
    const auto f = geometry::handcrafted_values(synth::neutral_template(), roles);
    // F3, F6, F7, F8, F23, F26, F27, F28, F29 measure differences or
    // deviations; F11, F14, F17, F20 are left/right ratios.
    for (int k : {3, 6, 7, 8, 23, 26, 27, 28, 29}) t.check(std::abs(f[k - 1]) < 1e-9, "F" + std::to_string(k));
    for (int k : {11, 14, 17, 20}) t.check(std::abs(f[k - 1] - 1.0) < 1e-9, "F" + std::to_string(k));

    const std::pair<int, int> swapped[] = {{1, 2}, {4, 5}, {9, 10}, {12, 13}, {15, 16}, {18, 19}, {21, 22}};
    const int fixed[] = {3, 6, 7, 8, 11, 14, 17, 20, 23, 24, 25, 26, 27, 28, 29};
    const auto mirrored_roles = roles.swapped_sides();
    Rng rng(3);
    double worst_sim = 0.0, worst_ref = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        synth::SynthFaceParams p;
        p.seed = 1000 + trial;
        p.mouth_droop = rng.uniform();
        p.eye_closure_asym = rng.uniform();
        p.brow_drop = rng.uniform();
        p.expression_phase = rng.uniform(0.0, 0.99);
        p.jitter_sigma = 0.01;
        const auto pts = synth::synthesize_landmarks(p);
        const auto a = geometry::handcrafted_values(pts, roles);

        const auto moved = similarity(pts, rng.uniform(-std::numbers::pi, std::numbers::pi), rng.uniform(0.25, 4.0),
                                      rng.uniform(-3, 3), rng.uniform(-3, 3));
        const auto b = geometry::handcrafted_values(moved, roles);
        for (std::size_t k = 0; k < a.size(); ++k) worst_sim = std::max(worst_sim, std::abs(a[k] - b[k]));

        const auto m = geometry::build_midline(moved, roles);
        std::vector<Point2> reflected;
        for (auto q : moved) reflected.push_back(geometry::mirror(m, q));
        const auto c = geometry::handcrafted_values(reflected, mirrored_roles);
        for (auto [l, r] : swapped) {
            worst_ref = std::max(worst_ref, std::abs(a[l - 1] - c[r - 1]));
            worst_ref = std::max(worst_ref, std::abs(a[r - 1] - c[l - 1]));
        }
        for (int k : fixed) worst_ref = std::max(worst_ref, std::abs(a[k - 1] - c[k - 1]));
    }
    t.check(worst_sim < 1e-9, "similarity invariance " + fmt("%.2e", worst_sim));
    t.check(worst_ref < 1e-9, "reflection equivariance " + fmt("%.2e", worst_ref));
    t.note("max deviation: similarity " + fmt("%.1e", worst_sim) + ", reflection " + fmt("%.1e", worst_ref));
    return t;
}

// ---------------------------------------------------------------- P4

std::vector<BinaryLabel> labels_of(const std::vector<int>& v) {
    std::vector<BinaryLabel> out;
    for (int x : v) out.push_back(x ? BinaryLabel::Palsy : BinaryLabel::NoPalsy);
    return out;
}

Tally p4() {
    Tally t;
    Rng rng(4);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(100);
        const double bias = rng.uniform();
        std::vector<int> pred(n), truth(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = rng.bernoulli(bias);
            truth[i] = rng.bernoulli(0.5);
        }
        const auto o = testing::brute_force_metrics(pred, truth);
        const auto m = evaluation::compute_metrics(labels_of(pred), labels_of(truth));
        mismatches += !(m.tp == o.tp && m.fp == o.fp && m.fn == o.fn && m.tn == o.tn && m.precision == o.precision &&
                        m.recall == o.recall && m.f1 == o.f1);
    }
    t.check(mismatches == 0, std::to_string(mismatches) + " of 1000 cases differ");
    const auto none = evaluation::compute_metrics(labels_of({0, 0, 0}), labels_of({1, 0, 1}));
    t.check(none.precision == 0.0 && none.recall == 0.0 && none.f1 == 0.0, "no positive predictions");
    const auto no_pos = evaluation::compute_metrics(labels_of({0, 0}), labels_of({0, 0}));
    t.check(no_pos.precision == 0.0 && no_pos.recall == 0.0 && no_pos.f1 == 0.0, "no positives at all");
    const auto ex = evaluation::compute_metrics(labels_of({1, 1, 1, 0}), labels_of({1, 1, 0, 1}));
    t.check(ex.tp == 2 && ex.fp == 1 && ex.fn == 1 && std::abs(ex.f1 - 2.0 / 3.0) < 1e-15, "tp 2 fp 1 fn 1 example");
    return t;
}

// ---------------------------------------------------------------- P5

Tally p5() {
    Tally t;
    Rng rng(5);
    std::size_t unbalanced = 0, nondeterministic = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.below(120);
        const std::size_t classes = 1 + rng.below(9);
        std::vector<int> keys;
        for (int k = 0; k < 9; ++k) keys.push_back(k);
        rng.shuffle(keys.begin(), keys.end());
        keys.resize(classes);
        // Every class holds at least ceil(n / classes) frames.
        const std::size_t floor_count = (n + classes - 1) / classes;
        std::vector<evaluation::SampleKey> frames;
        for (int k : keys) {
            const std::size_t count = floor_count + rng.below(20);
            for (std::size_t i = 0; i < count; ++i) {
                char id[16];
                std::snprintf(id, sizeof id, "%06zu", frames.size());
                frames.push_back({id, k});
            }
        }
        rng.shuffle(frames.begin(), frames.end());
        const std::uint64_t seed = rng.next();
        const auto picked = evaluation::round_robin_sample(frames, n, seed);
        std::map<int, std::size_t> counts;
        for (int k : keys) counts[k] = 0;
        for (auto i : picked) ++counts[frames[i].class_key];
        std::size_t lo = SIZE_MAX, hi = 0;
        for (const auto& [k, v] : counts) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        unbalanced += (picked.size() != n || hi - lo > 1);
        nondeterministic += evaluation::round_robin_sample(frames, n, seed) != picked;
    }
    t.check(unbalanced == 0, std::to_string(unbalanced) + " unbalanced draws");
    t.check(nondeterministic == 0, std::to_string(nondeterministic) + " nondeterministic draws");
    return t;
}

// ---------------------------------------------------------------- P6

Tally p6() {
    Tally t;
    synth::CohortSpec c;
    c.palsy_subjects = 21;
    c.healthy_subjects = 40;
    c.frames_per_subject = 50;
    const auto frames = synth::generate_cohort(c);
    const auto plans = evaluation::make_lopo_plan(build_manifest(frames), evaluation::ProtocolConfig{}, 42);
    t.check(plans.size() == 21, std::to_string(plans.size()) + " folds");
    const auto index = evaluation::index_frames(frames);
    std::size_t leaks = 0, wrong_sizes = 0;
    for (const auto& p : plans) {
        const auto s = evaluation::draw_samples(p, index);
        wrong_sizes += (s.train.size() != 2000 || s.test.size() != 90 || p.train_target() != 2000 ||
                        p.test_target() != 90);
        std::set<std::string> train_subjects;
        for (const auto* f : s.train) train_subjects.insert(f->subject_id);
        for (const auto* f : s.test) leaks += train_subjects.count(f->subject_id);
    }
    t.check(wrong_sizes == 0, std::to_string(wrong_sizes) + " folds with wrong sizes");
    t.check(leaks == 0, std::to_string(leaks) + " leaked test frames");
    t.note("21 folds, train 2000 / test 90");
    return t;
}

// ---------------------------------------------------------------- P7

Tally p7() {
    Tally t;
    const auto t0 = Clock::now();
    synth::CohortSpec c;
    c.palsy_subjects = 8;
    c.healthy_subjects = 8;
    c.frames_per_subject = 4;
    c.seed = 7;
    const auto frames = synth::generate_cohort(c);
    std::vector<const LandmarkFrame*> ptrs;
    std::vector<double> labels;
    for (const auto& f : frames) {
        ptrs.push_back(&f);
        labels.push_back(f.effective_label().binary_label() == BinaryLabel::Palsy ? 1.0 : 0.0);
    }
    modalities::ModalitySources src;
    src.image_size = 64;

    struct Case {
        models::ModelSpec spec;
        std::size_t epochs;
    };
    std::vector<Case> cases;
    cases.push_back({models::build_ffn_handcrafted(), 500});
    cases.push_back({models::build_ffn_expression(), 500});
    cases.push_back({models::build_ffn_coordinates(), 500});
    {
        auto s = models::build_mixer_mini(models::MixerConfig{64, 3, 8, 32, 32, 64, 2});
        s.plan.optimizer = {nn::OptimizerKind::AdamW, 0.001};
        cases.push_back({s, 200});
    }
    {
        auto s = models::build_resnet_mini(models::ResNetConfig{64, 1, 8, {8, 16, 32}, 1, 64, 0.5}, true);
        s.plan.optimizer = {nn::OptimizerKind::AdamW, 0.001};
        cases.push_back({s, 200});
    }
    std::ostringstream detail;
    for (auto& cs : cases) {
        const auto t1 = Clock::now();
        cs.spec.plan.max_epochs = cs.epochs;
        cs.spec.plan.batch_size = 16;
        cs.spec.plan.patience = 0;
        cs.spec.plan.seed = 7;
        cs.spec.plan.target_accuracy = 0.98;
        const auto x = modalities::build_inputs(cs.spec.modality, ptrs, src);
        auto model = models::train(cs.spec, {x, labels});
        const double acc = models::accuracy(models::predict_proba(model, x), labels);
        t.check(acc >= 0.98, cs.spec.name + " accuracy " + fmt("%.3f", acc));
        detail << cs.spec.name << " " << fmt("%.2f", acc) << " @" << model.log().size() << "ep "
               << fmt("%.0fs", seconds_since(t1)) << ", ";
    }
    const double secs = seconds_since(t0);
    t.check(secs < 300.0, "runtime " + fmt("%.1f s", secs));
    auto d = detail.str();
    t.note(d.substr(0, d.size() - 2));
    return t;
}

// ---------------------------------------------------------------- P8 / P9

struct LopoRun {
    evaluation::RunReport report;
    std::string json;
    double seconds = 0.0;
};

LopoRun run_lopo(const std::string& tag) {
    const auto config = evaluation::load_run_config(kSource / "config" / "acceptance_lopo.json");
    evaluation::RunOptions opt;
    opt.threads = worker_threads();
    opt.log = [&](const std::string& line) { std::fprintf(stderr, "  [%s] %s\n", tag.c_str(), line.c_str()); };
    const auto t0 = Clock::now();
    LopoRun r;
    r.report = evaluation::run_experiment(config, opt);
    r.seconds = seconds_since(t0);
    r.json = evaluation::report_to_json(r.report);
    return r;
}

std::optional<LopoRun> g_first_run;

const evaluation::RowSummary* row(const evaluation::RunReport& r, const std::string& name) {
    for (const auto& x : r.rows) {
        if (x.name == name) return &x;
    }
    return nullptr;
}

Tally p8() {
    Tally t;
    g_first_run = run_lopo("P8");
    const auto& r = g_first_run->report;
    fs::create_directories("acceptance-lopo");
    io::write_file_atomic("acceptance-lopo/report.json", g_first_run->json);
    io::write_file_atomic("acceptance-lopo/report.md", evaluation::report_to_markdown(r));

    t.check(r.folds.size() == 10, std::to_string(r.folds.size()) + " folds");
    t.check(r.complete(), "all folds complete");
    const auto* hc = row(r, "handcrafted_ffn");
    const auto* mixer = row(r, "mixer_rgb");
    const auto* early = row(r, "early_handcrafted_mixer");
    const auto* late = row(r, "late_handcrafted_mixer");
    const bool have = hc && mixer && early && late && hc->average && mixer->average && early->average && late->average;
    t.check(have, "all four rows report averages");
    if (have) {
        const double f_hc = hc->average->f1, f_mix = mixer->average->f1, f_early = early->average->f1;
        const double bound = std::max(f_hc, f_mix) - 0.02;
        t.check(f_hc >= 0.90, "handcrafted FFN F1 " + fmt("%.4f", f_hc));
        t.check(f_early >= bound, "early fusion F1 " + fmt("%.4f", f_early) + " < " + fmt("%.4f", bound));
        t.note("F1 handcrafted " + fmt("%.4f", f_hc) + ", mixer " + fmt("%.4f", f_mix) + ", early " +
               fmt("%.4f", f_early) + " (bound " + fmt("%.4f", bound) + "), late " + fmt("%.4f", late->average->f1));
    }
    t.check(g_first_run->seconds < 900.0, "runtime " + fmt("%.0f s", g_first_run->seconds));
    t.note(fmt("%.0f s", g_first_run->seconds) + " on " + std::to_string(worker_threads()) + " thread(s)");
    return t;
}

Tally p9() {
    Tally t;
    if (!g_first_run) g_first_run = run_lopo("P9a");
    const auto second = run_lopo("P9");
    t.check(second.json == g_first_run->json, "report.json differs between runs");
    t.note(std::to_string(second.json.size()) + " bytes, hash " +
           std::to_string(fnv1a64(second.json)).substr(0, 12));
    return t;
}

// ---------------------------------------------------------------- P10

std::uint64_t pixel_hash(const ImageBuffer& img) {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size()));
}

double nine(double v) { return std::stod(fmt("%.9g", v)); }

Tally p10() {
    Tally t;
    const auto dir = fs::temp_directory_path() / "palsyfuse_acceptance_p10";
    fs::remove_all(dir);
    Rng rng(10);

    for (int channels : {1, 3}) {
        ImageBuffer img(37, 23, channels);
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
        const auto path = dir / (channels == 1 ? "a.pgm" : "a.ppm");
        io::write_image(img, path);
        const auto back = io::read_image(path);
        t.check(back == img, "PNM channels " + std::to_string(channels));
        t.check(io::encode_pnm(back) == io::read_file(path), "PNM re-encode " + std::to_string(channels));
    }

    synth::CohortSpec c;
    c.palsy_subjects = 2;
    c.healthy_subjects = 2;
    c.frames_per_subject = 3;
    auto frames = synth::generate_cohort(c);
    io::write_frames(frames, dir / "frames.jsonl");
    const auto text = io::read_file(dir / "frames.jsonl");
    const auto back = io::read_frames(dir / "frames.jsonl");
    std::string again;
    for (const auto& f : back) again += io::serialize_frame(f) + "\n";
    t.check(again == text, "frames JSONL text round trip");
    io::write_frames(back, dir / "frames2.jsonl");
    t.check(io::read_frames(dir / "frames2.jsonl") == back, "frames JSONL value round trip");

    std::vector<FeatureVector> feats;
    for (const auto& f : back) {
        auto v = geometry::handcrafted29(f, geometry::default_role_map());
        for (auto& x : v.values) x = nine(x);
        feats.push_back(v);
    }
    io::write_features_csv(feats, dir / "h.csv");
    t.check(io::read_features_csv(dir / "h.csv") == feats, "features CSV");

    auto spec = models::build_mixer_mini(models::MixerConfig{16, 3, 4, 8, 8, 16, 1});
    auto model = models::TrainedModel::untrained(spec);
    nn::save_weights(model.network(), dir / "m.nnw");
    auto other = spec;
    other.plan.seed = 99;
    auto loaded = models::TrainedModel::untrained(other);
    nn::load_weights(loaded.network(), dir / "m.nnw");
    t.check(nn::save_weights_bytes(loaded.network()) == io::read_file(dir / "m.nnw"), "NNW1 bytes");
    const auto pa = nn::all_params(model.network()), pb = nn::all_params(loaded.network());
    bool same = pa.size() == pb.size();
    for (std::size_t i = 0; same && i < pa.size(); ++i) {
        same = std::equal(pa[i]->value.data(), pa[i]->value.data() + pa[i]->value.size(), pb[i]->value.data());
    }
    t.check(same, "NNW1 parameters");

    const auto& tmpl = synth::neutral_template();
    t.check(pixel_hash(raster::render_line_segments(tmpl, raster::default_contours(), 64, 64)) == 0x44c464cdef5e6f03ULL,
            "line-segment hash");
    t.check(pixel_hash(raster::render_face_sketch(tmpl, raster::default_contours(), 64, 64)) == 0xd320bdce4f397611ULL,
            "face sketch hash");
    synth::SynthFaceParams p;
    p.seed = 123;
    p.mouth_droop = p.eye_closure_asym = p.brow_drop = 0.8;
    p.expression_phase = 0.25;
    t.check(pixel_hash(synth::render_synthetic_rgb(p, 64, 64)) == 0x11b8520532decf23ULL, "synthetic RGB hash");
    fs::remove_all(dir);
    return t;
}

// ---------------------------------------------------------------- P11

Tally p11() {
    Tally t;
    struct Case {
        double a, b, p;
        BinaryLabel label;
    };
    for (const auto& c : {Case{0.9, 0.7, 0.8, BinaryLabel::Palsy}, Case{0.2, 0.2, 0.2, BinaryLabel::NoPalsy},
                          Case{0.6, 0.4, 0.5, BinaryLabel::Palsy}, Case{0.0, 1.0, 0.5, BinaryLabel::Palsy},
                          Case{0.49, 0.5, 0.495, BinaryLabel::NoPalsy}}) {
        const std::vector<double> pa{c.a}, pb{c.b};
        const double ab = fusion::late_fuse(pa, pb)[0], ba = fusion::late_fuse(pb, pa)[0];
        const std::string name = fmt("%g", c.a) + "/" + fmt("%g", c.b);
        t.check(std::abs(ab - c.p) < 1e-15, name + " average");
        t.check(ab == ba, name + " symmetric");
        t.check(fusion::decide(ab) == c.label, name + " label");
    }
    Rng rng(11);
    std::vector<double> pa, pb;
    for (int i = 0; i < 500; ++i) {
        pa.push_back(rng.uniform());
        pb.push_back(rng.uniform());
    }
    t.check(fusion::late_fuse(pa, pb) == fusion::late_fuse(pb, pa), "random symmetry");

    // Frozen members across early fusion training.
    const std::size_t n = 64;
    Tensor xa({n, 29}), xb({n, 52});
    std::vector<double> labels;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = static_cast<double>(i % 2);
        for (std::size_t j = 0; j < 29; ++j) xa[i * 29 + j] = (y ? 0.7 : 0.3) + 0.05 * rng.normal();
        for (std::size_t j = 0; j < 52; ++j) xb[i * 52 + j] = rng.uniform();
        labels.push_back(y);
    }
    auto sa = models::build_ffn_handcrafted();
    sa.plan.max_epochs = 20;
    sa.plan.batch_size = 16;
    auto sb = models::build_ffn_expression();
    sb.plan.max_epochs = 20;
    sb.plan.batch_size = 16;
    auto a = models::train(sa, {xa, labels});
    auto b = models::train(sb, {xb, labels});
    const auto before = nn::save_weights_bytes(a.network()) + nn::save_weights_bytes(b.network());
    fusion::FusionSpec fs_spec;
    fs_spec.name = "early";
    fs_spec.members = {"a", "b"};
    fs_spec.max_epochs = 20;
    auto head = fusion::early_fuse_train(fs_spec, a, xa, b, xb, labels);
    fusion::early_fuse_predict(head, a, xa, b, xb);
    const auto after = nn::save_weights_bytes(a.network()) + nn::save_weights_bytes(b.network());
    t.check(before == after, "member weights changed during early fusion");
    t.check(fnv1a64(before) == fnv1a64(after), "member weight hash");
    return t;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Tally()>>> criteria = {
        {"P1", p1}, {"P2", p2}, {"P3", p3}, {"P4", p4},   {"P5", p5},   {"P6", p6},
        {"P7", p7}, {"P8", p8}, {"P9", p9}, {"P10", p10}, {"P11", p11},
    };
    std::set<std::string> wanted(argv + 1, argv + argc);
    std::size_t failed = 0, ran = 0;
    for (const auto& [id, fn] : criteria) {
        if (!wanted.empty() && !wanted.count(id)) continue;
        ++ran;
        const auto t0 = Clock::now();
        bool ok = false;
        std::string detail;
        try {
            const Tally t = fn();
            ok = t.ok();
            detail = t.summary();
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        failed += !ok;
        std::printf("%-4s %s  (%.1f s) %s\n", id.c_str(), ok ? "PASS" : "FAIL", seconds_since(t0), detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", ran - failed, ran);
    return failed == 0 ? 0 : 1;
}
