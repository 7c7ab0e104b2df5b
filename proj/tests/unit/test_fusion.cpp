#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "oracles.hpp"
#include "palsyfuse/error.hpp"
#include "palsyfuse/fusion.hpp"
#include "palsyfuse/rng.hpp"

using namespace palsyfuse;
using namespace palsyfuse::fusion;
using palsyfuse::nn::Tensor;

namespace {

struct Pair {
    Tensor xa, xb;
    std::vector<double> labels;
};

// Modality A (29 wide) separates the classes; modality B (52 wide) is noise.
Pair separable_in_a(std::size_t n, std::uint64_t seed) {
    Pair p{Tensor({n, 29}), Tensor({n, 52}), {}};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double y = static_cast<double>(i % 2);
        for (std::size_t j = 0; j < 29; ++j) p.xa[i * 29 + j] = (y ? 0.7 : 0.3) + 0.05 * rng.normal();
        for (std::size_t j = 0; j < 52; ++j) p.xb[i * 52 + j] = rng.uniform();
        p.labels.push_back(y);
    }
    return p;
}

models::TrainedModel member_a(const Pair& data, std::size_t epochs = 40) {
    auto spec = models::build_ffn_handcrafted();
    spec.plan.max_epochs = epochs;
    spec.plan.batch_size = 16;
    spec.plan.seed = 1;
    return models::train(spec, {data.xa, data.labels});
}

models::TrainedModel member_b(const Pair& data) {
    auto spec = models::build_ffn_expression();
    spec.plan.max_epochs = 5;
    spec.plan.batch_size = 16;
    spec.plan.seed = 2;
    return models::train(spec, {data.xb, data.labels});
}

std::vector<std::vector<double>> snapshot(models::TrainedModel& m) {
    std::vector<std::vector<double>> out;
    for (auto* p : nn::all_params(m.network())) out.emplace_back(p->value.data(), p->value.data() + p->value.size());
    for (auto* layer : nn::all_layers(m.network())) {
        for (auto* b : layer->own_buffers()) out.emplace_back(b->data(), b->data() + b->size());
    }
    return out;
}

FusionSpec early_spec() {
    FusionSpec s;
    s.name = "early";
    s.members = {"a", "b"};
    s.seed = 3;
    return s;
}

Prediction row(std::string subject, std::string frame, double p) {
    return Prediction{std::move(subject), std::move(frame), p, decide(p)};
}

}  // namespace

TEST_CASE("late fusion examples") {
    struct Case {
        double a, b, p;
        BinaryLabel label;
    };
    for (const auto& c : {Case{0.9, 0.7, 0.8, BinaryLabel::Palsy}, Case{0.2, 0.2, 0.2, BinaryLabel::NoPalsy},
                          Case{0.6, 0.4, 0.5, BinaryLabel::Palsy}}) {
        const std::vector<double> pa{c.a}, pb{c.b};
        const auto p = late_fuse(pa, pb);
        CHECK(p[0] == doctest::Approx(c.p).epsilon(1e-15));
        CHECK(decide(p[0]) == c.label);
        CHECK(static_cast<int>(decide(p[0])) == testing::late_fusion_label(c.a, c.b));
    }
}

TEST_CASE("late fusion is symmetric and agrees with the naive rule") {
    Rng rng(12);
    std::vector<double> pa, pb;
    for (int i = 0; i < 1000; ++i) {
        pa.push_back(rng.below(5) == 0 ? 0.5 : rng.uniform());
        pb.push_back(rng.below(5) == 0 ? 1.0 - pa.back() : rng.uniform());
    }
    const auto ab = late_fuse(pa, pb), ba = late_fuse(pb, pa);
    CHECK(ab == ba);
    for (std::size_t i = 0; i < ab.size(); ++i) {
        CHECK(static_cast<int>(decide(ab[i])) == testing::late_fusion_label(pa[i], pb[i]));
    }
    CHECK_THROWS_AS(late_fuse(std::vector<double>{0.1}, std::vector<double>{0.1, 0.2}), ShapeError);
}

TEST_CASE("late fusion matches rows by frame key") {
    const std::vector<Prediction> a{row("s1", "1", 0.9), row("s1", "2", 0.1), row("s2", "1", 0.6)};
    const std::vector<Prediction> b{row("s2", "1", 0.4), row("s1", "1", 0.7), row("s1", "2", 0.3)};
    const auto fused = late_fuse_predict(a, b);
    REQUIRE(fused.size() == 3);
    CHECK(fused[0].subject_id == "s1");
    CHECK(fused[0].probability == doctest::Approx(0.8));
    CHECK(fused[1].label == BinaryLabel::NoPalsy);
    CHECK(fused[2].probability == 0.5);
    CHECK(fused[2].label == BinaryLabel::Palsy);

    auto swapped = late_fuse_predict(b, a);
    std::sort(swapped.begin(), swapped.end(), [](const auto& x, const auto& y) {
        return std::tie(x.subject_id, x.frame_id) < std::tie(y.subject_id, y.frame_id);
    });
    CHECK(swapped == fused);

    const std::vector<Prediction> missing{row("s1", "1", 0.5), row("s1", "2", 0.5), row("s3", "1", 0.5)};
    CHECK_THROWS_AS(late_fuse_predict(a, missing), ShapeError);
    CHECK_THROWS_AS(late_fuse_predict(a, std::vector<Prediction>{b[0], b[1]}), ShapeError);
    const std::vector<Prediction> dup{row("s1", "1", 0.5), row("s1", "1", 0.5), row("s2", "1", 0.5)};
    CHECK_THROWS_AS(late_fuse_predict(dup, a), SchemaError);
}

TEST_CASE("early fusion head width is the sum of member tap widths") {
    const auto hc = models::build_ffn_handcrafted();
    const auto mixer = models::build_mixer_mini();
    const auto head = head_spec(early_spec(), hc, mixer);
    CHECK(models::tap_width(hc) + models::tap_width(mixer) == 59 + 128);
    CHECK(head.input_shape == nn::Shape{187});
    CHECK(head.plan.optimizer.lr == 0.01);
    CHECK(head.plan.batch_size == 128);
    CHECK(head.plan.max_epochs == 100);
    CHECK(head.plan.patience == 3);
    auto slow = early_spec();
    slow.lr = 0.001;
    CHECK(head_spec(slow, hc, models::build_resnet_mini({}, true)).input_shape == nn::Shape{59 + 512});
    CHECK(head_spec(slow, hc, models::build_resnet_mini({}, true)).plan.optimizer.lr == 0.001);
}

TEST_CASE("early fusion trains the head, leaves members untouched, and depends only on embeddings") {
    const auto data = separable_in_a(512, 4);
    auto a = member_a(data);
    auto b = member_b(data);
    const auto before_a = snapshot(a), before_b = snapshot(b);

    auto head = early_fuse_train(early_spec(), a, data.xa, b, data.xb, data.labels);
    CHECK(snapshot(a) == before_a);
    CHECK(snapshot(b) == before_b);
    REQUIRE(!head.log().empty());
    CHECK(head.log().size() <= 100);
    CHECK(head.log().back().loss < 0.1);

    const auto p = early_fuse_predict(head, a, data.xa, b, data.xb);
    CHECK(models::accuracy(p, data.labels) == 1.0);
    CHECK(snapshot(a) == before_a);

    auto twin = member_a(data);
    CHECK(early_fuse_predict(head, twin, data.xa, b, data.xb) == p);

    const auto e = fused_embeddings(a, data.xa, b, data.xb);
    CHECK(e.shape() == nn::Shape{512, 69});
}

TEST_CASE("early fusion input errors") {
    const auto data = separable_in_a(16, 5);
    auto a = member_a(data, 2);
    auto b = member_b(data);
    Tensor short_b({8, 52});
    CHECK_THROWS_AS(fused_embeddings(a, data.xa, b, short_b), ShapeError);
    CHECK_THROWS_AS(early_fuse_train(early_spec(), a, data.xa, b, data.xa, data.labels), ShapeError);

    auto s = early_spec();
    s.members = {"a", "a"};
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = early_spec();
    s.lr = 0.0;
    CHECK_THROWS_AS(validate(s), ConfigError);
    CHECK(parse_fusion_mode("late") == FusionMode::Late);
    CHECK_THROWS_AS(parse_fusion_mode("middle"), ConfigError);
}

TEST_CASE("prediction CSV round trip") {
    Rng rng(6);
    std::vector<Prediction> rows;
    for (int i = 0; i < 20; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9g", rng.uniform());
        rows.push_back(row("s" + std::to_string(i % 4), std::to_string(i), std::stod(buf)));
    }
    const auto text = serialize_predictions_csv(rows);
    CHECK(text.rfind("subject_id,frame_id,probability,label\n", 0) == 0);
    CHECK(parse_predictions_csv(text) == rows);
    const auto dir = std::filesystem::temp_directory_path() / "palsyfuse_unit_predictions";
    std::filesystem::remove_all(dir);
    write_predictions_csv(rows, dir / "p.csv");
    CHECK(read_predictions_csv(dir / "p.csv") == rows);
    CHECK_THROWS(parse_predictions_csv("subject_id,frame_id,probability,label\ns,1,0.7,Maybe\n"));
    CHECK_THROWS(parse_predictions_csv("a,b\n"));
}
