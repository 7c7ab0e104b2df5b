#include <doctest.h>

#include <cmath>
#include <set>

#include "palsyfuse/error.hpp"
#include "palsyfuse/geometry.hpp"
#include "palsyfuse/synthgen.hpp"

using namespace palsyfuse;
using namespace palsyfuse::synth;

namespace {

SynthSubjectSpec subject(bool palsy, double severity, std::size_t frames, std::uint64_t seed, double jitter) {
    SynthSubjectSpec s;
    s.subject_id = palsy ? "p" : "h";
    s.is_palsy = palsy;
    s.severity = severity;
    s.frame_count = frames;
    s.seed = seed;
    s.jitter_sigma = jitter;
    return s;
}

}  // namespace

TEST_CASE("generation is a pure function of the subject parameters") {
    const auto s = subject(false, 0.0, 5, 7, 0.01);
    CHECK(generate_subject(s) == generate_subject(s));
    auto other = s;
    other.seed = 8;
    CHECK(generate_subject(s) != generate_subject(other));

    CohortSpec c;
    c.palsy_subjects = 2;
    c.healthy_subjects = 3;
    c.frames_per_subject = 4;
    CHECK(generate_cohort(c) == generate_cohort(c));
}

TEST_CASE("healthy subjects are labeled Normal/Normal throughout") {
    for (const auto& f : generate_subject(subject(false, 0.0, 40, 3, 0.01))) {
        REQUIRE(f.label.has_value());
        CHECK(f.label->eyes == Intensity::Normal);
        CHECK(f.label->mouth == Intensity::Normal);
        CHECK(f.blendshapes.has_value());
        CHECK(f.source == Source::Synthetic);
    }
}

TEST_CASE("severity maps to region intensity") {
    CHECK(intensity_for(0.0) == Intensity::Normal);
    CHECK(intensity_for(0.33) == Intensity::Normal);
    CHECK(intensity_for(0.34) == Intensity::Slight);
    CHECK(intensity_for(0.66) == Intensity::Slight);
    CHECK(intensity_for(0.67) == Intensity::Strong);
    CHECK(intensity_for(1.0) == Intensity::Strong);
}

TEST_CASE("full-severity palsy shows mouth droop and eye narrowing") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto frames = generate_subject(subject(true, 1.0, 30, seed, 0.0));
        std::set<int> keys;
        for (const auto& f : frames) {
            const auto h = geometry::handcrafted29(f, geometry::default_role_map()).values;
            CHECK(h[22] > 0.2);
            CHECK(h[10] < 0.8);
            keys.insert(f.label->class_key());
            CHECK(f.label->binary_label() == BinaryLabel::Palsy);
        }
        CHECK(keys.size() >= 1);
    }
}

TEST_CASE("palsy subjects show more than one class key across a cohort") {
    CohortSpec c;
    c.palsy_subjects = 6;
    c.healthy_subjects = 0;
    c.frames_per_subject = 50;
    c.min_severity = 0.3;
    c.max_severity = 0.9;
    std::set<int> keys;
    for (const auto& f : generate_cohort(c)) keys.insert(f.label->class_key());
    CHECK(keys.size() >= 3);
}

TEST_CASE("mirror asymmetry separates palsy from healthy frames") {
    CohortSpec c;
    c.palsy_subjects = 10;
    c.healthy_subjects = 10;
    c.frames_per_subject = 20;
    c.jitter_sigma = 0.01;
    c.min_severity = 0.5;
    double sp = 0, sh = 0, sh2 = 0;
    std::size_t np = 0, nh = 0;
    for (const auto& f : generate_cohort(c)) {
        const double v = geometry::handcrafted29(f, geometry::default_role_map()).values[28];
        if (f.subject_id.rfind("palsy", 0) == 0) {
            sp += v;
            ++np;
        } else {
            sh += v;
            sh2 += v * v;
            ++nh;
        }
    }
    const double mp = sp / np, mh = sh / nh;
    const double sd = std::sqrt(sh2 / nh - mh * mh);
    MESSAGE("palsy mean " << mp << ", healthy mean " << mh << ", healthy sd " << sd);
    CHECK(mp - mh >= 5.0 * sd);
}

TEST_CASE("cohort layout") {
    CohortSpec c;
    c.palsy_subjects = 4;
    c.healthy_subjects = 2;
    c.frames_per_subject = 3;
    const auto specs = make_cohort(c);
    REQUIRE(specs.size() == 6);
    CHECK(specs[0].subject_id == "palsy-000");
    CHECK(specs[4].subject_id == "healthy-000");
    CHECK(specs[0].droop_side == Side::Left);
    CHECK(specs[1].droop_side == Side::Right);
    CHECK(specs[2].droop_side == Side::Left);
    CHECK(!specs[4].droop_side.has_value());
    for (const auto& s : specs) {
        if (s.is_palsy) {
            CHECK(s.severity >= c.min_severity);
            CHECK(s.severity <= c.max_severity);
        } else {
            CHECK(s.severity == 0.0);
        }
    }
    CHECK(generate_cohort(c).size() == 18);
}

TEST_CASE("the affected side follows droop_side") {
    auto left = subject(true, 1.0, 5, 9, 0.0);
    left.droop_side = Side::Left;
    auto right = left;
    right.droop_side = Side::Right;
    const auto& roles = geometry::default_role_map();
    for (std::size_t i = 0; i < 5; ++i) {
        const auto fl = geometry::handcrafted29(generate_subject(left)[i], roles).values;
        const auto fr = geometry::handcrafted29(generate_subject(right)[i], roles).values;
        // Narrower fissure on the affected side.
        CHECK(fl[8] < fl[9]);
        CHECK(fr[9] < fr[8]);
    }
}

TEST_CASE("invalid parameters are rejected") {
    SynthFaceParams p;
    p.mouth_droop = 1.5;
    CHECK_THROWS(validate(p));
    p.mouth_droop = 0.0;
    p.expression_phase = 1.0;
    CHECK_THROWS(validate(p));
    auto s = subject(false, 0.5, 1, 0, 0.01);
    CHECK_THROWS(validate(s));
    s = subject(true, 0.5, 0, 0, 0.01);
    CHECK_THROWS(validate(s));
}

TEST_CASE("blendshapes follow eye closure") {
    SynthFaceParams a;
    a.seed = 5;
    a.expression_phase = 0.1;
    auto b = a;
    b.eye_closure_asym = 1.0;
    const auto ba = synthesize_blendshapes(a), bb = synthesize_blendshapes(b);
    REQUIRE(ba.size() == kBlendshapeCount);
    double change = 0.0;
    for (std::size_t i = 0; i < ba.size(); ++i) {
        CHECK(bb[i] >= 0.0);
        CHECK(bb[i] <= 1.0);
        change += std::abs(ba[i] - bb[i]);
    }
    CHECK(change > 0.1);
}
