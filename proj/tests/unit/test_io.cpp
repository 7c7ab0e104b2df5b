#include <doctest.h>

#include <cstdio>
#include <algorithm>
#include <filesystem>
#include <map>

#include "palsyfuse/error.hpp"
#include "palsyfuse/io.hpp"
#include "palsyfuse/rng.hpp"
#include "palsyfuse/synthgen.hpp"

using namespace palsyfuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("palsyfuse_unit_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Values are drawn through the 9-digit text form so every double is exactly
// representable by the serializer.
double nine_digits(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return std::stod(buf);
}

LandmarkFrame random_frame(Rng& rng, int i) {
    LandmarkFrame f;
    f.subject_id = "s" + std::to_string(i % 3);
    f.frame_id = "f" + std::to_string(i);
    f.source = static_cast<Source>(i % 3);
    for (std::size_t k = 0; k < kLandmarkCount; ++k) {
        f.landmarks.push_back({nine_digits(rng.uniform()), nine_digits(rng.uniform())});
    }
    if (i % 2 == 0) {
        std::vector<double> b;
        for (std::size_t k = 0; k < kBlendshapeCount; ++k) b.push_back(nine_digits(rng.uniform()));
        f.blendshapes = b;
    }
    if (i % 4 != 3) f.label = RegionLabel{static_cast<Intensity>(i % 3), static_cast<Intensity>((i / 3) % 3)};
    return f;
}

std::string frame_line(std::size_t landmarks, const std::string& extra = "") {
    std::string s = R"({"subject_id":"a","frame_id":"1","source":"synthetic","landmarks":[)";
    for (std::size_t i = 0; i < landmarks; ++i) s += std::string(i ? "," : "") + "[0.5,0.5]";
    s += "]" + extra + "}";
    return s;
}

}  // namespace

TEST_CASE("frames JSONL round trip of 10 random frames is exact") {
    Rng rng(11);
    std::vector<LandmarkFrame> frames;
    for (int i = 0; i < 10; ++i) frames.push_back(random_frame(rng, i));
    const auto dir = scratch_dir("frames");
    io::write_frames(frames, dir / "frames.jsonl");
    const auto back = io::read_frames(dir / "frames.jsonl");
    CHECK(back == frames);
    const auto text = io::read_file(dir / "frames.jsonl");
    std::string again;
    for (const auto& f : back) again += io::serialize_frame(f) + "\n";
    CHECK(again == text);
}

TEST_CASE("frame schema errors") {
    CHECK_NOTHROW(io::parse_frame(frame_line(478)));
    try {
        io::parse_frame(frame_line(477));
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("landmarks: expected 478, got 477") != std::string::npos);
    }
    std::string bad_blend = ",\"blendshapes\":[1.5";
    for (int i = 1; i < 52; ++i) bad_blend += ",0";
    bad_blend += "]";
    CHECK_THROWS_AS(io::parse_frame(frame_line(478, bad_blend)), SchemaError);

    try {
        io::parse_frames(frame_line(478) + "\n{not json\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("parsing arbitrary bytes only raises typed errors") {
    Rng rng(5);
    for (int t = 0; t < 300; ++t) {
        std::string bytes(rng.below(200), '\0');
        for (auto& c : bytes) c = static_cast<char>(rng.below(256));
        if (t % 3 == 0) bytes = frame_line(478).substr(0, rng.below(frame_line(478).size()));
        try {
            io::parse_frames(bytes);
        } catch (const Error&) {
        }
        try {
            io::decode_pnm(bytes);
        } catch (const Error&) {
        }
        try {
            io::parse_features_csv(bytes);
        } catch (const Error&) {
        }
    }
}

TEST_CASE("features CSV") {
    FeatureVector v;
    v.kind = FeatureKind::Handcrafted29;
    v.subject_id = "s1";
    v.frame_id = "f7";
    Rng rng(3);
    for (int i = 0; i < 29; ++i) v.values.push_back(nine_digits(rng.uniform()));
    const auto text = io::serialize_features_csv(std::vector{v});
    const auto header = text.substr(0, text.find('\n'));
    CHECK(std::count(header.begin(), header.end(), ',') + 1 == 31);
    CHECK(header.rfind("subject_id,frame_id,F1,F2,", 0) == 0);
    CHECK(header.substr(header.size() - 4) == ",F29");
    CHECK(io::parse_features_csv(text) == std::vector{v});

    const auto dir = scratch_dir("features");
    io::write_features_csv(std::vector{v}, dir / "h.csv");
    CHECK(io::read_features_csv(dir / "h.csv") == std::vector{v});

    auto missing = text;
    missing.replace(missing.find(",F29"), 4, "");
    CHECK_THROWS_AS(io::parse_features_csv(missing), SchemaError);
}

TEST_CASE("PGM/PPM codec") {
    ImageBuffer black(2, 2, 1, 0);
    const auto bytes = io::encode_pnm(black);
    CHECK(bytes == std::string("P5\n2 2\n255\n") + std::string(4, '\0'));
    CHECK(bytes.size() == 11 + 4);

    Rng rng(9);
    ImageBuffer rgb(64, 64, 3);
    for (auto& p : rgb.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    const auto dir = scratch_dir("pnm");
    io::write_image(rgb, dir / "x.ppm");
    CHECK(io::read_image(dir / "x.ppm") == rgb);
    CHECK(io::encode_pnm(io::read_image(dir / "x.ppm")) == io::read_file(dir / "x.ppm"));

    CHECK_THROWS_AS(io::decode_pnm("P3\n2 2\n255\n0 0 0 0"), FormatError);
    CHECK_THROWS_AS(io::decode_pnm("P5\n2 2\n255\n\x01\x02"), FormatError);
}

TEST_CASE("atomic writes leave no temporary files") {
    const auto dir = scratch_dir("atomic");
    io::write_file_atomic(dir / "nested" / "a.txt", "one");
    io::write_file_atomic(dir / "nested" / "a.txt", "two");
    CHECK(io::read_file(dir / "nested" / "a.txt") == "two");
    std::size_t entries = 0;
    for (const auto& e : fs::directory_iterator(dir / "nested")) entries += e.is_regular_file();
    CHECK(entries == 1);
}

TEST_CASE("manifest census equals a recount of the frames") {
    synth::CohortSpec c;
    c.palsy_subjects = 3;
    c.healthy_subjects = 2;
    c.frames_per_subject = 12;
    c.seed = 4;
    const auto frames = synth::generate_cohort(c);
    const auto m = build_manifest(frames);
    REQUIRE(m.subjects.size() == 5);
    for (const auto& s : m.subjects) {
        std::map<int, std::size_t> recount;
        std::size_t n = 0;
        for (const auto& f : frames) {
            if (f.subject_id != s.subject_id) continue;
            ++recount[f.effective_label().class_key()];
            ++n;
        }
        CHECK(s.census == recount);
        CHECK(s.frame_count == n);
    }
    CHECK(io::parse_manifest(io::serialize_manifest(m)) == m);
}

TEST_CASE("labels and class keys") {
    CHECK(RegionLabel{Intensity::Slight, Intensity::Normal}.binary_label() == BinaryLabel::Palsy);
    CHECK(RegionLabel{}.binary_label() == BinaryLabel::NoPalsy);
    CHECK(class_key_name(RegionLabel{Intensity::Slight, Intensity::Normal}.class_key()) == "Slight-Eyes-Normal-Mouth");
    CHECK(parse_binary_label(to_string(BinaryLabel::Palsy)) == BinaryLabel::Palsy);
    CHECK(parse_binary_label(to_string(BinaryLabel::NoPalsy)) == BinaryLabel::NoPalsy);
    CHECK_THROWS_AS(parse_binary_label("maybe"), SchemaError);

    std::vector<LandmarkFrame> dup(2);
    for (auto& f : dup) {
        f.subject_id = "a";
        f.frame_id = "1";
        f.landmarks.assign(kLandmarkCount, {0.5, 0.5});
    }
    CHECK_THROWS_AS(validate_unique_ids(dup), SchemaError);
}
