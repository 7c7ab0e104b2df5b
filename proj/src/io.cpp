#include "palsyfuse/io.hpp"

#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "palsyfuse/error.hpp"

namespace palsyfuse::io {

using nlohmann::json;

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp-" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot move output into place at " + path.string());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

// ---------------------------------------------------------------- frames

std::string serialize_frame(const LandmarkFrame& f) {
    validate(f);
    std::string s;
    s.reserve(kLandmarkCount * 28 + 512);
    s += "{\"subject_id\":" + json(f.subject_id).dump();
    s += ",\"frame_id\":" + json(f.frame_id).dump();
    s += ",\"source\":\"" + std::string(to_string(f.source)) + "\"";
    s += ",\"landmarks\":[";
    for (std::size_t i = 0; i < f.landmarks.size(); ++i) {
        if (i) s += ',';
        s += '[' + format_number(f.landmarks[i].x) + ',' + format_number(f.landmarks[i].y) + ']';
    }
    s += "],\"blendshapes\":";
    if (f.blendshapes) {
        s += '[';
        for (std::size_t i = 0; i < f.blendshapes->size(); ++i) {
            if (i) s += ',';
            s += format_number((*f.blendshapes)[i]);
        }
        s += ']';
    } else {
        s += "null";
    }
    s += ",\"label\":";
    if (f.label) {
        s += "{\"eyes\":\"" + std::string(to_string(f.label->eyes)) + "\",\"mouth\":\"" +
             std::string(to_string(f.label->mouth)) + "\"}";
    } else {
        s += "null";
    }
    s += '}';
    return s;
}

namespace {

std::string where(std::size_t line_number) {
    return line_number ? "line " + std::to_string(line_number) + ": " : std::string{};
}

const json& require(const json& obj, const char* key, std::size_t line_number) {
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(where(line_number) + "missing field '" + key + "'");
    return *it;
}

double as_number(const json& v, const std::string& what) {
    if (!v.is_number()) throw SchemaError(what + ": expected a number");
    return v.get<double>();
}

}  // namespace

LandmarkFrame parse_frame(std::string_view line, std::size_t line_number) {
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(where(line_number) + "malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw ParseError(where(line_number) + "expected a JSON object");

    LandmarkFrame f;
    try {
        const auto& sid = require(obj, "subject_id", line_number);
        const auto& fid = require(obj, "frame_id", line_number);
        if (!sid.is_string() || !fid.is_string()) {
            throw SchemaError(where(line_number) + "subject_id and frame_id must be strings");
        }
        f.subject_id = sid.get<std::string>();
        f.frame_id = fid.get<std::string>();
        const std::string name = where(line_number) + "frame " + f.subject_id + "/" + f.frame_id;

        const auto& src = require(obj, "source", line_number);
        if (!src.is_string()) throw SchemaError(name + ": source must be a string");
        f.source = parse_source(src.get<std::string>());

        const auto& lm = require(obj, "landmarks", line_number);
        if (!lm.is_array()) throw SchemaError(name + ": landmarks must be an array");
        if (lm.size() != kLandmarkCount) {
            throw SchemaError(name + ": landmarks: expected 478, got " + std::to_string(lm.size()));
        }
        f.landmarks.reserve(kLandmarkCount);
        for (const auto& p : lm) {
            if (!p.is_array() || p.size() != 2) throw SchemaError(name + ": landmark must be [x, y]");
            f.landmarks.push_back({as_number(p[0], name), as_number(p[1], name)});
        }

        if (auto it = obj.find("blendshapes"); it != obj.end() && !it->is_null()) {
            if (!it->is_array()) throw SchemaError(name + ": blendshapes must be an array or null");
            std::vector<double> b;
            b.reserve(it->size());
            for (const auto& v : *it) b.push_back(as_number(v, name));
            f.blendshapes = std::move(b);
        }
        if (auto it = obj.find("label"); it != obj.end() && !it->is_null()) {
            if (!it->is_object()) throw SchemaError(name + ": label must be an object or null");
            const auto& eyes = require(*it, "eyes", line_number);
            const auto& mouth = require(*it, "mouth", line_number);
            if (!eyes.is_string() || !mouth.is_string()) throw SchemaError(name + ": label values must be strings");
            f.label = RegionLabel{parse_intensity(eyes.get<std::string>()),
                                  parse_intensity(mouth.get<std::string>())};
        }
    } catch (const json::exception& e) {
        throw SchemaError(where(line_number) + e.what());
    }
    try {
        validate(f);
    } catch (const SchemaError& e) {
        throw SchemaError(where(line_number) + e.what());
    }
    return f;
}

std::vector<LandmarkFrame> parse_frames(std::string_view text) {
    std::vector<LandmarkFrame> frames;
    std::size_t line_number = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        ++line_number;
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        frames.push_back(parse_frame(line, line_number));
    }
    validate_unique_ids(frames);
    return frames;
}

std::vector<LandmarkFrame> read_frames(const fs::path& path) {
    return parse_frames(read_file(path));
}

void write_frames(std::span<const LandmarkFrame> frames, const fs::path& path) {
    validate_unique_ids(frames);
    std::string out;
    for (const auto& f : frames) {
        out += serialize_frame(f);
        out += '\n';
    }
    write_file_atomic(path, out);
}

// ---------------------------------------------------------------- features

namespace {

void check_csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") != std::string::npos) {
        throw SchemaError("identifier '" + s + "' cannot be written to CSV (contains a separator)");
    }
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        auto c = line.find(',', pos);
        if (c == std::string_view::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, c - pos));
        pos = c + 1;
    }
    return out;
}

}  // namespace

std::string serialize_features_csv(std::span<const FeatureVector> vectors) {
    if (vectors.empty()) throw SchemaError("features CSV: no vectors to write");
    const auto kind = vectors.front().kind;
    std::string out = "subject_id,frame_id";
    for (const auto& name : feature_names(kind)) out += ',' + name;
    out += '\n';
    for (const auto& v : vectors) {
        if (v.kind != kind) throw SchemaError("features CSV: mixed feature kinds");
        validate(v);
        check_csv_field(v.subject_id);
        check_csv_field(v.frame_id);
        out += v.subject_id;
        out += ',';
        out += v.frame_id;
        for (double x : v.values) {
            out += ',';
            out += format_number(x);
        }
        out += '\n';
    }
    return out;
}

std::vector<FeatureVector> parse_features_csv(std::string_view text) {
    auto first_end = text.find('\n');
    if (first_end == std::string_view::npos) throw SchemaError("features CSV: missing header row");
    auto header = split_commas(text.substr(0, first_end));
    if (header.size() < 2 || header[0] != "subject_id" || header[1] != "frame_id") {
        throw SchemaError("features CSV: header must start with subject_id,frame_id");
    }
    std::optional<FeatureKind> kind;
    for (auto k : {FeatureKind::Handcrafted29, FeatureKind::Expression52, FeatureKind::Coordinates956}) {
        const auto& names = feature_names(k);
        if (header.size() >= 3 && header[2] == names.front()) kind = k;
    }
    if (!kind) throw SchemaError("features CSV: unrecognized feature columns");
    const auto& names = feature_names(*kind);
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i + 2 >= header.size() || header[i + 2] != names[i]) {
            throw SchemaError("features CSV: missing column " + names[i]);
        }
    }
    if (header.size() != names.size() + 2) throw SchemaError("features CSV: unexpected extra columns");

    std::vector<FeatureVector> out;
    std::size_t pos = first_end + 1;
    std::size_t line_number = 1;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_number;
        if (line.empty()) continue;
        auto cells = split_commas(line);
        if (cells.size() != header.size()) {
            throw SchemaError("features CSV line " + std::to_string(line_number) + ": expected " +
                              std::to_string(header.size()) + " columns, got " +
                              std::to_string(cells.size()));
        }
        FeatureVector v;
        v.kind = *kind;
        v.subject_id = std::string(cells[0]);
        v.frame_id = std::string(cells[1]);
        v.values.reserve(names.size());
        for (std::size_t i = 2; i < cells.size(); ++i) {
            double x = 0.0;
            auto [ptr, ec] = std::from_chars(cells[i].data(), cells[i].data() + cells[i].size(), x);
            if (ec != std::errc{} || ptr != cells[i].data() + cells[i].size()) {
                throw ParseError("features CSV line " + std::to_string(line_number) +
                                 ": bad number in column " + names[i - 2]);
            }
            v.values.push_back(x);
        }
        validate(v);
        out.push_back(std::move(v));
    }
    return out;
}

void write_features_csv(std::span<const FeatureVector> vectors, const fs::path& path) {
    write_file_atomic(path, serialize_features_csv(vectors));
}

std::vector<FeatureVector> read_features_csv(const fs::path& path) {
    return parse_features_csv(read_file(path));
}

// ---------------------------------------------------------------- images

std::string encode_pnm(const ImageBuffer& img) {
    validate(img);
    std::string out = img.channels == 1 ? "P5\n" : "P6\n";
    out += std::to_string(img.width) + ' ' + std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

namespace {

struct PnmCursor {
    std::string_view bytes;
    std::size_t pos = 0;

    void skip_space_and_comments() {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++pos;
            } else {
                break;
            }
        }
    }

    int read_int(const char* what) {
        skip_space_and_comments();
        int value = 0;
        auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), value);
        if (ec != std::errc{} || value <= 0) throw FormatError(std::string("pnm: bad ") + what);
        pos = static_cast<std::size_t>(ptr - bytes.data());
        return value;
    }
};

}  // namespace

ImageBuffer decode_pnm(std::string_view bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("pnm: missing magic number");
    int channels = 0;
    if (bytes[1] == '5') {
        channels = 1;
    } else if (bytes[1] == '6') {
        channels = 3;
    } else {
        throw FormatError("pnm: unsupported format P" + std::string(1, bytes[1]) +
                          " (only binary P5/P6 are supported)");
    }
    PnmCursor cur{bytes, 2};
    const int width = cur.read_int("width");
    const int height = cur.read_int("height");
    const int maxval = cur.read_int("maxval");
    if (maxval != 255) throw FormatError("pnm: only maxval 255 is supported");
    if (cur.pos >= bytes.size()) throw FormatError("pnm: truncated header");
    ++cur.pos;  // single whitespace byte before the raster
    const auto need = static_cast<std::size_t>(width) * height * channels;
    if (bytes.size() - cur.pos < need) {
        throw FormatError("pnm: truncated pixel payload (expected " + std::to_string(need) +
                          " bytes, got " + std::to_string(bytes.size() - cur.pos) + ")");
    }
    ImageBuffer img(width, height, channels);
    std::memcpy(img.pixels.data(), bytes.data() + cur.pos, need);
    return img;
}

void write_image(const ImageBuffer& img, const fs::path& path) {
    write_file_atomic(path, encode_pnm(img));
}

ImageBuffer read_image(const fs::path& path) { return decode_pnm(read_file(path)); }

// ---------------------------------------------------------------- manifest

std::string serialize_manifest(const DatasetManifest& m) {
    json j;
    j["format_version"] = m.format_version;
    j["subjects"] = json::array();
    for (const auto& s : m.subjects) {
        json census = json::object();
        for (const auto& [key, count] : s.census) census[class_key_name(key)] = count;
        j["subjects"].push_back({{"subject_id", s.subject_id},
                                 {"source", to_string(s.source)},
                                 {"frame_count", s.frame_count},
                                 {"census", census}});
    }
    return j.dump(2) + "\n";
}

DatasetManifest parse_manifest(std::string_view text) {
    DatasetManifest m;
    try {
        auto j = json::parse(text);
        m.format_version = j.at("format_version").get<std::string>();
        for (const auto& s : j.at("subjects")) {
            SubjectCensus c;
            c.subject_id = s.at("subject_id").get<std::string>();
            c.source = parse_source(s.at("source").get<std::string>());
            c.frame_count = s.at("frame_count").get<std::size_t>();
            for (const auto& [name, count] : s.at("census").items()) {
                int key = -1;
                for (int k = 0; k < 9; ++k) {
                    if (class_key_name(k) == name) key = k;
                }
                if (key < 0) throw SchemaError("manifest: unknown class key " + name);
                c.census[key] = count.get<std::size_t>();
            }
            m.subjects.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
    validate(m);
    return m;
}

}  // namespace palsyfuse::io
