#include "rim/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rim/errors.hpp"
#include "rim/image_io.hpp"

namespace rim::data {

using nlohmann::json;

ImageTensor::ImageTensor(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
    if (channels < 1 || height < 1 || width < 1) {
        throw std::invalid_argument("ImageTensor dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

ParsingMap::ParsingMap(int class_count, int height, int width, std::uint8_t fill)
    : ParsingMap(class_count, height, width,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, fill)) {}

ParsingMap::ParsingMap(int class_count, int height, int width, std::vector<std::uint8_t> labels)
    : class_count_(class_count), height_(height), width_(width), labels_(std::move(labels)) {
    if (class_count < 1 || class_count > 256 || height < 1 || width < 1) {
        throw std::invalid_argument("ParsingMap dimensions must be positive and class count <= 256");
    }
    if (labels_.size() != static_cast<std::size_t>(height) * width) {
        throw std::invalid_argument("ParsingMap label buffer does not match its shape");
    }
    for (const auto label : labels_) {
        if (label >= class_count) {
            throw std::invalid_argument("parsing label out of range");
        }
    }
}

ImageTensor ParsingMap::one_hot() const {
    ImageTensor out(class_count_, height_, width_);
    for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
            out.at(at(y, x), y, x) = 1.0;
        }
    }
    return out;
}

std::vector<std::size_t> DatasetManifest::indices_for_split(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == split) {
            out.push_back(i);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest I/O

std::filesystem::path meta_path_for(const std::filesystem::path& manifest_path) {
    auto meta = manifest_path;
    meta.replace_extension(".meta.json");
    return meta;
}

namespace {

void validate_permutation(const std::vector<int>& perm, int landmark_count, const std::string& where) {
    if (perm.empty()) {
        return;
    }
    if (static_cast<int>(perm.size()) != landmark_count) {
        throw ValidationError(where + ": flip_permutation has " + std::to_string(perm.size()) +
                              " entries, expected " + std::to_string(landmark_count));
    }
    for (int i = 0; i < landmark_count; ++i) {
        const int j = perm[i];
        if (j < 0 || j >= landmark_count || perm[j] != i) {
            throw ValidationError(where + ": flip_permutation must be a mirror-pair involution (index " +
                                  std::to_string(i) + ")");
        }
    }
}

ManifestRecord parse_record(const json& j, std::size_t line) {
    if (!j.is_object()) {
        throw ParseError("manifest record is not a JSON object", line);
    }
    for (const char* key : {"image_path", "landmarks", "parsing_path", "identity"}) {
        if (!j.contains(key)) {
            throw ParseError(std::string("manifest record missing field '") + key + "'", line);
        }
    }
    ManifestRecord rec;
    try {
        rec.image_path = j.at("image_path").get<std::string>();
        rec.parsing_path = j.at("parsing_path").get<std::string>();
        rec.identity = j.at("identity").get<int>();
        for (const auto& p : j.at("landmarks")) {
            if (!p.is_array() || p.size() != 2) {
                throw ParseError("landmark entries must be [x, y] pairs", line);
            }
            rec.landmarks.points.push_back(
                {snap_coordinate(p[0].get<double>()), snap_coordinate(p[1].get<double>())});
        }
        if (j.contains("split")) {
            rec.split = j.at("split").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed manifest record: ") + e.what(), line);
    }
    if (rec.identity < 0) {
        throw ParseError("identity must be non-negative", line);
    }
    return rec;
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest '" + path.string() + "'");
    }
    DatasetManifest manifest;
    manifest.root = path.parent_path();

    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        auto rec = parse_record(j, line_no);
        const int n = static_cast<int>(rec.landmarks.count());
        if (manifest.records.empty()) {
            manifest.landmark_count = n;
        } else if (n != manifest.landmark_count) {
            throw ValidationError("inconsistent landmark_count at line " + std::to_string(line_no) + ": " +
                                  std::to_string(n) + " vs " + std::to_string(manifest.landmark_count));
        }
        manifest.records.push_back(std::move(rec));
    }
    if (manifest.records.empty()) {
        throw ValidationError("manifest '" + path.string() + "' contains no records");
    }

    const auto meta_path = meta_path_for(path);
    if (std::filesystem::exists(meta_path)) {
        std::ifstream meta_in(meta_path);
        json meta;
        try {
            meta = json::parse(meta_in);
            manifest.class_count = meta.value("class_count", 0);
            manifest.flip_permutation = meta.value("flip_permutation", std::vector<int>{});
        } catch (const json::exception& e) {
            throw ParseError(std::string("invalid manifest sidecar: ") + e.what(), 1);
        }
        validate_permutation(manifest.flip_permutation, manifest.landmark_count, meta_path.string());
    }

    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        for (const auto* rel : {&rec.image_path, &rec.parsing_path}) {
            if (!std::filesystem::exists(manifest.root / *rel)) {
                throw ValidationError("record " + std::to_string(i + 1) + ": path '" + *rel + "' does not resolve");
            }
        }
        const Size2 size = io::read_png_size(manifest.root / rec.image_path);
        if (i == 0) {
            manifest.image_size = size;
        } else if (size != manifest.image_size) {
            throw ValidationError("record " + std::to_string(i + 1) + ": image size differs from the first record");
        }
        for (const auto& p : rec.landmarks.points) {
            if (!(p.x >= 0.0 && p.x < size.width && p.y >= 0.0 && p.y < size.height)) {
                throw ValidationError("record " + std::to_string(i + 1) + ": landmark outside the image");
            }
        }
    }

    if (manifest.class_count == 0) {
        int max_label = 0;
        for (const auto& rec : manifest.records) {
            const auto parsing = io::read_png_labels(manifest.root / rec.parsing_path, 256);
            for (const auto label : parsing.labels()) {
                max_label = std::max<int>(max_label, label);
            }
        }
        manifest.class_count = max_label + 1;
    }
    return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write manifest '" + path.string() + "'");
    }
    for (const auto& rec : manifest.records) {
        json lm = json::array();
        for (const auto& p : rec.landmarks.points) {
            lm.push_back({p.x, p.y});
        }
        json j = {{"image_path", rec.image_path},
                  {"landmarks", lm},
                  {"parsing_path", rec.parsing_path},
                  {"identity", rec.identity},
                  {"split", rec.split}};
        out << j.dump() << '\n';
    }
    std::ofstream meta(meta_path_for(path), std::ios::binary);
    json m = {{"class_count", manifest.class_count},
              {"landmark_count", manifest.landmark_count},
              {"flip_permutation", manifest.flip_permutation}};
    meta << m.dump(2) << '\n';
    if (!out || !meta) {
        throw IoError("failed writing manifest '" + path.string() + "'");
    }
}

// ---------------------------------------------------------------------------
// Resampling

double cubic_kernel(double x) noexcept {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) {
        return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    }
    if (x < 2.0) {
        return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    }
    return 0.0;
}

namespace {

struct Taps {
    std::array<int, 4> index;
    std::array<double, 4> weight;
};

std::vector<Taps> make_taps(int in_len, int out_len) {
    std::vector<Taps> taps(out_len);
    const double scale = static_cast<double>(in_len) / out_len;
    for (int o = 0; o < out_len; ++o) {
        const double src = (o + 0.5) * scale - 0.5;
        const double base = std::floor(src);
        const double t = src - base;
        for (int k = 0; k < 4; ++k) {
            const int idx = static_cast<int>(base) - 1 + k;
            taps[o].index[k] = std::clamp(idx, 0, in_len - 1);
            taps[o].weight[k] = cubic_kernel(t - (k - 1));
        }
    }
    return taps;
}

}  // namespace

ImageTensor bicubic_resize(const ImageTensor& img, Size2 target) {
    if (target.height < 1 || target.width < 1) {
        throw std::invalid_argument("bicubic_resize target dimensions must be positive");
    }
    if (img.empty()) {
        throw std::invalid_argument("bicubic_resize on an empty image");
    }
    const auto rows = make_taps(img.height(), target.height);
    const auto cols = make_taps(img.width(), target.width);

    ImageTensor out(img.channels(), target.height, target.width);
    std::vector<double> horiz(static_cast<std::size_t>(img.height()) * target.width);
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < target.width; ++x) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    acc += cols[x].weight[k] * img.at(c, y, cols[x].index[k]);
                }
                horiz[static_cast<std::size_t>(y) * target.width + x] = acc;
            }
        }
        for (int y = 0; y < target.height; ++y) {
            for (int x = 0; x < target.width; ++x) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    acc += rows[y].weight[k] * horiz[static_cast<std::size_t>(rows[y].index[k]) * target.width + x];
                }
                out.at(c, y, x) = std::clamp(acc, 0.0, 1.0);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Priors

double snap_coordinate(double v) { return std::round(v * kLandmarkGrid) / kLandmarkGrid; }

HeatmapStack render_heatmaps(const LandmarkSet& landmarks, Size2 shape, double sigma) {
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("heatmap sigma must be positive");
    }
    if (landmarks.count() == 0) {
        throw std::invalid_argument("render_heatmaps needs at least one landmark");
    }
    HeatmapStack stack{ImageTensor(static_cast<int>(landmarks.count()), shape.height, shape.width), sigma};
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t n = 0; n < landmarks.count(); ++n) {
        const auto& p = landmarks.points[n];
        if (!(p.x >= 0.0 && p.x < shape.width && p.y >= 0.0 && p.y < shape.height)) {
            throw ValidationError("landmark " + std::to_string(n) + " at (" + std::to_string(p.x) + ", " +
                                  std::to_string(p.y) + ") lies outside the heatmap");
        }
        const auto cx = static_cast<double>(std::min<long>(std::lround(p.x), shape.width - 1));
        const auto cy = static_cast<double>(std::min<long>(std::lround(p.y), shape.height - 1));
        for (int i = 0; i < shape.height; ++i) {
            const double dy = i - cy;
            for (int j = 0; j < shape.width; ++j) {
                const double dx = j - cx;
                stack.data.at(static_cast<int>(n), i, j) = std::exp(-(dy * dy + dx * dx) * inv);
            }
        }
    }
    return stack;
}

LandmarkSet rescale_landmarks(const LandmarkSet& landmarks, Size2 from, Size2 to) {
    LandmarkSet out;
    out.points.reserve(landmarks.count());
    const double sx = static_cast<double>(to.width) / from.width;
    const double sy = static_cast<double>(to.height) / from.height;
    for (const auto& p : landmarks.points) {
        const double x = std::clamp((p.x + 0.5) * sx - 0.5, 0.0, to.width - 1.0);
        const double y = std::clamp((p.y + 0.5) * sy - 0.5, 0.0, to.height - 1.0);
        out.points.push_back({x, y});
    }
    return out;
}

ParsingMap resize_parsing(const ParsingMap& parsing, Size2 target) {
    ParsingMap out(parsing.class_count(), target.height, target.width);
    const double sy = static_cast<double>(parsing.height()) / target.height;
    const double sx = static_cast<double>(parsing.width()) / target.width;
    for (int y = 0; y < target.height; ++y) {
        const int src_y = std::clamp(static_cast<int>(std::floor((y + 0.5) * sy)), 0, parsing.height() - 1);
        for (int x = 0; x < target.width; ++x) {
            const int src_x = std::clamp(static_cast<int>(std::floor((x + 0.5) * sx)), 0, parsing.width() - 1);
            out.at(y, x) = parsing.at(src_y, src_x);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation

ImageTensor mirror_width(const ImageTensor& img) {
    if (img.empty()) {
        return img;
    }
    ImageTensor out(img.channels(), img.height(), img.width());
    const int w = img.width();
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < w; ++x) {
                out.at(c, y, x) = img.at(c, y, w - 1 - x);
            }
        }
    }
    return out;
}

PairSample flip_horizontal(const PairSample& sample, const std::vector<int>& permutation) {
    const std::size_t n = sample.landmarks.count();
    if (!permutation.empty() && permutation.size() != n) {
        throw std::invalid_argument("flip permutation size does not match landmark count");
    }
    PairSample out;
    out.hr = mirror_width(sample.hr);
    out.lr = mirror_width(sample.lr);
    out.coarse_input = mirror_width(sample.coarse_input);
    out.identity = sample.identity;

    const double w = sample.hr.empty() ? sample.parsing.width() : sample.hr.width();
    out.landmarks.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto src = permutation.empty() ? i : static_cast<std::size_t>(permutation[i]);
        const auto& p = sample.landmarks.points.at(src);
        out.landmarks.points[i] = {w - 1.0 - p.x, p.y};
    }

    const auto& parsing = sample.parsing;
    if (parsing.height() > 0) {
        ParsingMap flipped(parsing.class_count(), parsing.height(), parsing.width());
        for (int y = 0; y < parsing.height(); ++y) {
            for (int x = 0; x < parsing.width(); ++x) {
                flipped.at(y, x) = parsing.at(y, parsing.width() - 1 - x);
            }
        }
        out.parsing = std::move(flipped);
    }
    return out;
}

PairSample make_pair_sample(ImageTensor hr, int identity, LandmarkSet landmarks, ParsingMap parsing,
                            int scale_factor) {
    if (scale_factor < 1 || hr.height() % scale_factor != 0 || hr.width() % scale_factor != 0) {
        throw std::invalid_argument("image size must be divisible by the scale factor");
    }
    PairSample s;
    s.lr = bicubic_resize(hr, {hr.height() / scale_factor, hr.width() / scale_factor});
    s.coarse_input = bicubic_resize(s.lr, hr.size2());
    s.hr = std::move(hr);
    s.identity = identity;
    s.landmarks = std::move(landmarks);
    s.parsing = std::move(parsing);
    return s;
}

PairSample load_pair_sample(const DatasetManifest& manifest, std::size_t index, int scale_factor) {
    const auto& rec = manifest.records.at(index);
    auto hr = io::read_png_rgb(manifest.root / rec.image_path);
    auto parsing = io::read_png_labels(manifest.root / rec.parsing_path, manifest.class_count);
    return make_pair_sample(std::move(hr), rec.identity, rec.landmarks, std::move(parsing), scale_factor);
}

// ---------------------------------------------------------------------------
// Synthetic faces

namespace {

bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
}

struct Sample {
    std::array<double, 3> color;
    std::uint8_t label;
};

Sample shade(const FaceParams& f, double x, double y, double height) {
    const double t = std::clamp(y / height, 0.0, 1.0);
    std::array<double, 3> bg{};
    for (int c = 0; c < 3; ++c) {
        bg[c] = (1.0 - t) * f.background_top[c] + t * f.background_bottom[c];
    }
    if (!in_ellipse(x, y, f.center_x, f.center_y, f.head_rx, f.head_ry)) {
        return {bg, parts::kBackground};
    }
    for (const double ex : {f.center_x - f.eye_dx, f.center_x + f.eye_dx}) {
        const double d2 = (x - ex) * (x - ex) + (y - f.eye_y) * (y - f.eye_y);
        if (d2 <= f.eye_r * f.eye_r) {
            const double iris_r = 0.55 * f.eye_r;
            if (d2 <= iris_r * iris_r) {
                return {f.iris, parts::kEye};
            }
            return {{0.95, 0.95, 0.93}, parts::kEye};
        }
    }
    if (in_ellipse(x, y, f.center_x, f.mouth_y, f.mouth_half_width, f.mouth_half_height)) {
        return {f.mouth, parts::kMouth};
    }
    const double brow_bottom = f.eye_y - f.eye_r - f.brow_gap;
    const double brow_top = brow_bottom - f.brow_thickness;
    for (const double ex : {f.center_x - f.eye_dx, f.center_x + f.eye_dx}) {
        if (std::abs(x - ex) <= 1.15 * f.eye_r && y >= brow_top && y <= brow_bottom) {
            return {f.brow, parts::kSkin};
        }
    }
    const double nose_top = f.eye_y + 0.5 * f.eye_r;
    if (std::abs(x - f.center_x) <= 0.025 * 2.0 * f.head_rx && y >= nose_top && y <= nose_top + f.nose_length) {
        return {{0.8 * f.skin[0], 0.8 * f.skin[1], 0.8 * f.skin[2]}, parts::kSkin};
    }
    return {f.skin, parts::kSkin};
}

/// Portable uniform draw in [lo, hi).
class Uniform {
public:
    explicit Uniform(std::uint64_t seed) : engine_(seed) {}
    double operator()(double lo, double hi) {
        const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

private:
    std::mt19937_64 engine_;
};

FaceParams identity_params(Uniform& u, Size2 size) {
    const double w = size.width;
    const double h = size.height;
    FaceParams f;
    f.center_x = (w - 1.0) / 2.0;
    f.center_y = (h - 1.0) / 2.0 + u(0.0, 0.03) * h;
    f.head_rx = u(0.28, 0.36) * w;
    f.head_ry = u(0.36, 0.42) * h;
    f.eye_dx = u(0.12, 0.19) * w;
    f.eye_y = f.center_y - u(0.08, 0.16) * h;
    f.eye_r = u(0.045, 0.07) * w;
    f.brow_gap = u(0.015, 0.05) * h;
    f.brow_thickness = u(0.015, 0.035) * h;
    f.nose_length = u(0.06, 0.14) * h;
    f.mouth_y = f.center_y + u(0.14, 0.22) * h;
    f.mouth_half_width = u(0.07, 0.15) * w;
    f.mouth_half_height = u(0.02, 0.045) * h;
    const double r = u(0.55, 0.95);
    const double g = r * u(0.65, 0.85);
    f.skin = {r, g, g * u(0.7, 0.95)};
    f.iris = {u(0.05, 0.6), u(0.05, 0.6), u(0.05, 0.6)};
    f.mouth = {u(0.5, 0.85), u(0.1, 0.35), u(0.15, 0.4)};
    const double b = u(0.05, 0.35);
    f.brow = {b, b * u(0.7, 1.0), b * u(0.6, 1.0)};
    return f;
}

FaceParams jitter(FaceParams f, Uniform& u, Size2 size) {
    const double s = size.width / 64.0;
    const double dx = u(-1.5, 1.5) * s;
    const double dy = u(-1.5, 1.5) * s;
    const double scale = u(0.97, 1.03);
    const double cx0 = f.center_x;
    const double cy0 = f.center_y;
    auto place_x = [&](double x) { return cx0 + dx + (x - cx0) * scale; };
    auto place_y = [&](double y) { return cy0 + dy + (y - cy0) * scale; };
    f.center_x = place_x(f.center_x);
    f.center_y = place_y(f.center_y);
    f.eye_y = place_y(f.eye_y);
    f.mouth_y = place_y(f.mouth_y);
    for (double* v : {&f.head_rx, &f.head_ry, &f.eye_dx, &f.eye_r, &f.brow_gap, &f.brow_thickness,
                      &f.nose_length, &f.mouth_half_width, &f.mouth_half_height}) {
        *v *= scale;
    }
    const double gain = u(0.95, 1.05);
    for (auto* color : {&f.skin, &f.iris, &f.mouth, &f.brow}) {
        for (auto& v : *color) {
            v = std::clamp(v * gain, 0.0, 1.0);
        }
    }
    const double grey = u(0.42, 0.58);
    for (int c = 0; c < 3; ++c) {
        f.background_top[c] = grey + u(-0.03, 0.03);
        f.background_bottom[c] = std::clamp(f.background_top[c] + u(-0.06, 0.06), 0.0, 1.0);
    }
    return f;
}

}  // namespace

std::vector<int> face_flip_permutation(int landmark_count) {
    if (landmark_count < 5) {
        throw std::invalid_argument("synthetic faces carry at least 5 landmarks");
    }
    std::vector<int> perm(landmark_count);
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[0], perm[1]);
    std::swap(perm[3], perm[4]);
    const int pairs = (landmark_count - 5) / 2;
    for (int p = 0; p < pairs; ++p) {
        std::swap(perm[5 + 2 * p], perm[6 + 2 * p]);
    }
    return perm;
}

RenderedFace render_face(const FaceParams& f, Size2 size, int landmark_count, int class_count) {
    if (landmark_count < 5) {
        throw std::invalid_argument("synthetic faces carry at least 5 landmarks");
    }
    if (class_count < 4) {
        throw std::invalid_argument("synthetic faces need at least 4 parsing classes");
    }
    RenderedFace out{ImageTensor(3, size.height, size.width), ParsingMap(class_count, size.height, size.width), {}};
    constexpr std::array<double, 4> offsets{-0.375, -0.125, 0.125, 0.375};
    for (int y = 0; y < size.height; ++y) {
        for (int x = 0; x < size.width; ++x) {
            std::array<double, 3> acc{};
            for (const double oy : offsets) {
                for (const double ox : offsets) {
                    const auto s = shade(f, x + ox, y + oy, size.height);
                    for (int c = 0; c < 3; ++c) {
                        acc[c] += s.color[c];
                    }
                }
            }
            for (int c = 0; c < 3; ++c) {
                out.image.at(c, y, x) = std::clamp(acc[c] / 16.0, 0.0, 1.0);
            }
            out.parsing.at(y, x) = shade(f, x, y, size.height).label;
        }
    }

    auto clamp_point = [&](double x, double y) {
        return Point{snap_coordinate(std::clamp(x, 0.0, size.width - 1.0)),
                     snap_coordinate(std::clamp(y, 0.0, size.height - 1.0))};
    };
    auto& pts = out.landmarks.points;
    pts.push_back(clamp_point(f.center_x - f.eye_dx, f.eye_y));
    pts.push_back(clamp_point(f.center_x + f.eye_dx, f.eye_y));
    pts.push_back(clamp_point(f.center_x, f.mouth_y));
    pts.push_back(clamp_point(f.center_x - f.mouth_half_width, f.mouth_y));
    pts.push_back(clamp_point(f.center_x + f.mouth_half_width, f.mouth_y));
    const int pairs = (landmark_count - 5) / 2;
    const double pi = std::acos(-1.0);
    for (int p = 0; p < pairs; ++p) {
        const double theta = pi * (p + 1.0) / (pairs + 1.0);
        const double dx = f.head_rx * std::sin(theta);
        const double y = f.center_y - f.head_ry * std::cos(theta);
        pts.push_back(clamp_point(f.center_x - dx, y));
        pts.push_back(clamp_point(f.center_x + dx, y));
    }
    if ((landmark_count - 5) % 2 == 1) {
        pts.push_back(clamp_point(f.center_x, f.center_y + f.head_ry));
    }
    return out;
}

DatasetManifest synth_dataset(const SynthOptions& options, const std::filesystem::path& out_dir) {
    if (options.n_identities < 2) {
        throw std::invalid_argument("synth_dataset needs at least 2 identities");
    }
    if (options.per_identity < 1) {
        throw std::invalid_argument("synth_dataset needs at least 1 image per identity");
    }
    if (options.size.height < 8 || options.size.width < 8) {
        throw std::invalid_argument("synthetic images must be at least 8x8");
    }
    const int test_count = std::clamp(options.test_per_identity, 0, options.per_identity - 1);

    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "parsing");

    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.image_size = options.size;
    manifest.landmark_count = options.landmark_count;
    manifest.class_count = options.class_count;
    manifest.flip_permutation = face_flip_permutation(options.landmark_count);

    Uniform identity_rng(options.seed);
    for (int id = 0; id < options.n_identities; ++id) {
        const FaceParams base = identity_params(identity_rng, options.size);
        for (int k = 0; k < options.per_identity; ++k) {
            Uniform image_rng(options.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(id) * 1000003ULL + k);
            const auto face = render_face(jitter(base, image_rng, options.size), options.size,
                                          options.landmark_count, options.class_count);
            char name[64];
            std::snprintf(name, sizeof(name), "id%03d_%02d.png", id, k);
            const std::string image_rel = std::string("images/") + name;
            const std::string parsing_rel = std::string("parsing/") + name;
            io::write_png(out_dir / image_rel, face.image);
            io::write_png_labels(out_dir / parsing_rel, face.parsing);
            ManifestRecord rec{image_rel, face.landmarks, parsing_rel, id,
                               k >= options.per_identity - test_count ? "test" : "train"};
            manifest.records.push_back(std::move(rec));
        }
    }
    write_manifest(manifest, out_dir / "manifest.jsonl");
    return load_manifest(out_dir / "manifest.jsonl");
}

}  // namespace rim::data
