#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rim::data {

struct Size2 {
    int height = 0;
    int width = 0;
    bool operator==(const Size2&) const = default;
};

/// Dense 64-bit [channels, height, width] array in [0,1]. Carries HR/LR/coarse/SR
/// images as well as heatmap stacks.
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int channels, int height, int width, double fill = 0.0);

    int channels() const noexcept { return channels_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    Size2 size2() const noexcept { return {height_, width_}; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool operator==(const ImageTensor&) const = default;

private:
    std::size_t index(int c, int y, int x) const noexcept {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

/// Landmark coordinates are kept on a 1/1024 pixel grid so mirroring is exact.
inline constexpr double kLandmarkGrid = 1024.0;
double snap_coordinate(double v);

/// Landmark coordinates in pixels; pixel centres sit on integer coordinates.
struct LandmarkSet {
    std::vector<Point> points;

    std::size_t count() const noexcept { return points.size(); }
    bool operator==(const LandmarkSet&) const = default;
};

/// N-channel Gaussian landmark heatmaps with peak amplitude 1.
struct HeatmapStack {
    ImageTensor data;
    double gaussian_sigma = 0.0;
};

class ParsingMap {
public:
    ParsingMap() = default;
    ParsingMap(int class_count, int height, int width, std::uint8_t fill = 0);
    ParsingMap(int class_count, int height, int width, std::vector<std::uint8_t> labels);

    int class_count() const noexcept { return class_count_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::uint8_t& at(int y, int x) { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
    std::uint8_t at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
    std::span<const std::uint8_t> labels() const noexcept { return labels_; }

    /// [C, H, W] indicator array; sums to exactly 1 over classes at every pixel.
    ImageTensor one_hot() const;

    bool operator==(const ParsingMap&) const = default;

private:
    int class_count_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> labels_;
};

/// One training record: HR gallery image and the LR probe derived from it.
struct PairSample {
    ImageTensor hr;
    ImageTensor lr;
    ImageTensor coarse_input;  ///< bicubic upsample of lr back to the hr size
    int identity = 0;
    LandmarkSet landmarks;
    ParsingMap parsing;
};

struct ManifestRecord {
    std::string image_path;
    LandmarkSet landmarks;
    std::string parsing_path;
    int identity = 0;
    std::string split = "train";
};

struct DatasetManifest {
    std::filesystem::path root;  ///< directory record paths are relative to
    std::vector<ManifestRecord> records;
    Size2 image_size;
    int landmark_count = 0;
    int class_count = 0;
    /// flip_permutation[i] is the landmark that lands on slot i after a
    /// horizontal flip. Empty means identity.
    std::vector<int> flip_permutation;

    std::vector<std::size_t> indices_for_split(const std::string& split) const;
};

// ---------------------------------------------------------------------------
// Manifest I/O

/// Reads a line-delimited JSON manifest plus its optional `<stem>.meta.json`
/// sidecar (class_count, flip_permutation).
DatasetManifest load_manifest(const std::filesystem::path& path);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

std::filesystem::path meta_path_for(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------
// Image operations

/// Bicubic resampling with a = -0.5, clamp-to-edge borders and half-pixel
/// centre alignment. Output is clipped to [0,1].
ImageTensor bicubic_resize(const ImageTensor& img, Size2 target);

/// Keys cubic convolution kernel with a = -0.5.
double cubic_kernel(double x) noexcept;

HeatmapStack render_heatmaps(const LandmarkSet& landmarks, Size2 shape, double sigma);

/// Maps landmark coordinates between resolutions (half-pixel aligned).
LandmarkSet rescale_landmarks(const LandmarkSet& landmarks, Size2 from, Size2 to);

/// Nearest-label downsampling of a parsing map.
ParsingMap resize_parsing(const ParsingMap& parsing, Size2 target);

ImageTensor mirror_width(const ImageTensor& img);

/// Mirrors every tensor of the sample along the width axis and relabels
/// landmarks through `permutation` (empty = identity).
PairSample flip_horizontal(const PairSample& sample, const std::vector<int>& permutation = {});

/// Builds a PairSample from an HR image: lr = bicubic(hr, hr/scale),
/// coarse_input = bicubic(lr, hr size).
PairSample make_pair_sample(ImageTensor hr, int identity, LandmarkSet landmarks, ParsingMap parsing,
                            int scale_factor);

/// Loads record `index` from disk and derives its LR/coarse images.
PairSample load_pair_sample(const DatasetManifest& manifest, std::size_t index, int scale_factor);

// ---------------------------------------------------------------------------
// Synthetic faces

namespace parts {
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kSkin = 1;
inline constexpr std::uint8_t kEye = 2;
inline constexpr std::uint8_t kMouth = 3;
}  // namespace parts

/// Geometry and colours of one procedurally drawn face, in pixels.
struct FaceParams {
    double center_x = 0.0;
    double center_y = 0.0;
    double head_rx = 0.0;
    double head_ry = 0.0;
    double eye_dx = 0.0;  ///< horizontal offset of each eye from center_x
    double eye_y = 0.0;
    double eye_r = 0.0;
    double brow_gap = 0.0;
    double brow_thickness = 0.0;
    double nose_length = 0.0;
    double mouth_y = 0.0;
    double mouth_half_width = 0.0;
    double mouth_half_height = 0.0;
    std::array<double, 3> background_top{};
    std::array<double, 3> background_bottom{};
    std::array<double, 3> skin{};
    std::array<double, 3> iris{};
    std::array<double, 3> mouth{};
    std::array<double, 3> brow{};
};

struct RenderedFace {
    ImageTensor image;
    ParsingMap parsing;
    LandmarkSet landmarks;
};

/// Draws a face with 4x4 supersampling. Landmarks: left eye, right eye, mouth
/// centre, left and right mouth corners, then head-contour points up to
/// `landmark_count` (contour points come in mirror pairs, chin last when odd).
RenderedFace render_face(const FaceParams& params, Size2 size, int landmark_count = 5,
                         int class_count = 4);

/// Mirror-pair table matching render_face's landmark ordering.
std::vector<int> face_flip_permutation(int landmark_count);

struct SynthOptions {
    int n_identities = 32;
    int per_identity = 10;
    int test_per_identity = 3;  ///< trailing images of each identity marked split="test"
    Size2 size{64, 64};
    std::uint64_t seed = 0;
    int landmark_count = 5;
    int class_count = 4;
};

/// Writes images/, parsing/, manifest.jsonl and manifest.meta.json under
/// `out_dir` and returns the loaded manifest. Deterministic in `seed`.
DatasetManifest synth_dataset(const SynthOptions& options, const std::filesystem::path& out_dir);

}  // namespace rim::data
