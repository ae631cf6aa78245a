#include <random>
#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "rim/data.hpp"
#include "rim/errors.hpp"
#include "rim/image_io.hpp"
#include "support.hpp"

using namespace rim;
using namespace rim::data;
using rim::test::TempDir;

namespace {

void write_dummy_pair(const std::filesystem::path& root, const std::string& stem, int size = 8) {
    std::filesystem::create_directories(root);
    io::write_png(root / (stem + ".png"), ImageTensor(3, size, size, 0.5));
    io::write_png_labels(root / (stem + "_p.png"), ParsingMap(4, size, size, 1));
}

std::string landmarks_json(int n, double x = 1.0, double y = 2.0) {
    std::string s = "[";
    for (int i = 0; i < n; ++i) {
        s += (i ? "," : "") + std::string("[") + std::to_string(x) + "," + std::to_string(y) + "]";
    }
    return s + "]";
}

std::string record(const std::string& stem, int identity, int landmarks = 5) {
    return R"({"image_path":")" + stem + R"(.png","parsing_path":")" + stem + R"(_p.png","identity":)" +
           std::to_string(identity) + R"(,"landmarks":)" + landmarks_json(landmarks) + "}";
}

/// Independent cubic convolution weight, a = -0.5.
double keys_weight(double t) {
    t = std::abs(t);
    const double a = -0.5;
    if (t <= 1.0) {
        return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    }
    if (t < 2.0) {
        return a * (((t - 5.0) * t + 8.0) * t - 4.0);
    }
    return 0.0;
}

/// Direct 1-D bicubic sample of `row` at output index o for in->out resizing.
double direct_sample(const std::vector<double>& row, int o, int out_len) {
    const int n = static_cast<int>(row.size());
    const double src = (o + 0.5) * n / out_len - 0.5;
    const int base = static_cast<int>(std::floor(src));
    double acc = 0.0;
    for (int k = base - 1; k <= base + 2; ++k) {
        acc += keys_weight(src - k) * row[std::clamp(k, 0, n - 1)];
    }
    return acc;
}

}  // namespace

TEST(Manifest, LoadsValidTwoRecordFile) {
    TempDir dir;
    write_dummy_pair(dir.path(), "a");
    write_dummy_pair(dir.path(), "b");
    std::ofstream(dir / "m.jsonl") << record("a", 0) << "\n" << record("b", 1) << "\n";
    const auto m = load_manifest(dir / "m.jsonl");
    EXPECT_EQ(m.records.size(), 2u);
    EXPECT_EQ(m.landmark_count, 5);
    EXPECT_EQ(m.image_size, (Size2{8, 8}));
    EXPECT_EQ(m.records[1].identity, 1);
    EXPECT_EQ(m.records[0].split, "train");
}

TEST(Manifest, MissingIdentityIsParseErrorAtThatLine) {
    TempDir dir;
    write_dummy_pair(dir.path(), "a");
    std::ofstream(dir / "m.jsonl") << record("a", 0) << "\n"
                                   << R"({"image_path":"a.png","parsing_path":"a_p.png","landmarks":[[1,1]]})"
                                   << "\n";
    try {
        load_manifest(dir / "m.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_NE(std::string(e.what()).find("identity"), std::string::npos);
    }
}

TEST(Manifest, MalformedJsonNamesLine) {
    TempDir dir;
    write_dummy_pair(dir.path(), "a");
    std::ofstream(dir / "m.jsonl") << record("a", 0) << "\n\n{not json\n";
    try {
        load_manifest(dir / "m.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(Manifest, MixedLandmarkCountsRejected) {
    TempDir dir;
    write_dummy_pair(dir.path(), "a");
    write_dummy_pair(dir.path(), "b");
    std::ofstream(dir / "m.jsonl") << record("a", 0, 194) << "\n" << record("b", 1, 193) << "\n";
    EXPECT_THROW(load_manifest(dir / "m.jsonl"), ValidationError);
}

TEST(Manifest, MissingFileIsIoError) {
    TempDir dir;
    EXPECT_THROW(load_manifest(dir / "absent.jsonl"), IoError);
}

TEST(Manifest, UnresolvablePathRejected) {
    TempDir dir;
    write_dummy_pair(dir.path(), "a");
    std::ofstream(dir / "m.jsonl") << record("a", 0) << "\n" << record("ghost", 1) << "\n";
    EXPECT_THROW(load_manifest(dir / "m.jsonl"), ValidationError);
}

TEST(Manifest, OutOfBoundsLandmarkRejected) {
    TempDir dir;
    write_dummy_pair(dir.path(), "a");
    std::ofstream(dir / "m.jsonl") << R"({"image_path":"a.png","parsing_path":"a_p.png","identity":0,"landmarks":[[8.0,1.0]]})"
                                   << "\n";
    EXPECT_THROW(load_manifest(dir / "m.jsonl"), ValidationError);
}

TEST(Manifest, WriteThenLoadRoundTrips) {
    TempDir dir;
    auto m = synth_dataset(rim::test::tiny_synth(2, 3), dir / "d");
    write_manifest(m, dir / "d" / "copy.jsonl");
    const auto again = load_manifest(dir / "d" / "copy.jsonl");
    ASSERT_EQ(again.records.size(), m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        EXPECT_EQ(again.records[i].landmarks, m.records[i].landmarks);
        EXPECT_EQ(again.records[i].split, m.records[i].split);
    }
    EXPECT_EQ(again.flip_permutation, m.flip_permutation);
    EXPECT_EQ(again.class_count, 4);
}

// ---------------------------------------------------------------------------

TEST(Bicubic, ConstantImageStaysConstant) {
    const ImageTensor img(3, 224, 224, 0.7);
    const auto down = bicubic_resize(img, {28, 28});
    const auto up = bicubic_resize(down, {224, 224});
    for (const double v : down.values()) {
        ASSERT_NEAR(v, 0.7, 1e-12);
    }
    for (const double v : up.values()) {
        ASSERT_NEAR(v, 0.7, 1e-12);
    }
    for (const double v : bicubic_resize(img, {37, 91}).values()) {
        ASSERT_NEAR(v, 0.7, 1e-12);
    }
}

TEST(Bicubic, RampDownsampleMatchesDirectKernelEvaluation) {
    ImageTensor ramp(1, 4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            ramp.at(0, y, x) = (x + 4.0 * y) / 15.0;
        }
    }
    const auto out = bicubic_resize(ramp, {2, 2});
    ASSERT_EQ(out.size2(), (Size2{2, 2}));
    // Separable: resample each row, then each column of the result.
    for (int oy = 0; oy < 2; ++oy) {
        for (int ox = 0; ox < 2; ++ox) {
            std::vector<double> column;
            for (int y = 0; y < 4; ++y) {
                std::vector<double> row;
                for (int x = 0; x < 4; ++x) {
                    row.push_back(ramp.at(0, y, x));
                }
                column.push_back(direct_sample(row, ox, 2));
            }
            EXPECT_NEAR(out.at(0, oy, ox), direct_sample(column, oy, 2), 1e-12);
        }
    }
    // Frozen hand values: edge clamping pulls the outer taps inwards.
    EXPECT_NEAR(out.at(0, 0, 0), 2.1875 / 15.0, 1e-12);
    EXPECT_NEAR(out.at(0, 0, 1), 4.3125 / 15.0, 1e-12);
    EXPECT_NEAR(out.at(0, 1, 0), 10.6875 / 15.0, 1e-12);
    EXPECT_NEAR(out.at(0, 1, 1), 12.8125 / 15.0, 1e-12);
}

TEST(Bicubic, KernelFormula) {
    EXPECT_DOUBLE_EQ(cubic_kernel(0.0), 1.0);
    EXPECT_DOUBLE_EQ(cubic_kernel(1.0), 0.0);
    EXPECT_DOUBLE_EQ(cubic_kernel(2.0), 0.0);
    EXPECT_DOUBLE_EQ(cubic_kernel(0.5), 0.5625);
    EXPECT_DOUBLE_EQ(cubic_kernel(-1.5), -0.0625);
}

TEST(Bicubic, OutputClippedToUnitRange) {
    ImageTensor step(1, 8, 8, 0.0);
    for (int y = 0; y < 8; ++y) {
        for (int x = 4; x < 8; ++x) {
            step.at(0, y, x) = 1.0;
        }
    }
    for (const double v : bicubic_resize(step, {8, 29}).values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Bicubic, NonPositiveTargetRejected) {
    const ImageTensor img(1, 4, 4, 0.5);
    EXPECT_THROW(bicubic_resize(img, {0, 4}), std::invalid_argument);
    EXPECT_THROW(bicubic_resize(img, {4, -1}), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(Heatmaps, PeakAtLandmark) {
    const auto h = render_heatmaps({{{32.0, 32.0}}}, {64, 64}, 2.0);
    EXPECT_EQ(h.data.channels(), 1);
    EXPECT_DOUBLE_EQ(h.data.at(0, 32, 32), 1.0);
    EXPECT_DOUBLE_EQ(h.gaussian_sigma, 2.0);
    for (const double v : h.data.values()) {
        EXPECT_LE(v, 1.0);
        EXPECT_GE(v, 0.0);
    }
}

TEST(Heatmaps, TwoSigmaOffsetIsExpMinusTwo) {
    const auto h = render_heatmaps({{{32.0, 32.0}}}, {64, 64}, 2.0);
    // (36, 32) as (row, column).
    EXPECT_NEAR(h.data.at(0, 36, 32), std::exp(-2.0), 1e-12);
    EXPECT_NEAR(h.data.at(0, 32, 36), std::exp(-2.0), 1e-12);
}

TEST(Heatmaps, ChannelPerLandmark) {
    LandmarkSet lm;
    for (int i = 0; i < 194; ++i) {
        lm.points.push_back({static_cast<double>(i % 50), static_cast<double>(i / 50)});
    }
    EXPECT_EQ(render_heatmaps(lm, {56, 56}, 1.5).data.channels(), 194);
}

TEST(Heatmaps, CentredOnRoundedCoordinate) {
    const auto h = render_heatmaps({{{10.4, 7.6}}}, {16, 16}, 1.0);
    EXPECT_DOUBLE_EQ(h.data.at(0, 8, 10), 1.0);
    int maxima = 0;
    for (const double v : h.data.values()) {
        maxima += v == 1.0;
    }
    EXPECT_EQ(maxima, 1);
}

TEST(Heatmaps, OutOfBoundsLandmarkRejected) {
    EXPECT_THROW(render_heatmaps({{{16.0, 3.0}}}, {16, 16}, 1.0), ValidationError);
    EXPECT_THROW(render_heatmaps({{{-0.1, 3.0}}}, {16, 16}, 1.0), ValidationError);
    EXPECT_THROW(render_heatmaps({{{1.0, 3.0}}}, {16, 16}, 0.0), std::invalid_argument);
}

TEST(Heatmaps, ChannelSumShrinksWithSigma) {
    const LandmarkSet lm{{{20.0, 21.0}, {5.0, 40.0}}};
    double previous = std::numeric_limits<double>::infinity();
    for (const double sigma : {4.0, 3.0, 2.0, 1.5, 1.0, 0.5}) {
        const auto h = render_heatmaps(lm, {48, 48}, sigma);
        double sum = 0.0;
        for (int y = 0; y < 48; ++y) {
            for (int x = 0; x < 48; ++x) {
                sum += h.data.at(0, y, x);
            }
        }
        EXPECT_LT(sum, previous);
        previous = sum;
    }
}

// ---------------------------------------------------------------------------

TEST(Parsing, OneHotSumsToExactlyOne) {
    ParsingMap p(11, 5, 7);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 7; ++x) {
            p.at(y, x) = static_cast<std::uint8_t>((x * 3 + y) % 11);
        }
    }
    const auto oh = p.one_hot();
    ASSERT_EQ(oh.channels(), 11);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 7; ++x) {
            double s = 0.0;
            for (int c = 0; c < 11; ++c) {
                s += oh.at(c, y, x);
            }
            EXPECT_EQ(s, 1.0);
            EXPECT_EQ(oh.at(p.at(y, x), y, x), 1.0);
        }
    }
}

// ---------------------------------------------------------------------------

TEST(Flip, MirrorArithmetic) {
    PairSample s;
    s.hr = ImageTensor(3, 224, 224, 0.2);
    s.lr = ImageTensor(3, 28, 28, 0.2);
    s.coarse_input = ImageTensor(3, 224, 224, 0.2);
    s.parsing = ParsingMap(4, 224, 224, 0);
    s.landmarks.points = {{10.0, 50.0}};
    const auto f = flip_horizontal(s);
    EXPECT_DOUBLE_EQ(f.landmarks.points[0].x, 213.0);
    EXPECT_DOUBLE_EQ(f.landmarks.points[0].y, 50.0);
}

TEST(Flip, InvolutionOnEveryField) {
    TempDir dir;
    const auto samples = rim::test::synth_samples(dir, rim::test::tiny_synth(2, 2, 64));
    const auto perm = face_flip_permutation(5);
    for (const auto& s : samples) {
        const auto once = flip_horizontal(s, perm);
        EXPECT_FALSE(once.hr == s.hr);
        const auto twice = flip_horizontal(once, perm);
        EXPECT_TRUE(twice.hr == s.hr);
        EXPECT_TRUE(twice.lr == s.lr);
        EXPECT_TRUE(twice.coarse_input == s.coarse_input);
        EXPECT_TRUE(twice.parsing == s.parsing);
        EXPECT_TRUE(twice.landmarks == s.landmarks);
        EXPECT_EQ(twice.identity, s.identity);
    }
}

TEST(Flip, SnappedCoordinatesMirrorExactly) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 223.0);
    for (int i = 0; i < 1000; ++i) {
        const double x = snap_coordinate(u(rng));
        EXPECT_EQ(223.0 - (223.0 - x), x);
    }
    EXPECT_EQ(snap_coordinate(1.0 / 3.0), 341.0 / 1024.0);
}

TEST(Flip, SwapsLeftRightLandmarks) {
    TempDir dir;
    const auto s = rim::test::synth_samples(dir, rim::test::tiny_synth(2, 1, 64)).front();
    const auto f = flip_horizontal(s, face_flip_permutation(5));
    // Slot 0 (left eye) now holds the mirrored right eye.
    EXPECT_DOUBLE_EQ(f.landmarks.points[0].x, 63.0 - s.landmarks.points[1].x);
    EXPECT_DOUBLE_EQ(f.landmarks.points[3].x, 63.0 - s.landmarks.points[4].x);
    EXPECT_DOUBLE_EQ(f.landmarks.points[2].x, 63.0 - s.landmarks.points[2].x);
}

TEST(Flip, SymmetricFaceIsFlipInvariant) {
    FaceParams f;
    f.center_x = 31.5;
    f.center_y = 32.0;
    f.head_rx = 20.0;
    f.head_ry = 25.0;
    f.eye_dx = 9.0;
    f.eye_y = 24.0;
    f.eye_r = 3.5;
    f.brow_gap = 2.0;
    f.brow_thickness = 1.5;
    f.nose_length = 6.0;
    f.mouth_y = 44.0;
    f.mouth_half_width = 7.0;
    f.mouth_half_height = 2.0;
    f.background_top = {0.2, 0.3, 0.4};
    f.background_bottom = {0.5, 0.5, 0.5};
    f.skin = {0.8, 0.6, 0.5};
    f.iris = {0.2, 0.3, 0.1};
    f.mouth = {0.7, 0.2, 0.2};
    f.brow = {0.1, 0.1, 0.1};
    const auto face = render_face(f, {64, 64}, 7);
    const auto s = make_pair_sample(face.image, 0, face.landmarks, face.parsing, 8);
    const auto flipped = flip_horizontal(s, face_flip_permutation(7));
    EXPECT_TRUE(flipped.parsing == s.parsing);
    const auto a = flipped.hr.values();
    const auto b = s.hr.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_NEAR(a[i], b[i], 1e-12);
    }
    for (std::size_t i = 0; i < s.landmarks.count(); ++i) {
        EXPECT_NEAR(flipped.landmarks.points[i].x, s.landmarks.points[i].x, 1e-12);
        EXPECT_NEAR(flipped.landmarks.points[i].y, s.landmarks.points[i].y, 1e-12);
    }
}

// ---------------------------------------------------------------------------

TEST(PairSample, LrIsBicubicDownsampleOfHr) {
    TempDir dir;
    for (const auto& s : rim::test::synth_samples(dir, rim::test::tiny_synth(3, 2, 64))) {
        EXPECT_EQ(s.lr.size2(), (Size2{8, 8}));
        EXPECT_EQ(s.coarse_input.size2(), (Size2{64, 64}));
        const auto lr = bicubic_resize(s.hr, {8, 8});
        for (std::size_t i = 0; i < lr.size(); ++i) {
            ASSERT_NEAR(lr.values()[i], s.lr.values()[i], 1e-6);
        }
        EXPECT_TRUE(bicubic_resize(s.lr, {64, 64}) == s.coarse_input);
    }
}

TEST(Synth, DeterministicBytes) {
    TempDir a;
    TempDir b;
    const auto opts = rim::test::tiny_synth(3, 2, 32);
    synth_dataset(opts, a.path());
    synth_dataset(opts, b.path());
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
        if (entry.is_regular_file()) {
            const auto rel = std::filesystem::relative(entry.path(), a.path());
            EXPECT_EQ(rim::test::read_bytes(entry.path()), rim::test::read_bytes(b.path() / rel)) << rel;
        }
    }
}

TEST(Synth, RecordCount) {
    TempDir dir;
    auto opts = rim::test::tiny_synth(32, 8, 16);
    opts.test_per_identity = 2;
    const auto m = synth_dataset(opts, dir.path());
    EXPECT_EQ(m.records.size(), 256u);
    EXPECT_EQ(m.indices_for_split("test").size(), 64u);
    EXPECT_EQ(m.indices_for_split("train").size(), 192u);
}

TEST(Synth, EyeLandmarksInsideEyeRegion) {
    TempDir dir;
    auto opts = rim::test::tiny_synth(32, 10, 64);
    const auto m = synth_dataset(opts, dir.path());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        const auto parsing = io::read_png_labels(m.root / m.records[i].parsing_path, m.class_count);
        for (const int k : {0, 1}) {
            const auto& p = m.records[i].landmarks.points[k];
            const int x = static_cast<int>(std::lround(p.x));
            const int y = static_cast<int>(std::lround(p.y));
            ASSERT_EQ(parsing.at(y, x), parts::kEye) << "record " << i << " landmark " << k;
        }
    }
}

TEST(Synth, DifferentSeedsDiffer) {
    TempDir dir;
    auto a = rim::test::tiny_synth(2, 1, 32);
    auto b = a;
    b.seed = 7;
    const auto ma = synth_dataset(a, dir / "a");
    const auto mb = synth_dataset(b, dir / "b");
    EXPECT_NE(rim::test::read_bytes(ma.root / ma.records[0].image_path),
              rim::test::read_bytes(mb.root / mb.records[0].image_path));
}

TEST(Synth, TooFewIdentitiesRejected) {
    TempDir dir;
    EXPECT_THROW(synth_dataset(rim::test::tiny_synth(1, 2), dir.path()), std::invalid_argument);
}
