#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rim/losses.hpp"
#include "support.hpp"

using namespace rim::losses;
using rim::test::gradcheck;
using rim::test::randn64;
using torch::Tensor;

namespace {

Tensor full(std::vector<int64_t> shape, double v) { return torch::full(shape, v, torch::kFloat64); }

double item(const Tensor& t) { return t.item<double>(); }

Tensor uniform_probs(int64_t c, int64_t h, int64_t w) { return full({c, h, w}, 1.0 / static_cast<double>(c)); }

Tensor random_probs(std::vector<int64_t> shape) { return torch::softmax(randn64(shape), -3); }

Tensor random_labels(std::vector<int64_t> shape, int64_t classes) {
    return torch::randint(classes, shape, torch::kLong);
}

}  // namespace

TEST(PixelLoss, HandValues) {
    const Tensor a = full({1, 2, 2}, 0.75);
    const Tensor b = full({1, 2, 2}, 0.25);
    EXPECT_NEAR(item(pixel_loss(a, b, Reduction::Sum)), 1.0, 1e-12);
    EXPECT_NEAR(item(pixel_loss(a, b, Reduction::Mean)), 0.25, 1e-12);
    EXPECT_EQ(item(pixel_loss(a, a)), 0.0);
}

TEST(PixelLoss, ShapeMismatchRejected) {
    EXPECT_THROW(pixel_loss(full({1, 2, 2}, 0), full({1, 2, 3}, 0)), std::invalid_argument);
}

TEST(LandmarkLoss, HandValues) {
    Tensor target = torch::zeros({2, 2, 2}, torch::kFloat64);
    Tensor pred = target.clone();
    // Channel sums of squared differences: 3 and 3.
    pred[0][0][0] = 1.0;
    pred[0][0][1] = 1.0;
    pred[0][1][0] = 1.0;
    pred[1][1][1] = std::sqrt(3.0);
    EXPECT_NEAR(item(landmark_loss(pred, target, Reduction::Sum)), 3.0, 1e-12);
    EXPECT_NEAR(item(landmark_loss(pred, target, Reduction::Mean)), 6.0 / 8.0, 1e-12);
    EXPECT_EQ(item(landmark_loss(pred * 0.0, target * 0.0)), 0.0);
    EXPECT_EQ(item(landmark_loss(pred, pred)), 0.0);
}

TEST(LandmarkLoss, ChannelMismatchRejected) {
    EXPECT_THROW(landmark_loss(full({2, 4, 4}, 0), full({3, 4, 4}, 0)), std::invalid_argument);
}

TEST(ParsingLoss, UniformPredictionClosedForm) {
    for (const int c : {2, 4, 11}) {
        const Tensor labels = random_labels({5, 6}, c);
        EXPECT_NEAR(item(parsing_loss(uniform_probs(c, 5, 6), labels)), std::log(c) / c, 1e-12) << c;
    }
    EXPECT_NEAR(item(parsing_loss(uniform_probs(11, 3, 3), random_labels({3, 3}, 11))), 0.21799, 1e-5);
}

TEST(ParsingLoss, PerfectPredictionIsZero) {
    const Tensor labels = random_labels({4, 4}, 5);
    const Tensor onehot = torch::one_hot(labels, 5).permute({2, 0, 1}).to(torch::kFloat64);
    EXPECT_EQ(item(parsing_loss(onehot, labels)), 0.0);
}

TEST(ParsingLoss, ZeroProbabilityIsClippedNotInfinite) {
    const Tensor labels = torch::zeros({1, 1}, torch::kLong);
    Tensor probs = torch::zeros({2, 1, 1}, torch::kFloat64);
    probs[1][0][0] = 1.0;
    EXPECT_NEAR(item(parsing_loss(probs, labels)), -std::log(1e-12) / 2.0, 1e-9);
}

TEST(ParsingLoss, UnnormalisedRejected) {
    const Tensor labels = torch::zeros({2, 2}, torch::kLong);
    EXPECT_THROW(parsing_loss(full({3, 2, 2}, 0.4), labels), std::invalid_argument);
    EXPECT_NO_THROW(parsing_loss(uniform_probs(3, 2, 2) + 3e-5, labels));
    EXPECT_THROW(parsing_loss(uniform_probs(3, 2, 2), torch::full({2, 2}, 3, torch::kLong)), std::invalid_argument);
}

TEST(ParsingLoss, BatchedEqualsMeanOfSamples) {
    const Tensor probs = random_probs({3, 4, 5, 5});
    const Tensor labels = random_labels({3, 5, 5}, 4);
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        sum += item(parsing_loss(probs[i], labels[i]));
    }
    EXPECT_NEAR(item(parsing_loss(probs, labels)), sum / 3.0, 1e-12);
}

// ---------------------------------------------------------------------------

TEST(MkMmd, SingletonHandValue) {
    const auto bank = KernelBank::uniform({0.5});
    const Tensor x = full({1, 1}, 0.0);
    const Tensor y = full({1, 1}, 1.0);
    EXPECT_NEAR(item(mk_mmd(x, y, bank)), 2.0 - 2.0 * std::exp(-1.0), 1e-12);
    EXPECT_NEAR(item(mk_mmd(x, y, bank)), 1.26424, 1e-5);
    EXPECT_NEAR(item(domain_discriminator_loss(x, y, bank)), -(2.0 - 2.0 * std::exp(-1.0)), 1e-12);
}

TEST(MkMmd, IdenticalBatchesGiveZero) {
    const Tensor x = randn64({7, 4});
    const auto bank = KernelBank::uniform({0.5, 1.0, 2.0});
    EXPECT_NEAR(item(mk_mmd(x, x, bank)), 0.0, 1e-12);
    EXPECT_NEAR(item(domain_discriminator_loss(x, x, bank)), 0.0, 1e-12);
}

TEST(MkMmd, MatchesDoubleLoopOracle) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> size(1, 32);
    std::uniform_int_distribution<int> dim(1, 16);
    for (int trial = 0; trial < 40; ++trial) {
        const int d = dim(rng);
        const Tensor x = randn64({size(rng), d});
        const Tensor y = randn64({size(rng), d}) + 0.3;
        const auto bank = KernelBank::uniform({0.5 * d, 1.0 * d, 3.0 * d});
        const double oracle =
            rim::test::mmd_oracle(rim::test::to_rows(x), rim::test::to_rows(y), bank.sigmas, bank.betas);
        EXPECT_NEAR(item(mk_mmd(x, y, bank)), oracle, 1e-10);
    }
}

TEST(MkMmd, UnbiasedMatchesOracle) {
    const Tensor x = randn64({6, 3});
    const Tensor y = randn64({9, 3});
    const auto bank = KernelBank::uniform({1.0, 4.0});
    const double oracle =
        rim::test::mmd_oracle(rim::test::to_rows(x), rim::test::to_rows(y), bank.sigmas, bank.betas, true);
    EXPECT_NEAR(item(mk_mmd(x, y, bank, MmdEstimator::Unbiased)), oracle, 1e-10);
    EXPECT_THROW(mk_mmd(x.slice(0, 0, 1), y, bank, MmdEstimator::Unbiased), std::invalid_argument);
}

TEST(MkMmd, Symmetric) {
    for (int i = 0; i < 10; ++i) {
        const Tensor x = randn64({5 + i, 6});
        const Tensor y = randn64({9, 6}) * 1.5;
        const auto bank = KernelBank::uniform({2.0, 8.0, 20.0});
        EXPECT_NEAR(item(mk_mmd(x, y, bank)), item(mk_mmd(y, x, bank)), 1e-12);
    }
}

TEST(MkMmd, LinearInKernelBank) {
    const Tensor x = randn64({8, 5});
    const Tensor y = randn64({6, 5}) + 0.5;
    const KernelBank bank{{1.0, 3.0, 9.0}, {0.2, 0.5, 0.3}};
    double sum = 0.0;
    for (std::size_t u = 0; u < bank.sigmas.size(); ++u) {
        sum += bank.betas[u] * item(mk_mmd(x, y, KernelBank::uniform({bank.sigmas[u]})));
    }
    EXPECT_NEAR(item(mk_mmd(x, y, bank)), sum, 1e-12);
}

TEST(MkMmd, NonNegativeDiscriminatorNonPositive) {
    for (int i = 0; i < 20; ++i) {
        const Tensor x = randn64({4, 3}) * (0.1 * (i + 1));
        const Tensor y = randn64({5, 3});
        const auto bank = KernelBank::uniform({0.25, 1.0, 4.0});
        EXPECT_GE(item(mk_mmd(x, y, bank)), -1e-12);
        EXPECT_LE(item(domain_discriminator_loss(x, y, bank)), 1e-12);
    }
}

TEST(MkMmd, DimensionMismatchRejected) {
    EXPECT_THROW(mk_mmd(randn64({3, 4}), randn64({3, 5}), KernelBank::uniform({1.0})), std::invalid_argument);
}

TEST(KernelBank, Validation) {
    EXPECT_THROW((KernelBank{{1.0, 2.0}, {0.5, 0.6}}.validate()), std::invalid_argument);
    EXPECT_THROW((KernelBank{{1.0, -2.0}, {0.5, 0.5}}.validate()), std::invalid_argument);
    EXPECT_THROW((KernelBank{{1.0, 2.0}, {1.0, 0.0}}.validate()), std::invalid_argument);
    EXPECT_THROW((KernelBank{{}, {}}.validate()), std::invalid_argument);
    EXPECT_NO_THROW((KernelBank{{1.0, 2.0}, {0.25, 0.75}}.validate()));
}

TEST(KernelBank, MedianHeuristic) {
    // Pairwise squared distances 1, 4, 9: median 4.
    const Tensor f = torch::tensor({0.0, 1.0, 3.0}, torch::kFloat64).unsqueeze(1);
    const auto bank = KernelBank::median_heuristic(f, {0.5, 1.0, 2.0});
    ASSERT_EQ(bank.sigmas.size(), 3u);
    EXPECT_DOUBLE_EQ(bank.sigmas[0], 2.0);
    EXPECT_DOUBLE_EQ(bank.sigmas[1], 4.0);
    EXPECT_DOUBLE_EQ(bank.sigmas[2], 8.0);
    EXPECT_NEAR(bank.betas[0], 1.0 / 3.0, 1e-15);
    EXPECT_EQ(KernelBank::median_heuristic(f).sigmas.size(), 5u);
}

// ---------------------------------------------------------------------------

TEST(GeneratorLoss, HandValueAndZeroWeights) {
    const LossWeights w{0.1, 0.2, 0.3};
    EXPECT_NEAR(generator_loss(1.0, 2.0, 3.0, 4.0, w), 3.0, 1e-12);
    EXPECT_EQ(generator_loss(0.0, 0.0, 0.0, 0.0, w), 0.0);
    EXPECT_EQ(generator_loss(1.5, 2.0, 3.0, 4.0, LossWeights{0.0, 0.0, 0.0}), 1.5);
    const Tensor t = generator_loss(full({}, 1), full({}, 2), full({}, 3), full({}, 4), w);
    EXPECT_NEAR(item(t), 3.0, 1e-12);
}

TEST(GeneratorLoss, AffineInEachComponent) {
    const LossWeights w{1.0, 10.0, 1.0};
    const double base[4] = {0.3, 0.7, 0.11, 1.9};
    const double coeff[4] = {1.0, w.lambda0, w.lambda1, w.lambda2};
    for (int k = 0; k < 4; ++k) {
        double lo[4];
        double hi[4];
        std::copy(base, base + 4, lo);
        std::copy(base, base + 4, hi);
        lo[k] = 0.0;
        hi[k] = 1.0;
        const double a = generator_loss(lo[0], lo[1], lo[2], lo[3], w);
        const double b = generator_loss(hi[0], hi[1], hi[2], hi[3], w);
        EXPECT_NEAR(b - a, coeff[k], 1e-12);
    }
    EXPECT_THROW(generator_loss(0, 0, 0, 0, LossWeights{-1.0, 0, 0}), std::invalid_argument);
}

TEST(IntegratorLoss, EqualsPixelLoss) {
    const Tensor a = randn64({2, 3, 4, 4});
    const Tensor b = randn64({2, 3, 4, 4});
    EXPECT_EQ(item(integrator_loss(a, b)), item(pixel_loss(a, b)));
    EXPECT_NEAR(item(integrator_loss(full({3, 4, 4}, 0.6), full({3, 4, 4}, 0.5))), 0.01, 1e-12);
    EXPECT_EQ(item(integrator_loss(a, a)), 0.0);
}

TEST(StudentDistill, HandValues) {
    const Tensor t = randn64({2, 8, 2, 2});
    EXPECT_EQ(item(student_distill_loss(t, t)), 0.0);
    EXPECT_NEAR(item(student_distill_loss(t, t + 1.0)), 1.0, 1e-12);
    EXPECT_NEAR(item(student_distill_loss(full({16}, 1.0), full({16}, 0.0))), 1.0, 1e-12);
    EXPECT_THROW(student_distill_loss(t, t.slice(1, 0, 4)), std::invalid_argument);
}

TEST(AssistantDistill, HandValues) {
    const std::vector<Tensor> ft = {torch::tensor({1.0, 2.0}, torch::kFloat64),
                                    torch::tensor({3.0, 4.0}, torch::kFloat64)};
    const std::vector<Tensor> fs = {torch::tensor({0.5, 1.0}, torch::kFloat64),
                                    torch::tensor({1.0, 1.0}, torch::kFloat64)};
    const std::vector<Tensor> fa = {torch::tensor({0.25, 0.5}, torch::kFloat64),
                                    torch::tensor({1.0, 2.0}, torch::kFloat64)};
    // Residuals (0.25, 0.5) and (1, 1): sums 0.3125 and 2.
    EXPECT_NEAR(item(assistant_distill_loss(ft, fs, fa, Reduction::Sum)), 2.3125, 1e-12);
    EXPECT_NEAR(item(assistant_distill_loss(ft, fs, fa, Reduction::Mean)), 0.15625 + 1.0, 1e-12);

    const std::vector<Tensor> exact = {ft[0] - fs[0], ft[1] - fs[1]};
    EXPECT_EQ(item(assistant_distill_loss(ft, fs, exact)), 0.0);

    const std::vector<Tensor> zero = {torch::zeros(2, torch::kFloat64), torch::zeros(2, torch::kFloat64)};
    EXPECT_NEAR(item(assistant_distill_loss(ft, fs, zero)),
                item(student_distill_loss(ft[0], fs[0])) + item(student_distill_loss(ft[1], fs[1])), 1e-12);
}

TEST(AssistantDistill, MismatchRejected) {
    const std::vector<Tensor> two = {randn64({2}), randn64({2})};
    const std::vector<Tensor> one = {randn64({2})};
    const std::vector<Tensor> wrong = {randn64({2}), randn64({3})};
    EXPECT_THROW(assistant_distill_loss(two, two, one), std::invalid_argument);
    EXPECT_THROW(assistant_distill_loss(two, two, wrong), std::invalid_argument);
    EXPECT_THROW(assistant_distill_loss(std::vector<Tensor>{}, std::vector<Tensor>{}, std::vector<Tensor>{}),
                 std::invalid_argument);
}

TEST(Losses, AllNonNegativeOnRandomInputs) {
    for (int i = 0; i < 10; ++i) {
        const Tensor a = randn64({2, 3, 4, 4});
        const Tensor b = randn64({2, 3, 4, 4});
        EXPECT_GE(item(pixel_loss(a, b)), 0.0);
        EXPECT_GE(item(landmark_loss(a, b)), 0.0);
        EXPECT_GE(item(integrator_loss(a, b)), 0.0);
        EXPECT_GE(item(student_distill_loss(a, b)), 0.0);
        EXPECT_GE(item(parsing_loss(random_probs({2, 3, 4, 4}), random_labels({2, 4, 4}, 3))), 0.0);
        const std::vector<Tensor> t = {a, b};
        const std::vector<Tensor> s = {b, a};
        const std::vector<Tensor> r = {a * 0.3, b * 0.1};
        EXPECT_GE(item(assistant_distill_loss(t, s, r)), 0.0);
    }
}

// ---------------------------------------------------------------------------

TEST(Gradients, MatchFiniteDifferences) {
    constexpr double kTol = 1e-4;
    const auto bank = KernelBank::uniform({0.5, 2.0, 6.0});
    const Tensor labels = random_labels({2, 3, 3}, 4);
    for (int trial = 0; trial < 3; ++trial) {
        EXPECT_LT(gradcheck([](const auto& v) { return pixel_loss(v[0], v[1]); },
                            {randn64({2, 3, 3}), randn64({2, 3, 3})}),
                  kTol);
        EXPECT_LT(gradcheck([](const auto& v) { return pixel_loss(v[0], v[1], Reduction::Sum); },
                            {randn64({2, 3, 3}), randn64({2, 3, 3})}),
                  kTol);
        EXPECT_LT(gradcheck([](const auto& v) { return landmark_loss(v[0], v[1], Reduction::Sum); },
                            {randn64({3, 3, 3}), randn64({3, 3, 3})}),
                  kTol);
        // Finite differences leave the simplex, which is fine for the formula itself.
        EXPECT_LT(gradcheck([&](const auto& v) { return parsing_loss(v[0], labels); },
                            {random_probs({2, 4, 3, 3}) * 0.9 + 0.025}, 1e-7),
                  kTol);
        EXPECT_LT(gradcheck([&](const auto& v) { return mk_mmd(v[0], v[1], bank); },
                            {randn64({4, 3}), randn64({5, 3})}),
                  kTol);
        EXPECT_LT(gradcheck([&](const auto& v) { return mk_mmd(v[0], v[1], bank, MmdEstimator::Unbiased); },
                            {randn64({4, 3}), randn64({5, 3})}),
                  kTol);
        EXPECT_LT(gradcheck([&](const auto& v) { return domain_discriminator_loss(v[0], v[1], bank); },
                            {randn64({3, 2}), randn64({3, 2})}),
                  kTol);
        EXPECT_LT(gradcheck([](const auto& v) { return integrator_loss(v[0], v[1]); },
                            {randn64({3, 4, 4}), randn64({3, 4, 4})}),
                  kTol);
        EXPECT_LT(gradcheck([](const auto& v) { return student_distill_loss(v[0], v[1]); },
                            {randn64({6, 2, 2}), randn64({6, 2, 2})}),
                  kTol);
        EXPECT_LT(gradcheck(
                      [](const auto& v) {
                          const std::vector<Tensor> t = {v[0], v[1]};
                          const std::vector<Tensor> s = {v[2], v[3]};
                          const std::vector<Tensor> a = {v[4], v[5]};
                          return assistant_distill_loss(t, s, a);
                      },
                      {randn64({4, 2}), randn64({3}), randn64({4, 2}), randn64({3}), randn64({4, 2}), randn64({3})}),
                  kTol);
        EXPECT_LT(gradcheck(
                      [&](const auto& v) {
                          return generator_loss(mk_mmd(v[0], v[1], bank), pixel_loss(v[2], v[3]),
                                                landmark_loss(v[2], v[3]), parsing_loss(v[4], labels),
                                                LossWeights{});
                      },
                      {randn64({3, 2}), randn64({3, 2}), randn64({2, 2, 2}), randn64({2, 2, 2}),
                       random_probs({2, 4, 3, 3})},
                      1e-7),
                  kTol);
    }
}
