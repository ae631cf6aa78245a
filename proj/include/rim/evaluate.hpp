#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rim/data.hpp"
#include "rim/metrics.hpp"
#include "rim/train.hpp"

namespace rim::eval {

enum class Protocol { SrQuality, Verify, Identify, Ablate };

std::string to_string(Protocol protocol);
Protocol parse_protocol(const std::string& text);

struct EvalConfig {
    std::string split = "test";
    /// Verification thresholds; empty means every observed distance.
    std::vector<double> thresholds;
    /// Different-identity pairs per same-identity pair.
    int negatives_per_positive = 1;
    std::uint64_t pair_seed = 0;
    std::vector<double> psnr_grid = linear_grid(10.0, 40.0, 61);
    std::vector<double> ssim_grid = linear_grid(0.0, 1.0, 51);
    /// Steps for the LR-only distillation baseline of the ablation; 0 uses the
    /// checkpoint's own step count.
    int ablation_baseline_steps = 0;
    int batch_size = 16;

    void validate() const;
};

struct VerificationSummary {
    SweepResult sweep;
    std::size_t same_pairs = 0;
    std::size_t different_pairs = 0;
};

struct AblationRow {
    std::string name;
    std::string description;
    double accuracy = 0.0;
    double best_threshold = 0.0;
    double rank1 = 0.0;
};

struct MetricReport {
    Protocol protocol = Protocol::SrQuality;
    std::vector<double> psnr;
    std::vector<double> ssim;
    std::vector<double> bicubic_psnr;
    std::vector<double> bicubic_ssim;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_bicubic_psnr = 0.0;
    double mean_bicubic_ssim = 0.0;
    std::vector<CsdPoint> psnr_csd;
    std::vector<CsdPoint> ssim_csd;
    std::vector<CsdPoint> bicubic_psnr_csd;
    std::vector<CsdPoint> bicubic_ssim_csd;
    std::optional<VerificationSummary> verification;
    std::optional<double> rank1;
    std::vector<AblationRow> ablation;

    nlohmann::json to_json() const;
};

/// PSNR/SSIM of each pair plus means and CSD curves over the configured grids.
void fill_quality(MetricReport& report, const std::vector<data::ImageTensor>& sr,
                  const std::vector<data::ImageTensor>& hr, const EvalConfig& cfg);

/// Images of a split with their derived LR probes, loaded once.
struct EvalSet {
    std::vector<data::PairSample> samples;
};

EvalSet load_eval_set(const data::DatasetManifest& manifest, const std::string& split, int scale_factor);

/// Hallucinated probes [B,3,H,W] for every sample, in batches.
torch::Tensor hallucinate_all(train::TrainState& state, const EvalSet& set, int batch_size);

/// How a probe or gallery image becomes an embedding.
enum class Embedder { Teacher, Student, Composed };

std::vector<hrn::Embedding> embed_images(train::TrainState& state, const torch::Tensor& images, Embedder embedder,
                                         int batch_size);

/// Cross-resolution pairs: held-out probe i against HR gallery image j (the
/// "train" split). Positives are all same-identity pairs, negatives are drawn
/// deterministically.
struct PairIndex {
    std::size_t probe = 0;
    std::size_t gallery = 0;
    bool same = false;
};

std::vector<PairIndex> make_pairs(const std::vector<int>& probe_ids, const std::vector<int>& gallery_ids,
                                  int negatives_per_positive, std::uint64_t seed);

VerificationSummary verify_embeddings(const std::vector<hrn::Embedding>& probes,
                                      const std::vector<hrn::Embedding>& gallery,
                                      const std::vector<PairIndex>& pairs, std::span<const double> thresholds);

/// Rank-1 rate of probes against a one-image-per-identity gallery.
double identification_rate(const std::vector<hrn::Embedding>& probes, const std::vector<int>& probe_ids,
                           const std::vector<hrn::GalleryEntry>& gallery);

/// Runs `protocol` on the held-out split of `manifest`.
MetricReport evaluate_checkpoint(train::TrainState& state, const data::DatasetManifest& manifest, Protocol protocol,
                                 const EvalConfig& cfg);

/// Toy-verification accuracy of the six component combinations. `lr_kd` is a
/// state whose student was distilled on bicubic probes; it is trained on
/// demand when absent.
std::vector<AblationRow> ablation_rows(train::TrainState& state, const data::DatasetManifest& manifest,
                                       const EvalConfig& cfg, train::TrainState* lr_kd = nullptr);

/// A copy of `state`'s configuration set up to distil a student on bicubic
/// probes, sharing `state`'s teacher.
std::unique_ptr<train::TrainState> train_lr_kd_baseline(train::TrainState& state,
                                                        const data::DatasetManifest& manifest, int steps);

void write_report(const MetricReport& report, const std::filesystem::path& path);

}  // namespace rim::eval
