#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "rim/data.hpp"
#include "rim/fhn.hpp"
#include "rim/hrn.hpp"
#include "rim/losses.hpp"
#include "rim/optim.hpp"

namespace rim::train {

/// What the student and assistant see as the probe image.
enum class ProbeSource {
    Sr,       ///< hallucinated probe; the full pipeline
    Bicubic   ///< bicubic-upsampled LR probe; FHN phases are skipped
};

std::string to_string(ProbeSource source);
ProbeSource parse_probe_source(const std::string& text);

/// Updates per phase per iteration.
struct PhaseSchedule {
    int domain = 1;
    int generator = 1;
    int integrator = 1;
    int student = 1;
    int assistant = 1;
};

struct TrainConfig {
    double lr = 1e-3;
    double rms_decay = 0.99;
    double rms_eps = 1e-8;
    int batch_size = 8;
    int steps = 2000;
    std::uint64_t seed = 0;
    losses::LossWeights weights;
    /// Fixed kernel bandwidths; empty means the median heuristic on the first
    /// batch with `kernel_multipliers`.
    std::vector<double> kernel_sigmas;
    std::vector<double> kernel_multipliers{0.25, 0.5, 1.0, 2.0, 4.0};
    losses::MmdEstimator mmd_estimator = losses::MmdEstimator::Biased;
    PhaseSchedule schedule;
    /// Let the student distillation loss back-propagate into the generator.
    bool e2e_coupling = false;
    ProbeSource probe_source = ProbeSource::Sr;
    bool distill = true;          ///< run the student/assistant phases
    bool flip_augment = true;
    double heatmap_sigma = 1.0;   ///< at prior resolution
    int checkpoint_every = 500;   ///< 0 disables periodic checkpoints

    void validate() const;
};

/// Tensors of one mini-batch, float32.
struct Batch {
    torch::Tensor hr;              ///< [B,3,H,W]
    torch::Tensor coarse_input;    ///< [B,3,H,W] bicubic upsample of the LR probe
    torch::Tensor heatmaps;        ///< [B,N,h,w] at prior resolution
    torch::Tensor parsing_labels;  ///< [B,h,w] int64 at prior resolution
    std::vector<int> identities;

    int64_t size() const { return hr.size(0); }
};

Batch make_batch(std::span<const data::PairSample> samples, const fhn::FhnConfig& fhn_cfg, double heatmap_sigma);

struct StepReport {
    double domain = 0.0;  ///< MK-MMD seen by the generator
    double pixel = 0.0;
    double landmark = 0.0;
    double parsing = 0.0;
    double student_kd = 0.0;
    double assistant_kd = 0.0;

    static constexpr std::array<const char*, 6> kNames{"domain",   "pixel",      "landmark",
                                                       "parsing", "student_kd", "assistant_kd"};

    double generator_total(const losses::LossWeights& w) const;
    nlohmann::json to_json(std::int64_t step) const;
};

/// Parameters, optimizers and counters of a training run.
struct TrainState {
    TrainState(fhn::FhnConfig fhn_cfg, hrn::HrnConfig hrn_cfg, TrainConfig train_cfg);

    fhn::FhnConfig fhn_cfg;
    hrn::HrnConfig hrn_cfg;
    TrainConfig cfg;

    fhn::Fhn fhn{nullptr};
    hrn::HrnNets hrn{nullptr};

    std::unique_ptr<optim::RmsProp> opt_domain;
    std::unique_ptr<optim::RmsProp> opt_generator;
    std::unique_ptr<optim::RmsProp> opt_integrator;
    std::unique_ptr<optim::RmsProp> opt_student;
    std::unique_ptr<optim::RmsProp> opt_assistant;

    losses::KernelBank kernel;  ///< empty until the first batch fixes it
    std::int64_t step = 0;

    /// Named optimizers in a fixed order.
    std::vector<std::pair<std::string, optim::RmsProp*>> optimizers();
    /// Probe fed to the student/assistant: detached SR or bicubic input.
    torch::Tensor probe(const Batch& batch);
};

/// Builds networks from `seed` and zero optimizer state.
std::unique_ptr<TrainState> make_state(const fhn::FhnConfig& fhn_cfg, const hrn::HrnConfig& hrn_cfg,
                                       const TrainConfig& cfg);

/// Fixes the kernel bank from this batch's domain features if not yet set.
void ensure_kernel(TrainState& state, const Batch& batch);

// Individual phases, each one optimizer update of its own group. They return
// the loss measured before the update.
double domain_phase(TrainState& state, const Batch& batch);
StepReport generator_phase(TrainState& state, const Batch& batch);
double integrator_phase(TrainState& state, const Batch& batch);
double student_phase(TrainState& state, const Batch& batch, const torch::Tensor& probe);
double assistant_phase(TrainState& state, const Batch& batch, const torch::Tensor& probe);

/// MK-MMD between domain features of the SR (or coarse) batch and HR, no grad.
double measure_mmd(TrainState& state, const Batch& batch);

/// Runs the five phases in order and advances the step counter.
StepReport train_step(const Batch& batch, TrainState& state);
StepReport train_step(std::span<const data::PairSample> samples, TrainState& state);

/// Training tensors of one sample; heatmaps and labels at prior resolution.
struct SampleTensors {
    torch::Tensor hr;
    torch::Tensor coarse_input;
    torch::Tensor heatmaps;
    torch::Tensor parsing_labels;
    int identity = 0;
};

SampleTensors to_sample_tensors(const data::PairSample& sample, const fhn::FhnConfig& fhn_cfg, double heatmap_sigma);

Batch collate(const std::vector<const SampleTensors*>& items);

/// Every sample of a manifest split, loaded once, plus mirrored copies.
struct SampleCache {
    std::vector<SampleTensors> plain;
    std::vector<SampleTensors> flipped;
};

SampleCache load_split(const data::DatasetManifest& manifest, const std::string& split,
                       const fhn::FhnConfig& fhn_cfg, double heatmap_sigma, bool with_flips);

/// Rejects a manifest whose image size, landmark or class count disagree
/// with the network configuration.
void check_manifest(const data::DatasetManifest& manifest, const fhn::FhnConfig& fhn_cfg,
                    const hrn::HrnConfig& hrn_cfg);

/// Deterministic mini-batch indices (and flip bits) for a step.
struct BatchPlan {
    std::vector<std::size_t> indices;
    std::vector<bool> flips;
};

BatchPlan plan_batch(std::uint64_t seed, std::int64_t step, std::size_t pool, int batch_size, bool flip);

struct FitOptions {
    std::filesystem::path out_dir;  ///< empty: nothing is written
    bool verbose = false;
};

struct FitResult {
    std::unique_ptr<TrainState> state;
    std::vector<StepReport> log;
};

/// Continues training `state` on the manifest's "train" split until
/// state.cfg.steps; returns the new log entries.
std::vector<StepReport> fit_state(TrainState& state, const data::DatasetManifest& manifest,
                                  const FitOptions& options = {});

/// Fresh state from the configs, then fit_state. Writes loss_log.jsonl,
/// checkpoint.rimckpt and periodic checkpoints/ under out_dir.
FitResult fit(const data::DatasetManifest& manifest, const fhn::FhnConfig& fhn_cfg, const hrn::HrnConfig& hrn_cfg,
              const TrainConfig& cfg, const FitOptions& options = {});

}  // namespace rim::train
