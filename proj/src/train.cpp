#include "rim/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <ATen/Parallel.h>

#include "rim/checkpoint.hpp"
#include "rim/errors.hpp"
#include "rim/tensor_util.hpp"

namespace rim::train {

using torch::Tensor;

namespace {

void zero_all_grads(TrainState& state) {
    for (auto& p : state.fhn->parameters()) {
        p.mutable_grad().reset();
    }
    for (auto& p : state.hrn->parameters()) {
        p.mutable_grad().reset();
    }
}

double checked(const Tensor& loss, const char* phase) {
    const double v = loss.item<double>();
    if (!std::isfinite(v)) {
        throw NonFiniteLossError(phase, v);
    }
    return v;
}

Tensor domain_image(TrainState& state, const fhn::FhnOutputs& out) {
    return state.fhn_cfg.domain_source == fhn::DomainSource::Sr ? out.sr : out.coarse;
}

std::unique_ptr<optim::RmsProp> make_optimizer(std::vector<Tensor> params, const TrainConfig& cfg) {
    return std::make_unique<optim::RmsProp>(std::move(params),
                                            optim::RmsPropOptions{cfg.lr, cfg.rms_decay, cfg.rms_eps});
}

}  // namespace

std::string to_string(ProbeSource source) { return source == ProbeSource::Sr ? "sr" : "bicubic"; }

ProbeSource parse_probe_source(const std::string& text) {
    if (text == "sr") {
        return ProbeSource::Sr;
    }
    if (text == "bicubic") {
        return ProbeSource::Bicubic;
    }
    throw std::invalid_argument("probe source must be 'sr' or 'bicubic', got '" + text + "'");
}

void TrainConfig::validate() const {
    optim::RmsPropOptions{lr, rms_decay, rms_eps}.validate();
    if (batch_size < 2) {
        throw std::invalid_argument("batch_size must be at least 2");
    }
    if (steps < 0) {
        throw std::invalid_argument("steps must be non-negative");
    }
    weights.validate();
    for (const double s : kernel_sigmas) {
        if (!(s > 0.0)) {
            throw std::invalid_argument("kernel sigmas must be positive");
        }
    }
    if (kernel_sigmas.empty() && kernel_multipliers.empty()) {
        throw std::invalid_argument("kernel bank needs sigmas or multipliers");
    }
    for (const double m : kernel_multipliers) {
        if (!(m > 0.0)) {
            throw std::invalid_argument("kernel multipliers must be positive");
        }
    }
    for (const int n : {schedule.domain, schedule.generator, schedule.integrator, schedule.student,
                        schedule.assistant}) {
        if (n < 0) {
            throw std::invalid_argument("phase schedule counts must be non-negative");
        }
    }
    if (!(heatmap_sigma > 0.0)) {
        throw std::invalid_argument("heatmap_sigma must be positive");
    }
    if (checkpoint_every < 0) {
        throw std::invalid_argument("checkpoint_every must be non-negative");
    }
}

// ---------------------------------------------------------------------------

SampleTensors to_sample_tensors(const data::PairSample& sample, const fhn::FhnConfig& fhn_cfg, double heatmap_sigma) {
    SampleTensors t;
    t.hr = to_tensor(sample.hr);
    t.coarse_input = to_tensor(sample.coarse_input);
    const auto landmarks = data::rescale_landmarks(sample.landmarks, sample.hr.size2(), fhn_cfg.prior_resolution);
    t.heatmaps = to_tensor(data::render_heatmaps(landmarks, fhn_cfg.prior_resolution, heatmap_sigma).data);
    t.parsing_labels = to_label_tensor(data::resize_parsing(sample.parsing, fhn_cfg.prior_resolution));
    t.identity = sample.identity;
    return t;
}

Batch collate(const std::vector<const SampleTensors*>& items) {
    if (items.empty()) {
        throw std::invalid_argument("cannot collate an empty batch");
    }
    std::vector<Tensor> hr;
    std::vector<Tensor> coarse;
    std::vector<Tensor> heat;
    std::vector<Tensor> labels;
    Batch batch;
    for (const auto* item : items) {
        hr.push_back(item->hr);
        coarse.push_back(item->coarse_input);
        heat.push_back(item->heatmaps);
        labels.push_back(item->parsing_labels);
        batch.identities.push_back(item->identity);
    }
    batch.hr = torch::stack(hr);
    batch.coarse_input = torch::stack(coarse);
    batch.heatmaps = torch::stack(heat);
    batch.parsing_labels = torch::stack(labels);
    return batch;
}

Batch make_batch(std::span<const data::PairSample> samples, const fhn::FhnConfig& fhn_cfg, double heatmap_sigma) {
    std::vector<SampleTensors> tensors;
    tensors.reserve(samples.size());
    for (const auto& s : samples) {
        tensors.push_back(to_sample_tensors(s, fhn_cfg, heatmap_sigma));
    }
    std::vector<const SampleTensors*> items;
    for (const auto& t : tensors) {
        items.push_back(&t);
    }
    return collate(items);
}

double StepReport::generator_total(const losses::LossWeights& w) const {
    return losses::generator_loss(domain, pixel, landmark, parsing, w);
}

nlohmann::json StepReport::to_json(std::int64_t step) const {
    return {{"step", step},         {"domain", domain},         {"pixel", pixel},
            {"landmark", landmark}, {"parsing", parsing},       {"student_kd", student_kd},
            {"assistant_kd", assistant_kd}};
}

// ---------------------------------------------------------------------------

TrainState::TrainState(fhn::FhnConfig fhn_config, hrn::HrnConfig hrn_config, TrainConfig train_config)
    : fhn_cfg(std::move(fhn_config)), hrn_cfg(std::move(hrn_config)), cfg(std::move(train_config)) {
    fhn_cfg.validate();
    hrn_cfg.validate();
    cfg.validate();
    if (hrn_cfg.image_size != fhn_cfg.image_size) {
        throw std::invalid_argument("fhn and hrn image sizes differ");
    }
    torch::manual_seed(cfg.seed);
    fhn = fhn::Fhn(fhn_cfg);
    hrn = hrn::HrnNets(hrn_cfg);
    opt_domain = make_optimizer(fhn->group_parameters(fhn::Group::Domain), cfg);
    opt_generator = make_optimizer(fhn->generator_parameters(), cfg);
    opt_integrator = make_optimizer(fhn->group_parameters(fhn::Group::Integrator), cfg);
    opt_student = make_optimizer(hrn->role_parameters(hrn::Role::Student), cfg);
    opt_assistant = make_optimizer(hrn->role_parameters(hrn::Role::Assistant), cfg);
}

std::vector<std::pair<std::string, optim::RmsProp*>> TrainState::optimizers() {
    return {{"domain", opt_domain.get()},
            {"generator", opt_generator.get()},
            {"integrator", opt_integrator.get()},
            {"student", opt_student.get()},
            {"assistant", opt_assistant.get()}};
}

Tensor TrainState::probe(const Batch& batch) {
    if (cfg.probe_source == ProbeSource::Bicubic) {
        return batch.coarse_input;
    }
    torch::NoGradGuard guard;
    return fhn->forward_upsampled(batch.coarse_input).sr;
}

std::unique_ptr<TrainState> make_state(const fhn::FhnConfig& fhn_cfg, const hrn::HrnConfig& hrn_cfg,
                                       const TrainConfig& cfg) {
    return std::make_unique<TrainState>(fhn_cfg, hrn_cfg, cfg);
}

// ---------------------------------------------------------------------------

void ensure_kernel(TrainState& state, const Batch& batch) {
    if (!state.kernel.sigmas.empty()) {
        return;
    }
    if (!state.cfg.kernel_sigmas.empty()) {
        state.kernel = losses::KernelBank::uniform(state.cfg.kernel_sigmas);
        return;
    }
    torch::NoGradGuard guard;
    const auto out = state.fhn->forward_upsampled(batch.coarse_input);
    const Tensor features = torch::cat({state.fhn->domain_encode(domain_image(state, out)),
                                        state.fhn->domain_encode(batch.hr)})
                                .to(torch::kFloat64);
    state.kernel = losses::KernelBank::median_heuristic(features, state.cfg.kernel_multipliers);
}

double measure_mmd(TrainState& state, const Batch& batch) {
    ensure_kernel(state, batch);
    torch::NoGradGuard guard;
    const auto out = state.fhn->forward_upsampled(batch.coarse_input);
    return losses::mk_mmd(state.fhn->domain_encode(domain_image(state, out)), state.fhn->domain_encode(batch.hr),
                          state.kernel, state.cfg.mmd_estimator)
        .item<double>();
}

double domain_phase(TrainState& state, const Batch& batch) {
    ensure_kernel(state, batch);
    zero_all_grads(state);
    Tensor source;
    {
        torch::NoGradGuard guard;
        source = domain_image(state, state.fhn->forward_upsampled(batch.coarse_input));
    }
    const Tensor loss = losses::domain_discriminator_loss(state.fhn->domain_encode(source),
                                                          state.fhn->domain_encode(batch.hr), state.kernel,
                                                          state.cfg.mmd_estimator);
    const double value = checked(loss, "domain");
    loss.backward();
    state.opt_domain->step();
    return value;
}

StepReport generator_phase(TrainState& state, const Batch& batch) {
    ensure_kernel(state, batch);
    zero_all_grads(state);
    const auto out = state.fhn->forward_upsampled(batch.coarse_input);
    const Tensor mmd = losses::mk_mmd(state.fhn->domain_encode(domain_image(state, out)),
                                      state.fhn->domain_encode(batch.hr), state.kernel, state.cfg.mmd_estimator);
    const Tensor pixel = losses::pixel_loss(out.sr, batch.hr);
    const Tensor landmark = losses::landmark_loss(out.pred_heatmaps, batch.heatmaps);
    const Tensor parsing = losses::parsing_loss(out.pred_parsing_probs, batch.parsing_labels);
    Tensor total = losses::generator_loss(mmd, pixel, landmark, parsing, state.cfg.weights);
    StepReport report;
    if (state.cfg.e2e_coupling && state.cfg.distill) {
        Tensor teacher_tap;
        {
            torch::NoGradGuard guard;
            teacher_tap = state.hrn->forward_with_taps(hrn::Role::Teacher, batch.hr).final_tap();
        }
        const Tensor kd = losses::student_distill_loss(
            teacher_tap, state.hrn->forward_with_taps(hrn::Role::Student, out.sr).final_tap());
        total = total + kd;
    }
    report.domain = checked(mmd, "generator");
    report.pixel = checked(pixel, "generator");
    report.landmark = checked(landmark, "generator");
    report.parsing = checked(parsing, "generator");
    checked(total, "generator");
    total.backward();
    state.opt_generator->step();
    return report;
}

double integrator_phase(TrainState& state, const Batch& batch) {
    zero_all_grads(state);
    Tensor coarse;
    Tensor concat;
    {
        torch::NoGradGuard guard;
        coarse = state.fhn->coarse_sr(batch.coarse_input);
        concat = state.fhn->tripath_forward(coarse).concat();
    }
    const Tensor loss = losses::integrator_loss(state.fhn->integrate_sr(concat, coarse), batch.hr);
    const double value = checked(loss, "integrator");
    loss.backward();
    state.opt_integrator->step();
    return value;
}

double student_phase(TrainState& state, const Batch& batch, const Tensor& probe) {
    zero_all_grads(state);
    Tensor teacher_tap;
    {
        torch::NoGradGuard guard;
        teacher_tap = state.hrn->forward_with_taps(hrn::Role::Teacher, batch.hr).final_tap();
    }
    const Tensor loss = losses::student_distill_loss(
        teacher_tap, state.hrn->forward_with_taps(hrn::Role::Student, probe.detach()).final_tap());
    const double value = checked(loss, "student");
    loss.backward();
    state.opt_student->step();
    return value;
}

double assistant_phase(TrainState& state, const Batch& batch, const Tensor& probe) {
    zero_all_grads(state);
    hrn::BlockFeatures teacher;
    hrn::BlockFeatures student;
    {
        torch::NoGradGuard guard;
        teacher = state.hrn->forward_with_taps(hrn::Role::Teacher, batch.hr);
        student = state.hrn->forward_with_taps(hrn::Role::Student, probe);
    }
    const auto assistant = state.hrn->forward_with_taps(hrn::Role::Assistant, probe.detach());
    const Tensor loss = losses::assistant_distill_loss(teacher.taps, student.taps, assistant.taps);
    const double value = checked(loss, "assistant");
    loss.backward();
    state.opt_assistant->step();
    return value;
}

StepReport train_step(const Batch& batch, TrainState& state) {
    StepReport report;
    if (state.cfg.probe_source == ProbeSource::Sr) {
        for (int i = 0; i < state.cfg.schedule.domain; ++i) {
            domain_phase(state, batch);
        }
        for (int i = 0; i < state.cfg.schedule.generator; ++i) {
            report = generator_phase(state, batch);
        }
        for (int i = 0; i < state.cfg.schedule.integrator; ++i) {
            integrator_phase(state, batch);
        }
    }
    if (state.cfg.distill) {
        const Tensor probe = state.probe(batch);
        for (int i = 0; i < state.cfg.schedule.student; ++i) {
            report.student_kd = student_phase(state, batch, probe);
        }
        for (int i = 0; i < state.cfg.schedule.assistant; ++i) {
            report.assistant_kd = assistant_phase(state, batch, probe);
        }
    }
    zero_all_grads(state);
    ++state.step;
    return report;
}

StepReport train_step(std::span<const data::PairSample> samples, TrainState& state) {
    return train_step(make_batch(samples, state.fhn_cfg, state.cfg.heatmap_sigma), state);
}

// ---------------------------------------------------------------------------

void check_manifest(const data::DatasetManifest& manifest, const fhn::FhnConfig& fhn_cfg,
                    const hrn::HrnConfig& hrn_cfg) {
    if (manifest.image_size != fhn_cfg.image_size || manifest.image_size != hrn_cfg.image_size) {
        std::ostringstream msg;
        msg << "manifest images are " << manifest.image_size.height << "x" << manifest.image_size.width
            << " but the networks expect " << fhn_cfg.image_size.height << "x" << fhn_cfg.image_size.width;
        throw ValidationError(msg.str());
    }
    if (manifest.landmark_count != fhn_cfg.heatmap_channels) {
        throw ValidationError("manifest has " + std::to_string(manifest.landmark_count) +
                              " landmarks but fhn.heatmap_channels is " + std::to_string(fhn_cfg.heatmap_channels));
    }
    if (manifest.class_count != fhn_cfg.parsing_channels) {
        throw ValidationError("manifest has " + std::to_string(manifest.class_count) +
                              " parsing classes but fhn.parsing_channels is " +
                              std::to_string(fhn_cfg.parsing_channels));
    }
}

SampleCache load_split(const data::DatasetManifest& manifest, const std::string& split,
                       const fhn::FhnConfig& fhn_cfg, double heatmap_sigma, bool with_flips) {
    SampleCache cache;
    for (const auto idx : manifest.indices_for_split(split)) {
        const auto sample = data::load_pair_sample(manifest, idx, fhn_cfg.scale_factor);
        cache.plain.push_back(to_sample_tensors(sample, fhn_cfg, heatmap_sigma));
        if (with_flips) {
            cache.flipped.push_back(
                to_sample_tensors(data::flip_horizontal(sample, manifest.flip_permutation), fhn_cfg, heatmap_sigma));
        }
    }
    return cache;
}

BatchPlan plan_batch(std::uint64_t seed, std::int64_t step, std::size_t pool, int batch_size, bool flip) {
    if (pool < static_cast<std::size_t>(batch_size)) {
        throw ValidationError("training split has " + std::to_string(pool) + " samples, fewer than batch_size " +
                              std::to_string(batch_size));
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(pool);
    for (std::size_t i = 0; i < pool; ++i) {
        order[i] = i;
    }
    BatchPlan plan;
    for (int i = 0; i < batch_size; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (pool - i));
        std::swap(order[i], order[j]);
        plan.indices.push_back(order[i]);
        plan.flips.push_back(flip && (rng() >> 63) != 0);
    }
    return plan;
}

std::vector<StepReport> fit_state(TrainState& state, const data::DatasetManifest& manifest,
                                  const FitOptions& options) {
    check_manifest(manifest, state.fhn_cfg, state.hrn_cfg);
    at::set_num_threads(1);
    const auto cache = load_split(manifest, "train", state.fhn_cfg, state.cfg.heatmap_sigma, state.cfg.flip_augment);

    std::ofstream log_file;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        log_file.open(options.out_dir / "loss_log.jsonl", state.step == 0 ? std::ios::trunc : std::ios::app);
        if (!log_file) {
            throw IoError("cannot write " + (options.out_dir / "loss_log.jsonl").string());
        }
    }
    std::vector<StepReport> log;
    while (state.step < state.cfg.steps) {
        const auto plan = plan_batch(state.cfg.seed, state.step, cache.plain.size(), state.cfg.batch_size,
                                     state.cfg.flip_augment);
        std::vector<const SampleTensors*> items;
        for (std::size_t i = 0; i < plan.indices.size(); ++i) {
            items.push_back(plan.flips[i] ? &cache.flipped[plan.indices[i]] : &cache.plain[plan.indices[i]]);
        }
        const auto report = train_step(collate(items), state);
        log.push_back(report);
        if (log_file.is_open()) {
            log_file << report.to_json(state.step).dump() << '\n';
            if (!log_file) {
                throw IoError("failed writing the loss log");
            }
        }
        if (options.verbose && (state.step % 50 == 0 || state.step == state.cfg.steps)) {
            std::cerr << "step " << state.step << ": " << report.to_json(state.step).dump() << '\n';
        }
        if (!options.out_dir.empty() && state.cfg.checkpoint_every > 0 &&
            state.step % state.cfg.checkpoint_every == 0 && state.step < state.cfg.steps) {
            std::ostringstream name;
            name << "step_" << std::setw(6) << std::setfill('0') << state.step << ".rimckpt";
            std::filesystem::create_directories(options.out_dir / "checkpoints");
            checkpoint::save_checkpoint(state, options.out_dir / "checkpoints" / name.str());
        }
    }
    if (!options.out_dir.empty()) {
        checkpoint::save_checkpoint(state, options.out_dir / "checkpoint.rimckpt");
    }
    return log;
}

FitResult fit(const data::DatasetManifest& manifest, const fhn::FhnConfig& fhn_cfg, const hrn::HrnConfig& hrn_cfg,
              const TrainConfig& cfg, const FitOptions& options) {
    check_manifest(manifest, fhn_cfg, hrn_cfg);
    FitResult result;
    result.state = make_state(fhn_cfg, hrn_cfg, cfg);
    result.log = fit_state(*result.state, manifest, options);
    return result;
}

}  // namespace rim::train
