#include "rim/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "rim/errors.hpp"

namespace rim::config {

using nlohmann::json;

namespace {

/// Reads keys of one JSON object, rejecting anything it was not asked for.
class Section {
public:
    Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) {
            throw ValidationError("config key '" + prefix_ + "' must be an object");
        }
    }

    Section(const Section&) = delete;
    Section& operator=(const Section&) = delete;

    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) {
            return;
        }
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) {
                throw ValidationError("unknown config key '" + path(key) + "'");
            }
        }
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) {
            return;
        }
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ValidationError("config key '" + path(key) + "' has the wrong type");
        }
    }

    /// Raw sub-object access; marks the key as consumed.
    const json* sub(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

private:
    const json& j_;
    std::string prefix_;
    std::set<std::string> seen_;
};

void read_size(Section& s, const char* key, data::Size2& out) {
    const json* j = s.sub(key);
    if (j == nullptr) {
        return;
    }
    if (!j->is_array() || j->size() != 2 || !(*j)[0].is_number_integer() || !(*j)[1].is_number_integer()) {
        throw ValidationError("config key '" + s.path(key) + "' must be [height, width]");
    }
    out = {(*j)[0].get<int>(), (*j)[1].get<int>()};
}

json size_json(data::Size2 s) { return json::array({s.height, s.width}); }

template <typename Fn>
void checked_validate(const std::string& prefix, Fn&& fn) {
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        throw ValidationError(prefix + ": " + e.what());
    }
}

std::string estimator_name(losses::MmdEstimator e) { return e == losses::MmdEstimator::Biased ? "biased" : "unbiased"; }

}  // namespace

// ---------------------------------------------------------------------------

json to_json(const fhn::FhnConfig& c) {
    return {{"image_size", size_json(c.image_size)},
            {"prior_resolution", size_json(c.prior_resolution)},
            {"scale_factor", c.scale_factor},
            {"coarse_channels", c.coarse_channels},
            {"coarse_blocks", c.coarse_blocks},
            {"base_channels", c.base_channels},
            {"path_blocks", c.path_blocks},
            {"integrator_channels", c.integrator_channels},
            {"integrator_blocks", c.integrator_blocks},
            {"domain_channels", c.domain_channels},
            {"domain_layers", c.domain_layers},
            {"domain_dim", c.domain_dim},
            {"heatmap_channels", c.heatmap_channels},
            {"parsing_channels", c.parsing_channels},
            {"zero_init_residual", c.zero_init_residual},
            {"domain_source", fhn::to_string(c.domain_source)}};
}

json to_json(const hrn::HrnConfig& c) {
    return {{"image_size", size_json(c.image_size)},
            {"teacher_widths", c.teacher_widths},
            {"student_widths", c.student_widths},
            {"assistant_widths", c.assistant_widths}};
}

json to_json(const train::TrainConfig& c) {
    return {{"lr", c.lr},
            {"rms_decay", c.rms_decay},
            {"rms_eps", c.rms_eps},
            {"batch_size", c.batch_size},
            {"steps", c.steps},
            {"seed", c.seed},
            {"lambda0", c.weights.lambda0},
            {"lambda1", c.weights.lambda1},
            {"lambda2", c.weights.lambda2},
            {"kernel_sigmas", c.kernel_sigmas},
            {"kernel_multipliers", c.kernel_multipliers},
            {"mmd_estimator", estimator_name(c.mmd_estimator)},
            {"schedule",
             {{"domain", c.schedule.domain},
              {"generator", c.schedule.generator},
              {"integrator", c.schedule.integrator},
              {"student", c.schedule.student},
              {"assistant", c.schedule.assistant}}},
            {"e2e_coupling", c.e2e_coupling},
            {"probe_source", train::to_string(c.probe_source)},
            {"distill", c.distill},
            {"flip_augment", c.flip_augment},
            {"heatmap_sigma", c.heatmap_sigma},
            {"checkpoint_every", c.checkpoint_every}};
}

json to_json(const eval::EvalConfig& c) {
    return {{"split", c.split},
            {"thresholds", c.thresholds},
            {"negatives_per_positive", c.negatives_per_positive},
            {"pair_seed", c.pair_seed},
            {"psnr_grid", c.psnr_grid},
            {"ssim_grid", c.ssim_grid},
            {"ablation_baseline_steps", c.ablation_baseline_steps},
            {"batch_size", c.batch_size}};
}

json to_json(const data::SynthOptions& c) {
    return {{"n_identities", c.n_identities},
            {"per_identity", c.per_identity},
            {"test_per_identity", c.test_per_identity},
            {"size", size_json(c.size)},
            {"seed", c.seed},
            {"landmark_count", c.landmark_count},
            {"class_count", c.class_count}};
}

json to_json(const ExperimentConfig& c) {
    return {{"seed", c.seed},          {"out", c.out_dir.string()}, {"manifest", c.manifest},
            {"data", to_json(c.synth)}, {"fhn", to_json(c.fhn)},      {"hrn", to_json(c.hrn)},
            {"train", to_json(c.train)}, {"eval", to_json(c.eval)}};
}

// ---------------------------------------------------------------------------

void merge(fhn::FhnConfig& c, const json& j, const std::string& prefix) {
    Section s(j, prefix);
    read_size(s, "image_size", c.image_size);
    read_size(s, "prior_resolution", c.prior_resolution);
    s.read("scale_factor", c.scale_factor);
    s.read("coarse_channels", c.coarse_channels);
    s.read("coarse_blocks", c.coarse_blocks);
    s.read("base_channels", c.base_channels);
    s.read("path_blocks", c.path_blocks);
    s.read("integrator_channels", c.integrator_channels);
    s.read("integrator_blocks", c.integrator_blocks);
    s.read("domain_channels", c.domain_channels);
    s.read("domain_layers", c.domain_layers);
    s.read("domain_dim", c.domain_dim);
    s.read("heatmap_channels", c.heatmap_channels);
    s.read("parsing_channels", c.parsing_channels);
    s.read("zero_init_residual", c.zero_init_residual);
    std::string source = fhn::to_string(c.domain_source);
    s.read("domain_source", source);
    checked_validate(s.path("domain_source"), [&] { c.domain_source = fhn::parse_domain_source(source); });
}

void merge(hrn::HrnConfig& c, const json& j, const std::string& prefix) {
    Section s(j, prefix);
    read_size(s, "image_size", c.image_size);
    s.read("teacher_widths", c.teacher_widths);
    s.read("student_widths", c.student_widths);
    s.read("assistant_widths", c.assistant_widths);
}

void merge(train::TrainConfig& c, const json& j, const std::string& prefix) {
    Section s(j, prefix);
    s.read("lr", c.lr);
    s.read("rms_decay", c.rms_decay);
    s.read("rms_eps", c.rms_eps);
    s.read("batch_size", c.batch_size);
    s.read("steps", c.steps);
    s.read("seed", c.seed);
    s.read("lambda0", c.weights.lambda0);
    s.read("lambda1", c.weights.lambda1);
    s.read("lambda2", c.weights.lambda2);
    s.read("kernel_sigmas", c.kernel_sigmas);
    s.read("kernel_multipliers", c.kernel_multipliers);
    std::string estimator = estimator_name(c.mmd_estimator);
    s.read("mmd_estimator", estimator);
    if (estimator == "biased") {
        c.mmd_estimator = losses::MmdEstimator::Biased;
    } else if (estimator == "unbiased") {
        c.mmd_estimator = losses::MmdEstimator::Unbiased;
    } else {
        throw ValidationError("config key '" + s.path("mmd_estimator") + "' must be 'biased' or 'unbiased'");
    }
    if (const json* sched = s.sub("schedule")) {
        Section ss(*sched, s.path("schedule"));
        ss.read("domain", c.schedule.domain);
        ss.read("generator", c.schedule.generator);
        ss.read("integrator", c.schedule.integrator);
        ss.read("student", c.schedule.student);
        ss.read("assistant", c.schedule.assistant);
    }
    s.read("e2e_coupling", c.e2e_coupling);
    std::string probe = train::to_string(c.probe_source);
    s.read("probe_source", probe);
    checked_validate(s.path("probe_source"), [&] { c.probe_source = train::parse_probe_source(probe); });
    s.read("distill", c.distill);
    s.read("flip_augment", c.flip_augment);
    s.read("heatmap_sigma", c.heatmap_sigma);
    s.read("checkpoint_every", c.checkpoint_every);
}

void merge(eval::EvalConfig& c, const json& j, const std::string& prefix) {
    Section s(j, prefix);
    s.read("split", c.split);
    s.read("thresholds", c.thresholds);
    s.read("negatives_per_positive", c.negatives_per_positive);
    s.read("pair_seed", c.pair_seed);
    s.read("psnr_grid", c.psnr_grid);
    s.read("ssim_grid", c.ssim_grid);
    s.read("ablation_baseline_steps", c.ablation_baseline_steps);
    s.read("batch_size", c.batch_size);
}

void merge(data::SynthOptions& c, const json& j, const std::string& prefix) {
    Section s(j, prefix);
    s.read("n_identities", c.n_identities);
    s.read("per_identity", c.per_identity);
    s.read("test_per_identity", c.test_per_identity);
    read_size(s, "size", c.size);
    s.read("seed", c.seed);
    s.read("landmark_count", c.landmark_count);
    s.read("class_count", c.class_count);
}

void merge(ExperimentConfig& c, const json& j) {
    Section s(j, "");
    s.read("seed", c.seed);
    std::string out = c.out_dir.string();
    s.read("out", out);
    c.out_dir = out;
    s.read("manifest", c.manifest);
    if (const json* sub = s.sub("data")) {
        merge(c.synth, *sub);
    }
    if (const json* sub = s.sub("fhn")) {
        merge(c.fhn, *sub);
    }
    if (const json* sub = s.sub("hrn")) {
        merge(c.hrn, *sub);
    }
    if (const json* sub = s.sub("train")) {
        merge(c.train, *sub);
    }
    if (const json* sub = s.sub("eval")) {
        merge(c.eval, *sub);
    }
}

// ---------------------------------------------------------------------------

void ExperimentConfig::apply_seed() {
    synth.seed = seed;
    train.seed = seed;
    eval.pair_seed = seed;
}

void ExperimentConfig::validate() const {
    checked_validate("fhn", [&] { fhn.validate(); });
    checked_validate("hrn", [&] { hrn.validate(); });
    checked_validate("train", [&] { train.validate(); });
    checked_validate("eval", [&] { eval.validate(); });
    if (hrn.image_size != fhn.image_size) {
        throw ValidationError("hrn.image_size must equal fhn.image_size");
    }
    if (synth.size != fhn.image_size) {
        throw ValidationError("data.size must equal fhn.image_size");
    }
    if (synth.landmark_count != fhn.heatmap_channels) {
        throw ValidationError("data.landmark_count must equal fhn.heatmap_channels");
    }
    if (synth.class_count != fhn.parsing_channels) {
        throw ValidationError("data.class_count must equal fhn.parsing_channels");
    }
    if (synth.n_identities < 2 || synth.per_identity < 1 || synth.test_per_identity < 0 ||
        synth.test_per_identity >= synth.per_identity) {
        throw ValidationError("data: need >= 2 identities and 0 <= test_per_identity < per_identity");
    }
}

std::filesystem::path ExperimentConfig::manifest_path() const {
    return manifest.empty() ? out_dir / "data" / "manifest.jsonl" : std::filesystem::path(manifest);
}

ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    ExperimentConfig cfg;
    merge(cfg, j);
    return cfg;
}

void write_snapshot(const ExperimentConfig& cfg, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << to_json(cfg).dump(2) << '\n';
}

}  // namespace rim::config
