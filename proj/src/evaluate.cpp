#include "rim/evaluate.hpp"

#include <fstream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "rim/errors.hpp"
#include "rim/tensor_util.hpp"

namespace rim::eval {

using nlohmann::json;
using torch::Tensor;

namespace {

json csd_json(const std::vector<CsdPoint>& curve) {
    json out = json::array();
    for (const auto& p : curve) {
        out.push_back({{"threshold", p.threshold}, {"fraction", p.fraction}});
    }
    return out;
}

Tensor stack_field(const EvalSet& set, data::ImageTensor data::PairSample::*field) {
    std::vector<const data::ImageTensor*> images;
    images.reserve(set.samples.size());
    for (const auto& s : set.samples) {
        images.push_back(&(s.*field));
    }
    return stack_images(images);
}

std::vector<int> identities_of(const EvalSet& set) {
    std::vector<int> ids;
    ids.reserve(set.samples.size());
    for (const auto& s : set.samples) {
        ids.push_back(s.identity);
    }
    return ids;
}

/// Teacher embedding of the first "train" HR image of every identity.
std::vector<hrn::GalleryEntry> identity_gallery(train::TrainState& state, const data::DatasetManifest& manifest,
                                                const EvalConfig& cfg) {
    std::set<int> seen;
    EvalSet set;
    for (const auto idx : manifest.indices_for_split("train")) {
        if (seen.insert(manifest.records[idx].identity).second) {
            set.samples.push_back(data::load_pair_sample(manifest, idx, state.fhn_cfg.scale_factor));
        }
    }
    if (set.samples.empty()) {
        throw ValidationError("identification needs a non-empty 'train' split for the gallery");
    }
    const auto embeddings =
        embed_images(state, stack_field(set, &data::PairSample::hr), Embedder::Teacher, cfg.batch_size);
    std::vector<hrn::GalleryEntry> gallery;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        gallery.push_back({embeddings[i], set.samples[i].identity});
    }
    return gallery;
}

/// Every "train" HR image, the verification gallery.
EvalSet gallery_set(const data::DatasetManifest& manifest, int scale_factor) {
    EvalSet set = load_eval_set(manifest, "train", scale_factor);
    if (set.samples.empty()) {
        throw ValidationError("verification needs a non-empty 'train' split for the gallery");
    }
    return set;
}

std::vector<PairIndex> checked_pairs(const EvalSet& probes, const EvalSet& gallery, const EvalConfig& cfg) {
    auto pairs = make_pairs(identities_of(probes), identities_of(gallery), cfg.negatives_per_positive,
                            cfg.pair_seed);
    const bool positives = std::any_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.same; });
    const bool negatives = std::any_of(pairs.begin(), pairs.end(), [](const auto& p) { return !p.same; });
    if (!positives || !negatives) {
        throw ValidationError("eval split '" + cfg.split +
                              "' needs identities shared with the gallery and at least two identities");
    }
    return pairs;
}

void require_split(const EvalSet& set, const std::string& split) {
    if (set.samples.empty()) {
        throw ValidationError("eval split '" + split + "' is empty");
    }
}

void require_fhn_trained(const train::TrainState& state, Protocol protocol) {
    if (state.cfg.probe_source != train::ProbeSource::Sr) {
        throw ValidationError("protocol " + to_string(protocol) +
                              " needs a checkpoint whose hallucination net was trained (train.probe_source = sr)");
    }
}

void require_distilled(const train::TrainState& state, Protocol protocol) {
    if (!state.cfg.distill) {
        throw ValidationError("protocol " + to_string(protocol) +
                              " needs a checkpoint trained with train.distill = true");
    }
}

}  // namespace

std::string to_string(Protocol protocol) {
    switch (protocol) {
        case Protocol::SrQuality: return "sr-quality";
        case Protocol::Verify: return "verify";
        case Protocol::Identify: return "identify";
        case Protocol::Ablate: return "ablate";
    }
    return "unknown";
}

Protocol parse_protocol(const std::string& text) {
    for (const auto p : {Protocol::SrQuality, Protocol::Verify, Protocol::Identify, Protocol::Ablate}) {
        if (text == to_string(p)) {
            return p;
        }
    }
    throw std::invalid_argument("protocol must be one of sr-quality, verify, identify, ablate; got '" + text + "'");
}

void EvalConfig::validate() const {
    if (split.empty()) {
        throw std::invalid_argument("eval split must be named");
    }
    for (const double t : thresholds) {
        if (!(t >= 0.0 && t <= 2.0)) {
            throw std::invalid_argument("verification thresholds must lie in [0, 2]");
        }
    }
    if (negatives_per_positive < 1) {
        throw std::invalid_argument("negatives_per_positive must be at least 1");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("eval batch_size must be positive");
    }
    if (ablation_baseline_steps < 0) {
        throw std::invalid_argument("ablation_baseline_steps must be non-negative");
    }
}

json MetricReport::to_json() const {
    json j;
    j["protocol"] = to_string(protocol);
    if (!psnr.empty()) {
        j["psnr"] = psnr;
        j["ssim"] = ssim;
        j["mean_psnr"] = mean_psnr;
        j["mean_ssim"] = mean_ssim;
        j["psnr_csd"] = csd_json(psnr_csd);
        j["ssim_csd"] = csd_json(ssim_csd);
    }
    if (!bicubic_psnr.empty()) {
        j["bicubic_psnr"] = bicubic_psnr;
        j["bicubic_ssim"] = bicubic_ssim;
        j["mean_bicubic_psnr"] = mean_bicubic_psnr;
        j["mean_bicubic_ssim"] = mean_bicubic_ssim;
        j["bicubic_psnr_csd"] = csd_json(bicubic_psnr_csd);
        j["bicubic_ssim_csd"] = csd_json(bicubic_ssim_csd);
    }
    if (verification) {
        json table = json::array();
        for (const auto& p : verification->sweep.table) {
            table.push_back({{"threshold", p.threshold}, {"accuracy", p.accuracy}});
        }
        j["verification"] = {{"same_pairs", verification->same_pairs},
                             {"different_pairs", verification->different_pairs},
                             {"best_threshold", verification->sweep.best_threshold},
                             {"best_accuracy", verification->sweep.best_accuracy},
                             {"table", table}};
    }
    if (rank1) {
        j["rank1"] = *rank1;
    }
    if (!ablation.empty()) {
        json rows = json::array();
        for (const auto& r : ablation) {
            rows.push_back({{"name", r.name},
                            {"description", r.description},
                            {"accuracy", r.accuracy},
                            {"best_threshold", r.best_threshold},
                            {"rank1", r.rank1}});
        }
        j["ablation"] = rows;
    }
    return j;
}

void fill_quality(MetricReport& report, const std::vector<data::ImageTensor>& sr,
                  const std::vector<data::ImageTensor>& hr, const EvalConfig& cfg) {
    if (sr.size() != hr.size() || sr.empty()) {
        throw std::invalid_argument("fill_quality needs equally many, non-empty SR and HR images");
    }
    report.psnr.clear();
    report.ssim.clear();
    for (std::size_t i = 0; i < sr.size(); ++i) {
        report.psnr.push_back(psnr(sr[i], hr[i]));
        report.ssim.push_back(ssim(sr[i], hr[i]));
    }
    report.mean_psnr = mean(report.psnr);
    report.mean_ssim = mean(report.ssim);
    report.psnr_csd = csd_curve(report.psnr, cfg.psnr_grid);
    report.ssim_csd = csd_curve(report.ssim, cfg.ssim_grid);
}

EvalSet load_eval_set(const data::DatasetManifest& manifest, const std::string& split, int scale_factor) {
    EvalSet set;
    for (const auto idx : manifest.indices_for_split(split)) {
        set.samples.push_back(data::load_pair_sample(manifest, idx, scale_factor));
    }
    return set;
}

Tensor hallucinate_all(train::TrainState& state, const EvalSet& set, int batch_size) {
    const Tensor coarse = stack_field(set, &data::PairSample::coarse_input);
    torch::NoGradGuard guard;
    std::vector<Tensor> parts;
    for (int64_t b = 0; b < coarse.size(0); b += batch_size) {
        parts.push_back(state.fhn->forward_upsampled(coarse.slice(0, b, b + batch_size)).sr);
    }
    return torch::cat(parts);
}

std::vector<hrn::Embedding> embed_images(train::TrainState& state, const Tensor& images, Embedder embedder,
                                         int batch_size) {
    torch::NoGradGuard guard;
    std::vector<hrn::Embedding> out;
    for (int64_t b = 0; b < images.size(0); b += batch_size) {
        const Tensor chunk = images.slice(0, b, b + batch_size);
        Tensor tap;
        switch (embedder) {
            case Embedder::Teacher:
                tap = state.hrn->forward_with_taps(hrn::Role::Teacher, chunk).final_tap();
                break;
            case Embedder::Student:
                tap = state.hrn->forward_with_taps(hrn::Role::Student, chunk).final_tap();
                break;
            case Embedder::Composed:
                tap = hrn::residual_compose(state.hrn->forward_with_taps(hrn::Role::Student, chunk).final_tap(),
                                            state.hrn->forward_with_taps(hrn::Role::Assistant, chunk).final_tap());
                break;
        }
        auto part = hrn::embed_batch(tap);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

std::vector<PairIndex> make_pairs(const std::vector<int>& probe_ids, const std::vector<int>& gallery_ids,
                                  int negatives_per_positive, std::uint64_t seed) {
    std::vector<PairIndex> pairs;
    std::size_t available = 0;
    for (std::size_t i = 0; i < probe_ids.size(); ++i) {
        for (std::size_t j = 0; j < gallery_ids.size(); ++j) {
            if (probe_ids[i] == gallery_ids[j]) {
                pairs.push_back({i, j, true});
            } else {
                ++available;
            }
        }
    }
    const std::size_t wanted = pairs.size() * static_cast<std::size_t>(negatives_per_positive);
    std::mt19937_64 rng(seed);
    std::set<std::pair<std::size_t, std::size_t>> taken;
    while (taken.size() < std::min(wanted, available)) {
        const std::size_t i = rng() % probe_ids.size();
        const std::size_t j = rng() % gallery_ids.size();
        if (probe_ids[i] != gallery_ids[j] && taken.insert({i, j}).second) {
            pairs.push_back({i, j, false});
        }
    }
    return pairs;
}

VerificationSummary verify_embeddings(const std::vector<hrn::Embedding>& probes,
                                      const std::vector<hrn::Embedding>& gallery,
                                      const std::vector<PairIndex>& pairs, std::span<const double> thresholds) {
    std::vector<double> distances;
    std::vector<bool> same;
    VerificationSummary summary;
    for (const auto& p : pairs) {
        distances.push_back(hrn::cosine_distance(probes.at(p.probe), gallery.at(p.gallery)));
        same.push_back(p.same);
        (p.same ? summary.same_pairs : summary.different_pairs) += 1;
    }
    summary.sweep = verification_sweep(distances, same, thresholds);
    return summary;
}

double identification_rate(const std::vector<hrn::Embedding>& probes, const std::vector<int>& probe_ids,
                           const std::vector<hrn::GalleryEntry>& gallery) {
    if (probes.empty()) {
        throw std::invalid_argument("identification_rate: no probes");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        hits += static_cast<std::size_t>(hrn::rank1_identify(probes[i], gallery) == probe_ids[i]);
    }
    return static_cast<double>(hits) / static_cast<double>(probes.size());
}

MetricReport evaluate_checkpoint(train::TrainState& state, const data::DatasetManifest& manifest, Protocol protocol,
                                 const EvalConfig& cfg) {
    cfg.validate();
    train::check_manifest(manifest, state.fhn_cfg, state.hrn_cfg);
    MetricReport report;
    report.protocol = protocol;
    const EvalSet set = load_eval_set(manifest, cfg.split, state.fhn_cfg.scale_factor);
    require_split(set, cfg.split);

    switch (protocol) {
        case Protocol::SrQuality: {
            require_fhn_trained(state, protocol);
            const Tensor sr = hallucinate_all(state, set, cfg.batch_size);
            std::vector<data::ImageTensor> sr_images;
            std::vector<data::ImageTensor> hr_images;
            std::vector<data::ImageTensor> bicubic_images;
            for (std::size_t i = 0; i < set.samples.size(); ++i) {
                sr_images.push_back(to_image(sr[static_cast<int64_t>(i)]));
                hr_images.push_back(set.samples[i].hr);
                bicubic_images.push_back(set.samples[i].coarse_input);
            }
            MetricReport bicubic;
            fill_quality(bicubic, bicubic_images, hr_images, cfg);
            fill_quality(report, sr_images, hr_images, cfg);
            report.bicubic_psnr = bicubic.psnr;
            report.bicubic_ssim = bicubic.ssim;
            report.mean_bicubic_psnr = bicubic.mean_psnr;
            report.mean_bicubic_ssim = bicubic.mean_ssim;
            report.bicubic_psnr_csd = bicubic.psnr_csd;
            report.bicubic_ssim_csd = bicubic.ssim_csd;
            break;
        }
        case Protocol::Verify: {
            require_fhn_trained(state, protocol);
            require_distilled(state, protocol);
            const EvalSet gallery_images = gallery_set(manifest, state.fhn_cfg.scale_factor);
            const auto pairs = checked_pairs(set, gallery_images, cfg);
            const Tensor sr = hallucinate_all(state, set, cfg.batch_size);
            const auto probes = embed_images(state, sr, Embedder::Composed, cfg.batch_size);
            const auto gallery = embed_images(state, stack_field(gallery_images, &data::PairSample::hr),
                                              Embedder::Teacher, cfg.batch_size);
            report.verification = verify_embeddings(probes, gallery, pairs, cfg.thresholds);
            break;
        }
        case Protocol::Identify: {
            require_fhn_trained(state, protocol);
            require_distilled(state, protocol);
            const Tensor sr = hallucinate_all(state, set, cfg.batch_size);
            const auto probes = embed_images(state, sr, Embedder::Composed, cfg.batch_size);
            report.rank1 = identification_rate(probes, identities_of(set), identity_gallery(state, manifest, cfg));
            break;
        }
        case Protocol::Ablate: {
            require_fhn_trained(state, protocol);
            require_distilled(state, protocol);
            report.ablation = ablation_rows(state, manifest, cfg);
            break;
        }
    }
    return report;
}

std::unique_ptr<train::TrainState> train_lr_kd_baseline(train::TrainState& state,
                                                        const data::DatasetManifest& manifest, int steps) {
    train::TrainConfig cfg = state.cfg;
    cfg.probe_source = train::ProbeSource::Bicubic;
    cfg.distill = true;
    cfg.steps = steps > 0 ? steps : state.cfg.steps;
    auto baseline = train::make_state(state.fhn_cfg, state.hrn_cfg, cfg);
    {
        torch::NoGradGuard guard;
        auto src = state.hrn->teacher->parameters();
        auto dst = baseline->hrn->teacher->parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i].copy_(src[i]);
        }
    }
    train::fit_state(*baseline, manifest);
    return baseline;
}

std::vector<AblationRow> ablation_rows(train::TrainState& state, const data::DatasetManifest& manifest,
                                       const EvalConfig& cfg, train::TrainState* lr_kd) {
    cfg.validate();
    std::unique_ptr<train::TrainState> owned;
    if (lr_kd == nullptr) {
        owned = train_lr_kd_baseline(state, manifest, cfg.ablation_baseline_steps);
        lr_kd = owned.get();
    }
    const EvalSet set = load_eval_set(manifest, cfg.split, state.fhn_cfg.scale_factor);
    require_split(set, cfg.split);
    const auto ids = identities_of(set);
    const EvalSet gallery_images = gallery_set(manifest, state.fhn_cfg.scale_factor);
    const auto pairs = checked_pairs(set, gallery_images, cfg);
    const auto id_gallery = identity_gallery(state, manifest, cfg);

    const Tensor hr = stack_field(set, &data::PairSample::hr);
    const Tensor bicubic = stack_field(set, &data::PairSample::coarse_input);
    const Tensor sr = hallucinate_all(state, set, cfg.batch_size);
    const auto gallery = embed_images(state, stack_field(gallery_images, &data::PairSample::hr), Embedder::Teacher,
                                      cfg.batch_size);

    auto row = [&](std::string name, std::string description, const std::vector<hrn::Embedding>& probes) {
        const auto v = verify_embeddings(probes, gallery, pairs, cfg.thresholds);
        return AblationRow{std::move(name), std::move(description), v.sweep.best_accuracy, v.sweep.best_threshold,
                           identification_rate(probes, ids, id_gallery)};
    };

    std::vector<AblationRow> rows;
    rows.push_back(row("hr_teacher", "teacher on HR probes (upper bound)",
                       embed_images(state, hr, Embedder::Teacher, cfg.batch_size)));
    rows.push_back(row("lr_teacher", "teacher on bicubic LR probes",
                       embed_images(state, bicubic, Embedder::Teacher, cfg.batch_size)));
    rows.push_back(row("lr_kd", "student distilled on bicubic LR probes",
                       embed_images(*lr_kd, bicubic, Embedder::Student, cfg.batch_size)));
    rows.push_back(row("fhn_teacher", "teacher on hallucinated probes",
                       embed_images(state, sr, Embedder::Teacher, cfg.batch_size)));
    rows.push_back(row("fhn_kd", "student on hallucinated probes",
                       embed_images(state, sr, Embedder::Student, cfg.batch_size)));
    rows.push_back(row("fhn_residual_kd", "student + assistant on hallucinated probes",
                       embed_images(state, sr, Embedder::Composed, cfg.batch_size)));
    return rows;
}

void write_report(const MetricReport& report, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << report.to_json().dump(2) << '\n';
}

}  // namespace rim::eval
