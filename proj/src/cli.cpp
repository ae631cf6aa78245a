#include "rim/cli.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>

#include <CLI11.hpp>

#include "rim/checkpoint.hpp"
#include "rim/config.hpp"
#include "rim/errors.hpp"
#include "rim/evaluate.hpp"
#include "rim/image_io.hpp"
#include "rim/plot.hpp"
#include "rim/tensor_util.hpp"

namespace rim::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    int steps = 0;
    std::string domain_source;
    std::string e2e;
    std::string manifest;
    bool verbose = false;

    std::vector<CLI::Option*> seed_opts;
    std::vector<CLI::Option*> steps_opts;
};

bool given(const std::vector<CLI::Option*>& opts) {
    return std::any_of(opts.begin(), opts.end(), [](const CLI::Option* o) { return o->count() > 0; });
}

void add_common(CLI::App* app, CommonFlags& f) {
    app->add_option("--config", f.config, "JSON experiment config");
    f.seed_opts.push_back(app->add_option("--seed", f.seed, "master seed (overrides the config)"));
    app->add_option("--out", f.out, "output directory");
    f.steps_opts.push_back(app->add_option("--steps", f.steps, "training steps"));
    app->add_option("--domain-source", f.domain_source, "domain discriminator input")->check(CLI::IsMember({"sr", "coarse"}));
    app->add_option("--e2e-coupling", f.e2e, "student loss reaches the generator")->check(CLI::IsMember({"on", "off"}));
    app->add_option("--manifest", f.manifest, "dataset manifest (default <out>/data/manifest.jsonl)");
    app->add_flag("-v,--verbose", f.verbose, "progress on stderr");
}

/// Defaults, then the config file, then flags.
config::ExperimentConfig resolve(const CommonFlags& f) {
    config::ExperimentConfig cfg;
    if (!f.config.empty()) {
        if (!fs::exists(f.config)) {
            throw ValidationError("config file not found: " + f.config);
        }
        cfg = config::load(f.config);
    }
    if (given(f.seed_opts)) {
        cfg.seed = f.seed;
    }
    cfg.apply_seed();
    if (!f.out.empty()) {
        cfg.out_dir = f.out;
    }
    if (given(f.steps_opts)) {
        cfg.train.steps = f.steps;
    }
    if (!f.domain_source.empty()) {
        cfg.fhn.domain_source = fhn::parse_domain_source(f.domain_source);
    }
    if (!f.e2e.empty()) {
        cfg.train.e2e_coupling = f.e2e == "on";
    }
    if (!f.manifest.empty()) {
        cfg.manifest = f.manifest;
    }
    cfg.validate();
    return cfg;
}

data::DatasetManifest open_manifest(const config::ExperimentConfig& cfg) {
    const fs::path path = cfg.manifest_path();
    if (!fs::exists(path)) {
        throw ValidationError("manifest not found: " + path.string() + " (run synth-data first or pass --manifest)");
    }
    return data::load_manifest(path);
}

fs::path checkpoint_path(const config::ExperimentConfig& cfg, const std::string& flag) {
    const fs::path path = flag.empty() ? cfg.out_dir / "checkpoint.rimckpt" : fs::path(flag);
    if (!fs::exists(path)) {
        throw ValidationError("checkpoint not found: " + path.string());
    }
    return path;
}

void snapshot(const config::ExperimentConfig& cfg, const std::string& command) {
    config::write_snapshot(cfg, cfg.out_dir / ("config." + command + ".json"));
}

void write_json(const json& j, const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

/// An LR probe, either given at probe size or derived from an HR-size image.
torch::Tensor read_probe(const fs::path& path, const fhn::FhnConfig& cfg) {
    if (!fs::exists(path)) {
        throw ValidationError("image not found: " + path.string());
    }
    auto img = io::read_png_rgb(path);
    if (img.size2() == cfg.image_size) {
        img = data::bicubic_resize(img, cfg.lr_size());
    } else if (img.size2() != cfg.lr_size()) {
        throw ValidationError("probe " + path.string() + " is " + std::to_string(img.height()) + "x" +
                              std::to_string(img.width()) + "; expected " + std::to_string(cfg.lr_size().height) +
                              "x" + std::to_string(cfg.lr_size().width) + " (or full size)");
    }
    return to_tensor(img).unsqueeze(0);
}

plot::Series csd_series(const std::string& label, const std::vector<eval::CsdPoint>& curve) {
    plot::Series s{label, {}, {}};
    for (const auto& p : curve) {
        s.x.push_back(p.threshold);
        s.y.push_back(p.fraction);
    }
    return s;
}

// ---------------------------------------------------------------------------

int run_synth(const config::ExperimentConfig& cfg, std::ostream& out) {
    const fs::path dir = cfg.manifest.empty() ? cfg.out_dir / "data" : fs::path(cfg.manifest).parent_path();
    const auto manifest = data::synth_dataset(cfg.synth, dir);
    snapshot(cfg, "synth-data");
    out << "wrote " << manifest.records.size() << " images to " << (dir / "manifest.jsonl").string() << '\n';
    return kExitOk;
}

int run_train(const config::ExperimentConfig& cfg, bool verbose, std::ostream& out) {
    const auto manifest = open_manifest(cfg);
    snapshot(cfg, "train");
    const auto result = train::fit(manifest, cfg.fhn, cfg.hrn, cfg.train, {cfg.out_dir, verbose});

    plot::LinePlot losses{"Training losses", "step", "loss", {}, true};
    for (std::size_t k = 0; k < train::StepReport::kNames.size(); ++k) {
        plot::Series s{train::StepReport::kNames[k], {}, {}};
        for (std::size_t i = 0; i < result.log.size(); ++i) {
            const auto& r = result.log[i];
            const double values[] = {r.domain, r.pixel, r.landmark, r.parsing, r.student_kd, r.assistant_kd};
            s.x.push_back(static_cast<double>(i + 1));
            s.y.push_back(values[k]);
        }
        losses.series.push_back(std::move(s));
    }
    plot::write_svg(losses, cfg.out_dir / "plots" / "loss.svg");

    out << "trained " << result.state->step << " steps; checkpoint " << (cfg.out_dir / "checkpoint.rimckpt").string()
        << '\n';
    if (!result.log.empty()) {
        out << "final losses " << result.log.back().to_json(result.state->step).dump() << '\n';
    }
    return kExitOk;
}

int run_eval(const config::ExperimentConfig& cfg, eval::Protocol protocol, const std::string& ckpt_flag,
             std::ostream& out) {
    const auto manifest = open_manifest(cfg);
    const auto ckpt = checkpoint_path(cfg, ckpt_flag);
    snapshot(cfg, protocol == eval::Protocol::Ablate ? "ablate" : "eval");
    auto state = checkpoint::load_checkpoint(ckpt);
    const auto report = eval::evaluate_checkpoint(*state, manifest, protocol, cfg.eval);
    const fs::path report_path = cfg.out_dir / ("report_" + eval::to_string(protocol) + ".json");
    eval::write_report(report, report_path);

    out << std::fixed << std::setprecision(4);
    switch (protocol) {
        case eval::Protocol::SrQuality:
            plot::write_svg({"PSNR cumulative score distribution", "PSNR threshold (dB)", "fraction of images >= threshold",
                             {csd_series("hallucinated", report.psnr_csd), csd_series("bicubic", report.bicubic_psnr_csd)}},
                            cfg.out_dir / "plots" / "csd_psnr.svg");
            plot::write_svg({"SSIM cumulative score distribution", "SSIM threshold", "fraction of images >= threshold",
                             {csd_series("hallucinated", report.ssim_csd), csd_series("bicubic", report.bicubic_ssim_csd)}},
                            cfg.out_dir / "plots" / "csd_ssim.svg");
            out << "mean PSNR " << report.mean_psnr << " dB (bicubic " << report.mean_bicubic_psnr << ")\n";
            out << "mean SSIM " << report.mean_ssim << " (bicubic " << report.mean_bicubic_ssim << ")\n";
            break;
        case eval::Protocol::Verify: {
            plot::Series s{"hallucinated + residual KD", {}, {}};
            for (const auto& p : report.verification->sweep.table) {
                s.x.push_back(p.threshold);
                s.y.push_back(p.accuracy);
            }
            plot::write_svg({"Verification accuracy", "cosine distance threshold", "accuracy", {s}},
                            cfg.out_dir / "plots" / "verification.svg");
            out << "best accuracy " << report.verification->sweep.best_accuracy << " at threshold "
                << report.verification->sweep.best_threshold << '\n';
            break;
        }
        case eval::Protocol::Identify:
            out << "rank-1 identification " << *report.rank1 << '\n';
            break;
        case eval::Protocol::Ablate:
            for (const auto& row : report.ablation) {
                out << std::left << std::setw(18) << row.name << " accuracy " << row.accuracy << "  rank-1 "
                    << row.rank1 << "  (" << row.description << ")\n";
            }
            break;
    }
    out << "report " << report_path.string() << '\n';
    return kExitOk;
}

int run_hallucinate(const config::ExperimentConfig& cfg, const std::string& ckpt_flag, const std::string& input,
                    std::string output, std::ostream& out) {
    auto state = checkpoint::load_checkpoint(checkpoint_path(cfg, ckpt_flag));
    const auto lr = read_probe(input, state->fhn_cfg);
    snapshot(cfg, "hallucinate");
    torch::Tensor sr;
    {
        torch::NoGradGuard guard;
        sr = state->fhn->hallucinate(lr).sr;
    }
    if (output.empty()) {
        output = (cfg.out_dir / "hallucinated.png").string();
    }
    if (fs::path(output).has_parent_path()) {
        fs::create_directories(fs::path(output).parent_path());
    }
    io::write_png(output, to_image(sr));
    out << "wrote " << output << '\n';
    return kExitOk;
}

/// Best threshold of an earlier verification report, or `fallback`.
double calibrated_threshold(const fs::path& report_path, double fallback) {
    std::ifstream in(report_path);
    if (!in) {
        return fallback;
    }
    const auto j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("verification")) {
        return fallback;
    }
    return j["verification"].value("best_threshold", fallback);
}

int run_verify(const config::ExperimentConfig& cfg, const std::string& ckpt_flag, const std::string& probe_path,
               const std::string& gallery_path, double threshold, std::ostream& out) {
    auto state = checkpoint::load_checkpoint(checkpoint_path(cfg, ckpt_flag));
    const auto lr = read_probe(probe_path, state->fhn_cfg);
    if (!fs::exists(gallery_path)) {
        throw ValidationError("image not found: " + gallery_path);
    }
    const auto gallery_img = io::read_png_rgb(gallery_path);
    if (gallery_img.size2() != state->fhn_cfg.image_size) {
        throw ValidationError("gallery image " + gallery_path + " must be " +
                              std::to_string(state->fhn_cfg.image_size.height) + "x" +
                              std::to_string(state->fhn_cfg.image_size.width));
    }
    snapshot(cfg, "verify");
    torch::Tensor sr;
    {
        torch::NoGradGuard guard;
        sr = state->fhn->hallucinate(lr).sr;
    }
    const auto probe = eval::embed_images(*state, sr, eval::Embedder::Composed, 1).front();
    const auto gallery =
        eval::embed_images(*state, to_tensor(gallery_img).unsqueeze(0), eval::Embedder::Teacher, 1).front();
    const auto v = hrn::cosine_verify(probe, gallery, threshold);
    const json result = {{"same", v.same}, {"distance", v.distance}, {"threshold", threshold}};
    write_json(result, cfg.out_dir / "verify.json");
    out << result.dump() << '\n';
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-resolution face recognition: hallucination + residual distillation", "rim"};
    app.require_subcommand(1);
    app.fallthrough(false);

    CommonFlags flags;
    std::string checkpoint;
    std::string protocol = "sr-quality";
    std::string input;
    std::string output;
    std::string probe;
    std::string gallery;
    double threshold = 0.5;

    auto* synth = app.add_subcommand("synth-data", "write the synthetic face dataset to <out>/data");
    auto* train_cmd = app.add_subcommand("train", "train on a manifest; writes checkpoint, loss log and plots");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
    auto* ablate = app.add_subcommand("ablate", "component ablation (toy verification accuracy per combination)");
    auto* hallucinate = app.add_subcommand("hallucinate", "super-resolve one LR image");
    auto* verify = app.add_subcommand("verify", "same/different decision for an LR probe and an HR gallery image");
    for (auto* sub : {synth, train_cmd, eval_cmd, ablate, hallucinate, verify}) {
        add_common(sub, flags);
    }
    for (auto* sub : {eval_cmd, ablate, hallucinate, verify}) {
        sub->add_option("--checkpoint", checkpoint, "checkpoint (default <out>/checkpoint.rimckpt)");
    }
    eval_cmd->add_option("--protocol", protocol, "sr-quality | verify | identify | ablate")
        ->check(CLI::IsMember({"sr-quality", "verify", "identify", "ablate"}));
    hallucinate->add_option("--input", input, "LR (or full-size) PNG")->required();
    hallucinate->add_option("--output", output, "SR PNG (default <out>/hallucinated.png)");
    verify->add_option("--probe", probe, "LR (or full-size) probe PNG")->required();
    verify->add_option("--gallery", gallery, "full-size gallery PNG")->required();
    auto* threshold_opt = verify->add_option("--threshold", threshold,
                                             "cosine distance threshold (default: best threshold in "
                                             "<out>/report_verify.json, else 0.5)")
                              ->check(CLI::Range(0.0, 2.0));

    std::vector<const char*> argv{"rim"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitValidation;
    }

    try {
        const auto cfg = resolve(flags);
        if (*synth) {
            return run_synth(cfg, out);
        }
        if (*train_cmd) {
            return run_train(cfg, flags.verbose, out);
        }
        if (*eval_cmd) {
            return run_eval(cfg, eval::parse_protocol(protocol), checkpoint, out);
        }
        if (*ablate) {
            return run_eval(cfg, eval::Protocol::Ablate, checkpoint, out);
        }
        if (*hallucinate) {
            return run_hallucinate(cfg, checkpoint, input, output, out);
        }
        if (threshold_opt->count() == 0) {
            threshold = calibrated_threshold(cfg.out_dir / "report_verify.json", threshold);
        }
        return run_verify(cfg, checkpoint, probe, gallery, threshold, out);
    } catch (const NonFiniteLossError& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const IncompatibleError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace rim::cli
