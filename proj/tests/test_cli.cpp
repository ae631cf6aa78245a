#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "rim/cli.hpp"
#include "rim/config.hpp"
#include "rim/errors.hpp"
#include "support.hpp"

using namespace rim;
using rim::test::TempDir;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    Run r;
    r.code = cli::dispatch(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

json tiny_config() {
    return json::parse(R"({
      "data": {"n_identities": 4, "per_identity": 4, "test_per_identity": 1, "size": [32, 32]},
      "fhn": {"image_size": [32, 32], "prior_resolution": [8, 8], "coarse_channels": 8, "coarse_blocks": 1,
              "base_channels": 8, "path_blocks": 1, "integrator_channels": 8, "integrator_blocks": 1,
              "domain_channels": 8, "domain_layers": 3, "domain_dim": 16},
      "hrn": {"image_size": [32, 32], "teacher_widths": [8, 16, 16, 32], "student_widths": [4, 8, 16, 16],
              "assistant_widths": [4, 8, 8, 16]},
      "train": {"batch_size": 4, "steps": 3, "checkpoint_every": 0},
      "eval": {"ablation_baseline_steps": 2}
    })");
}

std::string write_config(const TempDir& dir, const json& j) {
    const auto path = dir / "config.json";
    std::ofstream(path) << j.dump(2);
    return path.string();
}

}  // namespace

TEST(Cli, HelpExitsZero) {
    const auto r = run({"--help"});
    EXPECT_EQ(r.code, cli::kExitOk);
    EXPECT_NE(r.out.find("synth-data"), std::string::npos);
    EXPECT_EQ(run({"train", "--help"}).code, cli::kExitOk);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
    const auto r = run({"frobnicate"});
    EXPECT_EQ(r.code, cli::kExitValidation);
    EXPECT_FALSE(r.err.empty());
    EXPECT_EQ(run({}).code, cli::kExitValidation);
}

TEST(Cli, MissingConfigNamesPath) {
    TempDir dir;
    const auto missing = (dir / "nope.json").string();
    const auto r = run({"train", "--config", missing, "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, cli::kExitValidation);
    EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST(Cli, BadConfigKeyNamed) {
    TempDir dir;
    auto j = tiny_config();
    j["train"]["learning_rate"] = 0.1;
    const auto r = run({"synth-data", "--config", write_config(dir, j), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, cli::kExitValidation);
    EXPECT_NE(r.err.find("train.learning_rate"), std::string::npos) << r.err;
}

TEST(Cli, InvalidFlagValueRejected) {
    TempDir dir;
    EXPECT_EQ(run({"train", "--domain-source", "hr", "--out", (dir / "o").string()}).code, cli::kExitValidation);
    EXPECT_EQ(run({"train", "--e2e-coupling", "maybe"}).code, cli::kExitValidation);
}

TEST(Cli, MissingManifestOrCheckpointIsValidationError) {
    TempDir dir;
    const auto cfg = write_config(dir, tiny_config());
    const auto out = (dir / "empty").string();
    const auto t = run({"train", "--config", cfg, "--out", out});
    EXPECT_EQ(t.code, cli::kExitValidation);
    EXPECT_NE(t.err.find("manifest"), std::string::npos) << t.err;
    const auto e = run({"eval", "--config", cfg, "--out", out});
    EXPECT_EQ(e.code, cli::kExitValidation);
}

TEST(Cli, SynthTrainEvalPipeline) {
    TempDir dir;
    const auto cfg = write_config(dir, tiny_config());
    const auto out = dir / "run";
    ASSERT_EQ(run({"synth-data", "--config", cfg, "--out", out.string()}).code, 0);
    EXPECT_TRUE(std::filesystem::exists(out / "data" / "manifest.jsonl"));
    EXPECT_TRUE(std::filesystem::exists(out / "config.synth-data.json"));

    const auto t = run({"train", "--config", cfg, "--out", out.string()});
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_TRUE(std::filesystem::exists(out / "checkpoint.rimckpt"));
    EXPECT_TRUE(std::filesystem::exists(out / "loss_log.jsonl"));
    EXPECT_TRUE(std::filesystem::exists(out / "plots" / "loss.svg"));
    EXPECT_TRUE(std::filesystem::exists(out / "config.train.json"));

    const auto e = run({"eval", "--config", cfg, "--out", out.string()});
    ASSERT_EQ(e.code, 0) << e.err;
    std::ifstream report(out / "report_sr-quality.json");
    ASSERT_TRUE(report.good());
    const auto j = json::parse(report);
    EXPECT_EQ(j["psnr"].size(), 4u);
    EXPECT_TRUE(std::filesystem::exists(out / "plots" / "csd_psnr.svg"));
    EXPECT_TRUE(std::filesystem::exists(out / "plots" / "csd_ssim.svg"));

    ASSERT_EQ(run({"eval", "--config", cfg, "--out", out.string(), "--protocol", "verify"}).code, 0);
    EXPECT_TRUE(std::filesystem::exists(out / "report_verify.json"));
    EXPECT_TRUE(std::filesystem::exists(out / "plots" / "verification.svg"));
    ASSERT_EQ(run({"eval", "--config", cfg, "--out", out.string(), "--protocol", "identify"}).code, 0);
    ASSERT_EQ(run({"ablate", "--config", cfg, "--out", out.string()}).code, 0);
    std::ifstream ablation(out / "report_ablate.json");
    EXPECT_EQ(json::parse(ablation)["ablation"].size(), 6u);
    EXPECT_TRUE(std::filesystem::exists(out / "config.ablate.json"));

    const auto lr = (out / "data" / "images" / "id000_00.png").string();
    const auto h = run({"hallucinate", "--config", cfg, "--out", out.string(), "--input", lr});
    ASSERT_EQ(h.code, 0) << h.err;
    EXPECT_TRUE(std::filesystem::exists(out / "hallucinated.png"));
    const auto v = run({"verify", "--config", cfg, "--out", out.string(), "--probe", lr, "--gallery", lr});
    ASSERT_EQ(v.code, 0) << v.err;
    std::ifstream verdict(out / "verify.json");
    const auto vj = json::parse(verdict);
    EXPECT_TRUE(vj.contains("distance"));
    EXPECT_TRUE(vj.contains("same"));
    std::ifstream verify_report(out / "report_verify.json");
    EXPECT_EQ(vj["threshold"], json::parse(verify_report)["verification"]["best_threshold"]);
    EXPECT_TRUE(std::filesystem::exists(out / "config.verify.json"));
    EXPECT_TRUE(std::filesystem::exists(out / "config.hallucinate.json"));
}

TEST(Cli, FlagsOverrideConfig) {
    TempDir dir;
    const auto cfg = write_config(dir, tiny_config());
    const auto out = dir / "run";
    ASSERT_EQ(run({"synth-data", "--config", cfg, "--out", out.string(), "--seed", "5"}).code, 0);
    ASSERT_EQ(run({"train", "--config", cfg, "--out", out.string(), "--seed", "5", "--steps", "2",
                   "--domain-source", "coarse", "--e2e-coupling", "on"})
                  .code,
              0);
    std::ifstream in(out / "config.train.json");
    const auto j = json::parse(in);
    EXPECT_EQ(j["seed"], 5);
    EXPECT_EQ(j["train"]["seed"], 5);
    EXPECT_EQ(j["train"]["steps"], 2);
    EXPECT_EQ(j["train"]["e2e_coupling"], true);
    EXPECT_EQ(j["fhn"]["domain_source"], "coarse");
}

TEST(Cli, IdenticalRunsIdenticalArtifacts) {
    TempDir dir;
    const auto cfg = write_config(dir, tiny_config());
    for (const char* name : {"a", "b"}) {
        const auto out = (dir / name).string();
        ASSERT_EQ(run({"synth-data", "--config", cfg, "--out", out}).code, 0);
        ASSERT_EQ(run({"train", "--config", cfg, "--out", out, "--steps", "2"}).code, 0);
        ASSERT_EQ(run({"eval", "--config", cfg, "--out", out}).code, 0);
    }
    for (const char* file : {"checkpoint.rimckpt", "loss_log.jsonl", "report_sr-quality.json", "plots/loss.svg",
                             "data/manifest.jsonl"}) {
        EXPECT_EQ(test::read_bytes(dir / "a" / file), test::read_bytes(dir / "b" / file)) << file;
    }
}

// ---------------------------------------------------------------------------

TEST(Config, RoundTripsThroughJson) {
    config::ExperimentConfig a;
    a.seed = 12;
    a.train.steps = 77;
    a.train.schedule.student = 3;
    a.fhn.domain_source = fhn::DomainSource::Coarse;
    a.eval.thresholds = {0.1, 0.2};
    config::ExperimentConfig b;
    config::merge(b, config::to_json(a));
    EXPECT_EQ(config::to_json(a).dump(), config::to_json(b).dump());
}

TEST(Config, ApplySeedPropagates) {
    config::ExperimentConfig c;
    c.seed = 42;
    c.apply_seed();
    EXPECT_EQ(c.synth.seed, 42u);
    EXPECT_EQ(c.train.seed, 42u);
    EXPECT_EQ(c.eval.pair_seed, 42u);
}

TEST(Config, WrongTypeNamesKey) {
    config::ExperimentConfig c;
    try {
        config::merge(c, json::parse(R"({"fhn": {"base_channels": "wide"}})"));
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("fhn.base_channels"), std::string::npos) << e.what();
    }
}

TEST(Config, MalformedFileRejected) {
    TempDir dir;
    std::ofstream(dir / "bad.json") << "{\"train\": ";
    EXPECT_THROW(config::load(dir / "bad.json"), Error);
    EXPECT_THROW(config::load(dir / "missing.json"), IoError);
}
