#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "vars/dataset.hpp"
#include "vars/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int status;
    std::string output;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(VARS_CLI) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    std::array<char, 4096> buf;
    for (std::size_t n; (n = fread(buf.data(), 1, buf.size(), pipe)) > 0;) out.append(buf.data(), n);
    const int raw = pclose(pipe);
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

const std::string kSmall = "--n 24 --frames 52 --height 6 --width 8 --classes uniform --split 0.5,0.25,0.25";
const std::string kTinyModel = "--feature-dim 4 --hidden-dim 4 --epochs 2";

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run("").status == 1);
    CHECK(run("no-such-command").status == 1);
    CHECK(run("generate").status == 1);  // --out is required
    CHECK(run("generate --out /tmp/x --n notanumber").status == 1);
    CHECK(run("--help").status == 0);
}

TEST_CASE("generate, stats and split") {
    test::TempDir dir("cli_gen");
    const auto a = dir / "a", b = dir / "b";
    REQUIRE(run("generate --out " + a.string() + " " + kSmall + " --seed 3").status == 0);
    REQUIRE(run("generate --out " + b.string() + " " + kSmall + " --seed 3").status == 0);
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    const vars::Manifest m = vars::load_manifest(a);
    CHECK(m.actions.size() == 24);
    for (const auto& act : m.actions)
        for (const auto& clip : act.clips) CHECK(slurp(m.resolve(clip)) == slurp(b / clip.payload_path));

    const Run stats = run("stats --manifest " + a.string());
    CHECK(stats.status == 0);
    CHECK(stats.output.find("action_class") != std::string::npos);
    const Run stats_json = run("stats --json --manifest " + a.string());
    CHECK(json::parse(stats_json.output)["actions"] == 24);

    const Run split = run("split --manifest " + a.string() + " --seed 2 --fractions 1,0,0 --out " + (a / "s.json").string());
    INFO(split.output);
    REQUIRE(split.status == 0);
    for (const auto& act : vars::load_manifest(a / "s.json").actions) CHECK(act.split == vars::Split::Train);
    CHECK(run("split --manifest " + a.string() + " --fractions 0.5,0.5,0.5").status == 1);
    CHECK(run("split --manifest " + a.string() + " --out " + (dir / "elsewhere.json").string()).status == 1);

    SUBCASE("data errors exit with 2") {
        std::ofstream(dir / "bad.json") << "{\"format_version\": 1, \"dataset\": \"x\", \"actions\": [{]}";
        CHECK(run("stats --manifest " + (dir / "bad.json").string()).status == 2);
        CHECK(run("stats --manifest " + (dir / "missing").string()).status == 2);
    }
    SUBCASE("manifest defaults to MVF_DATA_DIR") {
        const Run r = run("stats --json");
        CHECK(r.status != 0);
        const std::string cmd = "MVF_DATA_DIR=" + a.string() + " " + VARS_CLI + " stats --json > " + (dir / "env.json").string();
        CHECK(std::system(cmd.c_str()) == 0);
        CHECK(json::parse(slurp(dir / "env.json"))["actions"] == 24);
    }
}

TEST_CASE("train, evaluate, predict and ablate") {
    test::TempDir dir("cli_train");
    const auto data = dir / "data", run_dir = dir / "run";
    REQUIRE(run("generate --out " + data.string() + " " + kSmall).status == 0);
    const Run tr = run("train --manifest " + data.string() + " --out " + run_dir.string() + " " + kTinyModel + " --encoder temporalconv");
    REQUIRE(tr.status == 0);
    for (const char* f : {"config.json", "checkpoint.mvfm", "last.mvfm", "history.json", "metrics.json", "tables/metrics.txt",
                          "confusion/foul.csv", "confusion/offence.csv"})
        CHECK_MESSAGE(fs::exists(run_dir / f), f);
    CHECK(json::parse(slurp(run_dir / "history.json")).size() == 2);
    CHECK(json::parse(slurp(run_dir / "config.json"))["model"]["encoder"] == "TemporalConv");
    CHECK(vars::load_checkpoint(run_dir / "checkpoint.mvfm").config().feature_dim == 4);

    const std::string ckpt = (run_dir / "checkpoint.mvfm").string();
    const auto eval_dir = dir / "eval";
    REQUIRE(run("evaluate --manifest " + data.string() + " --checkpoint " + ckpt + " --split test --out " + eval_dir.string()).status == 0);
    const json metrics = json::parse(slurp(eval_dir / "metrics.json"));
    CHECK(metrics.contains("foul"));
    CHECK(metrics["foul"]["acc@2"].get<double>() >= metrics["foul"]["acc@1"].get<double>());
    CHECK(run("evaluate --manifest " + data.string() + " --checkpoint " + ckpt + " --split sideways").status == 1);
    CHECK(run("evaluate --manifest " + data.string() + " --checkpoint " + (dir / "nope.mvfm").string()).status == 2);

    const Run pred = run("predict --manifest " + data.string() + " --checkpoint " + ckpt + " --action A00000 --views L");
    REQUIRE(pred.status == 0);
    const json p = json::parse(pred.output);
    CHECK(p["views"] == json::array({"L"}));
    CHECK(p["foul"]["top2"].size() == 2);
    CHECK(run("predict --manifest " + data.string() + " --checkpoint " + ckpt + " --action nope").status == 2);

    const Run views = run("ablate-views --manifest " + data.string() + " --checkpoint " + ckpt + " --split train --views L,L+R1");
    CHECK(views.status == 0);
    CHECK(views.output.find("L+R1") != std::string::npos);

    const auto temporal = dir / "temporal";
    const Run at = run("ablate-temporal --manifest " + data.string() + " --out " + temporal.string() + " --fps 5,8,12,16 " + kTinyModel);
    REQUIRE(at.status == 0);
    const std::string table = slurp(temporal / "tables" / "temporal.txt");
    std::istringstream lines(table);
    std::string header, context;
    std::getline(lines, header);
    std::getline(lines, context);
    CHECK(header.find("Frames per second") != std::string::npos);
    CHECK(context.find("Temporal context") != std::string::npos);
    for (const char* s : {"3.2s", "2.0s", "1.3s", "1.0s"}) CHECK(context.find(s) != std::string::npos);
    CHECK(json::parse(slurp(temporal / "temporal.json"))["rows"].size() == 4);
    CHECK(run("ablate-temporal --manifest " + data.string() + " --fps 10").status == 1);
}

TEST_CASE("grad-check") {
    const Run r = run("grad-check --encoder temporalconv --aggregation max --seed 4");
    CHECK(r.status == 0);
    CHECK(r.output.find("max relative error") != std::string::npos);
}
