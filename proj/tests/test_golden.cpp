#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vars/evaluation.hpp"
#include "vars/service.hpp"
#include "vars/training.hpp"

// Regression checks against outputs recorded by tools/make_fixtures.sh.

using namespace vars;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = VARS_FIXTURES;

json read_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return json::parse(in);
}

void check_probabilities(const json& got, const json& want) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(std::abs(got[i].get<double>() - want[i].get<double>()) <= 1e-9);
}

void check_task(const json& got, const json& want) {
    check_probabilities(got["probabilities"], want["probabilities"]);
    REQUIRE(got["top2"].size() == want["top2"].size());
    for (std::size_t k = 0; k < want["top2"].size(); ++k) {
        CHECK(got["top2"][k]["label"] == want["top2"][k]["label"]);
        CHECK(std::abs(got["top2"][k]["confidence"].get<double>() - want["top2"][k]["confidence"].get<double>()) <= 1e-9);
    }
    CHECK(got["ground_truth"] == want["ground_truth"]);
}

}  // namespace

TEST_CASE("recorded checkpoint reproduces the recorded test metrics") {
    const Manifest m = load_manifest(kRoot / "dataset");
    const MvfModel model = load_checkpoint(kRoot / "model.mvfm");
    const json got = to_json(evaluate(model, m, Split::Test));
    const json want = read_json(kRoot / "golden" / "metrics.json");
    for (const char* task : {"foul", "offence"}) {
        INFO(task);
        REQUIRE(want.contains(task));
        for (const char* key : {"acc@1", "acc@2", "balanced_accuracy"})
            CHECK(std::abs(got[task][key].get<double>() - want[task][key].get<double>()) <= 1e-12);
        CHECK(got[task]["confusion"] == want[task]["confusion"]);
        CHECK(got[task]["absent_classes"] == want[task]["absent_classes"]);
        CHECK(got[task]["classes"] == want[task]["classes"]);
    }
}

TEST_CASE("recorded predictions through the service") {
    auto core = ServiceCore::open(kRoot / "dataset", {kRoot / "model.mvfm"});
    SUBCASE("all views") {
        const HttpResponse r = core->handle("POST", "/api/actions/A00000/predict", {}, "{}");
        REQUIRE(r.status == 200);
        const json got = json::parse(r.body), want = read_json(kRoot / "golden" / "predict_A00000.json");
        CHECK(got["clips"] == want["clips"]);
        CHECK(got["views"] == want["views"]);
        check_task(got["foul"], want["foul"]);
        check_task(got["offence"], want["offence"]);
    }
    SUBCASE("single replay view") {
        const HttpResponse r = core->handle("POST", "/api/actions/A00000/predict", {}, R"({"views":["R1"]})");
        REQUIRE(r.status == 200);
        const json got = json::parse(r.body), want = read_json(kRoot / "golden" / "predict_A00000_R1.json");
        CHECK(got["views"] == json::array({"R1"}));
        check_task(got["foul"], want["foul"]);
        check_task(got["offence"], want["offence"]);
    }
}

TEST_CASE("library prediction agrees with the recorded probabilities") {
    const Manifest m = load_manifest(kRoot / "dataset");
    const MvfModel model = load_checkpoint(kRoot / "model.mvfm");
    const auto samples = load_samples(m, m.actions.front().split, model.config());
    const auto it = std::find_if(samples.begin(), samples.end(), [](const Sample& s) { return s.action_id == "A00000"; });
    REQUIRE(it != samples.end());
    const Prediction p = predict(model, it->clips());
    const json want = read_json(kRoot / "golden" / "predict_A00000.json");
    check_probabilities(json(p.foul->probabilities), want["foul"]["probabilities"]);
    check_probabilities(json(p.offence->probabilities), want["offence"]["probabilities"]);
}
