#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "support.hpp"
#include "vars/dataset.hpp"
#include "vars/errors.hpp"
#include "vars/synthgen.hpp"
#include "vars/tensor.hpp"

using namespace vars;
using nlohmann::json;

namespace {

json clip_json(const std::string& id, const std::string& camera) {
    return json{{"clip_id", id},   {"camera", camera}, {"frame_count", 16}, {"fps", 16.0},
                {"height", 2},     {"width", 3},       {"offset_frames", 0}, {"replay_speed", 1.0},
                {"contact_frame", 8}, {"payload", "clips/" + id + ".mvfc"}};
}

json annotation_json() { return to_json(Annotation{}); }

json two_action_manifest() {
    json actions = json::array();
    for (const char* id : {"a0", "a1"})
        actions.push_back(json{{"action_id", id},
                               {"split", "Train"},
                               {"annotation", annotation_json()},
                               {"clips", json::array({clip_json(std::string(id) + "_l", "Live"),
                                                      clip_json(std::string(id) + "_r", "Replay")})}});
    return json{{"format_version", 1}, {"dataset", "tiny"}, {"base_dir", "."}, {"actions", actions}};
}

LoadOptions no_payloads() { return LoadOptions{false}; }

Manifest parse(const json& j) { return parse_manifest(j.dump(2), ".", no_payloads()); }

template <typename F>
ValidationError validation_error(F&& f) {
    try {
        f();
    } catch (const ValidationError& e) {
        return e;
    }
    FAIL("expected ValidationError");
    throw;
}

Annotation offence(int severity) {
    Annotation a;
    a.offence = Offence::Offence;
    a.severity = severity;
    return a;
}

GenConfig small_config(std::size_t n) {
    GenConfig c;
    c.n_actions = n;
    c.frames_per_clip = 16;
    c.height = 4;
    c.width = 6;
    return c;
}

}  // namespace

TEST_CASE("manifest loading") {
    SUBCASE("well-formed two-action file") {
        const Manifest m = parse(two_action_manifest());
        CHECK(m.actions.size() == 2);
        CHECK(m.actions[0].clips[0].camera == CameraKind::Live);
        CHECK(m.actions[1].clips[1].contact_frame == 8u);
        CHECK(m.find("a1") != nullptr);
        CHECK(m.find("zz") == nullptr);
    }
    SUBCASE("a single clip breaks the two-view rule") {
        json j = two_action_manifest();
        j["actions"][1]["clips"].erase(1);
        const ValidationError e = validation_error([&] { parse(j); });
        CHECK(e.action_id() == "a1");
        CHECK(e.field() == "clips");
        CHECK(e.rule().find("at least two views") != std::string::npos);
    }
    SUBCASE("five clips break the four-view rule") {
        json j = two_action_manifest();
        for (int k = 0; k < 3; ++k) j["actions"][0]["clips"].push_back(clip_json("x" + std::to_string(k), "Replay"));
        CHECK(validation_error([&] { parse(j); }).rule().find("at most four") != std::string::npos);
    }
    SUBCASE("Under with Arm breaks the conditional property") {
        json j = two_action_manifest();
        j["actions"][0]["annotation"]["bodypart"] = "Under";
        j["actions"][0]["annotation"]["upper_body_part"] = "Arm";
        const ValidationError e = validation_error([&] { parse(j); });
        CHECK(e.action_id() == "a0");
        CHECK(e.field() == "annotation.upper_body_part");
        CHECK(e.rule().find("conditional property") != std::string::npos);
    }
    SUBCASE("Upper without a body part is also rejected") {
        json j = two_action_manifest();
        j["actions"][0]["annotation"]["bodypart"] = "Upper";
        CHECK(validation_error([&] { parse(j); }).field() == "annotation.upper_body_part");
    }
    SUBCASE("handball offence without handball") {
        json j = two_action_manifest();
        j["actions"][1]["annotation"]["handball_offence"] = "Yes";
        CHECK(validation_error([&] { parse(j); }).field() == "annotation.handball_offence");
    }
    SUBCASE("duplicate action ids") {
        json j = two_action_manifest();
        j["actions"][1]["action_id"] = "a0";
        j["actions"][1]["clips"][0]["clip_id"] = "other_l";
        CHECK(validation_error([&] { parse(j); }).field() == "action_id");
    }
    SUBCASE("clip invariants") {
        json j = two_action_manifest();
        j["actions"][0]["clips"][1]["frame_count"] = 15;
        CHECK(validation_error([&] { parse(j); }).field() == "clips[1].frame_count");
        j = two_action_manifest();
        j["actions"][0]["clips"][1]["contact_frame"] = 16;
        CHECK(validation_error([&] { parse(j); }).field() == "clips[1].contact_frame");
        j = two_action_manifest();
        j["actions"][0]["clips"][1]["replay_speed"] = 0.0;
        CHECK(validation_error([&] { parse(j); }).field() == "clips[1].replay_speed");
        j = two_action_manifest();
        j["actions"][0]["clips"][1]["camera"] = "Live";
        j["actions"][0]["clips"][0]["camera"] = "Replay";
        CHECK(validation_error([&] { parse(j); }).field() == "clips[1].camera");
    }
    SUBCASE("severity outside 1..5") {
        json j = two_action_manifest();
        j["actions"][0]["annotation"]["severity"] = 6;
        CHECK(validation_error([&] { parse(j); }).field() == "annotation.severity");
    }
    SUBCASE("parse errors carry line and field") {
        try {
            parse_manifest("{\n  \"format_version\": 1,\n  \"dataset\": oops\n}", ".", no_payloads());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 3);
        }
        json j = two_action_manifest();
        j["actions"][0]["annotation"]["offence"] = "Maybe";
        try {
            parse(j);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.field() == "actions[0].annotation.offence");
        }
        j = two_action_manifest();
        j["actions"][1]["clips"][0].erase("fps");
        try {
            parse(j);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.field() == "actions[1].clips[0].fps");
        }
    }
    SUBCASE("missing annotation is allowed") {
        json j = two_action_manifest();
        j["actions"][0]["annotation"] = nullptr;
        CHECK_FALSE(parse(j).actions[0].annotation.has_value());
    }
    SUBCASE("unresolvable payloads are rejected when checked") {
        test::TempDir dir("manifest");
        std::ofstream(dir / "manifest.json") << two_action_manifest().dump();
        CHECK_THROWS_AS(load_manifest(dir.path()), ValidationError);
        CHECK(load_manifest(dir.path(), no_payloads()).actions.size() == 2);
    }
}

TEST_CASE("manifest save then load is value-identical") {
    test::TempDir dir("roundtrip");
    Manifest m = plan_dataset(small_config(40));
    m.actions[3].annotation.reset();
    m.actions[5].revision = 7;
    m.actions[6].clips[1].contact_frame.reset();
    m.root = dir.path();
    save_manifest(m, dir / "manifest.json");
    const Manifest back = load_manifest(dir.path(), no_payloads());
    CHECK(back.format_version == m.format_version);
    CHECK(back.dataset == m.dataset);
    CHECK(back.base_dir == m.base_dir);
    REQUIRE(back.actions.size() == m.actions.size());
    for (std::size_t i = 0; i < m.actions.size(); ++i) CHECK(back.actions[i] == m.actions[i]);
    CHECK_FALSE(std::filesystem::exists(dir / "manifest.json.tmp"));
}

TEST_CASE("MVFC payloads") {
    test::TempDir dir("mvfc");
    Rng rng(5);
    std::vector<float> values(16 * 2 * 3);
    for (float& v : values) v = static_cast<float>(rng.uniform(0.0, 1.0));
    values[0] = 0.0f;
    values[1] = 1.0f;
    const auto file = dir / "c.mvfc";
    write_clip_frames(file, 16, 2, 3, values);

    SUBCASE("round trip is bitwise identical") {
        const Tensor t = read_clip_frames(file);
        CHECK(t.shape() == Shape{16, 2, 3});
        for (std::size_t i = 0; i < values.size(); ++i) CHECK(static_cast<float>(t[i]) == values[i]);
        std::ifstream in(file, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        CHECK(bytes.size() == 20 + 4 * values.size());
        CHECK(bytes.substr(0, 4) == "MVFC");
        CHECK(static_cast<unsigned char>(bytes[4]) == 1);
        CHECK(static_cast<unsigned char>(bytes[8]) == 16);
        CHECK(static_cast<unsigned char>(bytes[12]) == 2);
        CHECK(static_cast<unsigned char>(bytes[16]) == 3);
    }
    SUBCASE("truncation is a format error") {
        std::filesystem::resize_file(file, 20 + 4 * values.size() - 2);
        CHECK_THROWS_AS(read_clip_frames(file), FormatError);
        std::filesystem::resize_file(file, 10);
        CHECK_THROWS_AS(read_clip_frames(file), FormatError);
    }
    SUBCASE("bad magic") {
        std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
        f.write("MVFX", 4);
        f.close();
        CHECK_THROWS_AS(read_clip_frames(file), FormatError);
    }
    SUBCASE("header disagreeing with the manifest names both values") {
        Manifest m;
        m.root = dir.path();
        ClipMeta meta;
        meta.clip_id = "c";
        meta.frame_count = 20;
        meta.height = 2;
        meta.width = 3;
        meta.payload_path = "c.mvfc";
        try {
            load_clip_frames(m, meta);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("frame_count") != std::string::npos);
            CHECK(msg.find("16") != std::string::npos);
            CHECK(msg.find("20") != std::string::npos);
        }
        meta.frame_count = 16;
        CHECK(load_clip_frames(m, meta).shape() == Shape{16, 2, 3});
    }
    SUBCASE("out-of-range pixels are refused on write") {
        values[2] = 1.5f;
        CHECK_THROWS_AS(write_clip_frames(dir / "bad.mvfc", 16, 2, 3, values), DomainError);
        CHECK_THROWS_AS(write_clip_frames(dir / "bad.mvfc", 16, 2, 4, values), ShapeError);
    }
}

TEST_CASE("task label mapping") {
    Annotation a;
    a.action_class = ActionClass::Tackling;
    CHECK(map_task1(a) == Task1Label::Tackling);
    a.action_class = ActionClass::Dive;
    CHECK(map_task1(a) == Task1Label::Dive);
    a.action_class = ActionClass::DontKnow;
    CHECK_FALSE(map_task1(a).has_value());

    CHECK(map_task2(offence(1)) == Task2Label::OffenceNoCard);
    CHECK(map_task2(offence(3)) == Task2Label::OffenceYellow);
    CHECK(map_task2(offence(5)) == Task2Label::OffenceRed);
    CHECK_FALSE(map_task2(offence(4)).has_value());
    CHECK_FALSE(map_task2(offence(2)).has_value());
    for (int s = 1; s <= 5; ++s) {
        Annotation n = offence(s);
        n.offence = Offence::NoOffence;
        CHECK(map_task2(n) == Task2Label::NoOffence);
        n.offence = Offence::Between;
        CHECK_FALSE(map_task2(n).has_value());
    }

    SUBCASE("task 1 is the identity on its eight classes") {
        std::size_t absent = 0;
        for (std::size_t c = 0; c < enum_count<ActionClass>(); ++c) {
            Annotation x;
            x.action_class = static_cast<ActionClass>(c);
            const auto label = map_task1(x);
            if (!label) {
                ++absent;
                continue;
            }
            CHECK(to_action_class(*label) == x.action_class);
            CHECK(to_string(*label) == to_string(x.action_class));
        }
        CHECK(absent == 1);
    }
    SUBCASE("task 2 is absent exactly for Between and borderline severities") {
        for (std::size_t o = 0; o < enum_count<Offence>(); ++o)
            for (int s = 1; s <= 5; ++s) {
                Annotation x = offence(s);
                x.offence = static_cast<Offence>(o);
                const bool expect_absent = x.offence == Offence::Between || (x.offence == Offence::Offence && (s == 2 || s == 4));
                CHECK(map_task2(x).has_value() == !expect_absent);
            }
    }
    SUBCASE("mapped plus excluded covers a manifest") {
        Manifest m = plan_dataset(small_config(300));
        Rng rng(1);
        for (FoulAction& act : m.actions) {
            act.annotation->offence = static_cast<Offence>(rng.below(3));
            act.annotation->severity = 1 + static_cast<int>(rng.below(5));
            if (rng.below(10) == 0) act.annotation->action_class = ActionClass::DontKnow;
        }
        std::size_t mapped1 = 0, excluded1 = 0, mapped2 = 0, excluded2 = 0;
        for (const FoulAction& act : m.actions) {
            (map_task1(*act.annotation) ? mapped1 : excluded1)++;
            (map_task2(*act.annotation) ? mapped2 : excluded2)++;
        }
        CHECK(mapped1 + excluded1 == m.actions.size());
        CHECK(mapped2 + excluded2 == m.actions.size());
        CHECK(excluded1 > 0);
        CHECK(excluded2 > 0);
    }
}

TEST_CASE("dataset statistics") {
    GenConfig cfg = small_config(800);
    cfg.class_distribution = uniform_class_distribution();
    const Manifest m = plan_dataset(cfg);
    const StatsReport r = dataset_stats(m);
    CHECK(r.actions == 800);
    CHECK(r.annotated == 800);

    SUBCASE("uniform synthetic set gives 12.5% per class") {
        for (std::size_t c = 0; c < kTask1Classes; ++c)
            CHECK(r.percent("action_class", to_string(static_cast<Task1Label>(c))) == doctest::Approx(12.5));
        CHECK(r.percent("action_class", "DontKnow") == 0.0);
    }
    SUBCASE("percentages per property sum to 100") {
        CHECK(r.properties.size() == 10);
        for (const PropertyDistribution& p : r.properties) {
            double total = 0.0;
            for (const auto& [value, pct] : p.percent) total += pct;
            CHECK(std::abs(total - 100.0) <= 0.05);
        }
    }
    SUBCASE("counts agree with a direct tally") {
        std::size_t clips = 0, no_offence = 0;
        std::map<std::size_t, std::size_t> views;
        for (const FoulAction& a : m.actions) {
            clips += a.clips.size();
            views[a.clips.size()]++;
            no_offence += a.annotation->offence == Offence::NoOffence;
        }
        CHECK(r.mean_clips == doctest::Approx(static_cast<double>(clips) / 800.0));
        CHECK(r.referee_error_rate == doctest::Approx(static_cast<double>(no_offence) / 800.0));
        CHECK(r.views_histogram == std::vector<std::pair<std::size_t, std::size_t>>(views.begin(), views.end()));
        std::size_t per_class = 0;
        for (const ClassSeverity& cs : r.per_class) per_class += cs.actions;
        CHECK(per_class == 800);
    }
    SUBCASE("report renders") {
        CHECK(to_json(r)["actions"] == 800);
        CHECK(render_stats_table(r).find("action_class") != std::string::npos);
    }
    CHECK_THROWS_AS(dataset_stats(Manifest{}), DomainError);
}

TEST_CASE("split assignment") {
    const Manifest base = plan_dataset(small_config(1000));

    SUBCASE("same seed gives the same assignment") {
        const Manifest a = split_actions(base, 3, {0.7, 0.1, 0.2});
        const Manifest b = split_actions(base, 3, {0.7, 0.1, 0.2});
        const Manifest c = split_actions(base, 4, {0.7, 0.1, 0.2});
        bool differs = false;
        for (std::size_t i = 0; i < a.actions.size(); ++i) {
            CHECK(a.actions[i].split == b.actions[i].split);
            differs |= a.actions[i].split != c.actions[i].split;
        }
        CHECK(differs);
    }
    SUBCASE("everything to Train") {
        for (const FoulAction& a : split_actions(base, 1, {1.0, 0.0, 0.0}).actions) CHECK(a.split == Split::Train);
    }
    SUBCASE("stratified test share within one action of 20% per class") {
        const Manifest s = split_actions(base, 9, {0.8, 0.0, 0.2});
        std::map<int, std::pair<std::size_t, std::size_t>> per_label;  // label -> (members, in test)
        for (const FoulAction& a : s.actions) {
            const auto label = map_task2(*a.annotation);
            auto& slot = per_label[label ? static_cast<int>(*label) : -1];
            ++slot.first;
            slot.second += a.split == Split::Test;
            CHECK(a.split != Split::Valid);
        }
        for (const auto& [label, counts] : per_label)
            CHECK(std::abs(static_cast<double>(counts.second) - 0.2 * static_cast<double>(counts.first)) <= 1.0);
    }
    SUBCASE("fractions must sum to 1") {
        CHECK_THROWS_AS(split_actions(base, 1, {0.5, 0.2, 0.2}), ConfigError);
        CHECK_THROWS_AS(split_actions(base, 1, {1.2, -0.2, 0.0}), ConfigError);
    }
}
