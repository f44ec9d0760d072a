#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vars/dataset.hpp"
#include "vars/errors.hpp"
#include "vars/evaluation.hpp"
#include "vars/model.hpp"
#include "vars/rng.hpp"
#include "vars/service.hpp"
#include "vars/synthgen.hpp"
#include "vars/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vars;

namespace {

json read_json_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + file.string() + ": " + e.what());
    }
}

void write_file(const fs::path& file, const std::string& text) {
    fs::create_directories(file.parent_path());
    write_text_atomic(file, text);
}

std::array<double, 3> triple(const std::vector<double>& v, const char* flag) {
    if (v.size() != 3) throw ConfigError(std::string(flag) + " takes exactly three comma-separated values");
    return {v[0], v[1], v[2]};
}

template <typename E>
E enum_flag(const std::string& text, std::initializer_list<std::pair<const char*, E>> aliases) {
    for (const auto& [name, value] : aliases)
        if (text == name) return value;
    if (auto e = parse_enum<E>(text)) return *e;
    throw ConfigError("unknown value '" + text + "' for " + std::string(EnumNames<E>::field));
}

Split split_flag(const std::string& text) {
    return enum_flag<Split>(text, {{"train", Split::Train}, {"valid", Split::Valid}, {"test", Split::Test}});
}

// Flags shared by the commands that build and train a model.
struct ModelFlags {
    std::string task, encoder, aggregation;
    std::size_t feature_dim = 0, hidden_dim = 0, epochs = 0, batch = 0;
    int fps = 16;
    double lr = 0, decay = 0, alpha_foul = 0, alpha_off = 0;
    std::uint64_t seed = 0;
    bool class_weighting = false;
    std::string config;

    CLI::App* app = nullptr;

    void add(CLI::App* a, bool with_fps = true) {
        app = a;
        a->add_option("--task", task, "foul | offence | multi");
        a->add_option("--encoder", encoder, "framepool | temporalconv");
        a->add_option("--aggregation", aggregation, "mean | max");
        a->add_option("--feature-dim", feature_dim, "Encoder feature size D");
        a->add_option("--hidden-dim", hidden_dim, "Head hidden size");
        if (with_fps) a->add_option("--fps", fps, "Input sampling rate (5, 8, 12, 16)");
        a->add_option("--epochs", epochs, "Training epochs");
        a->add_option("--batch", batch, "Batch size");
        a->add_option("--lr", lr, "Initial learning rate");
        a->add_option("--decay", decay, "Learning-rate decay per epoch");
        a->add_option("--alpha-foul", alpha_foul, "Foul loss weight");
        a->add_option("--alpha-off", alpha_off, "Offence loss weight");
        a->add_option("--seed", seed, "Seed for initialization and batch order");
        a->add_flag("--class-weighting", class_weighting, "Inverse-frequency loss weights");
        a->add_option("--config", config, "JSON file with \"model\" and \"train\" sections");
    }

    bool given(const char* flag) const { return app->count(flag) > 0; }

    std::pair<ModelConfig, TrainConfig> resolve(const Manifest& m) const {
        ModelConfig mc;
        TrainConfig tc;
        for (const FoulAction& a : m.actions) {
            if (!a.clips.empty()) {
                mc.height = a.clips.front().height;
                mc.width = a.clips.front().width;
                break;
            }
        }
        if (!config.empty()) {
            const json j = read_json_file(config);
            if (j.contains("model")) mc = model_config_from_json(j["model"], mc);
            if (j.contains("train")) tc = train_config_from_json(j["train"], tc);
        }
        if (given("--task"))
            mc.task_mode = enum_flag<TaskMode>(task, {{"foul", TaskMode::SingleFoul},
                                                      {"offence", TaskMode::SingleOffence},
                                                      {"multi", TaskMode::MultiTask}});
        if (given("--encoder"))
            mc.encoder = enum_flag<EncoderKind>(encoder, {{"framepool", EncoderKind::FramePool},
                                                          {"temporalconv", EncoderKind::TemporalConv}});
        if (given("--aggregation"))
            mc.aggregation = enum_flag<Aggregation>(aggregation, {{"mean", Aggregation::Mean}, {"max", Aggregation::Max}});
        if (given("--feature-dim")) mc.feature_dim = feature_dim;
        if (given("--hidden-dim")) mc.hidden_dim = hidden_dim;
        if (app->get_option_no_throw("--fps") && given("--fps")) mc.sample_fps = fps;
        if (given("--epochs")) tc.epochs = epochs;
        if (given("--batch")) tc.batch_size = batch;
        if (given("--lr")) tc.lr0 = lr;
        if (given("--decay")) tc.lr_decay = decay;
        if (given("--alpha-foul")) tc.alpha_foul = alpha_foul;
        if (given("--alpha-off")) tc.alpha_off = alpha_off;
        if (given("--seed")) tc.seed = seed;
        if (given("--class-weighting")) tc.class_weighting = class_weighting;
        validate(mc);
        validate(tc);
        return {mc, tc};
    }
};

void write_metrics(const fs::path& out, const MetricsReport& r, const json& run) {
    json j = to_json(r);
    j["run"] = run;
    write_file(out / "metrics.json", j.dump(2) + "\n");
    std::string tables = render_metrics_table(r);
    for (const auto* t : {r.foul ? &*r.foul : nullptr, r.offence ? &*r.offence : nullptr}) {
        if (!t) continue;
        write_file(out / "confusion" / (t->task + ".csv"), t->confusion.to_csv());
        tables += "\n" + t->task + " confusion (rows: ground truth, R: recall, P: precision)\n" + t->confusion.render();
    }
    write_file(out / "tables" / "metrics.txt", tables);
}

fs::path default_manifest(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("MVF_DATA_DIR")) return env;
    throw ConfigError("no --manifest given and MVF_DATA_DIR is not set");
}

int run(int argc, char** argv) {
    CLI::App app{"Multi-view foul recognition toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // generate
    auto* gen = app.add_subcommand("generate", "Write a synthetic multi-view dataset");
    GenConfig g;
    std::string gen_out, gen_config, gen_classes;
    std::vector<double> gen_replays, gen_split;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--n", g.n_actions, "Number of actions");
    gen->add_option("--seed", g.seed, "Generator seed");
    gen->add_option("--frames", g.frames_per_clip, "Frames per clip");
    gen->add_option("--height", g.height, "Frame height");
    gen->add_option("--width", g.width, "Frame width");
    gen->add_option("--classes", gen_classes, "reference | uniform");
    gen->add_option("--live-prob", g.live_informative_prob, "Probability that the live clip shows the foul");
    gen->add_option("--noise", g.noise_std, "Pixel noise standard deviation");
    gen->add_option("--replays", gen_replays, "Probabilities of 1,2,3 replays")->delimiter(',');
    gen->add_option("--split", gen_split, "Train,valid,test fractions")->delimiter(',');
    gen->add_flag("--temporal-ablation", g.temporal_ablation, "Require clips long enough for 3.2 s of context");
    gen->add_option("--name", g.dataset_name, "Dataset name");
    gen->add_option("--config", gen_config, "JSON generator config");

    // stats
    auto* stats = app.add_subcommand("stats", "Dataset statistics");
    std::string stats_manifest, stats_out;
    bool stats_json = false;
    stats->add_option("--manifest", stats_manifest, "Manifest file or directory");
    stats->add_option("--out", stats_out, "Directory for stats.json and tables/stats.txt");
    stats->add_flag("--json", stats_json, "Print JSON instead of the table");

    // split
    auto* split = app.add_subcommand("split", "Assign stratified train/valid/test splits");
    std::string split_manifest, split_out;
    std::uint64_t split_seed = 0;
    std::vector<double> split_fractions{0.8, 0.1, 0.1};
    split->add_option("--manifest", split_manifest, "Manifest file or directory");
    split->add_option("--seed", split_seed, "Split seed");
    split->add_option("--fractions", split_fractions, "Train,valid,test fractions")->delimiter(',');
    split->add_option("--out", split_out, "Output manifest file (default: rewrite in place)");

    // train
    auto* tr = app.add_subcommand("train", "Train a model");
    std::string tr_manifest, tr_out;
    ModelFlags tr_flags;
    tr->add_option("--manifest", tr_manifest, "Manifest file or directory");
    tr->add_option("--out", tr_out, "Run directory")->required();
    tr_flags.add(tr);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint");
    std::string ev_manifest, ev_ckpt, ev_out, ev_split = "test";
    ev->add_option("--manifest", ev_manifest, "Manifest file or directory");
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--split", ev_split, "train | valid | test");
    ev->add_option("--out", ev_out, "Run directory");

    // ablate-views
    auto* av = app.add_subcommand("ablate-views", "Evaluate a checkpoint on view subsets");
    std::string av_manifest, av_ckpt, av_out, av_split = "test";
    std::vector<std::string> av_views;
    av->add_option("--manifest", av_manifest, "Manifest file or directory");
    av->add_option("--checkpoint", av_ckpt, "Checkpoint file")->required();
    av->add_option("--split", av_split, "train | valid | test");
    av->add_option("--views", av_views, "Subsets such as L,R1,L+R1,R1+R2,L+R1+R2")->delimiter(',');
    av->add_option("--out", av_out, "Run directory");

    // ablate-temporal
    auto* at = app.add_subcommand("ablate-temporal", "Train and evaluate one model per input frame rate");
    std::string at_manifest, at_out, at_split = "test";
    std::vector<int> at_fps{5, 8, 12, 16};
    ModelFlags at_flags;
    at->add_option("--manifest", at_manifest, "Manifest file or directory");
    at->add_option("--out", at_out, "Run directory");
    at->add_option("--split", at_split, "Evaluation split");
    at_flags.add(at, false);
    at->add_option("--fps", at_fps, "Frame rates to compare")->delimiter(',');

    // predict
    auto* pr = app.add_subcommand("predict", "Top-2 predictions for one action");
    std::string pr_manifest, pr_ckpt, pr_action;
    std::vector<std::string> pr_views;
    pr->add_option("--manifest", pr_manifest, "Manifest file or directory");
    pr->add_option("--checkpoint", pr_ckpt, "Checkpoint file")->required();
    pr->add_option("--action", pr_action, "Action id")->required();
    pr->add_option("--views", pr_views, "View names (L, R1, R2)")->delimiter(',');

    // serve
    auto* sv = app.add_subcommand("serve", "Serve the annotation and inference API");
    std::string sv_manifest, sv_host = "127.0.0.1";
    std::vector<std::string> sv_ckpts;
    int sv_port = 8080;
    sv->add_option("--manifest", sv_manifest, "Manifest file or directory (default $MVF_DATA_DIR)");
    sv->add_option("--checkpoint", sv_ckpts, "Checkpoint file; repeatable");
    sv->add_option("--port", sv_port, "Port");
    sv->add_option("--host", sv_host, "Bind address");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "Compare analytic and numeric gradients of a small model");
    std::string gc_encoder = "temporalconv", gc_aggregation = "max";
    std::uint64_t gc_seed = 0;
    std::size_t gc_views = 3;
    gc->add_option("--encoder", gc_encoder, "framepool | temporalconv");
    gc->add_option("--aggregation", gc_aggregation, "mean | max");
    gc->add_option("--seed", gc_seed, "Seed");
    gc->add_option("--views", gc_views, "Views per action (1-4)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (gen->parsed()) {
        GenConfig c;
        if (!gen_config.empty()) c = gen_config_from_json(read_json_file(gen_config));
        auto flag = [&](const char* f) { return gen->count(f) > 0; };
        if (flag("--n")) c.n_actions = g.n_actions;
        if (flag("--seed")) c.seed = g.seed;
        if (flag("--frames")) c.frames_per_clip = g.frames_per_clip;
        if (flag("--height")) c.height = g.height;
        if (flag("--width")) c.width = g.width;
        if (flag("--live-prob")) c.live_informative_prob = g.live_informative_prob;
        if (flag("--noise")) c.noise_std = g.noise_std;
        if (flag("--temporal-ablation")) c.temporal_ablation = g.temporal_ablation;
        if (flag("--name")) c.dataset_name = g.dataset_name;
        if (flag("--replays")) c.replay_count_distribution = triple(gen_replays, "--replays");
        if (flag("--split")) c.split_fractions = triple(gen_split, "--split");
        if (flag("--classes")) {
            if (gen_classes == "uniform") c.class_distribution = uniform_class_distribution();
            else if (gen_classes == "reference") c.class_distribution = reference_class_distribution();
            else throw ConfigError("--classes must be reference or uniform");
        }
        const Manifest m = generate(c, gen_out);
        std::printf("wrote %zu actions to %s\n", m.actions.size(), gen_out.c_str());
        return 0;
    }

    if (stats->parsed()) {
        const StatsReport r = dataset_stats(load_manifest(default_manifest(stats_manifest)));
        if (!stats_out.empty()) {
            write_file(fs::path(stats_out) / "stats.json", to_json(r).dump(2) + "\n");
            write_file(fs::path(stats_out) / "tables" / "stats.txt", render_stats_table(r));
        }
        std::cout << (stats_json ? to_json(r).dump(2) + "\n" : render_stats_table(r));
        return 0;
    }

    if (split->parsed()) {
        const fs::path src = default_manifest(split_manifest);
        const Manifest m = split_actions(load_manifest(src), split_seed, triple(split_fractions, "--fractions"));
        const fs::path dst = split_out.empty() ? manifest_file(src) : fs::path(split_out);
        if (!split_out.empty() && fs::absolute(dst.parent_path()) != fs::absolute(m.root))
            throw ConfigError("--out must stay next to the payloads (same directory as the source manifest)");
        save_manifest(m, dst);
        std::size_t counts[3] = {};
        for (const FoulAction& a : m.actions) ++counts[static_cast<int>(a.split)];
        std::printf("train %zu  valid %zu  test %zu -> %s\n", counts[0], counts[1], counts[2], dst.c_str());
        return 0;
    }

    if (tr->parsed()) {
        const Manifest m = load_manifest(default_manifest(tr_manifest));
        const auto [mc, tc] = tr_flags.resolve(m);
        const fs::path out = tr_out;
        const json effective{{"command", "train"}, {"manifest", fs::absolute(manifest_file(default_manifest(tr_manifest))).string()},
                             {"model", to_json(mc)}, {"train", to_json(tc)}};
        write_file(out / "config.json", effective.dump(2) + "\n");
        const TrainResult r = train(init_model(mc, tc.seed), m, tc, [](const EpochRecord& e, const MvfModel&) {
            std::printf("epoch %2zu  lr %.3g  train %.4f", e.epoch, e.lr, e.train_loss);
            if (e.valid_loss) std::printf("  valid %.4f", *e.valid_loss);
            if (e.valid_acc_foul) std::printf("  foul acc %.3f", *e.valid_acc_foul);
            if (e.valid_acc_off) std::printf("  offence acc %.3f", *e.valid_acc_off);
            std::printf("\n");
            std::fflush(stdout);
        });
        save_checkpoint(r.best, out / "checkpoint.mvfm");
        save_checkpoint(r.model, out / "last.mvfm");
        json history{{"best_epoch", r.best_epoch}, {"epochs", to_json(r.history)}};
        write_file(out / "history.json", history.dump(2) + "\n");
        if (!m.indices_in(Split::Valid).empty()) {
            try {
                write_metrics(out, evaluate(r.best, m, Split::Valid), effective);
            } catch (const DomainError&) {
            }
        }
        std::printf("best epoch %zu, checkpoint %s\n", r.best_epoch, (out / "checkpoint.mvfm").c_str());
        return 0;
    }

    if (ev->parsed()) {
        const Manifest m = load_manifest(default_manifest(ev_manifest));
        const MvfModel model = load_checkpoint(ev_ckpt);
        const MetricsReport r = evaluate(model, m, split_flag(ev_split));
        if (!ev_out.empty()) {
            const json run{{"command", "evaluate"}, {"checkpoint", ev_ckpt}, {"split", ev_split}, {"model", to_json(model.config())}};
            write_file(fs::path(ev_out) / "config.json", run.dump(2) + "\n");
            write_metrics(ev_out, r, run);
        }
        std::cout << render_metrics_table(r);
        return 0;
    }

    if (av->parsed()) {
        const Manifest m = load_manifest(default_manifest(av_manifest));
        const MvfModel model = load_checkpoint(av_ckpt);
        std::vector<ViewSubset> subsets;
        for (const std::string& v : av_views) subsets.push_back(parse_view_subset(v));
        if (subsets.empty()) subsets = default_view_subsets();
        const ViewAblation a = ablate_views(model, load_samples(m, split_flag(av_split), model.config()), subsets);
        if (!av_out.empty()) {
            const json run{{"command", "ablate-views"}, {"checkpoint", av_ckpt}, {"split", av_split}};
            write_file(fs::path(av_out) / "config.json", run.dump(2) + "\n");
            write_file(fs::path(av_out) / "views.json", to_json(a).dump(2) + "\n");
            write_file(fs::path(av_out) / "tables" / "views.txt", render_view_table(a));
        }
        std::cout << render_view_table(a);
        return 0;
    }

    if (at->parsed()) {
        const Manifest m = load_manifest(default_manifest(at_manifest));
        const auto [mc, tc] = at_flags.resolve(m);
        const TemporalAblation a = ablate_temporal(m, mc, tc, at_fps, tc.seed, split_flag(at_split),
                                                   [](int fps, const TrainResult& r) {
                                                       std::printf("fps %d trained, best epoch %zu\n", fps, r.best_epoch);
                                                       std::fflush(stdout);
                                                   });
        if (!at_out.empty()) {
            const json run{{"command", "ablate-temporal"}, {"fps", at_fps}, {"model", to_json(mc)}, {"train", to_json(tc)}};
            write_file(fs::path(at_out) / "config.json", run.dump(2) + "\n");
            write_file(fs::path(at_out) / "temporal.json", to_json(a).dump(2) + "\n");
            write_file(fs::path(at_out) / "tables" / "temporal.txt", render_temporal_table(a));
        }
        std::cout << render_temporal_table(a);
        return 0;
    }

    if (pr->parsed()) {
        ServiceCore core(load_manifest(default_manifest(pr_manifest)), {}, {{"default", pr_ckpt}});
        json body = json::object();
        if (!pr_views.empty()) body["views"] = pr_views;
        const HttpResponse r = core.predict(pr_action, body.dump());
        const json j = json::parse(r.body);
        if (r.status != 200) {
            std::cerr << "error: " << j.value("message", r.body) << "\n";
            return r.status == 404 || r.status == 422 ? 2 : 1;
        }
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (sv->parsed()) {
        std::vector<fs::path> ckpts(sv_ckpts.begin(), sv_ckpts.end());
        auto core = ServiceCore::open(default_manifest(sv_manifest), ckpts);
        HttpServer server(*core);
        const int port = server.bind(sv_host, sv_port);
        if (port < 0) throw ConfigError("cannot bind " + sv_host + ":" + std::to_string(sv_port));
        std::printf("serving %s on http://%s:%d\n", core->manifest_path().c_str(), sv_host.c_str(), port);
        std::fflush(stdout);
        return server.listen() ? 0 : 2;
    }

    if (gc->parsed()) {
        ModelConfig mc;
        mc.encoder = enum_flag<EncoderKind>(gc_encoder, {{"framepool", EncoderKind::FramePool},
                                                         {"temporalconv", EncoderKind::TemporalConv}});
        mc.aggregation = enum_flag<Aggregation>(gc_aggregation, {{"mean", Aggregation::Mean}, {"max", Aggregation::Max}});
        mc.feature_dim = 5;
        mc.hidden_dim = 6;
        mc.height = 3;
        mc.width = 4;
        if (gc_views < 1 || gc_views > kMaxViews) throw ConfigError("--views must lie in [1, 4]");
        Rng rng(gc_seed);
        std::vector<Sample> samples(2);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            Sample& s = samples[i];
            s.action_id = "grad" + std::to_string(i);
            s.view_shape = {mc.frames, mc.height, mc.width};
            for (std::size_t v = 0; v < gc_views; ++v) {
                std::vector<float> frames(mc.frames * mc.height * mc.width);
                for (float& x : frames) x = static_cast<float>(rng.uniform());
                s.cameras.push_back(v == 0 ? CameraKind::Live : CameraKind::Replay);
                s.views.push_back(std::move(frames));
            }
            s.foul = static_cast<int>(rng.below(kTask1Classes));
            s.offence = static_cast<int>(rng.below(kTask2Classes));
        }
        const std::vector<const Sample*> batch{&samples[0], &samples[1]};
        const MvfModel model = init_model(mc, gc_seed);
        const double err = model_grad_check(model, batch, TrainConfig{});
        std::printf("%s/%s, %zu views, %zu parameters: max relative error %.3e\n", gc_encoder.c_str(),
                    gc_aggregation.c_str(), gc_views, model.parameter_count(), err);
        return err < 1e-4 ? 0 : 2;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
