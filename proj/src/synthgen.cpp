#include "vars/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "vars/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vars {

namespace {

// Foul-type shares (percent) in Task 1 label order.
constexpr std::array<double, kTask1Classes> kReferenceShares{43.6, 15.6, 3.5, 2.9, 12.5, 5.9, 13.0, 0.9};

// Referee success rate per class. Dive has none reported; the overall rate
// (1 - 10.7%) stands in.
constexpr std::array<double, kTask1Classes> kSuccessRate{0.94, 0.87, 0.87, 0.84, 0.90, 0.93, 0.75, 0.893};

// No card / yellow / red shares per class.
constexpr std::array<std::array<double, 3>, kTask1Classes> kSeverityShares{{
    {0.79, 0.18, 0.02},
    {0.37, 0.58, 0.04},
    {0.31, 0.63, 0.06},
    {0.99, 0.01, 0.00},
    {0.60, 0.40, 0.00},
    {0.43, 0.53, 0.03},
    {0.94, 0.05, 0.01},
    {0.00, 1.00, 0.00},
}};

constexpr std::array<ClassSignature, kTask1Classes> kSignatures{{
    {0.0, 3.0, false},
    {45.0, 4.5, false},
    {90.0, 3.0, false},
    {135.0, 4.5, false},
    {180.0, 3.0, true},
    {225.0, 4.5, true},
    {270.0, 3.0, true},
    {315.0, 4.5, true},
}};

constexpr std::uint64_t kClassStream = 0xC1A55;
constexpr std::uint64_t kReplayStream = 0x4E91A7;
constexpr std::uint64_t kNoiseStream = 0x5EED;
constexpr double kReplaySpeed = 0.5;

// Counts per category summing to n, by largest remainder.
std::vector<std::size_t> apportion(std::span<const double> shares, std::size_t n) {
    std::vector<std::size_t> counts(shares.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < shares.size(); ++i) {
        const double exact = shares[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
    return counts;
}

// Quota-exact assignment shuffled with a dedicated stream.
std::vector<std::size_t> quota_sequence(std::span<const double> shares, std::size_t n, std::uint64_t seed,
                                        std::uint64_t stream) {
    std::vector<std::size_t> seq;
    const auto counts = apportion(shares, n);
    for (std::size_t i = 0; i < counts.size(); ++i) seq.insert(seq.end(), counts[i], i);
    Rng rng(mix_seed(seed, stream));
    rng.shuffle(std::span<std::size_t>(seq));
    return seq;
}

struct ViewPlan {
    CameraKind camera;
    double speed;
    std::int32_t offset;
    std::uint32_t contact;
    double zoom;
};

struct ActionPlan {
    std::size_t index;
    FoulAction action;
    Task1Label label;
    int severity_level;  // 0 no offence .. 3 red
    bool live_informative;
    double jitter_row, jitter_col;
    std::vector<ViewPlan> views;
};

std::string action_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "A%05zu", index);
    return buf;
}

class Planner {
public:
    explicit Planner(const GenConfig& config)
        : config_(config),
          classes_(quota_sequence(config.class_distribution, config.n_actions, config.seed, kClassStream)),
          replays_(quota_sequence(config.replay_count_distribution, config.n_actions, config.seed, kReplayStream)) {
        const auto split_counts = apportion(config.split_fractions, config.n_actions);
        splits_.insert(splits_.end(), split_counts[0], Split::Train);
        splits_.insert(splits_.end(), split_counts[1], Split::Valid);
        splits_.insert(splits_.end(), split_counts[2], Split::Test);
    }

    ActionPlan plan(std::size_t index) const {
        Rng rng(mix_seed(config_.seed, index));
        ActionPlan p;
        p.index = index;
        p.label = static_cast<Task1Label>(classes_[index]);
        const Annotation ann = annotate_synthetic(p.label, rng);
        const auto task2 = map_task2(ann);
        p.severity_level = task2 ? static_cast<int>(*task2) : 1;
        p.live_informative = rng.uniform() < config_.live_informative_prob;
        p.jitter_row = rng.uniform(-2.0, 2.0);
        p.jitter_col = rng.uniform(-2.0, 2.0);

        const std::uint32_t frames = config_.frames_per_clip;
        const std::uint32_t contact = synthetic_contact_frame(frames);
        p.views.push_back({CameraKind::Live, 1.0, 0, contact, 1.0});
        const std::size_t n_replays = replays_[index] + 1;
        for (std::size_t r = 0; r < n_replays; ++r) {
            const auto offset = static_cast<std::int32_t>(rng.between(-6, 3));
            const auto c = static_cast<std::int64_t>(contact) + offset;
            const auto clamped = static_cast<std::uint32_t>(std::clamp<std::int64_t>(c, 0, frames - 1));
            const double zoom = rng.uniform(1.0, 1.4);
            p.views.push_back({CameraKind::Replay, kReplaySpeed, offset, clamped, zoom});
        }

        FoulAction& a = p.action;
        a.action_id = action_id(index);
        a.annotation = ann;
        a.split = splits_[index];
        for (std::size_t v = 0; v < p.views.size(); ++v) {
            ClipMeta c;
            c.clip_id = a.action_id + "_c" + std::to_string(v);
            c.camera = p.views[v].camera;
            c.frame_count = frames;
            c.fps = 16.0;
            c.height = config_.height;
            c.width = config_.width;
            c.offset_frames = p.views[v].offset;
            c.replay_speed = p.views[v].speed;
            c.contact_frame = p.views[v].contact;
            c.payload_path = "clips/" + c.clip_id + ".mvfc";
            a.clips.push_back(std::move(c));
        }
        return p;
    }

    std::vector<float> render(const ActionPlan& p, std::size_t clip_index) const {
        const ViewPlan& view = p.views.at(clip_index);
        const std::uint32_t frames = config_.frames_per_clip, h = config_.height, w = config_.width;
        const double contact = synthetic_contact_frame(frames);
        Rng noise(mix_seed(mix_seed(config_.seed, kNoiseStream), p.index * 8 + clip_index));
        const bool draw = view.camera == CameraKind::Replay || p.live_informative;
        const ClassSignature& sig = class_signature(p.label);
        const double theta = sig.direction_deg * std::numbers::pi / 180.0;
        const double ux = std::cos(theta), uy = std::sin(theta);
        const double center_row = (h - 1) / 2.0 + p.jitter_row;
        const double center_col = (w - 1) / 2.0 + p.jitter_col;
        const double sigma = 2.5 * view.zoom;
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

        std::vector<float> out(std::size_t{frames} * h * w);
        for (std::uint32_t f = 0; f < frames; ++f) {
            const double s = contact + (static_cast<double>(f) - view.contact) * view.speed;
            const double rel = s - contact;
            const double approach = std::min(rel, 0.0);
            const double ax = center_col + approach * sig.speed * ux * view.zoom;
            const double ay = center_row + approach * sig.speed * uy * view.zoom;
            double vx = center_col + 2.0 * ux * view.zoom;
            double vy = center_row + 2.0 * uy * view.zoom;
            if (sig.victim_recoils && rel > 0) {
                vx += rel * 0.5 * sig.speed * ux * view.zoom;
                vy += rel * 0.5 * sig.speed * uy * view.zoom;
            }
            const double victim_amp = std::abs(rel) <= 3.0 ? 0.35 + 0.2 * p.severity_level : 0.5;
            for (std::uint32_t r = 0; r < h; ++r) {
                for (std::uint32_t c = 0; c < w; ++c) {
                    double v = 0.0;
                    if (draw) {
                        const double da = (c - ax) * (c - ax) + (r - ay) * (r - ay);
                        const double dv = (c - vx) * (c - vx) + (r - vy) * (r - vy);
                        v = std::max(std::exp(-da * inv2s2), victim_amp * std::exp(-dv * inv2s2));
                    }
                    if (config_.noise_std > 0.0) v += noise.normal(0.0, config_.noise_std);
                    out[(std::size_t{f} * h + r) * w + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
        return out;
    }

private:
    const GenConfig& config_;
    std::vector<std::size_t> classes_;
    std::vector<std::size_t> replays_;
    std::vector<Split> splits_;
};

void check_distribution(std::span<const double> d, const char* name) {
    double total = 0.0;
    for (double x : d) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError(std::string(name) + ": entries must be non-negative");
        total += x;
    }
    if (std::abs(total - 1.0) > 1e-6)
        throw ConfigError(std::string(name) + ": entries must sum to 1, got " + std::to_string(total));
}

template <std::size_t N>
std::array<double, N> read_distribution(const json& j, const char* name,
                                        const std::array<std::string_view, N>& keys) {
    std::array<double, N> d{};
    if (j.is_array()) {
        if (j.size() != N) throw ConfigError(std::string(name) + ": expected " + std::to_string(N) + " entries");
        for (std::size_t i = 0; i < N; ++i) d[i] = j[i].get<double>();
    } else if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            auto pos = std::find(keys.begin(), keys.end(), it.key());
            if (pos == keys.end()) throw ConfigError(std::string(name) + ": unknown key '" + it.key() + "'");
            d[static_cast<std::size_t>(pos - keys.begin())] = it.value().get<double>();
        }
    } else {
        throw ConfigError(std::string(name) + ": expected an array or object");
    }
    return d;
}

}  // namespace

std::array<double, kTask1Classes> reference_class_distribution() {
    double total = 0.0;
    for (double s : kReferenceShares) total += s;
    std::array<double, kTask1Classes> d{};
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = kReferenceShares[i] / total;
    return d;
}

std::array<double, kTask1Classes> uniform_class_distribution() {
    std::array<double, kTask1Classes> d{};
    d.fill(1.0 / kTask1Classes);
    return d;
}

void validate(const GenConfig& c) {
    if (c.n_actions == 0) throw ConfigError("n_actions must be positive");
    if (c.frames_per_clip < 16) throw ConfigError("frames_per_clip must be at least 16");
    if (c.temporal_ablation && c.frames_per_clip < 52)
        throw ConfigError("frames_per_clip must be at least 52 to cover a 3.2 s temporal context");
    if (c.height == 0 || c.width == 0) throw ConfigError("height and width must be positive");
    if (!(c.live_informative_prob >= 0.0 && c.live_informative_prob <= 1.0))
        throw ConfigError("live_informative_prob must lie in [0, 1]");
    if (!(c.noise_std >= 0.0) || !std::isfinite(c.noise_std)) throw ConfigError("noise_std must be non-negative");
    check_distribution(c.class_distribution, "class_distribution");
    check_distribution(c.replay_count_distribution, "replay_count_distribution");
    check_distribution(c.split_fractions, "split_fractions");
}

json to_json(const GenConfig& c) {
    json classes = json::object();
    for (std::size_t i = 0; i < kTask1Classes; ++i)
        classes[std::string(EnumNames<Task1Label>::names[i])] = c.class_distribution[i];
    return json{{"n_actions", c.n_actions},
                {"frames_per_clip", c.frames_per_clip},
                {"height", c.height},
                {"width", c.width},
                {"class_distribution", classes},
                {"live_informative_prob", c.live_informative_prob},
                {"replay_count_distribution", c.replay_count_distribution},
                {"noise_std", c.noise_std},
                {"seed", c.seed},
                {"split_fractions", c.split_fractions},
                {"temporal_ablation", c.temporal_ablation},
                {"dataset_name", c.dataset_name}};
}

GenConfig gen_config_from_json(const json& j, GenConfig c) {
    if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const json& v = it.value();
            if (k == "n_actions") c.n_actions = v.get<std::size_t>();
            else if (k == "frames_per_clip") c.frames_per_clip = v.get<std::uint32_t>();
            else if (k == "height") c.height = v.get<std::uint32_t>();
            else if (k == "width") c.width = v.get<std::uint32_t>();
            else if (k == "class_distribution") {
                if (v.is_string() && v == "uniform") c.class_distribution = uniform_class_distribution();
                else if (v.is_string() && v == "reference") c.class_distribution = reference_class_distribution();
                else c.class_distribution = read_distribution(v, "class_distribution", EnumNames<Task1Label>::names);
            } else if (k == "live_informative_prob") c.live_informative_prob = v.get<double>();
            else if (k == "replay_count_distribution")
                c.replay_count_distribution = read_distribution(v, "replay_count_distribution",
                                                                std::array<std::string_view, 3>{"1", "2", "3"});
            else if (k == "noise_std") c.noise_std = v.get<double>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "split_fractions")
                c.split_fractions = read_distribution(v, "split_fractions",
                                                      std::array<std::string_view, 3>{"train", "valid", "test"});
            else if (k == "temporal_ablation") c.temporal_ablation = v.get<bool>();
            else if (k == "dataset_name") c.dataset_name = v.get<std::string>();
            else throw ConfigError("unknown generator config key '" + k + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("generator config: ") + e.what());
    }
    return c;
}

const ClassSignature& class_signature(Task1Label label) { return kSignatures[static_cast<std::size_t>(label)]; }

std::uint32_t synthetic_contact_frame(std::uint32_t frames_per_clip) {
    return std::min<std::uint32_t>(48, frames_per_clip * 12 / 13);
}

Annotation annotate_synthetic(Task1Label label, Rng& rng) {
    const auto idx = static_cast<std::size_t>(label);
    Annotation a;
    a.action_class = to_action_class(label);
    switch (label) {
        case Task1Label::StandingTackling:
        case Task1Label::Tackling:
        case Task1Label::HighLeg:
            a.bodypart = Bodypart::Under;
            a.upper_body_part = UpperBodyPart::NotApplicable;
            a.try_to_play = YesNo::Yes;
            break;
        case Task1Label::Pushing:
        case Task1Label::Holding:
        case Task1Label::Elbowing:
            a.bodypart = Bodypart::Upper;
            a.upper_body_part = UpperBodyPart::Arm;
            a.try_to_play = YesNo::No;
            break;
        case Task1Label::Challenge:
            a.bodypart = Bodypart::Upper;
            a.upper_body_part = UpperBodyPart::Shoulder;
            a.try_to_play = YesNo::Yes;
            break;
        case Task1Label::Dive:
            a.bodypart = Bodypart::Under;
            a.upper_body_part = UpperBodyPart::NotApplicable;
            a.try_to_play = YesNo::No;
            break;
    }
    a.contact = label == Task1Label::Dive ? Contact::Without : Contact::With;

    a.offence = rng.uniform() < kSuccessRate[idx] ? Offence::Offence : Offence::NoOffence;
    const std::size_t card = rng.categorical(kSeverityShares[idx]);
    a.severity = a.offence == Offence::Offence ? static_cast<int>(1 + 2 * card) : 1;

    constexpr std::array<double, 3> kPlayBall{0.2, 0.7, 0.1};
    a.play_ball = static_cast<PlayBall>(rng.categorical(kPlayBall));
    if (rng.uniform() < 0.01) {
        a.handball = Handball::Handball;
        a.handball_offence = rng.uniform() < 0.5 ? HandballOffence::Yes : HandballOffence::No;
    } else {
        a.handball = Handball::NoHandball;
        a.handball_offence = HandballOffence::NotApplicable;
    }
    return a;
}

Manifest plan_dataset(const GenConfig& config) {
    validate(config);
    Planner planner(config);
    Manifest m;
    m.dataset = config.dataset_name;
    for (std::size_t i = 0; i < config.n_actions; ++i) m.actions.push_back(planner.plan(i).action);
    return m;
}

std::vector<float> render_clip(const GenConfig& config, std::size_t action_index, std::size_t clip_index) {
    validate(config);
    if (action_index >= config.n_actions) throw ContractError("render_clip: action index out of range");
    Planner planner(config);
    return planner.render(planner.plan(action_index), clip_index);
}

Manifest generate(const GenConfig& config, const fs::path& out_dir) {
    validate(config);
    Planner planner(config);
    Manifest m;
    m.dataset = config.dataset_name;
    m.root = out_dir;
    fs::create_directories(out_dir / "clips");
    for (std::size_t i = 0; i < config.n_actions; ++i) {
        ActionPlan p = planner.plan(i);
        for (std::size_t v = 0; v < p.views.size(); ++v) {
            const std::vector<float> frames = planner.render(p, v);
            write_clip_frames(m.resolve(p.action.clips[v]), config.frames_per_clip, config.height, config.width,
                              frames);
        }
        m.actions.push_back(std::move(p.action));
    }
    save_manifest(m, out_dir / "manifest.json");
    write_text_atomic(out_dir / "gen_config.json", to_json(config).dump(2) + "\n");
    return m;
}

}  // namespace vars
