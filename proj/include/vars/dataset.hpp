#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace vars {

// ---------------------------------------------------------------------------
// Annotation vocabulary. Enumerator names double as the on-disk strings.

enum class Offence { Offence, NoOffence, Between };
enum class ActionClass {
    StandingTackling,
    Tackling,
    HighLeg,
    Pushing,
    Holding,
    Elbowing,
    Challenge,
    Dive,
    DontKnow
};
enum class Contact { With, Without };
enum class Bodypart { Upper, Under };
enum class UpperBodyPart { Shoulder, Arm, NotApplicable };
enum class YesNo { Yes, No };
enum class PlayBall { Yes, No, Maybe };
enum class Handball { Handball, NoHandball };
enum class HandballOffence { Yes, No, NotApplicable };
enum class CameraKind { Live, Replay };
enum class Split { Train, Valid, Test };

template <typename E>
struct EnumNames;

#define VARS_ENUM_NAMES(Type, ...)                                               \
    template <>                                                                  \
    struct EnumNames<Type> {                                                     \
        static constexpr std::string_view field = #Type;                         \
        static constexpr auto names = std::to_array<std::string_view>({__VA_ARGS__}); \
    }

VARS_ENUM_NAMES(Offence, "Offence", "NoOffence", "Between");
VARS_ENUM_NAMES(ActionClass, "StandingTackling", "Tackling", "HighLeg", "Pushing", "Holding",
                "Elbowing", "Challenge", "Dive", "DontKnow");
VARS_ENUM_NAMES(Contact, "With", "Without");
VARS_ENUM_NAMES(Bodypart, "Upper", "Under");
VARS_ENUM_NAMES(UpperBodyPart, "Shoulder", "Arm", "NotApplicable");
VARS_ENUM_NAMES(YesNo, "Yes", "No");
VARS_ENUM_NAMES(PlayBall, "Yes", "No", "Maybe");
VARS_ENUM_NAMES(Handball, "Handball", "NoHandball");
VARS_ENUM_NAMES(HandballOffence, "Yes", "No", "NotApplicable");
VARS_ENUM_NAMES(CameraKind, "Live", "Replay");
VARS_ENUM_NAMES(Split, "Train", "Valid", "Test");

#undef VARS_ENUM_NAMES

template <typename E>
constexpr std::size_t enum_count() {
    return EnumNames<E>::names.size();
}

template <typename E>
std::string_view to_string(E value) {
    return EnumNames<E>::names[static_cast<std::size_t>(value)];
}

template <typename E>
std::optional<E> parse_enum(std::string_view text) {
    const auto& names = EnumNames<E>::names;
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == text) return static_cast<E>(i);
    return std::nullopt;
}

// The ten referee properties of one foul action.
struct Annotation {
    Offence offence = Offence::Offence;
    ActionClass action_class = ActionClass::StandingTackling;
    int severity = 1;  // 1 careless .. 5 violent
    Contact contact = Contact::With;
    Bodypart bodypart = Bodypart::Under;
    UpperBodyPart upper_body_part = UpperBodyPart::NotApplicable;
    YesNo try_to_play = YesNo::Yes;
    PlayBall play_ball = PlayBall::No;
    Handball handball = Handball::NoHandball;
    HandballOffence handball_offence = HandballOffence::NotApplicable;

    bool operator==(const Annotation&) const = default;
};

struct FieldIssue {
    std::string field;
    std::string message;
};

// Every broken annotation rule, empty when valid.
std::vector<FieldIssue> check_annotation(const Annotation& a);

struct ClipMeta {
    std::string clip_id;
    CameraKind camera = CameraKind::Live;
    std::uint32_t frame_count = 16;
    double fps = 16.0;
    std::uint32_t height = 1;
    std::uint32_t width = 1;
    std::int32_t offset_frames = 0;
    double replay_speed = 1.0;
    std::optional<std::uint32_t> contact_frame;
    std::string payload_path;  // relative to the manifest's payload root

    bool operator==(const ClipMeta&) const = default;
};

std::vector<FieldIssue> check_clip(const ClipMeta& c);

inline constexpr std::size_t kMinViews = 2;
inline constexpr std::size_t kMaxViews = 4;

struct FoulAction {
    std::string action_id;
    std::vector<ClipMeta> clips;  // Live clip first when present
    std::optional<Annotation> annotation;
    Split split = Split::Train;
    std::uint64_t revision = 0;

    bool operator==(const FoulAction&) const = default;
};

// Throws ValidationError naming the action and the broken rule.
void validate_action(const FoulAction& action);

struct Manifest {
    static constexpr int kFormatVersion = 1;

    int format_version = kFormatVersion;
    std::string dataset;
    std::string base_dir = ".";  // as written in the file
    std::vector<FoulAction> actions;
    std::filesystem::path root;  // directory holding the manifest file; not serialized

    std::filesystem::path payload_root() const { return root / base_dir; }
    std::filesystem::path resolve(const ClipMeta& clip) const { return payload_root() / clip.payload_path; }

    const FoulAction* find(std::string_view action_id) const;
    FoulAction* find(std::string_view action_id);
    std::vector<std::size_t> indices_in(Split split) const;
};

struct LoadOptions {
    bool check_payloads = true;
};

// Accepts the manifest file itself or a directory containing manifest.json.
Manifest load_manifest(const std::filesystem::path& path, LoadOptions options = {});
Manifest parse_manifest(std::string_view text, std::filesystem::path root, LoadOptions options = {});

// Structural and rule validation of a whole manifest (ids, views, annotation).
void validate_manifest(const Manifest& m, LoadOptions options = {});

// Atomic write-temp-then-rename.
void save_manifest(const Manifest& m, const std::filesystem::path& file);
std::filesystem::path manifest_file(const std::filesystem::path& path);

nlohmann::json to_json(const Annotation& a);
Annotation annotation_from_json(const nlohmann::json& j, const std::string& where = "annotation");
nlohmann::json to_json(const ClipMeta& c);
nlohmann::json to_json(const FoulAction& a);
nlohmann::json to_json(const Manifest& m);

void write_text_atomic(const std::filesystem::path& file, std::string_view text);

// ---------------------------------------------------------------------------
// Task labels

enum class Task1Label { StandingTackling, Tackling, HighLeg, Pushing, Holding, Elbowing, Challenge, Dive };
enum class Task2Label { NoOffence, OffenceNoCard, OffenceYellow, OffenceRed };

template <>
struct EnumNames<Task1Label> {
    static constexpr std::string_view field = "Task1Label";
    static constexpr auto names = std::to_array<std::string_view>(
        {"StandingTackling", "Tackling", "HighLeg", "Pushing", "Holding", "Elbowing", "Challenge",
         "Dive"});
};
template <>
struct EnumNames<Task2Label> {
    static constexpr std::string_view field = "Task2Label";
    static constexpr auto names = std::to_array<std::string_view>(
        {"NoOffence", "OffenceNoCard", "OffenceYellow", "OffenceRed"});
};

inline constexpr std::size_t kTask1Classes = 8;
inline constexpr std::size_t kTask2Classes = 4;

std::optional<Task1Label> map_task1(const Annotation& a);
std::optional<Task2Label> map_task2(const Annotation& a);
ActionClass to_action_class(Task1Label label);

// ---------------------------------------------------------------------------
// MVFC frame payloads: "MVFC", u32 version, u32 frames, u32 height, u32 width,
// then frame-major little-endian float32 values in [0, 1].

inline constexpr std::uint32_t kMvfcVersion = 1;

class Tensor;

void write_clip_frames(const std::filesystem::path& file, std::uint32_t frames, std::uint32_t height,
                       std::uint32_t width, std::span<const float> values);
// Reads a payload without a manifest to compare against.
Tensor read_clip_frames(const std::filesystem::path& file);
// Reads the clip and checks its header against the metadata.
Tensor load_clip_frames(const Manifest& m, const ClipMeta& meta);

// ---------------------------------------------------------------------------
// Statistics

struct PropertyDistribution {
    std::string property;
    std::vector<std::pair<std::string, double>> percent;  // value -> percent
    std::size_t counted = 0;
};

struct ClassSeverity {
    ActionClass action_class;
    std::size_t actions = 0;
    double success_rate = 0.0;  // fraction not annotated NoOffence
    std::array<std::size_t, 5> severity_counts{};  // over offence != NoOffence
    double no_card = 0.0, yellow = 0.0, red = 0.0;  // shares among severities 1/3/5
};

struct StatsReport {
    std::size_t actions = 0;
    std::size_t annotated = 0;
    double mean_clips = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> views_histogram;  // views -> actions
    double referee_error_rate = 0.0;
    std::vector<PropertyDistribution> properties;
    std::vector<ClassSeverity> per_class;

    const PropertyDistribution& property(std::string_view name) const;
    double percent(std::string_view property, std::string_view value) const;
};

StatsReport dataset_stats(const Manifest& m);
nlohmann::json to_json(const StatsReport& r);
std::string render_stats_table(const StatsReport& r);

// ---------------------------------------------------------------------------
// Splits

// Seeded split assignment, stratified on the Task 2 label. Fractions are
// (train, valid, test) and must sum to 1.
Manifest split_actions(Manifest m, std::uint64_t seed, std::array<double, 3> fractions);

}  // namespace vars
