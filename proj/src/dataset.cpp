#include "vars/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "vars/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vars {

// --- rules ------------------------------------------------------------------

std::vector<FieldIssue> check_annotation(const Annotation& a) {
    std::vector<FieldIssue> issues;
    if (a.severity < 1 || a.severity > 5)
        issues.push_back({"severity", "severity must be an integer in 1..5"});
    const bool upper = a.bodypart == Bodypart::Upper;
    const bool has_part = a.upper_body_part != UpperBodyPart::NotApplicable;
    if (upper && !has_part) {
        issues.push_back({"upper_body_part",
                          "conditional property: bodypart Upper requires upper_body_part "
                          "Shoulder or Arm"});
    } else if (!upper && has_part) {
        issues.push_back({"upper_body_part",
                          "conditional property: upper_body_part must be NotApplicable unless "
                          "bodypart is Upper"});
    }
    if (a.handball_offence != HandballOffence::NotApplicable && a.handball != Handball::Handball) {
        issues.push_back({"handball_offence",
                          "conditional property: handball_offence must be NotApplicable unless "
                          "handball is Handball"});
    }
    return issues;
}

std::vector<FieldIssue> check_clip(const ClipMeta& c) {
    std::vector<FieldIssue> issues;
    if (c.clip_id.empty()) issues.push_back({"clip_id", "clip_id must not be empty"});
    if (c.frame_count < 16) issues.push_back({"frame_count", "frame_count must be at least 16"});
    if (!(c.fps > 0.0) || !std::isfinite(c.fps)) issues.push_back({"fps", "fps must be positive"});
    if (c.height == 0 || c.width == 0)
        issues.push_back({"height", "height and width must be positive"});
    if (!(c.replay_speed > 0.0) || !std::isfinite(c.replay_speed))
        issues.push_back({"replay_speed", "replay_speed must be positive"});
    if (c.contact_frame && *c.contact_frame >= c.frame_count)
        issues.push_back({"contact_frame", "contact_frame must lie in [0, frame_count)"});
    return issues;
}

void validate_action(const FoulAction& action) {
    const std::string& id = action.action_id;
    if (id.empty()) throw ValidationError(id, "action_id", "action_id must not be empty");
    if (action.clips.size() < kMinViews)
        throw ValidationError(id, "clips", "an action needs at least two views (got " +
                                               std::to_string(action.clips.size()) + ")");
    if (action.clips.size() > kMaxViews)
        throw ValidationError(id, "clips", "an action has at most four views (got " +
                                               std::to_string(action.clips.size()) + ")");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < action.clips.size(); ++i) {
        const ClipMeta& c = action.clips[i];
        const std::string where = "clips[" + std::to_string(i) + "]";
        for (const FieldIssue& issue : check_clip(c))
            throw ValidationError(id, where + "." + issue.field, issue.message);
        if (!ids.insert(c.clip_id).second)
            throw ValidationError(id, where + ".clip_id", "duplicate clip_id '" + c.clip_id + "'");
        if (c.camera == CameraKind::Live && i != 0)
            throw ValidationError(id, where + ".camera", "the Live clip must come first");
    }
    if (action.annotation) {
        for (const FieldIssue& issue : check_annotation(*action.annotation))
            throw ValidationError(id, "annotation." + issue.field, issue.message);
    }
}

void validate_manifest(const Manifest& m, LoadOptions options) {
    if (m.format_version != Manifest::kFormatVersion) {
        throw ParseError("unsupported manifest format_version " + std::to_string(m.format_version),
                         0, "format_version");
    }
    std::set<std::string> ids;
    for (const FoulAction& a : m.actions) {
        validate_action(a);
        if (!ids.insert(a.action_id).second)
            throw ValidationError(a.action_id, "action_id", "duplicate action_id");
        if (options.check_payloads) {
            for (const ClipMeta& c : a.clips) {
                if (!fs::is_regular_file(m.resolve(c))) {
                    throw ValidationError(a.action_id, "payload",
                                          "payload not found: " + m.resolve(c).string());
                }
            }
        }
    }
}

const FoulAction* Manifest::find(std::string_view action_id) const {
    for (const FoulAction& a : actions)
        if (a.action_id == action_id) return &a;
    return nullptr;
}

FoulAction* Manifest::find(std::string_view action_id) {
    for (FoulAction& a : actions)
        if (a.action_id == action_id) return &a;
    return nullptr;
}

std::vector<std::size_t> Manifest::indices_in(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < actions.size(); ++i)
        if (actions[i].split == split) out.push_back(i);
    return out;
}

// --- JSON -------------------------------------------------------------------

namespace {

const json& require(const json& j, const std::string& key, const std::string& where) {
    if (!j.is_object()) throw ParseError(where + ": expected an object", 0, where);
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(where + "." + key + ": missing field", 0, where + "." + key);
    return *it;
}

template <typename E>
E enum_field(const json& j, const std::string& key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_string()) throw ParseError(where + "." + key + ": expected a string", 0, where + "." + key);
    auto parsed = parse_enum<E>(v.get<std::string>());
    if (!parsed) {
        std::string allowed;
        for (auto n : EnumNames<E>::names) allowed += (allowed.empty() ? "" : ", ") + std::string(n);
        throw ParseError(where + "." + key + ": unknown value '" + v.get<std::string>() +
                             "' (expected one of " + allowed + ")",
                         0, where + "." + key);
    }
    return *parsed;
}

std::string string_field(const json& j, const std::string& key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_string()) throw ParseError(where + "." + key + ": expected a string", 0, where + "." + key);
    return v.get<std::string>();
}

template <typename Int>
Int int_field(const json& j, const std::string& key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_number_integer())
        throw ParseError(where + "." + key + ": expected an integer", 0, where + "." + key);
    if constexpr (std::is_unsigned_v<Int>) {
        if (v.is_number_unsigned()) {
            auto x = v.get<std::uint64_t>();
            if (x <= std::numeric_limits<Int>::max()) return static_cast<Int>(x);
        }
        throw ParseError(where + "." + key + ": value out of range", 0, where + "." + key);
    } else {
        auto x = v.get<std::int64_t>();
        if (x < std::numeric_limits<Int>::min() || x > std::numeric_limits<Int>::max())
            throw ParseError(where + "." + key + ": value out of range", 0, where + "." + key);
        return static_cast<Int>(x);
    }
}

double number_field(const json& j, const std::string& key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_number()) throw ParseError(where + "." + key + ": expected a number", 0, where + "." + key);
    return v.get<double>();
}

ClipMeta clip_from_json(const json& j, const std::string& where) {
    ClipMeta c;
    c.clip_id = string_field(j, "clip_id", where);
    c.camera = enum_field<CameraKind>(j, "camera", where);
    c.frame_count = int_field<std::uint32_t>(j, "frame_count", where);
    c.fps = number_field(j, "fps", where);
    c.height = int_field<std::uint32_t>(j, "height", where);
    c.width = int_field<std::uint32_t>(j, "width", where);
    c.offset_frames = int_field<std::int32_t>(j, "offset_frames", where);
    c.replay_speed = number_field(j, "replay_speed", where);
    if (auto it = j.find("contact_frame"); it != j.end() && !it->is_null())
        c.contact_frame = int_field<std::uint32_t>(j, "contact_frame", where);
    c.payload_path = string_field(j, "payload", where);
    return c;
}

FoulAction action_from_json(const json& j, const std::string& where) {
    FoulAction a;
    a.action_id = string_field(j, "action_id", where);
    a.split = enum_field<Split>(j, "split", where);
    if (j.contains("revision")) a.revision = int_field<std::uint64_t>(j, "revision", where);
    if (auto it = j.find("annotation"); it != j.end() && !it->is_null())
        a.annotation = annotation_from_json(*it, where + ".annotation");
    const json& clips = require(j, "clips", where);
    if (!clips.is_array()) throw ParseError(where + ".clips: expected an array", 0, where + ".clips");
    for (std::size_t i = 0; i < clips.size(); ++i)
        a.clips.push_back(clip_from_json(clips[i], where + ".clips[" + std::to_string(i) + "]"));
    return a;
}

std::size_t line_of(std::string_view text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

Annotation annotation_from_json(const json& j, const std::string& where) {
    Annotation a;
    a.offence = enum_field<Offence>(j, "offence", where);
    a.action_class = enum_field<ActionClass>(j, "action_class", where);
    a.severity = int_field<int>(j, "severity", where);
    a.contact = enum_field<Contact>(j, "contact", where);
    a.bodypart = enum_field<Bodypart>(j, "bodypart", where);
    a.upper_body_part = enum_field<UpperBodyPart>(j, "upper_body_part", where);
    a.try_to_play = enum_field<YesNo>(j, "try_to_play", where);
    a.play_ball = enum_field<PlayBall>(j, "play_ball", where);
    a.handball = enum_field<Handball>(j, "handball", where);
    a.handball_offence = enum_field<HandballOffence>(j, "handball_offence", where);
    return a;
}

json to_json(const Annotation& a) {
    return json{{"offence", to_string(a.offence)},
                {"action_class", to_string(a.action_class)},
                {"severity", a.severity},
                {"contact", to_string(a.contact)},
                {"bodypart", to_string(a.bodypart)},
                {"upper_body_part", to_string(a.upper_body_part)},
                {"try_to_play", to_string(a.try_to_play)},
                {"play_ball", to_string(a.play_ball)},
                {"handball", to_string(a.handball)},
                {"handball_offence", to_string(a.handball_offence)}};
}

json to_json(const ClipMeta& c) {
    json j{{"clip_id", c.clip_id},
           {"camera", to_string(c.camera)},
           {"frame_count", c.frame_count},
           {"fps", c.fps},
           {"height", c.height},
           {"width", c.width},
           {"offset_frames", c.offset_frames},
           {"replay_speed", c.replay_speed},
           {"payload", c.payload_path}};
    j["contact_frame"] = c.contact_frame ? json(*c.contact_frame) : json(nullptr);
    return j;
}

json to_json(const FoulAction& a) {
    json clips = json::array();
    for (const ClipMeta& c : a.clips) clips.push_back(to_json(c));
    return json{{"action_id", a.action_id},
                {"split", to_string(a.split)},
                {"revision", a.revision},
                {"annotation", a.annotation ? to_json(*a.annotation) : json(nullptr)},
                {"clips", std::move(clips)}};
}

json to_json(const Manifest& m) {
    json actions = json::array();
    for (const FoulAction& a : m.actions) actions.push_back(to_json(a));
    return json{{"format_version", m.format_version},
                {"dataset", m.dataset},
                {"base_dir", m.base_dir},
                {"actions", std::move(actions)}};
}

Manifest parse_manifest(std::string_view text, fs::path root, LoadOptions options) {
    json j;
    try {
        j = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ParseError("manifest parse error at line " + std::to_string(line_of(text, e.byte)) +
                             ": " + e.what(),
                         line_of(text, e.byte));
    }
    Manifest m;
    m.root = std::move(root);
    m.format_version = int_field<int>(j, "format_version", "manifest");
    m.dataset = string_field(j, "dataset", "manifest");
    if (j.contains("base_dir")) m.base_dir = string_field(j, "base_dir", "manifest");
    const json& actions = require(j, "actions", "manifest");
    if (!actions.is_array()) throw ParseError("manifest.actions: expected an array", 0, "actions");
    for (std::size_t i = 0; i < actions.size(); ++i)
        m.actions.push_back(action_from_json(actions[i], "actions[" + std::to_string(i) + "]"));
    validate_manifest(m, options);
    return m;
}

fs::path manifest_file(const fs::path& path) {
    return fs::is_directory(path) ? path / "manifest.json" : path;
}

Manifest load_manifest(const fs::path& path, LoadOptions options) {
    const fs::path file = manifest_file(path);
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ParseError("cannot open manifest " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    fs::path root = file.parent_path();
    if (root.empty()) root = ".";
    return parse_manifest(ss.str(), root, options);
}

void write_text_atomic(const fs::path& file, std::string_view text) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    fs::path tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    fs::rename(tmp, file);
}

void save_manifest(const Manifest& m, const fs::path& file) {
    write_text_atomic(file, to_json(m).dump(2) + "\n");
}

// --- task labels ------------------------------------------------------------

std::optional<Task1Label> map_task1(const Annotation& a) {
    if (a.action_class == ActionClass::DontKnow) return std::nullopt;
    // Task 1 labels share the first eight ActionClass positions.
    return static_cast<Task1Label>(static_cast<int>(a.action_class));
}

ActionClass to_action_class(Task1Label label) {
    return static_cast<ActionClass>(static_cast<int>(label));
}

std::optional<Task2Label> map_task2(const Annotation& a) {
    switch (a.offence) {
        case Offence::NoOffence:
            return Task2Label::NoOffence;
        case Offence::Between:
            return std::nullopt;
        case Offence::Offence:
            switch (a.severity) {
                case 1: return Task2Label::OffenceNoCard;
                case 3: return Task2Label::OffenceYellow;
                case 5: return Task2Label::OffenceRed;
                default: return std::nullopt;  // borderline 2/4, or invalid
            }
    }
    return std::nullopt;
}

}  // namespace vars
