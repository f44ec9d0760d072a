#include "vars/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <mutex>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vars/errors.hpp"
#include "vars/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vars {

namespace {

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error(int status, std::string code, std::string message, std::string field = {}) {
    json body{{"code", std::move(code)}, {"message", std::move(message)}};
    if (!field.empty()) body["field"] = std::move(field);
    return json_response(status, body);
}

HttpResponse not_found(const std::string& what) { return error(404, "not_found", what + " not found"); }

std::optional<std::uint64_t> parse_index(std::string_view text) {
    if (text.empty() || text.size() > 18) return std::nullopt;
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) return std::nullopt;
    return v;
}

const ClipMeta* find_clip(const FoulAction& a, const std::string& clip) {
    for (const ClipMeta& c : a.clips)
        if (c.clip_id == clip) return &c;
    if (const auto i = parse_index(clip); i && *i < a.clips.size()) return &a.clips[*i];
    return nullptr;
}

json clip_summary(const ClipMeta& c) {
    return json{{"clip_id", c.clip_id}, {"camera", to_string(c.camera)}, {"frame_count", c.frame_count}};
}

json alignment_of(const FoulAction& a) {
    json out = json::array();
    for (const ClipMeta& c : a.clips) {
        out.push_back(json{{"clip_id", c.clip_id},
                           {"offset_frames", c.offset_frames},
                           {"replay_speed", c.replay_speed},
                           {"contact_frame", c.contact_frame ? json(*c.contact_frame) : json(nullptr)}});
    }
    return out;
}

json envelope(const FoulAction& a) {
    return json{{"action_id", a.action_id},
                {"revision", a.revision},
                {"annotation", a.annotation ? to_json(*a.annotation) : json(nullptr)},
                {"alignment", alignment_of(a)}};
}

// Clip positions for view names L, R1, R2.
std::optional<std::size_t> view_position(const FoulAction& a, const std::string& view) {
    std::vector<std::size_t> replays;
    for (std::size_t i = 0; i < a.clips.size(); ++i) {
        if (view == "L" && a.clips[i].camera == CameraKind::Live) return i;
        if (a.clips[i].camera == CameraKind::Replay) replays.push_back(i);
    }
    const std::size_t r = view == "R1" ? 0 : view == "R2" ? 1 : replays.size() + 1;
    if (r < replays.size()) return replays[r];
    return std::nullopt;
}

std::string view_name(const FoulAction& a, std::size_t pos) {
    if (a.clips[pos].camera == CameraKind::Live) return "L";
    std::size_t r = 0;
    for (std::size_t i = 0; i < pos; ++i) r += a.clips[i].camera == CameraKind::Replay;
    return "R" + std::to_string(r + 1);
}

template <typename Label>
json task_json(const std::optional<TaskPrediction>& p, std::optional<Label> truth) {
    if (!p) return nullptr;
    json top = json::array();
    for (const Ranked& r : p->top)
        top.push_back(json{{"label", to_string(static_cast<Label>(r.label))}, {"confidence", r.confidence}});
    return json{{"top2", top},
                {"probabilities", p->probabilities},
                {"ground_truth", truth ? json(to_string(*truth)) : json(nullptr)}};
}

}  // namespace

std::string encode_pgm(std::span<const double> frame, std::size_t height, std::size_t width) {
    if (frame.size() != height * width) throw ShapeError("encode_pgm: pixel count does not match dimensions");
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.reserve(out.size() + frame.size());
    for (double v : frame) out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    return out;
}

ServiceCore::ServiceCore(Manifest manifest, fs::path manifest_path,
                         const std::map<std::string, fs::path>& checkpoints)
    : manifest_(std::move(manifest)), manifest_path_(std::move(manifest_path)) {
    std::sort(manifest_.actions.begin(), manifest_.actions.end(),
              [](const FoulAction& a, const FoulAction& b) { return a.action_id < b.action_id; });
    for (const auto& [name, file] : checkpoints)
        models_.emplace(name, std::make_shared<const MvfModel>(load_checkpoint(file)));
}

std::unique_ptr<ServiceCore> ServiceCore::open(const fs::path& manifest, const std::vector<fs::path>& checkpoints) {
    const fs::path file = manifest_file(manifest);
    std::map<std::string, fs::path> named;
    for (const fs::path& c : checkpoints) named.emplace(c.stem().string(), c);
    if (!checkpoints.empty()) named.emplace("default", checkpoints.front());
    return std::make_unique<ServiceCore>(load_manifest(file), file, named);
}

std::vector<std::string> ServiceCore::checkpoint_names() const {
    std::vector<std::string> out;
    for (const auto& [name, m] : models_) out.push_back(name);
    return out;
}

HttpResponse ServiceCore::list_actions(const std::optional<std::string>& page_text,
                                       const std::optional<std::string>& size_text) const {
    std::uint64_t page = 1, page_size = 50;
    if (page_text) {
        const auto v = parse_index(*page_text);
        if (!v || *v == 0) return error(400, "bad_request", "page must be a positive integer", "page");
        page = *v;
    }
    if (size_text) {
        const auto v = parse_index(*size_text);
        if (!v || *v == 0 || *v > 1000) return error(400, "bad_request", "page_size must lie in [1, 1000]", "page_size");
        page_size = *v;
    }
    std::shared_lock lock(mutex_);
    const std::uint64_t total = manifest_.actions.size();
    json items = json::array();
    const std::uint64_t start = (page - 1) * page_size;
    for (std::uint64_t i = start; i < total && i < start + page_size; ++i) {
        const FoulAction& a = manifest_.actions[i];
        json clips = json::array();
        for (const ClipMeta& c : a.clips) clips.push_back(clip_summary(c));
        items.push_back(json{{"action_id", a.action_id},
                             {"split", to_string(a.split)},
                             {"annotated", a.annotation.has_value()},
                             {"revision", a.revision},
                             {"clips", clips}});
    }
    return json_response(200, json{{"page", page}, {"page_size", page_size}, {"total", total}, {"actions", items}});
}

HttpResponse ServiceCore::get_action(const std::string& action_id) const {
    std::shared_lock lock(mutex_);
    const FoulAction* a = manifest_.find(action_id);
    if (!a) return not_found("action '" + action_id + "'");
    json clips = json::array();
    for (const ClipMeta& c : a->clips) clips.push_back(to_json(c));
    json body = envelope(*a);
    body["split"] = to_string(a->split);
    body["clips"] = clips;
    return json_response(200, body);
}

HttpResponse ServiceCore::get_frame(const std::string& action_id, const std::string& clip,
                                    const std::string& frame) const {
    std::shared_lock lock(mutex_);
    const FoulAction* a = manifest_.find(action_id);
    if (!a) return not_found("action '" + action_id + "'");
    const ClipMeta* c = find_clip(*a, clip);
    if (!c) return not_found("clip '" + clip + "' of action '" + action_id + "'");
    const ClipMeta& meta = *c;
    const auto k = parse_index(frame);
    if (!k) return error(400, "bad_request", "frame index must be a non-negative integer", "frame");
    if (*k >= meta.frame_count)
        return error(416, "frame_out_of_range",
                     "frame " + frame + " outside [0, " + std::to_string(meta.frame_count) + ")", "frame");
    const Tensor frames = load_clip_frames(manifest_, meta);
    const std::size_t plane = std::size_t{meta.height} * meta.width;
    return {200, "image/x-portable-graymap",
            encode_pgm(frames.data().subspan(*k * plane, plane), meta.height, meta.width)};
}

HttpResponse ServiceCore::put_annotation(const std::string& action_id, const std::string& body) {
    const json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return error(400, "bad_request", "body must be a JSON object");
    if (!j.contains("revision") || !j["revision"].is_number_unsigned())
        return error(422, "validation", "revision must be a non-negative integer", "revision");
    if (!j.contains("annotation") || !j["annotation"].is_object())
        return error(422, "validation", "annotation must be an object", "annotation");
    const auto revision = j["revision"].get<std::uint64_t>();

    Annotation annotation;
    try {
        annotation = annotation_from_json(j["annotation"]);
    } catch (const ParseError& e) {
        return error(422, "validation", e.what(), e.field().empty() ? "annotation" : e.field());
    }
    if (const auto issues = check_annotation(annotation); !issues.empty())
        return error(422, "validation", issues.front().message, "annotation." + issues.front().field);

    std::unique_lock lock(mutex_);
    FoulAction* current = manifest_.find(action_id);
    if (!current) return not_found("action '" + action_id + "'");
    if (revision != current->revision)
        return error(409, "stale_revision",
                     "revision " + std::to_string(revision) + " is stale, current is " +
                         std::to_string(current->revision),
                     "revision");

    FoulAction updated = *current;
    updated.annotation = annotation;
    if (j.contains("alignment")) {
        const json& align = j["alignment"];
        if (!align.is_array()) return error(422, "validation", "alignment must be an array", "alignment");
        for (std::size_t i = 0; i < align.size(); ++i) {
            const json& item = align[i];
            const std::string where = "alignment[" + std::to_string(i) + "]";
            if (!item.is_object() || !item.contains("clip_id") || !item["clip_id"].is_string())
                return error(422, "validation", "alignment entries need a clip_id", where + ".clip_id");
            auto it = std::find_if(updated.clips.begin(), updated.clips.end(),
                                   [&](const ClipMeta& c) { return c.clip_id == item["clip_id"]; });
            if (it == updated.clips.end())
                return error(422, "validation", "unknown clip_id", where + ".clip_id");
            if (item.contains("offset_frames")) {
                const json& v = item["offset_frames"];
                if (!v.is_number_integer() || v.get<std::int64_t>() < INT32_MIN || v.get<std::int64_t>() > INT32_MAX)
                    return error(422, "validation", "offset_frames must be an integer", where + ".offset_frames");
                it->offset_frames = v.get<std::int32_t>();
            }
            if (item.contains("replay_speed")) {
                if (!item["replay_speed"].is_number())
                    return error(422, "validation", "replay_speed must be a number", where + ".replay_speed");
                it->replay_speed = item["replay_speed"].get<double>();
            }
            if (item.contains("contact_frame")) {
                const json& v = item["contact_frame"];
                if (v.is_null()) it->contact_frame.reset();
                else if (v.is_number_unsigned() && v.get<std::uint64_t>() <= UINT32_MAX)
                    it->contact_frame = v.get<std::uint32_t>();
                else return error(422, "validation", "contact_frame must be a frame index", where + ".contact_frame");
            }
            for (const FieldIssue& issue : check_clip(*it))
                return error(422, "validation", issue.message, where + "." + issue.field);
        }
    }
    try {
        validate_action(updated);
    } catch (const ValidationError& e) {
        return error(422, "validation", e.rule(), e.field());
    }
    ++updated.revision;

    Manifest next = manifest_;
    *next.find(action_id) = updated;
    save_manifest(next, manifest_path_);
    manifest_ = std::move(next);
    return json_response(200, envelope(updated));
}

HttpResponse ServiceCore::predict(const std::string& action_id, const std::string& body) const {
    json j = json::object();
    if (!body.empty()) {
        j = json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) return error(400, "bad_request", "body must be a JSON object");
    }
    std::string checkpoint = "default";
    if (j.contains("checkpoint")) {
        if (!j["checkpoint"].is_string()) return error(422, "validation", "checkpoint must be a string", "checkpoint");
        checkpoint = j["checkpoint"].get<std::string>();
    }

    std::shared_lock lock(mutex_);
    const FoulAction* a = manifest_.find(action_id);
    if (!a) return not_found("action '" + action_id + "'");
    const auto model_it = models_.find(checkpoint);
    if (model_it == models_.end())
        return error(422, "unknown_checkpoint", "no checkpoint named '" + checkpoint + "'", "checkpoint");
    const MvfModel& model = *model_it->second;

    std::vector<std::size_t> positions;
    if (j.contains("views") && !j["views"].is_null()) {
        const json& views = j["views"];
        if (!views.is_array() || views.empty())
            return error(422, "validation", "views must be a non-empty array", "views");
        for (const json& v : views) {
            if (!v.is_string()) return error(422, "validation", "view names are strings", "views");
            const auto pos = view_position(*a, v.get<std::string>());
            if (!pos) return error(422, "validation", "action has no view '" + v.get<std::string>() + "'", "views");
            if (std::find(positions.begin(), positions.end(), *pos) != positions.end())
                return error(422, "validation", "view '" + v.get<std::string>() + "' repeated", "views");
            positions.push_back(*pos);
        }
    } else {
        for (std::size_t i = 0; i < a->clips.size(); ++i) positions.push_back(i);
    }

    const ModelConfig& mc = model.config();
    std::vector<Tensor> clips;
    json used = json::array(), clip_ids = json::array();
    for (std::size_t pos : positions) {
        const ClipMeta& c = a->clips[pos];
        if (c.height != mc.height || c.width != mc.width)
            return error(422, "incompatible_checkpoint",
                         "checkpoint expects " + std::to_string(mc.height) + "x" + std::to_string(mc.width) +
                             " frames",
                         "checkpoint");
        clips.push_back(resample_frames(load_clip_frames(manifest_, c), c.contact_frame, mc.sample_fps, mc.frames));
        used.push_back(view_name(*a, pos));
        clip_ids.push_back(c.clip_id);
    }
    const Prediction p = vars::predict(model, clips, 2);
    const std::optional<Annotation>& ann = a->annotation;
    return json_response(200, json{{"action_id", a->action_id},
                                   {"checkpoint", checkpoint},
                                   {"views", used},
                                   {"clips", clip_ids},
                                   {"foul", task_json<Task1Label>(p.foul, ann ? map_task1(*ann) : std::nullopt)},
                                   {"offence", task_json<Task2Label>(p.offence, ann ? map_task2(*ann) : std::nullopt)}});
}

HttpResponse ServiceCore::handle(const std::string& method, const std::string& path,
                                 const std::map<std::string, std::string>& query, const std::string& body) {
    std::vector<std::string> parts;
    for (std::size_t start = 0; start <= path.size();) {
        const std::size_t end = std::min(path.find('/', start), path.size());
        if (end > start) parts.push_back(path.substr(start, end - start));
        start = end + 1;
    }
    auto allow = [&](const char* m) { return method == m; };
    auto method_not_allowed = [&] { return error(405, "method_not_allowed", method + " not allowed on " + path); };
    auto q = [&](const char* key) -> std::optional<std::string> {
        auto it = query.find(key);
        return it == query.end() ? std::nullopt : std::optional(it->second);
    };
    try {
        if (parts.size() < 2 || parts[0] != "api" || parts[1] != "actions") return not_found("route '" + path + "'");
        if (parts.size() == 2) return allow("GET") ? list_actions(q("page"), q("page_size")) : method_not_allowed();
        const std::string& id = parts[2];
        if (parts.size() == 3) return allow("GET") ? get_action(id) : method_not_allowed();
        if (parts.size() == 4 && parts[3] == "annotation")
            return allow("PUT") ? put_annotation(id, body) : method_not_allowed();
        if (parts.size() == 4 && parts[3] == "predict") return allow("POST") ? predict(id, body) : method_not_allowed();
        if (parts.size() == 7 && parts[3] == "clips" && parts[5] == "frames")
            return allow("GET") ? get_frame(id, parts[4], parts[6]) : method_not_allowed();
        return not_found("route '" + path + "'");
    } catch (const json::exception& e) {
        return error(400, "bad_request", e.what());
    } catch (const Error& e) {
        return error(500, "internal", e.what());
    } catch (const std::exception& e) {
        return error(500, "internal", e.what());
    }
}

struct HttpServer::Impl {
    ServiceCore& core;
    httplib::Server server;
};

HttpServer::HttpServer(ServiceCore& core) : impl_(new Impl{core, {}}) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query.emplace(k, v);
        const HttpResponse r = impl_->core.handle(req.method, req.path, query, req.body);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    impl_->server.Get(".*", route);
    impl_->server.Put(".*", route);
    impl_->server.Post(".*", route);
    impl_->server.Delete(".*", route);
    impl_->server.Patch(".*", route);
    impl_->server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
        res.status = 500;
        res.set_content(R"({"code":"internal","message":"unhandled error"})", "application/json");
    });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace vars
