#include "vars/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vars/errors.hpp"
#include "vars/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vars {

namespace {

std::size_t fan_in(const std::string& name, const std::map<std::string, Tensor>& params) {
    std::string weight = name;
    if (weight.ends_with(".bias")) weight = weight.substr(0, weight.size() - 5) + ".weight";
    const Shape& s = params.at(weight).shape();
    return s.size() == 3 ? s[0] * s[1] : s[0];
}

void add_dense(std::map<std::string, Tensor>& params, const std::string& prefix, std::size_t in, std::size_t out) {
    params.emplace(prefix + ".weight", Tensor::zeros({in, out}, true));
    params.emplace(prefix + ".bias", Tensor::zeros({out}, true));
}

Tensor dense(const std::map<std::string, Tensor>& p, const std::string& prefix, const Tensor& x) {
    return linear(x, p.at(prefix + ".weight"), p.at(prefix + ".bias"));
}

Tensor head(const std::map<std::string, Tensor>& p, const std::string& prefix, const Tensor& r) {
    const Tensor row = reshape(r, {1, r.numel()});
    const Tensor out = dense(p, prefix + ".fc2", relu(dense(p, prefix + ".fc1", row)));
    return reshape(out, {out.numel()});
}

template <typename E>
E enum_field(const json& j, std::string_view key) {
    const auto parsed = parse_enum<E>(j.get<std::string>());
    if (!parsed) throw ConfigError("unknown " + std::string(key) + " '" + j.get<std::string>() + "'");
    return *parsed;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
public:
    Reader(const fs::path& file, std::string bytes) : file_(file), bytes_(std::move(bytes)) {}

    const unsigned char* take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError(file_.string() + ": truncated MVFM checkpoint");
        const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
        pos_ += n;
        return p;
    }
    std::uint32_t u32() {
        const unsigned char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    std::uint64_t u64() {
        const unsigned char* p = take(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    std::string str(std::size_t n) {
        const unsigned char* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    fs::path file_;
    std::string bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void validate(const ModelConfig& c) {
    if (c.feature_dim == 0 || c.hidden_dim == 0) throw ConfigError("feature_dim and hidden_dim must be >= 1");
    if (c.frames == 0 || c.height == 0 || c.width == 0) throw ConfigError("frames, height and width must be >= 1");
    if (c.encoder == EncoderKind::TemporalConv && c.frames < kTemporalKernel)
        throw ConfigError("TemporalConv needs at least 3 frames");
    if (c.sample_fps != 5 && c.sample_fps != 8 && c.sample_fps != 12 && c.sample_fps != 16)
        throw ConfigError("sample_fps must be one of 5, 8, 12, 16");
}

json to_json(const ModelConfig& c) {
    return json{{"encoder", to_string(c.encoder)},
                {"feature_dim", c.feature_dim},
                {"aggregation", to_string(c.aggregation)},
                {"task_mode", to_string(c.task_mode)},
                {"hidden_dim", c.hidden_dim},
                {"frames", c.frames},
                {"height", c.height},
                {"width", c.width},
                {"sample_fps", c.sample_fps}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const json& v = it.value();
            if (k == "encoder") c.encoder = enum_field<EncoderKind>(v, k);
            else if (k == "feature_dim") c.feature_dim = v.get<std::size_t>();
            else if (k == "aggregation") c.aggregation = enum_field<Aggregation>(v, k);
            else if (k == "task_mode") c.task_mode = enum_field<TaskMode>(v, k);
            else if (k == "hidden_dim") c.hidden_dim = v.get<std::size_t>();
            else if (k == "frames") c.frames = v.get<std::size_t>();
            else if (k == "height") c.height = v.get<std::size_t>();
            else if (k == "width") c.width = v.get<std::size_t>();
            else if (k == "sample_fps") c.sample_fps = v.get<int>();
            else throw ConfigError("unknown model config key '" + k + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

MvfModel::MvfModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    validate(config_);
    const std::size_t pixels = config_.height * config_.width, d = config_.feature_dim, h = config_.hidden_dim;
    if (config_.encoder == EncoderKind::FramePool) {
        add_dense(params_, "encoder.fc1", pixels, d);
        add_dense(params_, "encoder.fc2", d, d);
    } else {
        add_dense(params_, "encoder.frame", pixels, d);
        params_.emplace("encoder.tconv.weight", Tensor::zeros({kTemporalKernel, d, d}, true));
        params_.emplace("encoder.tconv.bias", Tensor::zeros({d}, true));
    }
    if (has_foul_head(config_.task_mode)) {
        add_dense(params_, "head_foul.fc1", d, h);
        add_dense(params_, "head_foul.fc2", h, kTask1Classes);
    }
    if (has_offence_head(config_.task_mode)) {
        add_dense(params_, "head_off.fc1", d, h);
        add_dense(params_, "head_off.fc2", h, kTask2Classes);
    }
    Rng rng(seed);
    for (auto& [name, t] : params_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(name, params_)));
        for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
    }
}

MvfModel::MvfModel(const MvfModel& other) : config_(other.config_) {
    for (const auto& [name, t] : other.params_) {
        Tensor copy = t.detach();
        copy.set_requires_grad(true);
        params_.emplace(name, std::move(copy));
    }
}

MvfModel& MvfModel::operator=(const MvfModel& other) {
    if (this != &other) *this = MvfModel(other);
    return *this;
}

const Tensor& MvfModel::parameter(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("no parameter named '" + name + "'");
    return it->second;
}

Tensor& MvfModel::parameter(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("no parameter named '" + name + "'");
    return it->second;
}

std::size_t MvfModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void MvfModel::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

void MvfModel::zero_output_layers() {
    for (auto& [name, t] : params_)
        if (name.find(".fc2.") != std::string::npos && name.starts_with("head_"))
            std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
}

Tensor MvfModel::encode_view(const Tensor& clip) const {
    const Shape expected{config_.frames, config_.height, config_.width};
    if (clip.shape() != expected)
        throw ShapeError("encode_view: clip shape " + shape_str(clip.shape()) + " does not match model input " +
                         shape_str(expected));
    const Tensor frames = reshape(clip, {config_.frames, config_.height * config_.width});
    Tensor per_frame;
    if (config_.encoder == EncoderKind::FramePool) {
        per_frame = dense(params_, "encoder.fc2", relu(dense(params_, "encoder.fc1", frames)));
    } else {
        const Tensor h = relu(dense(params_, "encoder.frame", frames));
        per_frame = relu(temporal_conv1d(h, params_.at("encoder.tconv.weight"), params_.at("encoder.tconv.bias")));
    }
    return reduce(per_frame, 0, ReduceMode::Mean);
}

Logits MvfModel::heads(const Tensor& representation) const {
    Logits out;
    if (has_foul_head(config_.task_mode)) out.foul = head(params_, "head_foul", representation);
    if (has_offence_head(config_.task_mode)) out.offence = head(params_, "head_off", representation);
    return out;
}

Logits MvfModel::forward(std::span<const Tensor> clips) const {
    std::vector<Tensor> features;
    features.reserve(clips.size());
    for (const Tensor& c : clips) features.push_back(encode_view(c));
    return heads(aggregate(features, config_.aggregation));
}

MvfModel init_model(const ModelConfig& config, std::uint64_t seed) { return MvfModel(config, seed); }

Tensor aggregate(std::span<const Tensor> features, Aggregation mode) {
    if (features.empty()) throw DomainError("aggregate: no view features");
    if (features.size() == 1) return features[0];
    return reduce(stack(features), 0, mode == Aggregation::Mean ? ReduceMode::Mean : ReduceMode::Max);
}

std::vector<Ranked> top_k(std::span<const double> probabilities, std::size_t k) {
    std::vector<Ranked> all;
    for (std::size_t i = 0; i < probabilities.size(); ++i) all.push_back({static_cast<int>(i), probabilities[i]});
    std::stable_sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });
    all.resize(std::min(k, all.size()));
    return all;
}

TaskPrediction task_prediction(const Tensor& logits, std::size_t k) {
    const Tensor p = softmax(reshape(logits.detach(), {1, logits.numel()}));
    TaskPrediction out;
    out.probabilities.assign(p.data().begin(), p.data().end());
    out.top = top_k(out.probabilities, std::max<std::size_t>(k, 1));
    return out;
}

Prediction predict(const MvfModel& model, std::span<const Tensor> clips, std::size_t k) {
    NoGradGuard no_grad;
    const Logits logits = model.forward(clips);
    Prediction out;
    if (logits.foul) out.foul = task_prediction(*logits.foul, k);
    if (logits.offence) out.offence = task_prediction(*logits.offence, k);
    return out;
}

void save_checkpoint(const MvfModel& model, const fs::path& file) {
    std::string out = "MVFM";
    put_u32(out, kMvfmVersion);
    const std::string config = to_json(model.config()).dump();
    put_u32(out, static_cast<std::uint32_t>(config.size()));
    out += config;
    put_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& [name, t] : model.parameters()) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    write_text_atomic(file, out);
}

MvfModel load_checkpoint(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + file.string());
    Reader r(file, std::string(std::istreambuf_iterator<char>(in), {}));
    if (r.str(4) != "MVFM") throw FormatError(file.string() + ": bad magic, not an MVFM checkpoint");
    if (const auto v = r.u32(); v != kMvfmVersion)
        throw FormatError(file.string() + ": unsupported MVFM version " + std::to_string(v));
    ModelConfig config;
    try {
        config = model_config_from_json(json::parse(r.str(r.u32())));
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": bad config block: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(file.string() + ": bad config block: " + e.what());
    }
    MvfModel model(config, 0);
    const std::uint32_t count = r.u32();
    if (count != model.parameters().size())
        throw FormatError(file.string() + ": holds " + std::to_string(count) + " parameters, config implies " +
                          std::to_string(model.parameters().size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str(r.u32());
        if (!model.parameters().contains(name)) throw FormatError(file.string() + ": unexpected parameter " + name);
        Tensor& t = model.parameter(name);
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        if (shape != t.shape())
            throw FormatError(file.string() + ": parameter " + name + " has shape " + shape_str(shape) +
                              ", expected " + shape_str(t.shape()));
        for (double& v : t.mutable_data()) {
            v = std::bit_cast<double>(r.u64());
            if (!std::isfinite(v)) throw FormatError(file.string() + ": non-finite value in " + name);
        }
    }
    if (!r.done()) throw FormatError(file.string() + ": trailing bytes after parameters");
    return model;
}

}  // namespace vars
