#include "vars/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vars/errors.hpp"
#include "vars/rng.hpp"

using nlohmann::json;

namespace vars {

void validate(const TrainConfig& c) {
    if (!(c.lr0 > 0.0) || !std::isfinite(c.lr0)) throw ConfigError("lr0 must be positive");
    if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
    if (c.batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(c.alpha_foul >= 0.0) || !(c.alpha_off >= 0.0)) throw ConfigError("task weights must be non-negative");
}

json to_json(const TrainConfig& c) {
    return json{{"lr0", c.lr0},
                {"lr_decay", c.lr_decay},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"alpha_foul", c.alpha_foul},
                {"alpha_off", c.alpha_off},
                {"seed", c.seed},
                {"class_weighting", c.class_weighting}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const json& v = it.value();
            if (k == "lr0") c.lr0 = v.get<double>();
            else if (k == "lr_decay") c.lr_decay = v.get<double>();
            else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (k == "epochs") c.epochs = v.get<std::size_t>();
            else if (k == "alpha_foul") c.alpha_foul = v.get<double>();
            else if (k == "alpha_off") c.alpha_off = v.get<double>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "class_weighting") c.class_weighting = v.get<bool>();
            else throw ConfigError("unknown train config key '" + k + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
}

double epoch_lr(const TrainConfig& c, std::size_t epoch) {
    return c.lr0 * std::pow(c.lr_decay, static_cast<double>(epoch));
}

void adam_step(const std::map<std::string, Tensor>& params, OptimState& s, double lr) {
    for (const auto& [name, t] : params)
        if (!t.has_grad()) throw ContractError("adam_step: parameter '" + name + "' has no gradient");
    ++s.t;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    for (const auto& [name, param] : params) {
        Tensor t = param;
        auto& m = s.m[name];
        auto& v = s.v[name];
        if (m.size() != t.numel()) m.assign(t.numel(), 0.0);
        if (v.size() != t.numel()) v.assign(t.numel(), 0.0);
        const auto g = t.grad();
        auto theta = t.mutable_data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
            v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
            theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
        }
    }
}

std::vector<std::size_t> resample_indices(std::size_t frame_count, std::optional<std::uint32_t> contact_frame,
                                          int fps, std::size_t frames) {
    if (fps != 5 && fps != 8 && fps != 12 && fps != 16) throw ConfigError("fps must be one of 5, 8, 12, 16");
    if (frame_count == 0) throw DomainError("resample_frames: empty clip");
    const double contact = contact_frame ? static_cast<double>(*contact_frame) : static_cast<double>(frame_count / 2);
    const auto half = static_cast<double>(frames / 2);
    std::vector<std::size_t> idx(frames);
    for (std::size_t k = 0; k < frames; ++k) {
        const double pos = std::round(contact + (static_cast<double>(k) - half) * 16.0 / fps);
        idx[k] = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(frame_count - 1)));
    }
    return idx;
}

Tensor resample_frames(const Tensor& clip, std::optional<std::uint32_t> contact_frame, int fps, std::size_t frames) {
    if (clip.rank() != 3) throw ShapeError("resample_frames: expected [F×H×W], got " + shape_str(clip.shape()));
    const std::size_t plane = clip.dim(1) * clip.dim(2);
    std::vector<double> out;
    out.reserve(frames * plane);
    for (std::size_t i : resample_indices(clip.dim(0), contact_frame, fps, frames)) {
        const auto src = clip.data().subspan(i * plane, plane);
        out.insert(out.end(), src.begin(), src.end());
    }
    return Tensor({frames, clip.dim(1), clip.dim(2)}, std::move(out));
}

Tensor Sample::view(std::size_t i) const {
    const auto& v = views.at(i);
    return Tensor(view_shape, std::vector<double>(v.begin(), v.end()));
}

std::vector<Tensor> Sample::clips() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < views.size(); ++i) out.push_back(view(i));
    return out;
}

std::vector<Tensor> Sample::clips(std::span<const std::size_t> subset) const {
    std::vector<Tensor> out;
    for (std::size_t i : subset) out.push_back(view(i));
    return out;
}

std::vector<Sample> load_samples(const Manifest& m, Split split, const ModelConfig& config) {
    std::vector<Sample> out;
    for (std::size_t ai : m.indices_in(split)) {
        const FoulAction& a = m.actions[ai];
        Sample s;
        s.action_id = a.action_id;
        s.view_shape = {config.frames, config.height, config.width};
        for (const ClipMeta& c : a.clips) {
            if (c.height != config.height || c.width != config.width)
                throw ShapeError("clip " + c.clip_id + " is " + std::to_string(c.height) + "x" +
                                 std::to_string(c.width) + ", model expects " + std::to_string(config.height) + "x" +
                                 std::to_string(config.width));
            const Tensor frames = resample_frames(load_clip_frames(m, c), c.contact_frame, config.sample_fps,
                                                  config.frames);
            s.cameras.push_back(c.camera);
            s.views.emplace_back(frames.data().begin(), frames.data().end());
        }
        if (a.annotation) {
            if (auto l = map_task1(*a.annotation)) s.foul = static_cast<int>(*l);
            if (auto l = map_task2(*a.annotation)) s.offence = static_cast<int>(*l);
        }
        out.push_back(std::move(s));
    }
    return out;
}

bool usable_for(const Sample& s, TaskMode mode) {
    return (!has_foul_head(mode) || s.foul) && (!has_offence_head(mode) || s.offence);
}

std::vector<Sample> filter_for(const std::vector<Sample>& samples, TaskMode mode) {
    std::vector<Sample> out;
    for (const Sample& s : samples)
        if (usable_for(s, mode)) out.push_back(s);
    return out;
}

std::vector<double> class_weights(const std::vector<Sample>& samples, bool foul, std::size_t classes) {
    std::vector<double> counts(classes, 0.0);
    double n = 0.0;
    for (const Sample& s : samples) {
        const auto& label = foul ? s.foul : s.offence;
        if (!label) continue;
        counts[static_cast<std::size_t>(*label)] += 1.0;
        n += 1.0;
    }
    std::vector<double> w(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c)
        if (counts[c] > 0) w[c] = n / (static_cast<double>(classes) * counts[c]);
    return w;
}

json to_json(const std::vector<EpochRecord>& history) {
    json out = json::array();
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    for (const EpochRecord& r : history) {
        out.push_back(json{{"epoch", r.epoch},
                           {"lr", r.lr},
                           {"train_loss", r.train_loss},
                           {"train_loss_foul", opt(r.train_loss_foul)},
                           {"train_loss_off", opt(r.train_loss_off)},
                           {"valid_loss", opt(r.valid_loss)},
                           {"valid_acc_foul", opt(r.valid_acc_foul)},
                           {"valid_acc_off", opt(r.valid_acc_off)}});
    }
    return out;
}

Tensor batch_loss(const MvfModel& model, std::span<const Sample* const> batch, const TrainConfig& config,
                  std::span<const double> foul_weights, std::span<const double> off_weights, double* foul_loss,
                  double* off_loss) {
    const TaskMode mode = model.config().task_mode;
    std::vector<Tensor> foul_logits, off_logits;
    std::vector<int> foul_labels, off_labels;
    for (const Sample* s : batch) {
        const Logits l = model.forward(s->clips());
        if (l.foul) {
            if (!s->foul) throw ContractError("action " + s->action_id + " has no foul class label");
            foul_logits.push_back(*l.foul);
            foul_labels.push_back(*s->foul);
        }
        if (l.offence) {
            if (!s->offence) throw ContractError("action " + s->action_id + " has no offence label");
            off_logits.push_back(*l.offence);
            off_labels.push_back(*s->offence);
        }
    }
    std::optional<Tensor> lf, lo;
    if (has_foul_head(mode)) {
        lf = softmax_cross_entropy(stack(foul_logits), foul_labels, foul_weights);
        if (foul_loss) *foul_loss = lf->item();
    }
    if (has_offence_head(mode)) {
        lo = softmax_cross_entropy(stack(off_logits), off_labels, off_weights);
        if (off_loss) *off_loss = lo->item();
    }
    if (mode == TaskMode::SingleFoul) return *lf;
    if (mode == TaskMode::SingleOffence) return *lo;
    return add(scale(*lf, config.alpha_foul), scale(*lo, config.alpha_off));
}

namespace {

struct ValidStats {
    double loss = 0.0;
    std::optional<double> acc_foul, acc_off;
};

double single_ce(const Tensor& logits, int label) {
    const int labels[] = {label};
    return softmax_cross_entropy(reshape(logits, {1, logits.numel()}), labels).item();
}

ValidStats validation(const MvfModel& model, const std::vector<Sample>& set, const TrainConfig& config) {
    NoGradGuard no_grad;
    const TaskMode mode = model.config().task_mode;
    ValidStats out;
    std::size_t foul_hits = 0, off_hits = 0;
    for (const Sample& s : set) {
        const Logits l = model.forward(s.clips());
        double lf = 0.0, lo = 0.0;
        if (l.foul) {
            lf = single_ce(*l.foul, *s.foul);
            foul_hits += task_prediction(*l.foul, 1).argmax() == *s.foul;
        }
        if (l.offence) {
            lo = single_ce(*l.offence, *s.offence);
            off_hits += task_prediction(*l.offence, 1).argmax() == *s.offence;
        }
        out.loss += mode == TaskMode::SingleFoul      ? lf
                    : mode == TaskMode::SingleOffence ? lo
                                                      : config.alpha_foul * lf + config.alpha_off * lo;
    }
    const auto n = static_cast<double>(set.size());
    out.loss /= n;
    if (has_foul_head(mode)) out.acc_foul = static_cast<double>(foul_hits) / n;
    if (has_offence_head(mode)) out.acc_off = static_cast<double>(off_hits) / n;
    return out;
}

}  // namespace

TrainResult train(MvfModel model, const std::vector<Sample>& train_in, const std::vector<Sample>& valid_in,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
    validate(config);
    const TaskMode mode = model.config().task_mode;
    const std::vector<Sample> train_set = filter_for(train_in, mode);
    const std::vector<Sample> valid_set = filter_for(valid_in, mode);
    if (train_set.empty()) throw ConfigError("train: no training actions usable for " + std::string(to_string(mode)));

    std::vector<double> fw, ow;
    if (config.class_weighting) {
        if (has_foul_head(mode)) fw = class_weights(train_set, true, kTask1Classes);
        if (has_offence_head(mode)) ow = class_weights(train_set, false, kTask2Classes);
    }

    TrainResult result{model, model, 0, {}};
    OptimState state;
    Rng rng(config.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    double best_loss = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = epoch_lr(config, epoch);
        rng.shuffle(std::span<std::size_t>(order));
        double total = 0.0, foul_total = 0.0, off_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::vector<const Sample*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
                batch.push_back(&train_set[order[i]]);
            double lf = 0.0, lo = 0.0;
            Tape tape;
            const Tensor loss = batch_loss(model, batch, config, fw, ow, &lf, &lo);
            model.zero_grad();
            tape.backward(loss);
            adam_step(model.parameters(), state, rec.lr);
            total += loss.item();
            foul_total += lf;
            off_total += lo;
            ++batches;
        }
        rec.train_loss = total / static_cast<double>(batches);
        if (has_foul_head(mode)) rec.train_loss_foul = foul_total / static_cast<double>(batches);
        if (has_offence_head(mode)) rec.train_loss_off = off_total / static_cast<double>(batches);

        if (!valid_set.empty()) {
            const ValidStats v = validation(model, valid_set, config);
            rec.valid_loss = v.loss;
            rec.valid_acc_foul = v.acc_foul;
            rec.valid_acc_off = v.acc_off;
            if (v.loss < best_loss) {
                best_loss = v.loss;
                result.best = model;
                result.best_epoch = rec.epoch;
            }
        } else {
            result.best = model;
            result.best_epoch = rec.epoch;
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec, model);
    }
    model.zero_grad();
    result.model = std::move(model);
    if (config.epochs == 0) result.best = result.model;
    return result;
}

TrainResult train(MvfModel model, const Manifest& m, const TrainConfig& config, const EpochCallback& on_epoch) {
    const std::vector<Sample> train_set = load_samples(m, Split::Train, model.config());
    const std::vector<Sample> valid_set = load_samples(m, Split::Valid, model.config());
    return train(std::move(model), train_set, valid_set, config, on_epoch);
}

double model_grad_check(const MvfModel& model, std::span<const Sample* const> batch, const TrainConfig& config,
                        double h) {
    const MvfModel copy = model;
    std::vector<Tensor> params;
    for (const auto& [name, t] : copy.parameters()) params.push_back(t);
    return grad_check([&] { return batch_loss(copy, batch, config); }, params, h);
}

}  // namespace vars
