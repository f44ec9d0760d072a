#include "vars/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "vars/errors.hpp"

using nlohmann::json;

namespace vars {

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> class_names)
    : names_(std::move(class_names)), counts_(names_.size(), std::vector<std::size_t>(names_.size(), 0)) {
    if (names_.empty()) throw DomainError("confusion matrix needs at least one class");
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> class_names, std::vector<std::vector<std::size_t>> counts)
    : names_(std::move(class_names)), counts_(std::move(counts)) {
    if (names_.empty()) throw DomainError("confusion matrix needs at least one class");
    if (counts_.size() != names_.size()) throw ShapeError("confusion matrix row count does not match class count");
    for (const auto& row : counts_)
        if (row.size() != names_.size()) throw ShapeError("confusion matrix is not square");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
    if (truth >= classes() || predicted >= classes())
        throw LabelError("confusion matrix: class index out of range");
    ++counts_[truth][predicted];
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
    std::size_t n = 0;
    for (std::size_t v : counts_[truth]) n += v;
    return n;
}

std::size_t ConfusionMatrix::col_sum(std::size_t predicted) const {
    std::size_t n = 0;
    for (const auto& row : counts_) n += row[predicted];
    return n;
}

std::size_t ConfusionMatrix::trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < classes(); ++i) n += counts_[i][i];
    return n;
}

std::size_t ConfusionMatrix::total() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < classes(); ++i) n += row_sum(i);
    return n;
}

std::optional<double> ConfusionMatrix::recall(std::size_t c) const {
    const std::size_t p = row_sum(c);
    if (p == 0) return std::nullopt;
    return static_cast<double>(counts_[c][c]) / static_cast<double>(p);
}

std::optional<double> ConfusionMatrix::precision(std::size_t c) const {
    const std::size_t p = col_sum(c);
    if (p == 0) return std::nullopt;
    return static_cast<double>(counts_[c][c]) / static_cast<double>(p);
}

std::string ConfusionMatrix::to_csv() const {
    auto fmt = [](std::optional<double> v) {
        if (!v) return std::string();
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", *v);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "truth\\predicted";
    for (const auto& n : names_) os << ',' << n;
    os << ",recall\n";
    for (std::size_t i = 0; i < classes(); ++i) {
        os << names_[i];
        for (std::size_t v : counts_[i]) os << ',' << v;
        os << ',' << fmt(recall(i)) << '\n';
    }
    os << "precision";
    for (std::size_t j = 0; j < classes(); ++j) os << ',' << fmt(precision(j));
    os << ",\n";
    return os.str();
}

std::string ConfusionMatrix::render() const {
    std::size_t w = 9;
    for (const auto& n : names_) w = std::max(w, n.size() + 1);
    const int iw = static_cast<int>(w);
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-*s", iw, "");
    os << buf;
    for (const auto& n : names_) {
        std::snprintf(buf, sizeof buf, "%*s", iw, n.c_str());
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "%*s\n", iw, "R");
    os << buf;
    for (std::size_t i = 0; i < classes(); ++i) {
        std::snprintf(buf, sizeof buf, "%-*s", iw, names_[i].c_str());
        os << buf;
        for (std::size_t v : counts_[i]) {
            std::snprintf(buf, sizeof buf, "%*zu", iw, v);
            os << buf;
        }
        const auto r = recall(i);
        if (r) std::snprintf(buf, sizeof buf, "%*.2f\n", iw, *r);
        else std::snprintf(buf, sizeof buf, "%*s\n", iw, "-");
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "%-*s", iw, "P");
    os << buf;
    for (std::size_t j = 0; j < classes(); ++j) {
        const auto p = precision(j);
        if (p) std::snprintf(buf, sizeof buf, "%*.2f", iw, *p);
        else std::snprintf(buf, sizeof buf, "%*s", iw, "-");
        os << buf;
    }
    os << '\n';
    return os.str();
}

double balanced_accuracy(const ConfusionMatrix& cm) {
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        if (const auto r = cm.recall(c)) {
            total += *r;
            ++present;
        }
    }
    if (present == 0) throw DomainError("balanced_accuracy: confusion matrix has no samples");
    return total / static_cast<double>(present);
}

double accuracy(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DomainError("accuracy: confusion matrix has no samples");
    return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

std::size_t label_rank(std::span<const double> scores, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= scores.size())
        throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(scores.size()) + ")");
    const auto y = static_cast<std::size_t>(label);
    std::size_t rank = 0;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > scores[y] || (scores[j] == scores[y] && j < y)) ++rank;
    return rank;
}

double topk_accuracy(const std::vector<std::vector<double>>& predictions, std::span<const int> labels,
                     std::size_t k) {
    if (k == 0) throw ConfigError("topk_accuracy: k must be >= 1");
    if (predictions.size() != labels.size()) throw ShapeError("topk_accuracy: prediction and label counts differ");
    if (predictions.empty()) throw DomainError("topk_accuracy: no predictions");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) hits += label_rank(predictions[i], labels[i]) < k;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

namespace {

template <typename Label>
std::vector<std::string> class_names() {
    std::vector<std::string> out;
    for (auto n : EnumNames<Label>::names) out.emplace_back(n);
    return out;
}

struct TaskAccumulator {
    std::string task;
    ConfusionMatrix cm;
    std::vector<std::vector<double>> probs;
    std::vector<int> labels;
    std::size_t excluded = 0;

    void add(const TaskPrediction& p, int label) {
        cm.add(static_cast<std::size_t>(label), static_cast<std::size_t>(p.argmax()));
        probs.push_back(p.probabilities);
        labels.push_back(label);
    }

    TaskMetrics finish() const {
        if (labels.empty())
            throw DomainError("evaluate: no actions with a " + task + " label in the evaluated split");
        TaskMetrics m{task, labels.size(), excluded, topk_accuracy(probs, labels, 1), topk_accuracy(probs, labels, 2),
                      balanced_accuracy(cm), {}, cm};
        for (std::size_t c = 0; c < cm.classes(); ++c)
            if (cm.row_sum(c) == 0) m.absent_classes.push_back(cm.names()[c]);
        return m;
    }
};

MetricsReport score(const MvfModel& model, const std::vector<Sample>& samples,
                    const std::function<std::optional<std::vector<Tensor>>(const Sample&)>& clips_of) {
    const TaskMode mode = model.config().task_mode;
    std::optional<TaskAccumulator> foul, off;
    if (has_foul_head(mode)) foul = TaskAccumulator{"foul", ConfusionMatrix(class_names<Task1Label>()), {}, {}, 0};
    if (has_offence_head(mode))
        off = TaskAccumulator{"offence", ConfusionMatrix(class_names<Task2Label>()), {}, {}, 0};
    for (const Sample& s : samples) {
        const bool need_foul = foul && s.foul, need_off = off && s.offence;
        if (foul && !s.foul) ++foul->excluded;
        if (off && !s.offence) ++off->excluded;
        if (!need_foul && !need_off) continue;
        const auto clips = clips_of(s);
        if (!clips) continue;
        const Prediction p = predict(model, *clips, 2);
        if (need_foul) foul->add(*p.foul, *s.foul);
        if (need_off) off->add(*p.offence, *s.offence);
    }
    MetricsReport r;
    if (foul) r.foul = foul->finish();
    if (off) r.offence = off->finish();
    return r;
}

json opt(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

}  // namespace

MetricsReport evaluate(const MvfModel& model, const std::vector<Sample>& samples) {
    return score(model, samples, [](const Sample& s) { return std::optional(s.clips()); });
}

MetricsReport evaluate(const MvfModel& model, const Manifest& m, Split split) {
    return evaluate(model, load_samples(m, split, model.config()));
}

json to_json(const TaskMetrics& m) {
    json recall = json::object(), precision = json::object();
    for (std::size_t c = 0; c < m.confusion.classes(); ++c) {
        recall[m.confusion.names()[c]] = opt(m.confusion.recall(c));
        precision[m.confusion.names()[c]] = opt(m.confusion.precision(c));
    }
    json counts = json::array();
    for (std::size_t i = 0; i < m.confusion.classes(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.confusion.classes(); ++j) row.push_back(m.confusion.at(i, j));
        counts.push_back(row);
    }
    return json{{"evaluated", m.evaluated},
                {"excluded", m.excluded},
                {"acc@1", m.acc1},
                {"acc@2", m.acc2},
                {"balanced_accuracy", m.balanced},
                {"absent_classes", m.absent_classes},
                {"recall", recall},
                {"precision", precision},
                {"classes", m.confusion.names()},
                {"confusion", counts}};
}

json to_json(const MetricsReport& r) {
    json out = json::object();
    if (r.foul) out["foul"] = to_json(*r.foul);
    if (r.offence) out["offence"] = to_json(*r.offence);
    return out;
}

std::string render_metrics_table(const MetricsReport& r) {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-8s %9s %8s %7s %7s %7s\n", "Task", "evaluated", "excluded", "acc@1", "acc@2",
                  "BA");
    os << buf;
    for (const auto* t : {r.foul ? &*r.foul : nullptr, r.offence ? &*r.offence : nullptr}) {
        if (!t) continue;
        std::snprintf(buf, sizeof buf, "%-8s %9zu %8zu %7.3f %7.3f %7.3f\n", t->task.c_str(), t->evaluated,
                      t->excluded, t->acc1, t->acc2, t->balanced);
        os << buf;
    }
    return os.str();
}

ViewSubset parse_view_subset(std::string_view text) {
    ViewSubset s{std::string(text), {}};
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find('+', start), text.size());
        const std::string v(text.substr(start, end - start));
        if (v != "L" && v != "R1" && v != "R2")
            throw ConfigError("unknown view '" + v + "' in subset '" + std::string(text) + "' (use L, R1, R2)");
        if (std::find(s.views.begin(), s.views.end(), v) != s.views.end())
            throw ConfigError("view '" + v + "' repeated in subset '" + std::string(text) + "'");
        s.views.push_back(v);
        start = end + 1;
    }
    return s;
}

std::vector<ViewSubset> default_view_subsets() {
    std::vector<ViewSubset> out;
    for (const char* s : {"L", "R1", "L+R1", "R1+R2", "L+R1+R2"}) out.push_back(parse_view_subset(s));
    return out;
}

std::optional<std::vector<std::size_t>> view_positions(const Sample& s, const ViewSubset& subset) {
    std::optional<std::size_t> live;
    std::vector<std::size_t> replays;
    for (std::size_t i = 0; i < s.cameras.size(); ++i) {
        if (s.cameras[i] == CameraKind::Live && !live) live = i;
        if (s.cameras[i] == CameraKind::Replay) replays.push_back(i);
    }
    std::vector<std::size_t> out;
    for (const std::string& v : subset.views) {
        if (v == "L") {
            if (!live) return std::nullopt;
            out.push_back(*live);
        } else {
            const std::size_t r = v == "R1" ? 0 : 1;
            if (replays.size() <= r) return std::nullopt;
            out.push_back(replays[r]);
        }
    }
    return out;
}

ViewAblation ablate_views(const MvfModel& model, const std::vector<Sample>& samples,
                          const std::vector<ViewSubset>& subsets) {
    if (subsets.empty()) throw ConfigError("ablate_views: no view subsets");
    ViewSubset all{"all", {}};
    for (const ViewSubset& s : subsets) {
        if (s.views.empty()) throw ConfigError("ablate_views: empty view subset");
        for (const std::string& v : s.views)
            if (std::find(all.views.begin(), all.views.end(), v) == all.views.end()) all.views.push_back(v);
    }
    std::vector<Sample> eligible;
    for (const Sample& s : samples)
        if (view_positions(s, all) && usable_for(s, model.config().task_mode)) eligible.push_back(s);
    if (eligible.empty()) throw DomainError("ablate_views: no action has every requested view");

    ViewAblation out;
    out.actions = eligible.size();
    for (const ViewSubset& subset : subsets) {
        auto report = score(model, eligible, [&](const Sample& s) -> std::optional<std::vector<Tensor>> {
            return s.clips(*view_positions(s, subset));
        });
        out.rows.push_back({subset, std::move(report)});
    }
    return out;
}

json to_json(const ViewAblation& a) {
    json rows = json::array();
    for (const auto& r : a.rows) rows.push_back(json{{"views", r.subset.name}, {"metrics", to_json(r.report)}});
    return json{{"actions", a.actions}, {"rows", rows}};
}

std::string render_view_table(const ViewAblation& a) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "View ablation on %zu actions\n", a.actions);
    os << buf;
    std::snprintf(buf, sizeof buf, "%-10s | %-23s | %-23s\n", "Views", "Type of foul", "Offence severity");
    os << buf;
    std::snprintf(buf, sizeof buf, "%-10s | %7s %7s %7s | %7s %7s %7s\n", "", "acc@1", "acc@2", "BA", "acc@1", "acc@2",
                  "BA");
    os << buf;
    auto cells = [](const std::optional<TaskMetrics>& t) {
        char c[32];
        if (t) std::snprintf(c, sizeof c, "%7.3f %7.3f %7.3f", t->acc1, t->acc2, t->balanced);
        else std::snprintf(c, sizeof c, "%7s %7s %7s", "-", "-", "-");
        return std::string(c);
    };
    for (const auto& r : a.rows) {
        std::snprintf(buf, sizeof buf, "%-10s | %s | %s\n", r.subset.name.c_str(), cells(r.report.foul).c_str(),
                      cells(r.report.offence).c_str());
        os << buf;
    }
    return os.str();
}

TemporalAblation ablate_temporal(const Manifest& m, const ModelConfig& base, const TrainConfig& train_config,
                                 std::span<const int> fps_list, std::uint64_t init_seed, Split eval_split,
                                 const std::function<void(int, const TrainResult&)>& on_run) {
    if (fps_list.empty()) throw ConfigError("ablate_temporal: no fps settings");
    TemporalAblation out;
    for (int fps : fps_list) {
        ModelConfig config = base;
        config.sample_fps = fps;
        validate(config);
        TrainResult result = train(init_model(config, init_seed), m, train_config);
        MetricsReport report = evaluate(result.best, m, eval_split);
        if (on_run) on_run(fps, result);
        out.rows.push_back({fps, context_seconds(fps), std::move(report)});
    }
    return out;
}

json to_json(const TemporalAblation& a) {
    json rows = json::array();
    for (const auto& r : a.rows)
        rows.push_back(json{{"fps", r.fps}, {"context_seconds", r.context_seconds}, {"metrics", to_json(r.report)}});
    return json{{"rows", rows}};
}

std::string render_temporal_table(const TemporalAblation& a) {
    std::ostringstream os;
    char buf[64];
    auto row = [&](const char* label, auto cell) {
        std::snprintf(buf, sizeof buf, "%-20s", label);
        os << buf;
        for (const auto& r : a.rows) os << cell(r);
        os << '\n';
    };
    auto fmt = [&](const char* f, double v) {
        std::snprintf(buf, sizeof buf, f, v);
        return std::string(buf);
    };
    row("Frames per second", [&](const TemporalRow& r) { return fmt("%8.0f", r.fps); });
    row("Temporal context", [&](const TemporalRow& r) { return fmt("%7.1fs", r.context_seconds); });
    auto metric = [&](const char* label, bool foul, double TaskMetrics::*field) {
        row(label, [&](const TemporalRow& r) {
            const auto& t = foul ? r.report.foul : r.report.offence;
            return t ? fmt("%8.3f", (*t).*field) : std::string("       -");
        });
    };
    metric("Foul acc@1", true, &TaskMetrics::acc1);
    metric("Foul BA", true, &TaskMetrics::balanced);
    metric("Offence acc@1", false, &TaskMetrics::acc1);
    metric("Offence BA", false, &TaskMetrics::balanced);
    return os.str();
}

}  // namespace vars
