#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vars/model.hpp"
#include "vars/training.hpp"

namespace vars {

// Rows are ground truth, columns predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::vector<std::string> class_names);
    ConfusionMatrix(std::vector<std::string> class_names, std::vector<std::vector<std::size_t>> counts);

    void add(std::size_t truth, std::size_t predicted);

    std::size_t classes() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth][predicted]; }
    std::size_t row_sum(std::size_t truth) const;
    std::size_t col_sum(std::size_t predicted) const;
    std::size_t trace() const;
    std::size_t total() const;

    // Empty when the row (column) has no samples.
    std::optional<double> recall(std::size_t c) const;
    std::optional<double> precision(std::size_t c) const;

    // Counts with a recall column and a precision row.
    std::string to_csv() const;
    std::string render() const;

private:
    std::vector<std::string> names_;
    std::vector<std::vector<std::size_t>> counts_;
};

// Mean recall over classes present in the ground truth.
double balanced_accuracy(const ConfusionMatrix& cm);
// trace / total.
double accuracy(const ConfusionMatrix& cm);

// 0-based rank of `label`: classes scoring higher, or equal with a lower index,
// come first.
std::size_t label_rank(std::span<const double> scores, int label);
double topk_accuracy(const std::vector<std::vector<double>>& predictions, std::span<const int> labels, std::size_t k);

struct TaskMetrics {
    std::string task;
    std::size_t evaluated = 0;
    std::size_t excluded = 0;
    double acc1 = 0.0;
    double acc2 = 0.0;
    double balanced = 0.0;
    std::vector<std::string> absent_classes;  // left out of the balanced accuracy
    ConfusionMatrix confusion;
};

struct MetricsReport {
    std::optional<TaskMetrics> foul;
    std::optional<TaskMetrics> offence;
};

nlohmann::json to_json(const TaskMetrics& m);
nlohmann::json to_json(const MetricsReport& r);
std::string render_metrics_table(const MetricsReport& r);

// Each active head is scored on the samples carrying its label.
MetricsReport evaluate(const MvfModel& model, const std::vector<Sample>& samples);
MetricsReport evaluate(const MvfModel& model, const Manifest& m, Split split);

// Views named "L" (live clip), "R1", "R2" (first and second replay).
struct ViewSubset {
    std::string name;  // e.g. "L+R1"
    std::vector<std::string> views;
};

ViewSubset parse_view_subset(std::string_view text);
std::vector<ViewSubset> default_view_subsets();
// Clip positions of the subset's views within the sample, if all present.
std::optional<std::vector<std::size_t>> view_positions(const Sample& s, const ViewSubset& subset);

struct ViewAblationRow {
    ViewSubset subset;
    MetricsReport report;
};

struct ViewAblation {
    std::size_t actions = 0;  // actions holding every requested view
    std::vector<ViewAblationRow> rows;
};

ViewAblation ablate_views(const MvfModel& model, const std::vector<Sample>& samples,
                          const std::vector<ViewSubset>& subsets);
nlohmann::json to_json(const ViewAblation& a);
std::string render_view_table(const ViewAblation& a);

struct TemporalRow {
    int fps = 16;
    double context_seconds = 1.0;
    MetricsReport report;
};

struct TemporalAblation {
    std::vector<TemporalRow> rows;
};

inline double context_seconds(int fps) { return 16.0 / fps; }

// Trains and evaluates one model per fps; everything else stays fixed.
TemporalAblation ablate_temporal(const Manifest& m, const ModelConfig& base, const TrainConfig& train_config,
                                 std::span<const int> fps_list, std::uint64_t init_seed, Split eval_split = Split::Test,
                                 const std::function<void(int fps, const TrainResult&)>& on_run = {});
nlohmann::json to_json(const TemporalAblation& a);
std::string render_temporal_table(const TemporalAblation& a);

}  // namespace vars
