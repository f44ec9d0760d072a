#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vars/dataset.hpp"
#include "vars/model.hpp"

namespace vars {

struct TrainConfig {
    double lr0 = 1e-4;
    double lr_decay = 0.95;  // per epoch
    std::size_t batch_size = 8;
    std::size_t epochs = 10;
    double alpha_foul = 1.0;
    double alpha_off = 1.0;
    std::uint64_t seed = 0;
    bool class_weighting = false;  // inverse-frequency cross-entropy weights
};

void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

double epoch_lr(const TrainConfig& config, std::size_t epoch);

struct OptimState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// One bias-corrected Adam update of every parameter from its grad.
void adam_step(const std::map<std::string, Tensor>& params, OptimState& state, double lr);

// Indices of the T frames sampled around the contact frame at `fps`
// (base rate 16): clamp(round(contact + (k - T/2) * 16 / fps), 0, F - 1).
// A missing contact frame falls back to the clip midpoint.
std::vector<std::size_t> resample_indices(std::size_t frame_count, std::optional<std::uint32_t> contact_frame,
                                          int fps, std::size_t frames = 16);
Tensor resample_frames(const Tensor& clip, std::optional<std::uint32_t> contact_frame, int fps,
                       std::size_t frames = 16);

// One action, its views already resampled to the model input.
struct Sample {
    std::string action_id;
    std::vector<CameraKind> cameras;
    std::vector<std::vector<float>> views;  // each [T×H×W]
    Shape view_shape;
    std::optional<int> foul;
    std::optional<int> offence;

    Tensor view(std::size_t i) const;
    std::vector<Tensor> clips() const;
    std::vector<Tensor> clips(std::span<const std::size_t> subset) const;
};

// Every action of `split`, labels left empty where a task does not apply.
std::vector<Sample> load_samples(const Manifest& m, Split split, const ModelConfig& config);
bool usable_for(const Sample& s, TaskMode mode);
std::vector<Sample> filter_for(const std::vector<Sample>& samples, TaskMode mode);

// Inverse class frequencies N / (C * n_c); zero for absent classes.
std::vector<double> class_weights(const std::vector<Sample>& samples, bool foul, std::size_t classes);

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> train_loss_foul;
    std::optional<double> train_loss_off;
    std::optional<double> valid_loss;
    std::optional<double> valid_acc_foul;
    std::optional<double> valid_acc_off;
};

nlohmann::json to_json(const std::vector<EpochRecord>& history);

struct TrainResult {
    MvfModel model;  // after the last epoch
    MvfModel best;   // lowest validation loss (last epoch without a valid split)
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&, const MvfModel&)>;

// Task mode comes from the model config.
TrainResult train(MvfModel model, const std::vector<Sample>& train_set, const std::vector<Sample>& valid_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});
TrainResult train(MvfModel model, const Manifest& m, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Weighted total loss of one batch, recorded on the active tape.
Tensor batch_loss(const MvfModel& model, std::span<const Sample* const> batch, const TrainConfig& config,
                  std::span<const double> foul_weights = {}, std::span<const double> off_weights = {},
                  double* foul_loss = nullptr, double* off_loss = nullptr);

// Largest relative error between the analytic and central-difference
// gradient of batch_loss over every parameter of a copy of `model`.
double model_grad_check(const MvfModel& model, std::span<const Sample* const> batch, const TrainConfig& config,
                        double h = 1e-5);

}  // namespace vars
