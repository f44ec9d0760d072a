#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vars/dataset.hpp"
#include "vars/tensor.hpp"

namespace vars {

enum class EncoderKind { FramePool, TemporalConv };
enum class Aggregation { Mean, Max };
enum class TaskMode { SingleFoul, SingleOffence, MultiTask };

template <>
struct EnumNames<EncoderKind> {
    static constexpr std::string_view field = "encoder";
    static constexpr auto names = std::to_array<std::string_view>({"FramePool", "TemporalConv"});
};
template <>
struct EnumNames<Aggregation> {
    static constexpr std::string_view field = "aggregation";
    static constexpr auto names = std::to_array<std::string_view>({"Mean", "Max"});
};
template <>
struct EnumNames<TaskMode> {
    static constexpr std::string_view field = "task_mode";
    static constexpr auto names = std::to_array<std::string_view>({"SingleFoul", "SingleOffence", "MultiTask"});
};

inline bool has_foul_head(TaskMode m) { return m != TaskMode::SingleOffence; }
inline bool has_offence_head(TaskMode m) { return m != TaskMode::SingleFoul; }

struct ModelConfig {
    EncoderKind encoder = EncoderKind::FramePool;
    std::size_t feature_dim = 64;
    Aggregation aggregation = Aggregation::Max;
    TaskMode task_mode = TaskMode::MultiTask;
    std::size_t hidden_dim = 64;
    std::size_t frames = 16;
    std::size_t height = 24;
    std::size_t width = 40;
    // Sampling rate used to cut the 16 input frames out of a clip.
    int sample_fps = 16;
};

void validate(const ModelConfig& config);
nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

inline constexpr std::size_t kTemporalKernel = 3;

// Per-task logits, each of shape [classes].
struct Logits {
    std::optional<Tensor> foul;
    std::optional<Tensor> offence;
};

class MvfModel {
public:
    MvfModel(const ModelConfig& config, std::uint64_t seed);
    MvfModel(const MvfModel& other);
    MvfModel& operator=(const MvfModel& other);
    MvfModel(MvfModel&&) noexcept = default;
    MvfModel& operator=(MvfModel&&) noexcept = default;

    const ModelConfig& config() const { return config_; }

    // Lexicographic by name.
    const std::map<std::string, Tensor>& parameters() const { return params_; }
    const Tensor& parameter(const std::string& name) const;
    Tensor& parameter(const std::string& name);
    std::size_t parameter_count() const;

    void zero_grad();
    // Zeroes the last dense layer of every head, so all outputs are uniform.
    void zero_output_layers();

    // clip [T×H×W] -> feature [D].
    Tensor encode_view(const Tensor& clip) const;
    Logits heads(const Tensor& representation) const;
    Logits forward(std::span<const Tensor> clips) const;

private:
    ModelConfig config_;
    std::map<std::string, Tensor> params_;
};

MvfModel init_model(const ModelConfig& config, std::uint64_t seed);

// Elementwise mean or max over 1-4 view features.
Tensor aggregate(std::span<const Tensor> features, Aggregation mode);

struct Ranked {
    int label;
    double confidence;
};

struct TaskPrediction {
    std::vector<double> probabilities;
    std::vector<Ranked> top;  // non-increasing confidence, ties to lower label
    int argmax() const { return top.front().label; }
};

struct Prediction {
    std::optional<TaskPrediction> foul;
    std::optional<TaskPrediction> offence;
};

std::vector<Ranked> top_k(std::span<const double> probabilities, std::size_t k);
TaskPrediction task_prediction(const Tensor& logits, std::size_t k = 2);
Prediction predict(const MvfModel& model, std::span<const Tensor> clips, std::size_t k = 2);

// "MVFM" u32 version, u32 length + config JSON, u32 count, then per parameter
// u32 name length, name, u32 rank, u32 dims, float64 little-endian values.
inline constexpr std::uint32_t kMvfmVersion = 1;
void save_checkpoint(const MvfModel& model, const std::filesystem::path& file);
MvfModel load_checkpoint(const std::filesystem::path& file);

}  // namespace vars
