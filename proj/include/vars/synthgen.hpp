#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "vars/dataset.hpp"
#include "vars/rng.hpp"

namespace vars {

// Class proportions of the foul-type property in the released dataset,
// renormalized over the eight Task 1 classes.
std::array<double, kTask1Classes> reference_class_distribution();
std::array<double, kTask1Classes> uniform_class_distribution();

struct GenConfig {
    std::size_t n_actions = 64;
    std::uint32_t frames_per_clip = 52;
    std::uint32_t height = 24;
    std::uint32_t width = 40;
    std::array<double, kTask1Classes> class_distribution = reference_class_distribution();
    double live_informative_prob = 0.5;
    // Probability of 1, 2 and 3 replay clips next to the live clip.
    std::array<double, 3> replay_count_distribution{0.75, 0.20, 0.05};
    double noise_std = 0.05;
    std::uint64_t seed = 0;
    // (train, valid, test) shares, assigned over the action index order.
    std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
    bool temporal_ablation = false;
    std::string dataset_name = "synthetic";
};

// Throws ConfigError when the configuration cannot be satisfied.
void validate(const GenConfig& config);
nlohmann::json to_json(const GenConfig& config);
// Overlays the keys present in `j` onto `base`.
GenConfig gen_config_from_json(const nlohmann::json& j, GenConfig base = {});

// Motion pattern drawn for one foul class.
struct ClassSignature {
    double direction_deg;  // attacker approach direction
    double speed;          // pixels per live frame
    bool victim_recoils;   // second blob pushed away after contact
};

const ClassSignature& class_signature(Task1Label label);

// Fills all ten properties consistently with the class; offence and severity
// follow the per-class referee statistics.
Annotation annotate_synthetic(Task1Label label, Rng& rng);

// Contact frame used for every generated live clip.
std::uint32_t synthetic_contact_frame(std::uint32_t frames_per_clip);

// Manifest (metadata, annotations, splits) without touching the filesystem.
Manifest plan_dataset(const GenConfig& config);

// Frames of one clip of `action_index`, frame-major, values in [0, 1].
std::vector<float> render_clip(const GenConfig& config, std::size_t action_index, std::size_t clip_index);

// Writes manifest.json, gen_config.json and clips/*.mvfc under out_dir.
Manifest generate(const GenConfig& config, const std::filesystem::path& out_dir);

}  // namespace vars
