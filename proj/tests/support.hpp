#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "vars/rng.hpp"
#include "vars/training.hpp"
#include "vars/tensor.hpp"

namespace test {

inline vars::Tensor random_tensor(vars::Rng& rng, const vars::Shape& shape, double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = false) {
    std::vector<double> v(vars::shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return vars::Tensor(shape, std::move(v), requires_grad);
}

// Sample with random pixel views and uniformly drawn labels.
inline vars::Sample random_sample(vars::Rng& rng, const vars::ModelConfig& config, std::size_t index,
                                  std::size_t views = 2) {
    vars::Sample s;
    s.action_id = "r" + std::to_string(index);
    s.view_shape = {config.frames, config.height, config.width};
    for (std::size_t v = 0; v < views; ++v) {
        s.cameras.push_back(v == 0 ? vars::CameraKind::Live : vars::CameraKind::Replay);
        std::vector<float> pixels(vars::shape_numel(s.view_shape));
        for (float& x : pixels) x = static_cast<float>(rng.uniform(0.0, 1.0));
        s.views.push_back(std::move(pixels));
    }
    s.foul = static_cast<int>(rng.below(vars::kTask1Classes));
    s.offence = static_cast<int>(rng.below(vars::kTask2Classes));
    return s;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("vars_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

}  // namespace test
