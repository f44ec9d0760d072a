#include <cmath>
#include <map>

#include "vars/dataset.hpp"
#include "vars/errors.hpp"
#include "vars/rng.hpp"

namespace vars {

namespace {

constexpr std::array<Split, 3> kSplits{Split::Train, Split::Valid, Split::Test};

}  // namespace

Manifest split_actions(Manifest m, std::uint64_t seed, std::array<double, 3> fractions) {
    double total = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0) || !std::isfinite(f)) throw ConfigError("split fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1, got " + std::to_string(total));

    // Strata keyed by Task 2 label; -1 collects actions without one.
    std::map<int, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < m.actions.size(); ++i) {
        const auto& ann = m.actions[i].annotation;
        std::optional<Task2Label> label = ann ? map_task2(*ann) : std::nullopt;
        strata[label ? static_cast<int>(*label) : -1].push_back(i);
    }

    for (auto& [key, members] : strata) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(key + 1)));
        rng.shuffle(std::span<std::size_t>(members));
        const std::size_t n = members.size();
        if (key >= 0) {
            // Cumulative rounding keeps every split within one action of its share.
            const auto cut1 = static_cast<std::size_t>(std::floor(n * fractions[0] + 0.5));
            const auto cut2 = std::max(cut1, static_cast<std::size_t>(std::floor(n * (fractions[0] + fractions[1]) + 0.5)));
            for (std::size_t j = 0; j < n; ++j)
                m.actions[members[j]].split = j < cut1 ? Split::Train : j < std::min(cut2, n) ? Split::Valid : Split::Test;
        } else {
            // Smooth weighted round-robin.
            std::array<double, 3> credit{};
            for (std::size_t j = 0; j < n; ++j) {
                std::size_t pick = 0;
                for (std::size_t s = 0; s < 3; ++s) {
                    credit[s] += fractions[s];
                    if (credit[s] > credit[pick]) pick = s;
                }
                credit[pick] -= 1.0;
                m.actions[members[j]].split = kSplits[pick];
            }
        }
    }
    return m;
}

}  // namespace vars
