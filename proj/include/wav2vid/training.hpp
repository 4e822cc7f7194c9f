#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace w2v {

/// Per-epoch loss history of one training run.
struct TrainLog {
    std::vector<double> losses;

    bool empty() const noexcept { return losses.empty(); }
    double initial() const { return losses.front(); }
    double final() const { return losses.back(); }
};

/// Trailing moving average; element i averages losses[max(0, i-window+1) .. i].
std::vector<double> smoothed(std::span<const double> losses, std::size_t window);

/// Throws TrainingFailure when `loss` is non-finite or exceeds 10x the initial loss.
void check_divergence(double loss, double initial, std::string_view what);

/// True once the smoothed loss improved by less than `tol` (relative) over the last `window` epochs.
bool converged(std::span<const double> losses, std::size_t window = 10, double tol = 1e-4);

} // namespace w2v
