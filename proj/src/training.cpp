#include "wav2vid/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wav2vid/errors.hpp"

namespace w2v {

std::vector<double> smoothed(std::span<const double> losses, std::size_t window)
{
    window = std::max<std::size_t>(window, 1);
    std::vector<double> out(losses.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        acc += losses[i];
        if (i >= window) {
            acc -= losses[i - window];
        }
        out[i] = acc / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

void check_divergence(double loss, double initial, std::string_view what)
{
    if (!std::isfinite(loss) || (initial > 0.0 && loss > 10.0 * initial)) {
        throw TrainingFailure(std::string(what) + " diverged: loss " + std::to_string(loss) + " vs initial " +
                              std::to_string(initial));
    }
}

bool converged(std::span<const double> losses, std::size_t window, double tol)
{
    if (losses.size() < 2 * window) {
        return false;
    }
    const auto s = smoothed(losses, window);
    const double before = s[s.size() - 1 - window];
    const double now = s.back();
    return before - now < tol * std::max(std::abs(before), 1e-12);
}

} // namespace w2v
