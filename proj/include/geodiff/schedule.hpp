#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/rng.hpp"
#include "geodiff/tensor.hpp"

namespace geodiff {

enum class ScheduleKind { linear, cosine };

inline const char* to_string(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "cosine";
}

inline ScheduleKind schedule_kind_from(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind '" + s + "' (expected linear or cosine)");
}

// Cumulative signal-retention table for the forward noising process:
// alpha_bar[t] is the product of (1 - beta_s) for s <= t, alpha_bar[0] = 1.
struct NoiseSchedule {
    std::size_t steps = 0;
    ScheduleKind kind = ScheduleKind::linear;
    std::vector<double> alpha_bar;

    double at(std::size_t t) const {
        if (t >= alpha_bar.size())
            throw RangeError("timestep " + std::to_string(t) + " past schedule end " +
                             std::to_string(steps));
        return alpha_bar[t];
    }
};

inline NoiseSchedule build_schedule(std::size_t steps, ScheduleKind kind) {
    if (steps == 0) throw ConfigError("schedule needs at least one step");
    NoiseSchedule s;
    s.steps = steps;
    s.kind = kind;
    s.alpha_bar.assign(steps + 1, 1.0);

    if (kind == ScheduleKind::linear) {
        const double b0 = 1e-4, b1 = 0.02;
        double prod = 1.0;
        for (std::size_t t = 1; t <= steps; ++t) {
            const double frac = steps > 1 ? double(t - 1) / double(steps - 1) : 0.0;
            prod *= 1.0 - (b0 + (b1 - b0) * frac);
            s.alpha_bar[t] = prod;
        }
    } else {
        // squared-cosine retention curve, expressed through per-step rates so
        // the tail stays strictly positive
        const auto f = [](double u) {
            const double a = (u + 0.008) / 1.008 * std::numbers::pi / 2.0;
            const double c = std::cos(a);
            return c * c;
        };
        const double f0 = f(0.0);
        double prev = 1.0, prod = 1.0;
        for (std::size_t t = 1; t <= steps; ++t) {
            const double raw = f(double(t) / double(steps)) / f0;
            const double beta = std::min(1.0 - raw / prev, 0.999);
            prod *= 1.0 - beta;
            s.alpha_bar[t] = prod;
            prev = raw;
        }
    }

    // Clamp the tail into (1e-5, 1]. The floor itself decreases with t so the
    // table stays strictly decreasing even where the clamp binds.
    for (std::size_t t = 1; t <= steps; ++t) {
        const double floor = 1e-5 * (1.0 + double(steps - t + 1) * 1e-3);
        s.alpha_bar[t] = std::min(1.0, std::max(s.alpha_bar[t], floor));
    }
    return s;
}

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, eps ~ N(0, I).
// t = 0 returns x0 unchanged, bit for bit.
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x0, std::size_t t, const NoiseSchedule& sched, Rng& rng) {
    if (t > sched.steps)
        throw RangeError("timestep " + std::to_string(t) + " past schedule end " +
                         std::to_string(sched.steps));
    if (!x0.all_finite()) throw DataError("forward_noise: input contains non-finite values");
    if (t == 0) return x0;
    const double ab = sched.alpha_bar[t];
    const double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
    Tensor<T> out = x0;
    for (auto& v : out.data) v = T(ca * double(v) + cb * rng.normal());
    return out;
}

}  // namespace geodiff
