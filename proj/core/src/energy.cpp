#include "stimkit/energy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "stimkit/errors.hpp"

namespace stimkit {

namespace {

constexpr double kMilliToAmp = 1e-3;

double sum_squares(std::span<const double> samples) {
    double acc = 0.0;
    for (double s : samples) acc += s * s;
    return acc;
}

}  // namespace

EnergyValue signal_energy(const CurrentSignal& signal) {
    return {sum_squares(signal.samples()) * kMilliToAmp * kMilliToAmp * signal.dt()};
}

EnergyValue signal_energy(const CurrentSignal& signal, double t0, double t1) {
    const auto samples = signal.samples();
    const auto clamp_index = [&](double t) {
        const double idx = std::ceil(t * signal.sample_rate() - 1e-9);
        return static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(samples.size())));
    };
    const std::size_t begin = clamp_index(t0);
    const std::size_t end = std::max(begin, clamp_index(t1));
    return {sum_squares(samples.subspan(begin, end - begin)) * kMilliToAmp * kMilliToAmp * signal.dt()};
}

EnergyValue closed_form_energy(const PatternSpec& spec) {
    spec.validate();
    const auto events =
        schedule_pulses(spec.amplitude_envelope(), spec.frequency_envelope(), spec.pulse, spec.duration_s);
    const double width = spec.pulse.active_seconds();
    double acc = 0.0;
    for (const auto& ev : events) {
        const double a = ev.amplitude_mA * kMilliToAmp;
        acc += a * a;
    }
    return {acc * width};
}

EnergyValue envelope_energy_estimate(const PatternSpec& spec) {
    spec.validate();
    const Envelope amp = spec.amplitude_envelope();
    const Envelope freq = spec.frequency_envelope();
    const auto integrand = [&](double t) {
        const double a = amp.value_at(t) * kMilliToAmp;
        return a * a * freq.value_at(t);
    };

    // Breakpoints of either envelope; between them both are linear.
    std::vector<double> knots = {0.0, spec.duration_s};
    for (const Envelope* env : {&amp, &freq}) {
        if (env->is_constant()) continue;
        knots.push_back(env->timing().ramp_up_s);
        knots.push_back(env->timing().ramp_up_s + env->timing().hold_s);
    }
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());

    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
        const double a = knots[i];
        const double b = std::min(knots[i + 1], spec.duration_s);
        if (b <= a) continue;
        acc += (b - a) / 6.0 * (integrand(a) + 4.0 * integrand(0.5 * (a + b)) + integrand(b));
    }
    return {acc * spec.pulse.active_seconds()};
}

EnergyProfile build_profile(Category category, const AmplitudeLadder& ladder) {
    EnergyProfile profile;
    profile.category = category;
    profile.amplitudes_mA.assign(ladder.values().begin(), ladder.values().end());
    profile.per_level.reserve(ladder.size());
    double total = 0.0;
    for (std::size_t level = 0; level < ladder.size(); ++level) {
        const auto e = closed_form_energy(PatternSpec::at_level(category, level, ladder));
        profile.per_level.push_back(e);
        total += e.a2s();
    }
    profile.mean = {total / static_cast<double>(ladder.size())};
    return profile;
}

EnergyProfile build_profile(Category category) {
    return build_profile(category, AmplitudeLadder::standard());
}

std::array<EnergyProfile, kCategoryCount> build_all_profiles(const AmplitudeLadder& ladder) {
    std::array<EnergyProfile, kCategoryCount> profiles;
    for (auto c : kAllCategories) profiles[index_of(c)] = build_profile(c, ladder);
    return profiles;
}

std::array<EnergyProfile, kCategoryCount> build_all_profiles() {
    return build_all_profiles(AmplitudeLadder::standard());
}

void write_profiles_csv(std::span<const EnergyProfile> profiles, std::ostream& out) {
    out << "category,level_index,amplitude_mA,energy_A2s\n";
    char buf[160];
    for (const auto& p : profiles) {
        const auto name = to_string(p.category);
        for (std::size_t i = 0; i < p.per_level.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.*s,%zu,%.3f,%.9e\n", static_cast<int>(name.size()), name.data(), i,
                          p.amplitudes_mA[i], p.per_level[i].a2s());
            out << buf;
        }
        std::snprintf(buf, sizeof buf, "%.*s,mean,,%.9e\n", static_cast<int>(name.size()), name.data(),
                      p.mean.a2s());
        out << buf;
    }
}

}  // namespace stimkit
