#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

#include "stimkit/category.hpp"
#include "stimkit/signalgen.hpp"

namespace stimkit {

// Signal energy, the time integral of squared current, in A²·s.
struct EnergyValue {
    double value = 0.0;

    double a2s() const noexcept { return value; }
    // Same quantity in µA²·s, the unit used for display.
    double micro() const noexcept { return value * 1e12; }

    auto operator<=>(const EnergyValue&) const = default;
};

// Rectangle rule over the sampled waveform, currents converted to amperes.
EnergyValue signal_energy(const CurrentSignal& signal);

// Energy of the samples covering [t0, t1), with sample k at time k·dt.
EnergyValue signal_energy(const CurrentSignal& signal, double t0, double t1);

// Sum over the scheduled pulse events of a(t_k)² · active width. Independent
// of any sampling grid.
EnergyValue closed_form_energy(const PatternSpec& spec);

// Continuous-envelope approximation: active width times the integral of
// a(t)² f(t). Exact per segment by Simpson's rule (the integrand is cubic).
// Cross-check only; the event-list sum is authoritative.
EnergyValue envelope_energy_estimate(const PatternSpec& spec);

struct EnergyProfile {
    Category category = Category::Tonic100;
    std::vector<double> amplitudes_mA;   // ladder values the profile was built over
    std::vector<EnergyValue> per_level;  // one per ladder level
    EnergyValue mean;

    std::size_t size() const noexcept { return per_level.size(); }
};

EnergyProfile build_profile(Category category, const AmplitudeLadder& ladder);
EnergyProfile build_profile(Category category);

// Profiles for all eight categories over the standard ladder, indexed by
// index_of(Category).
std::array<EnergyProfile, kCategoryCount> build_all_profiles(const AmplitudeLadder& ladder);
std::array<EnergyProfile, kCategoryCount> build_all_profiles();

// `category,level_index,amplitude_mA,energy_A2s` rows plus one
// `category,mean,,<mean>` summary row per profile.
void write_profiles_csv(std::span<const EnergyProfile> profiles, std::ostream& out);

}  // namespace stimkit
