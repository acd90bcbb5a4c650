#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "stimkit/category.hpp"

namespace stimkit {

// Hardware safety ceiling on output current.
inline constexpr double kMaxCurrentMilliamps = 3.0;
// Amplitude-modulated patterns ramp between high - 0.3 mA and high.
inline constexpr double kModulationDepthMilliamps = 0.3;
inline constexpr double kDefaultDurationSeconds = 3.0;
inline constexpr double kDefaultSampleRateHz = 1.0e6;
inline constexpr double kMinSampleRateHz = 1.0e5;
inline constexpr std::size_t kLadderSize = 26;

// The 26 selectable intensity levels, 0.5 mA to 3.0 mA in 0.1 mA steps.
class AmplitudeLadder {
public:
    static AmplitudeLadder standard();

    double operator[](std::size_t level) const { return levels_.at(level); }
    std::size_t size() const noexcept { return levels_.size(); }
    std::span<const double> values() const noexcept { return levels_; }

    // Index whose value equals `milliamps` to within 1 nA, if any.
    std::optional<std::size_t> find(double milliamps) const noexcept;

private:
    AmplitudeLadder() = default;
    std::array<double, kLadderSize> levels_{};
};

AmplitudeLadder amplitude_ladder();

// Widths of the two phases of one pulse, in microseconds.
struct PulseShape {
    int positive_us = 300;
    int negative_us = 300;

    int active_us() const noexcept { return positive_us + negative_us; }
    double active_seconds() const noexcept { return active_us() * 1e-6; }
    // Both phases must lie in [5, 1000] µs.
    void validate() const;

    friend bool operator==(const PulseShape&, const PulseShape&) = default;
};

// Phase order and polarity of each pulse.
enum class Waveform : std::uint8_t {
    MonophasicPositive = 0,
    MonophasicNegative = 1,
    BiphasicPositiveFirst = 2,
    BiphasicNegativeFirst = 3,
};

bool is_biphasic(Waveform w) noexcept;

struct RampTiming {
    double ramp_up_s = 0.7;
    double hold_s = 1.6;
    double ramp_down_s = 0.7;

    double total() const noexcept { return ramp_up_s + hold_s + ramp_down_s; }

    friend bool operator==(const RampTiming&, const RampTiming&) = default;
};

// Ramp-and-hold shape: low -> high over ramp_up, high for hold, high -> low
// over ramp_down. Used for both amplitude (mA) and frequency (Hz).
class Envelope {
public:
    Envelope(double low, double high, RampTiming timing);

    static Envelope constant(double value, double duration_s);

    double low() const noexcept { return low_; }
    double high() const noexcept { return high_; }
    const RampTiming& timing() const noexcept { return timing_; }
    double duration() const noexcept { return timing_.total(); }
    bool is_constant() const noexcept { return low_ == high_; }

    // Throws std::domain_error for t outside [0, duration()].
    double value_at(double t) const;

    // Integral of the envelope from 0 to t, t clamped to [0, duration()].
    double integral_to(double t) const noexcept;

    Envelope scaled(double factor) const;

    friend bool operator==(const Envelope&, const Envelope&) = default;

private:
    double low_;
    double high_;
    RampTiming timing_;
};

double instantaneous_value(const Envelope& env, double t);

// Pulse onsets where the accumulated phase of `frequency` crosses an integer,
// starting at t = 0. A pulse is kept only if `active_width_s` fits before
// `duration_s`.
std::vector<double> pulse_onsets(const Envelope& frequency, double duration_s,
                                 double active_width_s = 600e-6);

struct PatternSpec {
    Category category = Category::Tonic100;
    // Constant amplitude for tonic/frequency patterns; envelope high otherwise.
    double amplitude_mA = 1.0;
    PulseShape pulse{};
    double duration_s = kDefaultDurationSeconds;
    RampTiming timing{};

    static PatternSpec at_level(Category category, std::size_t level);
    static PatternSpec at_level(Category category, std::size_t level, const AmplitudeLadder& ladder);

    Envelope amplitude_envelope() const;
    Envelope frequency_envelope() const;

    void validate() const;

    friend bool operator==(const PatternSpec&, const PatternSpec&) = default;
};

struct PulseEvent {
    double onset_s;
    double amplitude_mA;

    friend bool operator==(const PulseEvent&, const PulseEvent&) = default;
};

// Sampled current waveform in mA on a uniform grid.
class CurrentSignal {
public:
    CurrentSignal(double sample_rate_hz, double duration_s, std::vector<double> samples,
                  std::vector<PulseEvent> pulses, PulseShape shape, Waveform waveform);

    double sample_rate() const noexcept { return sample_rate_hz_; }
    double duration() const noexcept { return duration_s_; }
    double dt() const noexcept { return 1.0 / sample_rate_hz_; }
    std::span<const double> samples() const noexcept { return samples_; }
    std::size_t size() const noexcept { return samples_.size(); }
    const std::vector<PulseEvent>& pulses() const noexcept { return pulses_; }
    const PulseShape& pulse_shape() const noexcept { return shape_; }
    Waveform waveform() const noexcept { return waveform_; }

    double peak_abs() const noexcept;
    // Sum of samples times dt, in A·s.
    double net_charge() const noexcept;

private:
    double sample_rate_hz_;
    double duration_s_;
    std::vector<double> samples_;
    std::vector<PulseEvent> pulses_;
    PulseShape shape_;
    Waveform waveform_;
};

// Onsets from `frequency`, each tagged with `amplitude` evaluated at the onset.
// Throws SafetyError for amplitudes above 3 mA, ValidationError for
// non-positive ones, SchedulingError when consecutive pulses overlap.
std::vector<PulseEvent> schedule_pulses(const Envelope& amplitude, const Envelope& frequency,
                                        const PulseShape& pulse, double duration_s);

// Renders an event list onto a uniform grid.
CurrentSignal render(std::span<const PulseEvent> events, const PulseShape& pulse,
                     double duration_s, double sample_rate_hz,
                     Waveform waveform = Waveform::BiphasicPositiveFirst);

CurrentSignal synthesize(const PatternSpec& spec, double sample_rate_hz = kDefaultSampleRateHz);

CurrentSignal synthesize(const Envelope& amplitude, const Envelope& frequency,
                         const PulseShape& pulse, double duration_s, double sample_rate_hz,
                         Waveform waveform = Waveform::BiphasicPositiveFirst);

// CSV with header `t_s,i_mA`; time with 9 decimals, current with 6.
void write_signal_csv(const CurrentSignal& signal, std::ostream& out);

}  // namespace stimkit
