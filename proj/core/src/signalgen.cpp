#include "stimkit/signalgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

#include "stimkit/errors.hpp"

namespace stimkit {

namespace {

constexpr double kTimeSlack = 1e-12;

void require_finite(const char* field, double v) {
    if (!std::isfinite(v)) throw ValidationError(field, "must be finite");
}

}  // namespace

AmplitudeLadder AmplitudeLadder::standard() {
    AmplitudeLadder ladder;
    // (5 + i) / 10 keeps every level the correctly rounded decimal.
    for (std::size_t i = 0; i < kLadderSize; ++i) {
        ladder.levels_[i] = static_cast<double>(5 + i) / 10.0;
    }
    return ladder;
}

std::optional<std::size_t> AmplitudeLadder::find(double milliamps) const noexcept {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
        if (std::abs(levels_[i] - milliamps) <= 1e-6) return i;
    }
    return std::nullopt;
}

AmplitudeLadder amplitude_ladder() { return AmplitudeLadder::standard(); }

void PulseShape::validate() const {
    if (positive_us < 5 || positive_us > 1000) {
        throw ValidationError("positive_width", "must be within [5, 1000] us, got " +
                                                    std::to_string(positive_us));
    }
    if (negative_us < 5 || negative_us > 1000) {
        throw ValidationError("negative_width", "must be within [5, 1000] us, got " +
                                                    std::to_string(negative_us));
    }
}

bool is_biphasic(Waveform w) noexcept {
    return w == Waveform::BiphasicPositiveFirst || w == Waveform::BiphasicNegativeFirst;
}

Envelope::Envelope(double low, double high, RampTiming timing)
    : low_(low), high_(high), timing_(timing) {
    require_finite("envelope.low", low);
    require_finite("envelope.high", high);
    if (low > high) throw ValidationError("envelope", "low must not exceed high");
    if (!(timing.ramp_up_s >= 0.0) || !(timing.hold_s >= 0.0) || !(timing.ramp_down_s >= 0.0)) {
        throw ValidationError("envelope.timing", "durations must be non-negative");
    }
    if (!(timing.total() > 0.0)) throw ValidationError("envelope.timing", "total duration must be positive");
}

Envelope Envelope::constant(double value, double duration_s) {
    return Envelope(value, value, RampTiming{0.0, duration_s, 0.0});
}

double Envelope::value_at(double t) const {
    const double total = duration();
    if (!(t >= 0.0) || t > total + kTimeSlack) {
        throw std::domain_error("envelope evaluated outside [0, " + std::to_string(total) +
                                "] at t=" + std::to_string(t));
    }
    const double up_end = timing_.ramp_up_s;
    const double hold_end = up_end + timing_.hold_s;
    if (t < up_end) return low_ + (high_ - low_) * (t / timing_.ramp_up_s);
    if (t <= hold_end) return high_;
    const double into = std::min(t - hold_end, timing_.ramp_down_s);
    return high_ - (high_ - low_) * (into / timing_.ramp_down_s);
}

double Envelope::integral_to(double t) const noexcept {
    const double up = timing_.ramp_up_s;
    const double hold = timing_.hold_s;
    const double down = timing_.ramp_down_s;
    t = std::clamp(t, 0.0, duration());

    double acc = 0.0;
    const double in_up = std::min(t, up);
    if (in_up > 0.0) {
        const double slope = (high_ - low_) / up;
        acc += low_ * in_up + 0.5 * slope * in_up * in_up;
    }
    const double in_hold = std::clamp(t - up, 0.0, hold);
    acc += high_ * in_hold;
    const double in_down = std::clamp(t - up - hold, 0.0, down);
    if (in_down > 0.0) {
        const double slope = (high_ - low_) / down;
        acc += high_ * in_down - 0.5 * slope * in_down * in_down;
    }
    return acc;
}

Envelope Envelope::scaled(double factor) const {
    if (factor < 0.0) throw ValidationError("scale", "factor must be non-negative");
    return Envelope(low_ * factor, high_ * factor, timing_);
}

double instantaneous_value(const Envelope& env, double t) { return env.value_at(t); }

namespace {

// Time within [0, duration] at which the phase of `f` reaches `target`.
// Each segment of a ramp-and-hold envelope has linear frequency, so the phase
// is quadratic and the crossing has a closed form.
double phase_crossing(const Envelope& f, double target) {
    const RampTiming& tm = f.timing();
    struct Segment {
        double start;
        double length;
        double f0;
        double slope;
    };
    const std::array<Segment, 3> segments = {{
        {0.0, tm.ramp_up_s, f.low(), tm.ramp_up_s > 0 ? (f.high() - f.low()) / tm.ramp_up_s : 0.0},
        {tm.ramp_up_s, tm.hold_s, f.high(), 0.0},
        {tm.ramp_up_s + tm.hold_s, tm.ramp_down_s, f.high(),
         tm.ramp_down_s > 0 ? -(f.high() - f.low()) / tm.ramp_down_s : 0.0},
    }};

    double phase = 0.0;
    for (const auto& seg : segments) {
        if (seg.length <= 0.0) continue;
        const double seg_phase = seg.f0 * seg.length + 0.5 * seg.slope * seg.length * seg.length;
        if (phase + seg_phase >= target) {
            const double rest = target - phase;
            // Stable root of f0 τ + slope τ²/2 = rest.
            const double disc = std::max(0.0, seg.f0 * seg.f0 + 2.0 * seg.slope * rest);
            const double denom = seg.f0 + std::sqrt(disc);
            const double tau = denom > 0.0 ? 2.0 * rest / denom : seg.length;
            return seg.start + std::clamp(tau, 0.0, seg.length);
        }
        phase += seg_phase;
    }
    return f.duration() + 1.0;
}

}  // namespace

std::vector<double> pulse_onsets(const Envelope& frequency, double duration_s, double active_width_s) {
    require_finite("duration", duration_s);
    if (!(duration_s > 0.0)) throw ValidationError("duration", "must be positive");
    if (!(frequency.low() > 0.0)) throw ValidationError("frequency", "must be positive");
    if (std::abs(frequency.duration() - duration_s) > 1e-9) {
        throw ValidationError("frequency", "envelope duration does not match signal duration");
    }

    std::vector<double> onsets;
    const double total_phase = frequency.integral_to(duration_s);
    onsets.reserve(static_cast<std::size_t>(total_phase) + 1);
    for (std::size_t k = 0;; ++k) {
        const double t = k == 0 ? 0.0 : phase_crossing(frequency, static_cast<double>(k));
        if (t + active_width_s > duration_s + kTimeSlack) break;
        onsets.push_back(t);
    }
    return onsets;
}

PatternSpec PatternSpec::at_level(Category category, std::size_t level) {
    return at_level(category, level, AmplitudeLadder::standard());
}

PatternSpec PatternSpec::at_level(Category category, std::size_t level, const AmplitudeLadder& ladder) {
    if (level >= ladder.size()) {
        throw ValidationError("level", "ladder index " + std::to_string(level) + " out of range");
    }
    PatternSpec spec;
    spec.category = category;
    spec.amplitude_mA = ladder[level];
    return spec;
}

Envelope PatternSpec::amplitude_envelope() const {
    if (modulates_amplitude(category)) {
        // Snapped to the 1 pA grid so 1.2 - 0.3 lands on 0.9 like a DAC code would.
        const double low = std::round((amplitude_mA - kModulationDepthMilliamps) * 1e9) / 1e9;
        return Envelope(low, amplitude_mA, timing);
    }
    return Envelope::constant(amplitude_mA, duration_s);
}

Envelope PatternSpec::frequency_envelope() const {
    const auto range = frequency_range(category);
    if (modulates_frequency(category)) return Envelope(range.low_hz, range.high_hz, timing);
    return Envelope::constant(range.low_hz, duration_s);
}

void PatternSpec::validate() const {
    require_finite("amplitude", amplitude_mA);
    if (amplitude_mA > kMaxCurrentMilliamps) {
        throw SafetyError("amplitude", "exceeds the 3.0 mA safety limit");
    }
    if (!(amplitude_mA > 0.0)) throw ValidationError("amplitude", "must be positive");
    if (modulates_amplitude(category) && !(amplitude_mA - kModulationDepthMilliamps > 0.0)) {
        throw ValidationError("amplitude", "envelope low (high - 0.3 mA) must be positive");
    }
    pulse.validate();
    require_finite("duration", duration_s);
    if (!(duration_s > 0.0)) throw ValidationError("duration", "must be positive");
    if ((modulates_amplitude(category) || modulates_frequency(category)) &&
        std::abs(timing.total() - duration_s) > 1e-9) {
        throw ValidationError("timing", "ramp_up + hold + ramp_down must equal the duration");
    }
}

CurrentSignal::CurrentSignal(double sample_rate_hz, double duration_s, std::vector<double> samples,
                             std::vector<PulseEvent> pulses, PulseShape shape, Waveform waveform)
    : sample_rate_hz_(sample_rate_hz),
      duration_s_(duration_s),
      samples_(std::move(samples)),
      pulses_(std::move(pulses)),
      shape_(shape),
      waveform_(waveform) {}

double CurrentSignal::peak_abs() const noexcept {
    double peak = 0.0;
    for (double s : samples_) peak = std::max(peak, std::abs(s));
    return peak;
}

double CurrentSignal::net_charge() const noexcept {
    const double sum = std::accumulate(samples_.begin(), samples_.end(), 0.0);
    return sum * 1e-3 * dt();
}

std::vector<PulseEvent> schedule_pulses(const Envelope& amplitude, const Envelope& frequency,
                                        const PulseShape& pulse, double duration_s) {
    pulse.validate();
    if (amplitude.high() > kMaxCurrentMilliamps) {
        throw SafetyError("amplitude", "exceeds the 3.0 mA safety limit");
    }
    if (!(amplitude.low() > 0.0)) throw ValidationError("amplitude", "must be positive");
    if (std::abs(amplitude.duration() - duration_s) > 1e-9) {
        throw ValidationError("amplitude", "envelope duration does not match signal duration");
    }

    const double width = pulse.active_seconds();
    const auto onsets = pulse_onsets(frequency, duration_s, width);

    std::vector<PulseEvent> events;
    events.reserve(onsets.size());
    for (std::size_t k = 0; k < onsets.size(); ++k) {
        if (k > 0 && onsets[k] - onsets[k - 1] < width - kTimeSlack) {
            throw SchedulingError("pulse period " + std::to_string(onsets[k] - onsets[k - 1]) +
                                  " s is shorter than the active width " + std::to_string(width) + " s");
        }
        events.push_back({onsets[k], amplitude.value_at(onsets[k])});
    }
    return events;
}

CurrentSignal render(std::span<const PulseEvent> events, const PulseShape& pulse, double duration_s,
                     double sample_rate_hz, Waveform waveform) {
    require_finite("sample_rate", sample_rate_hz);
    if (sample_rate_hz < kMinSampleRateHz) {
        throw ValidationError("sample_rate", "must be at least 100 kHz");
    }
    const auto n = static_cast<std::size_t>(std::llround(sample_rate_hz * duration_s));
    const auto first_len = static_cast<std::size_t>(
        std::llround(sample_rate_hz * (waveform == Waveform::BiphasicNegativeFirst ? pulse.negative_us
                                                                                  : pulse.positive_us) *
                     1e-6));
    const auto second_len = is_biphasic(waveform)
                                ? static_cast<std::size_t>(std::llround(
                                      sample_rate_hz *
                                      (waveform == Waveform::BiphasicNegativeFirst ? pulse.positive_us
                                                                                  : pulse.negative_us) *
                                      1e-6))
                                : 0;
    const double first_sign =
        (waveform == Waveform::MonophasicNegative || waveform == Waveform::BiphasicNegativeFirst) ? -1.0
                                                                                                 : 1.0;

    std::vector<double> samples(n, 0.0);
    std::vector<PulseEvent> rendered;
    rendered.reserve(events.size());
    std::size_t previous_end = 0;
    for (const auto& ev : events) {
        if (std::abs(ev.amplitude_mA) > kMaxCurrentMilliamps) {
            throw SafetyError("amplitude", "exceeds the 3.0 mA safety limit");
        }
        const auto start = static_cast<std::size_t>(std::llround(ev.onset_s * sample_rate_hz));
        if (start < previous_end) throw SchedulingError("pulses overlap on the sample grid");
        const std::size_t end = start + first_len + second_len;
        // A pulse that would cross the end of the window is dropped whole.
        if (end > n) continue;
        std::fill_n(samples.begin() + static_cast<std::ptrdiff_t>(start), first_len,
                    first_sign * ev.amplitude_mA);
        std::fill_n(samples.begin() + static_cast<std::ptrdiff_t>(start + first_len), second_len,
                    -first_sign * ev.amplitude_mA);
        previous_end = end;
        rendered.push_back(ev);
    }
    return CurrentSignal(sample_rate_hz, duration_s, std::move(samples), std::move(rendered), pulse,
                         waveform);
}

CurrentSignal synthesize(const Envelope& amplitude, const Envelope& frequency, const PulseShape& pulse,
                         double duration_s, double sample_rate_hz, Waveform waveform) {
    if (sample_rate_hz < kMinSampleRateHz) {
        throw ValidationError("sample_rate", "must be at least 100 kHz");
    }
    const auto events = schedule_pulses(amplitude, frequency, pulse, duration_s);
    return render(events, pulse, duration_s, sample_rate_hz, waveform);
}

CurrentSignal synthesize(const PatternSpec& spec, double sample_rate_hz) {
    spec.validate();
    return synthesize(spec.amplitude_envelope(), spec.frequency_envelope(), spec.pulse, spec.duration_s,
                      sample_rate_hz);
}

void write_signal_csv(const CurrentSignal& signal, std::ostream& out) {
    out << "t_s,i_mA\n";
    const auto samples = signal.samples();
    const double dt = signal.dt();
    char line[64];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int len = std::snprintf(line, sizeof line, "%.9f,%.6f\n", static_cast<double>(i) * dt,
                                      samples[i] == 0.0 ? 0.0 : samples[i]);
        out.write(line, len);
    }
}

}  // namespace stimkit
