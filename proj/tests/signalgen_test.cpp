#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "oracles.hpp"
#include "stimkit/energy.hpp"
#include "stimkit/errors.hpp"
#include "stimkit/signalgen.hpp"

using namespace stimkit;

namespace {

const RampTiming kStandard{0.7, 1.6, 0.7};

std::size_t level_of(double mA) { return *AmplitudeLadder::standard().find(mA); }

}  // namespace

TEST(AmplitudeLadder, HasTwentySixLevelsFromHalfToThreeMilliamps) {
    const auto ladder = amplitude_ladder();
    ASSERT_EQ(ladder.size(), 26u);
    EXPECT_DOUBLE_EQ(ladder[0], 0.5);
    EXPECT_DOUBLE_EQ(ladder[25], 3.0);
    for (std::size_t i = 1; i < ladder.size(); ++i) {
        EXPECT_GT(ladder[i], ladder[i - 1]);
        EXPECT_NEAR(ladder[i] - ladder[i - 1], 0.1, 1e-12);
    }
    EXPECT_EQ(ladder.find(1.0), 5u);
    EXPECT_FALSE(ladder.find(1.05).has_value());
}

TEST(Envelope, RampAndHoldValues) {
    const Envelope amp(0.6, 0.9, kStandard);
    EXPECT_DOUBLE_EQ(instantaneous_value(amp, 0.0), 0.6);
    EXPECT_NEAR(instantaneous_value(amp, 0.35), 0.75, 1e-12);
    EXPECT_DOUBLE_EQ(instantaneous_value(amp, 0.7), 0.9);
    EXPECT_DOUBLE_EQ(instantaneous_value(amp, 2.3), 0.9);
    EXPECT_NEAR(instantaneous_value(amp, 3.0), 0.6, 1e-12);

    const Envelope freq(20, 100, kStandard);
    EXPECT_DOUBLE_EQ(instantaneous_value(freq, 1.5), 100.0);
}

TEST(Envelope, OutsideWindowIsDomainError) {
    const Envelope amp(0.6, 0.9, kStandard);
    EXPECT_THROW(amp.value_at(-0.001), std::domain_error);
    EXPECT_THROW(amp.value_at(3.01), std::domain_error);
}

TEST(Envelope, RejectsInvertedOrNegativeShape) {
    EXPECT_THROW(Envelope(1.0, 0.5, kStandard), ValidationError);
    EXPECT_THROW(Envelope(0.5, 1.0, RampTiming{-0.1, 1.0, 0.1}), ValidationError);
}

TEST(Envelope, IntegralMatchesTrapezoidArea) {
    const Envelope freq(20, 100, kStandard);
    EXPECT_NEAR(freq.integral_to(3.0), 244.0, 1e-9);
    EXPECT_NEAR(Envelope(40, 170, kStandard).integral_to(3.0), 419.0, 1e-9);
    EXPECT_NEAR(freq.integral_to(0.7), 0.7 * 60.0, 1e-12);
}

TEST(PulseOnsets, TonicHundredHertz) {
    const auto onsets = pulse_onsets(Envelope::constant(100, 3.0), 3.0, 600e-6);
    ASSERT_EQ(onsets.size(), 300u);
    for (std::size_t k = 0; k < onsets.size(); ++k) EXPECT_NEAR(onsets[k], k / 100.0, 1e-12);
}

TEST(PulseOnsets, FrequencyRampCountsMatchPhaseIntegral) {
    EXPECT_EQ(pulse_onsets(Envelope(20, 100, kStandard), 3.0).size(), 244u);
    EXPECT_EQ(pulse_onsets(Envelope(40, 170, kStandard), 3.0).size(), 419u);
}

TEST(PulseOnsets, AgreeWithSteppedPhaseOracle) {
    for (auto [lo, hi] : {std::pair{20.0, 100.0}, std::pair{40.0, 170.0}}) {
        const auto expected = stimkit::testing::stepped_onsets(
            [&](double t) { return stimkit::testing::ramp_hold(lo, hi, 0.7, 1.6, 0.7, t); }, 3.0, 600e-6);
        const auto got = pulse_onsets(Envelope(lo, hi, kStandard), 3.0, 600e-6);
        ASSERT_EQ(got.size(), expected.size());
        for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], expected[k], 2e-6) << "k=" << k;
    }
}

TEST(PulseOnsets, CountWithinOneOfPhaseIntegralForRandomEnvelopes) {
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> freq(1.0, 400.0);
    std::uniform_real_distribution<double> frac(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        double a = freq(rng);
        double b = freq(rng);
        if (a > b) std::swap(a, b);
        const double total = 0.5 + 4.5 * frac(rng);
        const double up = total * 0.4 * frac(rng);
        const double down = total * 0.4 * frac(rng);
        const Envelope env(a, b, RampTiming{up, total - up - down, down});
        const double integral = env.integral_to(env.duration());
        const auto n = static_cast<double>(pulse_onsets(env, env.duration(), 10e-6).size());
        EXPECT_LE(std::abs(n - std::ceil(integral)), 1.0) << "low=" << a << " high=" << b << " T=" << total;
        const auto onsets = pulse_onsets(env, env.duration(), 10e-6);
        for (std::size_t k = 1; k < onsets.size(); ++k) ASSERT_GT(onsets[k], onsets[k - 1]);
    }
}

TEST(PulseOnsets, TonicIntegralCountIsExact) {
    for (double f : {1.0, 20.0, 50.0, 100.0, 250.0, 1000.0}) {
        const auto n = pulse_onsets(Envelope::constant(f, 2.0), 2.0, 600e-6).size();
        EXPECT_EQ(n, static_cast<std::size_t>(std::lround(f * 2.0))) << f;
    }
}

TEST(Synthesize, TonicHundredPulsePairs) {
    const auto sig = synthesize(PatternSpec::at_level(Category::Tonic100, level_of(1.0)), 1e6);
    ASSERT_EQ(sig.size(), 3'000'000u);
    ASSERT_EQ(sig.pulses().size(), 300u);
    const auto s = sig.samples();
    for (std::size_t k = 0; k < 300; ++k) {
        const std::size_t start = k * 10'000;
        ASSERT_EQ(s[start], 1.0);
        ASSERT_EQ(s[start + 299], 1.0);
        ASSERT_EQ(s[start + 300], -1.0);
        ASSERT_EQ(s[start + 599], -1.0);
        ASSERT_EQ(s[start + 600], 0.0);
        if (start > 0) ASSERT_EQ(s[start - 1], 0.0);
    }
    EXPECT_EQ(sig.peak_abs(), 1.0);
}

TEST(Synthesize, AmplitudeRampStartsLowAndHoldsHigh) {
    const auto sig = synthesize(PatternSpec::at_level(Category::Amp20, level_of(1.0)), 1e6);
    ASSERT_EQ(sig.pulses().size(), 60u);
    EXPECT_NEAR(sig.pulses().front().amplitude_mA, 0.7, 1e-12);
    EXPECT_NEAR(sig.samples()[0], 0.7, 1e-12);
    // Pulse 30 starts at t = 1.5 s, inside the hold.
    EXPECT_DOUBLE_EQ(sig.pulses()[30].amplitude_mA, 1.0);
    EXPECT_DOUBLE_EQ(sig.samples()[1'500'000], 1.0);
}

TEST(Synthesize, BothModulationsFollowEnvelope) {
    const auto spec = PatternSpec::at_level(Category::Both20_100, level_of(1.0));
    const auto sig = synthesize(spec, 1e6);
    ASSERT_EQ(sig.pulses().size(), 244u);
    for (const auto& p : sig.pulses()) {
        EXPECT_NEAR(p.amplitude_mA, stimkit::testing::ramp_hold(0.7, 1.0, 0.7, 1.6, 0.7, p.onset_s), 1e-12);
    }
}

TEST(Synthesize, PeakEqualsLadderValueForEveryCategory) {
    const auto ladder = amplitude_ladder();
    for (auto c : kAllCategories) {
        for (std::size_t level : {0u, 7u, 25u}) {
            const auto sig = synthesize(PatternSpec::at_level(c, level), 1e5);
            EXPECT_EQ(sig.peak_abs(), ladder[level]) << to_string(c) << " level " << level;
            EXPECT_LE(std::abs(sig.net_charge()), 1e-9);
        }
    }
}

TEST(Synthesize, RejectsUnsafeAmplitude) {
    PatternSpec spec;
    spec.amplitude_mA = 3.1;
    EXPECT_THROW(synthesize(spec), SafetyError);
    try {
        synthesize(spec);
    } catch (const SafetyError& e) {
        EXPECT_EQ(e.field(), "amplitude");
    }
}

TEST(Synthesize, RejectsOverlappingPulses) {
    const auto amp = Envelope::constant(1.0, 1.0);
    EXPECT_NO_THROW(synthesize(amp, Envelope::constant(1000, 1.0), PulseShape{}, 1.0, 1e6));
    EXPECT_THROW(synthesize(amp, Envelope::constant(2000, 1.0), PulseShape{}, 1.0, 1e6), SchedulingError);
}

TEST(Synthesize, RejectsLowSampleRateAndBadWidths) {
    EXPECT_THROW(synthesize(PatternSpec{}, 50e3), ValidationError);
    PatternSpec spec;
    spec.pulse.positive_us = 4;
    EXPECT_THROW(synthesize(spec), ValidationError);
    spec.pulse = {300, 1001};
    EXPECT_THROW(synthesize(spec), ValidationError);
}

TEST(Synthesize, TrailingPulseThatDoesNotFitIsDropped) {
    // 1 Hz over 1.0004 s: the pulse at t=1 s would need 600 µs.
    const auto sig = synthesize(Envelope::constant(1.0, 1.0004), Envelope::constant(1.0, 1.0004), PulseShape{},
                                1.0004, 1e6);
    EXPECT_EQ(sig.pulses().size(), 1u);
    EXPECT_EQ(std::abs(sig.net_charge()), 0.0);
}

TEST(Synthesize, EnergyConvergesWithSampleRate) {
    for (auto c : kAllCategories) {
        const auto spec = PatternSpec::at_level(c, 9);
        const double e1 = signal_energy(synthesize(spec, 5e5)).a2s();
        const double e2 = signal_energy(synthesize(spec, 1e6)).a2s();
        EXPECT_LE(std::abs(e2 - e1) / e2, 1e-3) << to_string(c);
    }
}

TEST(Synthesize, NegativeFirstAndMonophasicWaveforms) {
    const auto amp = Envelope::constant(1.0, 0.1);
    const auto freq = Envelope::constant(100, 0.1);
    const auto neg = synthesize(amp, freq, PulseShape{}, 0.1, 1e6, Waveform::BiphasicNegativeFirst);
    EXPECT_EQ(neg.samples()[0], -1.0);
    EXPECT_EQ(neg.samples()[300], 1.0);
    EXPECT_EQ(neg.net_charge(), 0.0);
    const auto mono = synthesize(amp, freq, PulseShape{}, 0.1, 1e6, Waveform::MonophasicPositive);
    EXPECT_EQ(mono.samples()[0], 1.0);
    EXPECT_EQ(mono.samples()[300], 0.0);
}

TEST(SignalCsv, HeaderAndFixedPrecision) {
    const auto amp = Envelope::constant(1.0, 0.001);
    const auto sig = synthesize(amp, Envelope::constant(100, 0.001), PulseShape{100, 100}, 0.001, 1e6);
    std::ostringstream out;
    write_signal_csv(sig, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t_s,i_mA");
    std::getline(in, line);
    EXPECT_EQ(line, "0.000000000,1.000000");
    for (int i = 0; i < 100; ++i) std::getline(in, line);
    EXPECT_EQ(line, "0.000100000,-1.000000");
    std::size_t rows = 102;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 1001u);
}
