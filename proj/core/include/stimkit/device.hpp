#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stimkit/signalgen.hpp"

namespace stimkit {

inline constexpr std::size_t kChannelCount = 15;

enum class ChannelMode : std::uint8_t {
    NoConnection = 0,
    Source = 1,
    Sink = 2,
    Ground = 3,
};

std::string_view to_string(ChannelMode mode) noexcept;

// Switch-matrix assignment of every electrode channel.
class ChannelState {
public:
    ChannelState() { modes_.fill(ChannelMode::NoConnection); }

    // Centre pad (0) sources, ring pad (1) sinks, everything else open.
    static ChannelState experiment_default();

    ChannelMode operator[](std::size_t channel) const { return modes_.at(channel); }
    void set(std::size_t channel, ChannelMode mode) { modes_.at(channel) = mode; }

    std::size_t count(ChannelMode mode) const noexcept;
    // At least one source and one sink.
    bool can_stimulate() const noexcept { return count(ChannelMode::Source) > 0 && count(ChannelMode::Sink) > 0; }

    // Channel i occupies bits 2i..2i+1; bits 30-31 are zero.
    std::uint32_t pack() const noexcept;
    static ChannelState unpack(std::uint32_t bits);

    friend bool operator==(const ChannelState&, const ChannelState&) = default;

private:
    std::array<ChannelMode, kChannelCount> modes_;
};

// Monotone map from DAC command code to output current.
class DacLut {
public:
    struct Entry {
        std::uint16_t code;
        double current_mA;

        friend bool operator==(const Entry&, const Entry&) = default;
    };

    // Entries must be strictly increasing in both code and current, start at
    // 0 mA and reach at least 3 mA.
    explicit DacLut(std::vector<Entry> entries);

    // 256 codes, current = 3.0 · (code / 255)^1.1 mA.
    static DacLut default_lut();
    // Codes 0..n with current = code · step_mA, n = ceil(max_mA / step_mA).
    static DacLut linear(double step_mA, double max_mA = kMaxCurrentMilliamps);

    static DacLut read_csv(std::istream& in);
    void write_csv(std::ostream& out) const;

    std::span<const Entry> entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    // Entry with output closest to `milliamps`; ties go to the lower code.
    const Entry& nearest(double milliamps) const;
    std::optional<double> current_for(std::uint16_t code) const noexcept;
    // Fractional code by linear interpolation between neighbours, for display.
    double interpolated_code(double milliamps) const;

    friend bool operator==(const DacLut&, const DacLut&) = default;

private:
    std::vector<Entry> entries_;
};

struct Realizability {
    bool exact = false;
    std::uint16_t code = 0;
    double output_mA = 0.0;
    double error_mA = 0.0;
};

// Nearest DAC code for an amplitude in (0, 3] mA and the absolute error.
Realizability can_realize(double amplitude_mA, const DacLut& lut);

enum class Opcode : std::uint8_t {
    Stimulate = 0x01,
    Stop = 0x02,
    SetChannels = 0x03,
    Ping = 0x04,
};

std::string_view to_string(Opcode op) noexcept;

// One device command. Envelope fields with start == end are tonic.
struct StimCommand {
    Opcode opcode = Opcode::Stimulate;
    Waveform waveform = Waveform::BiphasicPositiveFirst;
    std::uint16_t freq_start_hz = 100;
    std::uint16_t freq_end_hz = 100;
    std::uint16_t ramp_up_ms = 0;
    std::uint16_t hold_ms = 3000;
    std::uint16_t ramp_down_ms = 0;
    PulseShape pulse{};
    double amp_start_mA = 1.0;
    double amp_end_mA = 1.0;
    ChannelState channels = ChannelState::experiment_default();
    std::uint16_t duration_ms = 3000;

    static StimCommand from_pattern(const PatternSpec& spec);
    static StimCommand stop();
    static StimCommand ping();
    static StimCommand set_channels(const ChannelState& channels);

    // Throws ValidationError naming the first out-of-range field.
    void validate() const;

    friend bool operator==(const StimCommand&, const StimCommand&) = default;
};

inline constexpr std::uint16_t kFrameMagic = 0xE7AC;
inline constexpr std::uint8_t kFrameVersion = 0x01;
inline constexpr std::size_t kFrameSize = 31;

using Frame = std::array<std::uint8_t, kFrameSize>;

// Fixed-length little-endian frame:
//   magic u16 | version u8 | opcode u8 | waveform u8 | freq_start u16 |
//   freq_end u16 | ramp_up u16 | hold u16 | ramp_down u16 | pos_width u16 |
//   neg_width u16 | amp_start_code u16 | amp_end_code u16 | channels u32 |
//   duration u16 | crc16 u16 (over every preceding byte)
Frame encode(const StimCommand& cmd, const DacLut& lut);
StimCommand decode(std::span<const std::uint8_t> frame, const DacLut& lut);

std::string to_hex(std::span<const std::uint8_t> bytes);
// Accepts pairs of hex digits with optional whitespace between bytes.
std::vector<std::uint8_t> from_hex(std::string_view text);

struct ExecutionResult {
    CurrentSignal signal;
    bool stopped_early = false;
    std::optional<double> stopped_at_s;
    double amp_start_mA = 0.0;  // after DAC quantization
    double amp_end_mA = 0.0;
};

// Polled before every pulse with that pulse's onset time.
using StopPoll = std::function<bool(double onset_s)>;

// Plays a stimulate command: amplitudes go through the LUT (nearest code,
// clamped to 3 mA), then pulses are scheduled and rendered. A stop request
// suppresses every pulse from the polled onset on.
ExecutionResult execute(const StimCommand& cmd, const DacLut& lut, double sample_rate_hz = kDefaultSampleRateHz,
                        const StopPoll& stop = {});

// Single-owner virtual device. request_stop() is the only member safe to call
// from another thread.
class VirtualDevice {
public:
    struct SwitchEvent {
        double time_s;
        ChannelState channels;
    };

    struct Response {
        Opcode opcode = Opcode::Ping;
        bool ok = true;
        std::string message;
        double started_at_s = 0.0;
        std::optional<ExecutionResult> execution;
    };

    explicit VirtualDevice(DacLut lut = DacLut::default_lut(), double sample_rate_hz = kDefaultSampleRateHz);

    // Decodes and applies a frame. Parse and validation failures come back
    // as ok == false rather than exceptions.
    Response handle(std::span<const std::uint8_t> frame);
    Response apply(const StimCommand& cmd);

    void request_stop() noexcept { stop_requested_.store(true, std::memory_order_release); }

    const DacLut& lut() const noexcept { return lut_; }
    const ChannelState& channels() const noexcept { return channels_; }
    double clock() const noexcept { return clock_s_; }
    const std::vector<SwitchEvent>& timeline() const noexcept { return timeline_; }

private:
    void switch_to(const ChannelState& next);

    DacLut lut_;
    double sample_rate_hz_;
    ChannelState channels_;
    double clock_s_ = 0.0;
    std::vector<SwitchEvent> timeline_;
    std::atomic<bool> stop_requested_{false};
};

}  // namespace stimkit
