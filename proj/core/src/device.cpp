#include "stimkit/device.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "stimkit/crc16.hpp"
#include "stimkit/errors.hpp"

namespace stimkit {

std::string_view to_string(ChannelMode mode) noexcept {
    switch (mode) {
        case ChannelMode::NoConnection: return "nc";
        case ChannelMode::Source: return "source";
        case ChannelMode::Sink: return "sink";
        case ChannelMode::Ground: return "ground";
    }
    return "?";
}

std::string_view to_string(Opcode op) noexcept {
    switch (op) {
        case Opcode::Stimulate: return "stimulate";
        case Opcode::Stop: return "stop";
        case Opcode::SetChannels: return "set-channels";
        case Opcode::Ping: return "ping";
    }
    return "?";
}

ChannelState ChannelState::experiment_default() {
    ChannelState s;
    s.set(0, ChannelMode::Source);
    s.set(1, ChannelMode::Sink);
    return s;
}

std::size_t ChannelState::count(ChannelMode mode) const noexcept {
    return static_cast<std::size_t>(std::count(modes_.begin(), modes_.end(), mode));
}

std::uint32_t ChannelState::pack() const noexcept {
    std::uint32_t bits = 0;
    for (std::size_t i = 0; i < kChannelCount; ++i) {
        bits |= static_cast<std::uint32_t>(modes_[i]) << (2 * i);
    }
    return bits;
}

ChannelState ChannelState::unpack(std::uint32_t bits) {
    if (bits >> (2 * kChannelCount)) throw ValidationError("channels", "reserved bits 30-31 are set");
    ChannelState s;
    for (std::size_t i = 0; i < kChannelCount; ++i) {
        s.modes_[i] = static_cast<ChannelMode>((bits >> (2 * i)) & 0x3);
    }
    return s;
}

// ---------------------------------------------------------------------------
// DAC lookup table

DacLut::DacLut(std::vector<Entry> entries) : entries_(std::move(entries)) {
    if (entries_.size() < 2) throw ValidationError("lut", "needs at least two entries");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!std::isfinite(entries_[i].current_mA)) throw ValidationError("lut", "non-finite current");
        if (i > 0 && (entries_[i].code <= entries_[i - 1].code ||
                      entries_[i].current_mA <= entries_[i - 1].current_mA)) {
            throw ValidationError("lut", "entries must be strictly increasing in code and current");
        }
    }
    if (entries_.front().current_mA != 0.0) throw ValidationError("lut", "first entry must output 0 mA");
    if (entries_.back().current_mA < kMaxCurrentMilliamps) {
        throw ValidationError("lut", "table must reach 3.0 mA");
    }
}

DacLut DacLut::default_lut() {
    std::vector<Entry> entries;
    entries.reserve(256);
    for (int code = 0; code < 256; ++code) {
        entries.push_back({static_cast<std::uint16_t>(code), 3.0 * std::pow(code / 255.0, 1.1)});
    }
    return DacLut(std::move(entries));
}

DacLut DacLut::linear(double step_mA, double max_mA) {
    if (!(step_mA > 0.0) || !std::isfinite(step_mA)) throw ValidationError("step", "must be positive");
    const auto steps = static_cast<long>(std::ceil(max_mA / step_mA - 1e-9));
    if (steps < 1 || steps > 65535) throw ValidationError("step", "yields an unusable code count");
    std::vector<Entry> entries;
    entries.reserve(static_cast<std::size_t>(steps) + 1);
    for (long code = 0; code <= steps; ++code) {
        // Snap to a picoamp grid so decimal steps land on their decimal values.
        const double current = std::round(static_cast<double>(code) * step_mA * 1e9) / 1e9;
        entries.push_back({static_cast<std::uint16_t>(code), current});
    }
    return DacLut(std::move(entries));
}

DacLut DacLut::read_csv(std::istream& in) {
    std::vector<Entry> entries;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            if (line.rfind("code", 0) == 0) continue;
        }
        std::istringstream row(line);
        long code = -1;
        char comma = 0;
        double current = 0.0;
        if (!(row >> code >> comma >> current) || comma != ',' || code < 0 || code > 65535) {
            throw ParseError(ParseError::Kind::Syntax, "bad LUT row: " + line);
        }
        entries.push_back({static_cast<std::uint16_t>(code), current});
    }
    return DacLut(std::move(entries));
}

void DacLut::write_csv(std::ostream& out) const {
    out << "code,current_mA\n";
    char buf[64];
    for (const auto& e : entries_) {
        std::snprintf(buf, sizeof buf, "%u,%.17g\n", static_cast<unsigned>(e.code), e.current_mA);
        out << buf;
    }
}

const DacLut::Entry& DacLut::nearest(double milliamps) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), milliamps,
                               [](const Entry& e, double v) { return e.current_mA < v; });
    if (it == entries_.begin()) return *it;
    if (it == entries_.end()) return entries_.back();
    const auto below = std::prev(it);
    // Ties resolve to the lower code.
    return (milliamps - below->current_mA) <= (it->current_mA - milliamps) ? *below : *it;
}

std::optional<double> DacLut::current_for(std::uint16_t code) const noexcept {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), code,
                               [](const Entry& e, std::uint16_t c) { return e.code < c; });
    if (it == entries_.end() || it->code != code) return std::nullopt;
    return it->current_mA;
}

double DacLut::interpolated_code(double milliamps) const {
    if (milliamps <= entries_.front().current_mA) return entries_.front().code;
    if (milliamps >= entries_.back().current_mA) return entries_.back().code;
    auto hi = std::lower_bound(entries_.begin(), entries_.end(), milliamps,
                               [](const Entry& e, double v) { return e.current_mA < v; });
    auto lo = std::prev(hi);
    const double frac = (milliamps - lo->current_mA) / (hi->current_mA - lo->current_mA);
    return lo->code + frac * (hi->code - lo->code);
}

Realizability can_realize(double amplitude_mA, const DacLut& lut) {
    if (!(amplitude_mA > 0.0) || amplitude_mA > kMaxCurrentMilliamps) {
        throw ValidationError("amplitude", "must lie in (0, 3.0] mA");
    }
    const auto& e = lut.nearest(amplitude_mA);
    Realizability r;
    r.code = e.code;
    r.output_mA = e.current_mA;
    r.error_mA = std::abs(e.current_mA - amplitude_mA);
    r.exact = r.error_mA <= 1e-12;
    return r;
}

// ---------------------------------------------------------------------------
// Commands

StimCommand StimCommand::from_pattern(const PatternSpec& spec) {
    spec.validate();
    const Envelope amp = spec.amplitude_envelope();
    const Envelope freq = spec.frequency_envelope();
    StimCommand cmd;
    cmd.opcode = Opcode::Stimulate;
    cmd.waveform = Waveform::BiphasicPositiveFirst;
    cmd.freq_start_hz = static_cast<std::uint16_t>(std::lround(freq.low()));
    cmd.freq_end_hz = static_cast<std::uint16_t>(std::lround(freq.high()));
    cmd.duration_ms = static_cast<std::uint16_t>(std::lround(spec.duration_s * 1000.0));
    if (amp.is_constant() && freq.is_constant()) {
        cmd.ramp_up_ms = 0;
        cmd.hold_ms = cmd.duration_ms;
        cmd.ramp_down_ms = 0;
    } else {
        cmd.ramp_up_ms = static_cast<std::uint16_t>(std::lround(spec.timing.ramp_up_s * 1000.0));
        cmd.hold_ms = static_cast<std::uint16_t>(std::lround(spec.timing.hold_s * 1000.0));
        cmd.ramp_down_ms = static_cast<std::uint16_t>(std::lround(spec.timing.ramp_down_s * 1000.0));
    }
    cmd.pulse = spec.pulse;
    cmd.amp_start_mA = amp.low();
    cmd.amp_end_mA = amp.high();
    cmd.channels = ChannelState::experiment_default();
    return cmd;
}

namespace {

StimCommand zeroed(Opcode op) {
    StimCommand cmd;
    cmd.opcode = op;
    cmd.waveform = Waveform::MonophasicPositive;
    cmd.freq_start_hz = cmd.freq_end_hz = 0;
    cmd.ramp_up_ms = cmd.hold_ms = cmd.ramp_down_ms = 0;
    cmd.pulse = {0, 0};
    cmd.amp_start_mA = cmd.amp_end_mA = 0.0;
    cmd.channels = ChannelState{};
    cmd.duration_ms = 0;
    return cmd;
}

void validate_amplitude(const char* field, double mA) {
    if (!std::isfinite(mA)) throw ValidationError(field, "must be finite");
    if (mA > kMaxCurrentMilliamps) throw SafetyError(field, "exceeds the 3.0 mA safety limit");
    if (!(mA > 0.0)) throw ValidationError(field, "must be positive");
}

void validate_frequency(const char* field, std::uint16_t hz) {
    if (hz < 1 || hz > 50000) throw ValidationError(field, "must lie in [1 Hz, 50 kHz]");
}

}  // namespace

StimCommand StimCommand::stop() { return zeroed(Opcode::Stop); }
StimCommand StimCommand::ping() { return zeroed(Opcode::Ping); }

StimCommand StimCommand::set_channels(const ChannelState& channels) {
    StimCommand cmd = zeroed(Opcode::SetChannels);
    cmd.channels = channels;
    return cmd;
}

void StimCommand::validate() const {
    switch (opcode) {
        case Opcode::Stimulate: break;
        case Opcode::Stop:
        case Opcode::Ping:
        case Opcode::SetChannels: {
            StimCommand expected = zeroed(opcode);
            if (opcode == Opcode::SetChannels) expected.channels = channels;
            if (!(*this == expected)) {
                throw ValidationError("payload", std::string(to_string(opcode)) + " carries no stimulation payload");
            }
            return;
        }
        default: throw ValidationError("opcode", "unknown opcode");
    }

    if (static_cast<std::uint8_t>(waveform) > 3) throw ValidationError("waveform", "unknown waveform mode");
    validate_frequency("freq_start", freq_start_hz);
    validate_frequency("freq_end", freq_end_hz);
    if (freq_start_hz > freq_end_hz) throw ValidationError("freq_start", "must not exceed freq_end");
    if (duration_ms == 0) throw ValidationError("duration", "must be positive");
    if (static_cast<unsigned>(ramp_up_ms) + hold_ms + ramp_down_ms != duration_ms) {
        throw ValidationError("hold", "ramp_up + hold + ramp_down must equal duration");
    }
    pulse.validate();
    validate_amplitude("amp_start", amp_start_mA);
    validate_amplitude("amp_end", amp_end_mA);
    if (amp_start_mA > amp_end_mA) throw ValidationError("amp_start", "must not exceed amp_end");
}

// ---------------------------------------------------------------------------
// Frame codec

namespace {

class Writer {
public:
    explicit Writer(Frame& f) : f_(f) {}
    void u8(std::uint8_t v) { f_[pos_++] = v; }
    void u16(std::uint16_t v) {
        u8(static_cast<std::uint8_t>(v & 0xFF));
        u8(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        u16(static_cast<std::uint16_t>(v & 0xFFFF));
        u16(static_cast<std::uint16_t>(v >> 16));
    }
    std::size_t pos() const { return pos_; }

private:
    Frame& f_;
    std::size_t pos_ = 0;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
    std::uint8_t u8() { return b_[pos_++]; }
    std::uint16_t u16() {
        const std::uint16_t lo = u8();
        return static_cast<std::uint16_t>(lo | (static_cast<std::uint16_t>(u8()) << 8));
    }
    std::uint32_t u32() {
        const std::uint32_t lo = u16();
        return lo | (static_cast<std::uint32_t>(u16()) << 16);
    }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

std::uint16_t amplitude_code(const char* field, double mA, const DacLut& lut) {
    const auto& e = lut.nearest(mA);
    if (!(e.current_mA > 0.0)) throw ValidationError(field, "below the DAC resolution");
    return e.code;
}

}  // namespace

Frame encode(const StimCommand& cmd, const DacLut& lut) {
    cmd.validate();
    const bool stim = cmd.opcode == Opcode::Stimulate;

    Frame frame{};
    Writer w(frame);
    w.u16(kFrameMagic);
    w.u8(kFrameVersion);
    w.u8(static_cast<std::uint8_t>(cmd.opcode));
    w.u8(static_cast<std::uint8_t>(cmd.waveform));
    w.u16(cmd.freq_start_hz);
    w.u16(cmd.freq_end_hz);
    w.u16(cmd.ramp_up_ms);
    w.u16(cmd.hold_ms);
    w.u16(cmd.ramp_down_ms);
    w.u16(static_cast<std::uint16_t>(cmd.pulse.positive_us));
    w.u16(static_cast<std::uint16_t>(cmd.pulse.negative_us));
    w.u16(stim ? amplitude_code("amp_start", cmd.amp_start_mA, lut) : 0);
    w.u16(stim ? amplitude_code("amp_end", cmd.amp_end_mA, lut) : 0);
    w.u32(cmd.channels.pack());
    w.u16(cmd.duration_ms);
    w.u16(crc16_ccitt(std::span<const std::uint8_t>(frame.data(), w.pos())));
    return frame;
}

StimCommand decode(std::span<const std::uint8_t> frame, const DacLut& lut) {
    if (frame.size() != kFrameSize) {
        throw ParseError(ParseError::Kind::Length,
                         "frame is " + std::to_string(frame.size()) + " bytes, expected " + std::to_string(kFrameSize));
    }
    Reader r(frame);
    if (r.u16() != kFrameMagic) throw ParseError(ParseError::Kind::Magic, "bad frame magic");
    const std::uint16_t stored_crc =
        static_cast<std::uint16_t>(frame[kFrameSize - 2] | (frame[kFrameSize - 1] << 8));
    if (crc16_ccitt(frame.first(kFrameSize - 2)) != stored_crc) {
        throw ParseError(ParseError::Kind::Checksum, "frame checksum mismatch");
    }
    if (r.u8() != kFrameVersion) throw ParseError(ParseError::Kind::Version, "unsupported frame version");
    const std::uint8_t op = r.u8();
    if (op < 0x01 || op > 0x04) throw ParseError(ParseError::Kind::Opcode, "unknown opcode " + std::to_string(op));

    StimCommand cmd;
    cmd.opcode = static_cast<Opcode>(op);
    const std::uint8_t mode = r.u8();
    if (mode > 3) throw ValidationError("waveform", "unknown waveform mode " + std::to_string(mode));
    cmd.waveform = static_cast<Waveform>(mode);
    cmd.freq_start_hz = r.u16();
    cmd.freq_end_hz = r.u16();
    cmd.ramp_up_ms = r.u16();
    cmd.hold_ms = r.u16();
    cmd.ramp_down_ms = r.u16();
    cmd.pulse.positive_us = r.u16();
    cmd.pulse.negative_us = r.u16();
    const std::uint16_t start_code = r.u16();
    const std::uint16_t end_code = r.u16();
    cmd.channels = ChannelState::unpack(r.u32());
    cmd.duration_ms = r.u16();

    if (cmd.opcode == Opcode::Stimulate) {
        const auto start = lut.current_for(start_code);
        const auto end = lut.current_for(end_code);
        if (!start) throw ValidationError("amp_start", "code " + std::to_string(start_code) + " is not in the LUT");
        if (!end) throw ValidationError("amp_end", "code " + std::to_string(end_code) + " is not in the LUT");
        cmd.amp_start_mA = *start;
        cmd.amp_end_mA = *end;
    } else {
        if (start_code != 0 || end_code != 0) {
            throw ValidationError("payload", std::string(to_string(cmd.opcode)) + " carries no amplitude");
        }
        cmd.amp_start_mA = cmd.amp_end_mA = 0.0;
    }
    cmd.validate();
    return cmd;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0xF]);
    }
    return out;
}

std::vector<std::uint8_t> from_hex(std::string_view text) {
    const auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::vector<std::uint8_t> out;
    int pending = -1;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ':') {
            if (pending >= 0) throw ParseError(ParseError::Kind::Syntax, "odd hex digit before separator");
            continue;
        }
        const int v = nibble(c);
        if (v < 0) throw ParseError(ParseError::Kind::Syntax, std::string("invalid hex digit '") + c + "'");
        if (pending < 0) {
            pending = v;
        } else {
            out.push_back(static_cast<std::uint8_t>((pending << 4) | v));
            pending = -1;
        }
    }
    if (pending >= 0) throw ParseError(ParseError::Kind::Syntax, "odd number of hex digits");
    return out;
}

// ---------------------------------------------------------------------------
// Playback

ExecutionResult execute(const StimCommand& cmd, const DacLut& lut, double sample_rate_hz, const StopPoll& stop) {
    if (cmd.opcode != Opcode::Stimulate) {
        throw ConfigurationError("only stimulate commands produce a signal");
    }
    cmd.validate();
    if (!cmd.channels.can_stimulate()) {
        throw ConfigurationError("channel configuration needs at least one source and one sink");
    }

    const auto quantize = [&](double mA) { return std::min(lut.nearest(mA).current_mA, kMaxCurrentMilliamps); };
    const double a0 = quantize(cmd.amp_start_mA);
    const double a1 = quantize(cmd.amp_end_mA);
    if (!(a0 > 0.0)) throw ValidationError("amp_start", "below the DAC resolution");

    const double duration = cmd.duration_ms / 1000.0;
    const RampTiming timing{cmd.ramp_up_ms / 1000.0, cmd.hold_ms / 1000.0, cmd.ramp_down_ms / 1000.0};
    const Envelope amp = a0 == a1 ? Envelope::constant(a1, duration) : Envelope(a0, a1, timing);
    const Envelope freq = cmd.freq_start_hz == cmd.freq_end_hz
                              ? Envelope::constant(cmd.freq_start_hz, duration)
                              : Envelope(cmd.freq_start_hz, cmd.freq_end_hz, timing);

    auto events = schedule_pulses(amp, freq, cmd.pulse, duration);

    bool stopped = false;
    std::optional<double> stopped_at;
    if (stop) {
        for (std::size_t k = 0; k < events.size(); ++k) {
            if (stop(events[k].onset_s)) {
                stopped = true;
                stopped_at = events[k].onset_s;
                events.resize(k);
                break;
            }
        }
    }

    ExecutionResult result{render(events, cmd.pulse, duration, sample_rate_hz, cmd.waveform), stopped, stopped_at,
                           a0, a1};
    return result;
}

VirtualDevice::VirtualDevice(DacLut lut, double sample_rate_hz)
    : lut_(std::move(lut)), sample_rate_hz_(sample_rate_hz) {
    timeline_.push_back({0.0, channels_});
}

void VirtualDevice::switch_to(const ChannelState& next) {
    if (next == channels_) return;
    channels_ = next;
    timeline_.push_back({clock_s_, channels_});
}

VirtualDevice::Response VirtualDevice::apply(const StimCommand& cmd) {
    cmd.validate();
    Response resp;
    resp.opcode = cmd.opcode;
    resp.started_at_s = clock_s_;
    switch (cmd.opcode) {
        case Opcode::Stimulate: {
            if (!cmd.channels.can_stimulate()) {
                throw ConfigurationError("channel configuration needs at least one source and one sink");
            }
            switch_to(cmd.channels);
            const auto poll = [this](double) { return stop_requested_.load(std::memory_order_acquire); };
            resp.execution = execute(cmd, lut_, sample_rate_hz_, poll);
            stop_requested_.store(false, std::memory_order_release);
            clock_s_ += cmd.duration_ms / 1000.0;
            resp.message = resp.execution->stopped_early ? "stopped early" : "completed";
            break;
        }
        case Opcode::Stop:
            switch_to(ChannelState{});
            stop_requested_.store(false, std::memory_order_release);
            resp.message = "stopped";
            break;
        case Opcode::SetChannels:
            switch_to(cmd.channels);
            resp.message = "channels set";
            break;
        case Opcode::Ping: resp.message = "pong"; break;
    }
    return resp;
}

VirtualDevice::Response VirtualDevice::handle(std::span<const std::uint8_t> frame) {
    try {
        return apply(decode(frame, lut_));
    } catch (const Error& e) {
        Response resp;
        resp.ok = false;
        resp.started_at_s = clock_s_;
        resp.message = e.what();
        if (frame.size() > 3) resp.opcode = static_cast<Opcode>(frame[3]);
        return resp;
    }
}

}  // namespace stimkit
