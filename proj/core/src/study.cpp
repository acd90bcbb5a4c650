#include "stimkit/study.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <limits>
#include <random>
#include <string>

#include "stimkit/errors.hpp"

namespace stimkit {

std::string_view to_string(Phase phase) noexcept {
    switch (phase) {
        case Phase::Calibration: return "calibration";
        case Phase::Evaluation: return "evaluation";
        case Phase::Done: return "done";
    }
    return "?";
}

std::string_view to_string(CalibrationAction action) noexcept {
    switch (action) {
        case CalibrationAction::Up: return "up";
        case CalibrationAction::Down: return "down";
        case CalibrationAction::Accept: return "accept";
    }
    return "?";
}

std::string_view to_string(CalibrationSource source) noexcept {
    return source == CalibrationSource::Interactive ? "interactive" : "predicted";
}

Phase parse_phase(std::string_view text) {
    for (auto p : {Phase::Calibration, Phase::Evaluation, Phase::Done}) {
        if (to_string(p) == text) return p;
    }
    throw ValidationError("phase", "unknown phase '" + std::string(text) + "'");
}

CalibrationAction parse_action(std::string_view text) {
    for (auto a : {CalibrationAction::Up, CalibrationAction::Down, CalibrationAction::Accept}) {
        if (to_string(a) == text) return a;
    }
    throw ValidationError("action", "unknown calibration action '" + std::string(text) + "'");
}

CalibrationSource parse_source(std::string_view text) {
    for (auto s : {CalibrationSource::Interactive, CalibrationSource::Predicted}) {
        if (to_string(s) == text) return s;
    }
    throw ValidationError("calibration_source", "unknown source '" + std::string(text) + "'");
}

namespace {

// Portable draws on top of mt19937_64, whose output sequence is fixed by the
// standard (the std distributions are not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    double normal() {
        double u1;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

SessionRecord SessionRecord::start(std::string participant_id, std::uint64_t rng_seed) {
    SessionRecord s;
    s.participant_id = std::move(participant_id);
    s.rng_seed = rng_seed;
    return s;
}

std::size_t SessionRecord::current_level(Category c) const {
    if (auto it = calibration.find(c); it != calibration.end()) return it->second;
    if (auto it = adjusting.find(c); it != adjusting.end()) return it->second;
    return 0;
}

std::optional<PendingTrial> SessionRecord::next_trial() const {
    if (phase != Phase::Evaluation) return std::nullopt;
    const auto schedule = evaluation_schedule(rng_seed);
    const auto k = trials.size();
    if (k >= schedule.size()) return std::nullopt;
    return PendingTrial{static_cast<int>(k) + 1, schedule[k]};
}

std::size_t SessionRecord::interactive_calibrations() const {
    return static_cast<std::size_t>(std::count_if(calibration_source.begin(), calibration_source.end(),
                                                  [](const auto& kv) { return kv.second == CalibrationSource::Interactive; }));
}

double SessionRecord::calibration_reduction_percent() const {
    return 100.0 * static_cast<double>(kCategoryCount - interactive_calibrations()) / static_cast<double>(kCategoryCount);
}

void SessionRecord::check_invariants() const {
    for (const auto& [c, level] : calibration) {
        if (level >= kLadderSize) throw StateError("calibrated level out of range for " + std::string(to_string(c)));
        if (!calibration_source.contains(c)) {
            throw StateError("calibration of " + std::string(to_string(c)) + " has no source");
        }
    }
    for (const auto& [c, src] : calibration_source) {
        (void)src;
        if (!calibration.contains(c)) throw StateError("source recorded for uncalibrated " + std::string(to_string(c)));
    }
    for (const auto& [c, level] : adjusting) {
        if (level >= kLadderSize) throw StateError("adjusting level out of range");
        if (calibration.contains(c)) throw StateError(std::string(to_string(c)) + " is both accepted and adjusting");
    }
    if (phase != Phase::Calibration) {
        if (calibration.size() != kCategoryCount) {
            throw StateError("evaluation requires all eight categories to be calibrated");
        }
        if (!adjusting.empty()) throw StateError("adjusting levels left after calibration");
    }
    if (phase == Phase::Calibration && !trials.empty()) throw StateError("trials recorded during calibration");

    const auto schedule = evaluation_schedule(rng_seed);
    if (trials.size() > schedule.size()) throw StateError("more than 24 trials");
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (trials[i].index != static_cast<int>(i) + 1) throw StateError("trial indices must run 1..24 in order");
        if (trials[i].category != schedule[i]) throw StateError("trial category does not follow the schedule");
        if (trials[i].rating < 0 || trials[i].rating > kMaxRating) throw StateError("rating outside [0, 5]");
    }
    if (phase == Phase::Done && trials.size() != schedule.size()) throw StateError("done with fewer than 24 trials");
    if (phase == Phase::Evaluation && trials.size() == schedule.size()) {
        throw StateError("all trials rated but session not done");
    }
}

SessionRecord calibration_step(SessionRecord session, Category category, CalibrationAction action) {
    if (session.phase != Phase::Calibration) {
        throw StateError("calibration is closed; session is in " + std::string(to_string(session.phase)));
    }
    if (session.is_calibrated(category)) {
        throw StateError(std::string(to_string(category)) + " has already been accepted");
    }
    const std::size_t level = session.current_level(category);
    switch (action) {
        case CalibrationAction::Up: session.adjusting[category] = std::min(level + 1, kLadderSize - 1); break;
        case CalibrationAction::Down: session.adjusting[category] = level == 0 ? 0 : level - 1; break;
        case CalibrationAction::Accept:
            session.calibration[category] = level;
            session.calibration_source[category] = CalibrationSource::Interactive;
            session.adjusting.erase(category);
            break;
    }
    if (session.calibration.size() == kCategoryCount) session.phase = Phase::Evaluation;
    return session;
}

SessionRecord apply_predictions(SessionRecord session, const std::map<Category, PredictionResult>& predictions) {
    if (session.phase != Phase::Calibration) throw StateError("predictions can only be applied during calibration");
    for (auto c : kAllCategories) {
        if (session.is_calibrated(c)) continue;
        auto it = predictions.find(c);
        if (it == predictions.end()) continue;
        session.calibration[c] = it->second.predicted_level;
        session.calibration_source[c] = CalibrationSource::Predicted;
        session.adjusting.erase(c);
    }
    if (session.calibration.size() == kCategoryCount) session.phase = Phase::Evaluation;
    return session;
}

SessionRecord rate_trial(SessionRecord session, int index, int rating) {
    if (session.phase != Phase::Evaluation) {
        throw StateError("ratings are only accepted during evaluation");
    }
    const auto pending = session.next_trial();
    if (!pending || pending->index != index) {
        throw StateError("trial " + std::to_string(index) + " is not the next pending trial");
    }
    if (rating < 0 || rating > kMaxRating) throw ValidationError("rating", "must be an integer in [0, 5]");
    session.trials.push_back({index, pending->category, rating});
    if (session.trials.size() == static_cast<std::size_t>(kTrialCount)) session.phase = Phase::Done;
    return session;
}

std::vector<Category> evaluation_schedule(std::uint64_t seed) {
    std::vector<Category> order;
    order.reserve(kTrialCount);
    for (auto c : kAllCategories) {
        for (int r = 0; r < kRepetitionsPerCategory; ++r) order.push_back(c);
    }
    Rng rng(seed);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[rng.below(i + 1)]);
    }
    return order;
}

std::map<Category, PredictionResult> predict_for_session(const SessionRecord& session, const ProfileSet& profiles,
                                                         const GroupingPolicy& policy, const PredictOptions& options) {
    std::map<Category, CalibrationPoint> refs;
    for (auto ref : policy.references()) {
        auto it = session.calibration.find(ref);
        if (it == session.calibration.end()) {
            throw ConfigurationError("reference " + std::string(to_string(ref)) + " has not been calibrated");
        }
        refs.emplace(ref, make_calibration_point(ref, it->second, profiles[index_of(ref)]));
    }
    auto all = predict_all(refs, profiles, policy, options);
    std::map<Category, PredictionResult> out;
    for (auto& [c, r] : all) {
        if (!session.is_calibrated(c)) out.emplace(c, r);
    }
    return out;
}

ParticipantCalibration calibration_of(const SessionRecord& session) {
    return {session.participant_id, session.calibration};
}

RatingDistribution RatingDistribution::default_distribution() {
    // Rating histograms (counts of 0..5) whose means sit at the reference
    // per-category naturalness means.
    RatingDistribution d;
    d.weights[index_of(Category::Tonic20)] = {39, 35, 93, 83, 45, 5};
    d.weights[index_of(Category::Tonic100)] = {20, 35, 97, 93, 45, 10};
    d.weights[index_of(Category::Amp20)] = {17, 35, 92, 96, 45, 15};
    d.weights[index_of(Category::Amp100)] = {10, 35, 106, 85, 45, 19};
    d.weights[index_of(Category::Freq20_100)] = {27, 35, 96, 92, 45, 5};
    d.weights[index_of(Category::Freq40_170)] = {10, 34, 106, 87, 45, 18};
    d.weights[index_of(Category::Both20_100)] = {20, 35, 93, 93, 45, 14};
    d.weights[index_of(Category::Both40_170)] = {20, 35, 96, 90, 45, 14};
    return d;
}

namespace {

int draw_rating(Rng& rng, const std::array<double, kMaxRating + 1>& weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) throw ValidationError("ratings", "distribution has no mass");
    double u = rng.uniform01() * total;
    for (int r = 0; r <= kMaxRating; ++r) {
        if (u < weights[static_cast<std::size_t>(r)]) return r;
        u -= weights[static_cast<std::size_t>(r)];
    }
    return kMaxRating;
}

}  // namespace

SessionRecord simulate_participant(const SyntheticParticipant& participant, const ProfileSet& profiles,
                                   const RatingDistribution& ratings) {
    if (participant.noise_sigma < 0.0) throw ValidationError("noise_sigma", "must be non-negative");
    if (!(participant.gain > 0.0)) throw ValidationError("gain", "must be positive");
    const EnergyProfile& reference = profiles[index_of(Category::Tonic100)];
    if (reference.mean.a2s() == 0.0) throw DegenerateProfileError("Tonic 100 Hz profile has zero mean");

    Rng rng(participant.rng_seed);
    SessionRecord session = SessionRecord::start(participant.participant_id, rng.next());

    for (auto c : kAllCategories) {
        const EnergyProfile& profile = profiles[index_of(c)];
        // Same operation order as predict_by_mean so the noiseless case agrees bit for bit.
        double target = participant.gain * profile.mean.a2s() / reference.mean.a2s();
        if (participant.noise_sigma > 0.0) target *= 1.0 + participant.noise_sigma * rng.normal();
        session.calibration[c] = nearest_energy_level(profile, {std::max(target, 0.0)});
        session.calibration_source[c] = CalibrationSource::Interactive;
    }
    session.phase = Phase::Evaluation;

    while (auto pending = session.next_trial()) {
        session = rate_trial(std::move(session), pending->index,
                             draw_rating(rng, ratings.weights[index_of(pending->category)]));
    }
    return session;
}

std::vector<SessionRecord> simulate_cohort(const CohortOptions& options, const ProfileSet& profiles,
                                           const RatingDistribution& ratings) {
    if (options.participants == 0) throw ValidationError("participants", "need at least one participant");
    if (options.min_reference_level > options.max_reference_level || options.max_reference_level >= kLadderSize) {
        throw ValidationError("reference_level", "invalid reference level range");
    }
    const EnergyProfile& reference = profiles[index_of(Category::Tonic100)];
    Rng rng(mix_seed(options.seed, 0));
    std::vector<SessionRecord> cohort;
    cohort.reserve(options.participants);
    const std::uint64_t span = options.max_reference_level - options.min_reference_level + 1;
    for (std::size_t p = 0; p < options.participants; ++p) {
        SyntheticParticipant participant;
        participant.participant_id = "P" + std::to_string(p + 1);
        const std::size_t level = options.min_reference_level + static_cast<std::size_t>(rng.below(span));
        participant.gain = reference.per_level[level].a2s();
        participant.noise_sigma = options.noise_sigma;
        participant.rng_seed = mix_seed(options.seed, p + 1);
        cohort.push_back(simulate_participant(participant, profiles, ratings));
    }
    return cohort;
}

std::vector<Category> NaturalnessSummary::ranking() const {
    std::vector<Category> order(kAllCategories.begin(), kAllCategories.end());
    std::sort(order.begin(), order.end(), [&](Category a, Category b) { return at(a).rank < at(b).rank; });
    return order;
}

namespace {

// Linear interpolation between order statistics at position p·(n-1).
double quantile(const std::vector<double>& sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

NaturalnessSummary summarize_naturalness(std::span<const SessionRecord> cohort) {
    if (cohort.empty()) throw ValidationError("cohort", "no sessions to summarize");
    std::array<std::vector<double>, kCategoryCount> scores;
    for (const auto& session : cohort) {
        if (session.phase != Phase::Done) {
            throw StateError("session " + session.participant_id + " has not finished evaluation");
        }
        for (const auto& t : session.trials) scores[index_of(t.category)].push_back(t.rating);
    }

    NaturalnessSummary summary;
    for (auto c : kAllCategories) {
        auto& values = scores[index_of(c)];
        if (values.empty()) throw StateError("no ratings for " + std::string(to_string(c)));
        std::sort(values.begin(), values.end());
        auto& s = summary.per_category[index_of(c)];
        s.category = c;
        s.count = values.size();
        s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
        s.median = quantile(values, 0.5);
        s.q1 = quantile(values, 0.25);
        s.q3 = quantile(values, 0.75);
        s.iqr = s.q3 - s.q1;
    }

    std::vector<Category> order(kAllCategories.begin(), kAllCategories.end());
    std::sort(order.begin(), order.end(), [&](Category a, Category b) {
        const auto& sa = summary.at(a);
        const auto& sb = summary.at(b);
        if (sa.mean != sb.mean) return sa.mean > sb.mean;
        if (sa.median != sb.median) return sa.median > sb.median;
        return to_string(a) < to_string(b);
    });
    for (std::size_t r = 0; r < order.size(); ++r) {
        summary.per_category[index_of(order[r])].rank = static_cast<int>(r) + 1;
    }
    return summary;
}

ImprovementReport improvement_report(const NaturalnessSummary& summary) {
    const auto order = summary.ranking();
    const auto percent = [&](Category a, Category b) {
        return (summary.at(a).mean - summary.at(b).mean) / static_cast<double>(kMaxRating) * 100.0;
    };
    ImprovementReport report{order.front(), order.back(), percent(order.front(), order.back()), {}};
    report.same_frequency.push_back({Category::Amp100, Category::Tonic100, percent(Category::Amp100, Category::Tonic100)});
    report.same_frequency.push_back({Category::Amp20, Category::Tonic20, percent(Category::Amp20, Category::Tonic20)});
    return report;
}

}  // namespace stimkit
