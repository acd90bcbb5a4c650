#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stimkit/calibrate.hpp"
#include "stimkit/category.hpp"

namespace stimkit {

inline constexpr int kRepetitionsPerCategory = 3;
inline constexpr int kTrialCount = kRepetitionsPerCategory * static_cast<int>(kCategoryCount);
inline constexpr int kMaxRating = 5;

enum class Phase { Calibration, Evaluation, Done };
enum class CalibrationAction { Up, Down, Accept };
enum class CalibrationSource { Interactive, Predicted };

std::string_view to_string(Phase phase) noexcept;
std::string_view to_string(CalibrationAction action) noexcept;
std::string_view to_string(CalibrationSource source) noexcept;
Phase parse_phase(std::string_view text);
CalibrationAction parse_action(std::string_view text);
CalibrationSource parse_source(std::string_view text);

struct Trial {
    int index = 1;  // 1-based
    Category category = Category::Tonic100;
    int rating = 0;

    friend bool operator==(const Trial&, const Trial&) = default;
};

struct PendingTrial {
    int index;
    Category category;
};

// Everything recorded for one participant. Trials hold only rated entries;
// the order of the 24 stimulations comes from evaluation_schedule(rng_seed).
struct SessionRecord {
    std::string participant_id;
    std::uint64_t rng_seed = 0;
    Phase phase = Phase::Calibration;
    std::map<Category, std::size_t> calibration;
    std::map<Category, CalibrationSource> calibration_source;
    std::map<Category, std::size_t> adjusting;  // levels being tuned, not yet accepted
    std::vector<Trial> trials;

    static SessionRecord start(std::string participant_id, std::uint64_t rng_seed);

    // Accepted level, else the level under adjustment, else 0.
    std::size_t current_level(Category c) const;
    bool is_calibrated(Category c) const { return calibration.contains(c); }
    std::optional<PendingTrial> next_trial() const;

    std::size_t interactive_calibrations() const;
    // Share of the eight categories that did not need interactive calibration.
    double calibration_reduction_percent() const;

    // Throws StateError describing the first violated invariant.
    void check_invariants() const;

    friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

// Up/Down move one ladder step, clamped to [0, 25]; Accept records the level.
// Accepting the eighth category moves the session to Evaluation.
SessionRecord calibration_step(SessionRecord session, Category category, CalibrationAction action);

// Fills every uncalibrated category from `predictions` (source Predicted).
SessionRecord apply_predictions(SessionRecord session, const std::map<Category, PredictionResult>& predictions);

// Rates trial `index`, which must be the next pending one.
SessionRecord rate_trial(SessionRecord session, int index, int rating);

// Each category three times, shuffled deterministically from `seed`.
std::vector<Category> evaluation_schedule(std::uint64_t seed);

// Predictions for the session's uncalibrated categories using its accepted
// references. Throws ConfigurationError when a reference is not yet accepted.
std::map<Category, PredictionResult> predict_for_session(const SessionRecord& session, const ProfileSet& profiles,
                                                         const GroupingPolicy& policy,
                                                         const PredictOptions& options = {});

ParticipantCalibration calibration_of(const SessionRecord& session);

// ---------------------------------------------------------------------------
// Synthetic participants (headless validation oracle, not a perception model)

// Probability weights over ratings 0..5, one row per category.
struct RatingDistribution {
    std::array<std::array<double, kMaxRating + 1>, kCategoryCount> weights{};

    static RatingDistribution default_distribution();
};

struct SyntheticParticipant {
    std::string participant_id;
    double gain = 0.0;         // preferred Tonic 100 Hz energy, A²·s
    double noise_sigma = 0.0;  // relative energy noise
    std::uint64_t rng_seed = 0;
};

// Category i targets gain · mean_i / mean_Tonic100 · (1 + ε), ε ~ N(0, σ),
// and selects the nearest-energy ladder level. Ratings follow `ratings`.
SessionRecord simulate_participant(const SyntheticParticipant& participant, const ProfileSet& profiles,
                                   const RatingDistribution& ratings = RatingDistribution::default_distribution());

struct CohortOptions {
    std::size_t participants = 13;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    // Range of Tonic 100 Hz levels whose energies seed the participant gains.
    std::size_t min_reference_level = 0;
    std::size_t max_reference_level = kLadderSize - 1;
};

std::vector<SessionRecord> simulate_cohort(const CohortOptions& options, const ProfileSet& profiles,
                                           const RatingDistribution& ratings = RatingDistribution::default_distribution());

// ---------------------------------------------------------------------------
// Naturalness statistics

struct CategoryNaturalness {
    Category category = Category::Tonic100;
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double iqr = 0.0;
    int rank = 0;
};

struct NaturalnessSummary {
    std::array<CategoryNaturalness, kCategoryCount> per_category{};

    const CategoryNaturalness& at(Category c) const { return per_category[index_of(c)]; }
    // Categories ordered by rank (best first).
    std::vector<Category> ranking() const;
};

// Per-category mean, median and quartiles (linear interpolation) over every
// rating in the cohort. Ranks by mean, then median, then identifier.
NaturalnessSummary summarize_naturalness(std::span<const SessionRecord> cohort);

struct ModulationDelta {
    Category modulated;
    Category tonic;
    double percent;
};

struct ImprovementReport {
    Category best;
    Category worst;
    double best_vs_worst_percent;
    std::vector<ModulationDelta> same_frequency;
};

// Mean differences expressed as a share of the 5-point scale.
ImprovementReport improvement_report(const NaturalnessSummary& summary);

}  // namespace stimkit
