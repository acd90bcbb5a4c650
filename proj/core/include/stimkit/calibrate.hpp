#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stimkit/category.hpp"
#include "stimkit/energy.hpp"

namespace stimkit {

using ProfileSet = std::array<EnergyProfile, kCategoryCount>;

// A participant's preferred level for one category and its energy.
struct CalibrationPoint {
    Category category = Category::Tonic100;
    std::size_t selected_level = 0;
    EnergyValue selected_energy;
};

CalibrationPoint make_calibration_point(Category category, std::size_t level, const EnergyProfile& profile);

struct PredictionResult {
    Category category = Category::Tonic100;
    EnergyValue predicted_energy;
    std::size_t predicted_level = 0;
    double predicted_amplitude_mA = 0.0;
    Category reference_used = Category::Tonic100;
};

// Level whose energy is closest to `energy`; ties go to the lower level.
std::size_t nearest_energy_level(const EnergyProfile& profile, EnergyValue energy);

// Scales the reference selection by the ratio of the profile means.
PredictionResult predict_by_mean(const CalibrationPoint& reference, const EnergyProfile& target,
                                 const EnergyProfile& reference_profile);

// Scales the reference selection by the ratio of energies at one shared
// ladder level `x` (defaults to the reference's selected level).
PredictionResult predict_by_matched_level(const CalibrationPoint& reference, const EnergyProfile& target,
                                          const EnergyProfile& reference_profile,
                                          std::optional<std::size_t> x = std::nullopt);

enum class PredictionMode { Mean, MatchedLevel };

struct PredictOptions {
    PredictionMode mode = PredictionMode::Mean;
    std::optional<std::size_t> matched_level;
};

// Which calibrated category seeds the prediction for each target.
class GroupingPolicy {
public:
    enum class Mode { SingleReference, FrequencyBands };

    static GroupingPolicy single_reference(Category reference = Category::Tonic100);
    // Tonic 20 Hz for the 20 Hz categories, Tonic 100 Hz for the rest.
    static GroupingPolicy frequency_bands();

    Mode mode() const noexcept { return mode_; }
    Category reference_for(Category target) const noexcept;
    bool is_reference(Category c) const noexcept;
    // Distinct reference categories, in category order.
    std::vector<Category> references() const;

private:
    GroupingPolicy(Mode mode, std::array<Category, kCategoryCount> map) : mode_(mode), map_(map) {}

    Mode mode_;
    std::array<Category, kCategoryCount> map_;
};

// One result per category. Reference categories map to their own calibration.
// Throws ConfigurationError when a reference demanded by `policy` is missing.
std::map<Category, PredictionResult> predict_all(const std::map<Category, CalibrationPoint>& references,
                                                 const ProfileSet& profiles, const GroupingPolicy& policy,
                                                 const PredictOptions& options = {});

// Coefficient of determination of `predicted` against `selected`, in percent.
// Not clamped; may be negative.
double r2_score(std::span<const double> selected, std::span<const double> predicted);

// Calibrated levels of one participant, keyed by category.
struct ParticipantCalibration {
    std::string participant_id;
    std::map<Category, std::size_t> levels;
};

struct ParticipantScore {
    std::string participant_id;
    double r2_percent = 0.0;
};

struct CategoryScore {
    Category category = Category::Tonic100;
    std::optional<double> r2_percent;
    std::string error;  // set when r2_percent is empty
};

struct SkippedParticipant {
    std::string participant_id;
    std::string reason;
};

struct ScoreMatrix {
    std::vector<ParticipantScore> per_participant;
    std::vector<CategoryScore> per_category;  // non-reference categories only
    std::optional<double> participant_average;
    std::optional<double> category_average;
    std::vector<SkippedParticipant> skipped;
};

// R² per participant (across non-reference categories) and per category
// (across participants). Reference categories are excluded from both.
ScoreMatrix score_matrix(std::span<const ParticipantCalibration> cohort, const GroupingPolicy& policy,
                         const ProfileSet& profiles, const PredictOptions& options = {});

}  // namespace stimkit
