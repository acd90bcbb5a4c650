#include "stimkit/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "stimkit/errors.hpp"

namespace stimkit {

CalibrationPoint make_calibration_point(Category category, std::size_t level, const EnergyProfile& profile) {
    if (profile.category != category) {
        throw ConfigurationError("calibration for " + std::string(to_string(category)) + " given the " +
                                 std::string(to_string(profile.category)) + " profile");
    }
    if (level >= profile.size()) {
        throw ValidationError("level", "ladder index " + std::to_string(level) + " out of range");
    }
    return {category, level, profile.per_level[level]};
}

std::size_t nearest_energy_level(const EnergyProfile& profile, EnergyValue energy) {
    if (profile.per_level.empty()) throw DegenerateProfileError("empty energy profile");
    std::size_t best = 0;
    double best_gap = std::abs(profile.per_level[0].a2s() - energy.a2s());
    for (std::size_t i = 1; i < profile.per_level.size(); ++i) {
        const double gap = std::abs(profile.per_level[i].a2s() - energy.a2s());
        if (gap < best_gap) {
            best = i;
            best_gap = gap;
        }
    }
    return best;
}

namespace {

void require_same_ladder(const EnergyProfile& a, const EnergyProfile& b) {
    if (a.amplitudes_mA != b.amplitudes_mA) {
        throw ConfigurationError("profiles for " + std::string(to_string(a.category)) + " and " +
                                 std::string(to_string(b.category)) + " use different amplitude ladders");
    }
}

PredictionResult finish(Category target, const EnergyProfile& profile, EnergyValue predicted, Category reference) {
    PredictionResult r;
    r.category = target;
    r.predicted_energy = predicted;
    r.predicted_level = nearest_energy_level(profile, predicted);
    r.predicted_amplitude_mA = profile.amplitudes_mA[r.predicted_level];
    r.reference_used = reference;
    return r;
}

}  // namespace

PredictionResult predict_by_mean(const CalibrationPoint& reference, const EnergyProfile& target,
                                 const EnergyProfile& reference_profile) {
    require_same_ladder(target, reference_profile);
    if (reference_profile.mean.a2s() == 0.0) {
        throw DegenerateProfileError("reference profile has zero mean energy");
    }
    if (target.category == reference.category) {
        return finish(target.category, target, reference.selected_energy, reference.category);
    }
    const double predicted = reference.selected_energy.a2s() * target.mean.a2s() / reference_profile.mean.a2s();
    return finish(target.category, target, {predicted}, reference.category);
}

PredictionResult predict_by_matched_level(const CalibrationPoint& reference, const EnergyProfile& target,
                                          const EnergyProfile& reference_profile, std::optional<std::size_t> x) {
    require_same_ladder(target, reference_profile);
    const std::size_t level = x.value_or(reference.selected_level);
    if (level >= target.size() || level >= reference_profile.size()) {
        throw ValidationError("x", "matched level " + std::to_string(level) + " out of range");
    }
    const double denom = reference_profile.per_level[level].a2s();
    if (denom == 0.0) throw DegenerateProfileError("reference energy at matched level is zero");
    if (target.category == reference.category) {
        return finish(target.category, target, reference.selected_energy, reference.category);
    }
    const double predicted = reference.selected_energy.a2s() * target.per_level[level].a2s() / denom;
    return finish(target.category, target, {predicted}, reference.category);
}

GroupingPolicy GroupingPolicy::single_reference(Category reference) {
    std::array<Category, kCategoryCount> map{};
    map.fill(reference);
    return GroupingPolicy(Mode::SingleReference, map);
}

GroupingPolicy GroupingPolicy::frequency_bands() {
    std::array<Category, kCategoryCount> map{};
    for (auto c : kAllCategories) {
        map[index_of(c)] = is_low_frequency(c) ? Category::Tonic20 : Category::Tonic100;
    }
    return GroupingPolicy(Mode::FrequencyBands, map);
}

Category GroupingPolicy::reference_for(Category target) const noexcept { return map_[index_of(target)]; }

bool GroupingPolicy::is_reference(Category c) const noexcept {
    return std::find(map_.begin(), map_.end(), c) != map_.end();
}

std::vector<Category> GroupingPolicy::references() const {
    std::vector<Category> out;
    for (auto c : kAllCategories) {
        if (is_reference(c)) out.push_back(c);
    }
    return out;
}

std::map<Category, PredictionResult> predict_all(const std::map<Category, CalibrationPoint>& references,
                                                 const ProfileSet& profiles, const GroupingPolicy& policy,
                                                 const PredictOptions& options) {
    for (auto ref : policy.references()) {
        if (!references.contains(ref)) {
            throw ConfigurationError("grouping policy needs a calibration for " + std::string(to_string(ref)));
        }
    }
    std::map<Category, PredictionResult> out;
    for (auto c : kAllCategories) {
        const Category ref = policy.reference_for(c);
        const CalibrationPoint& point = references.at(ref);
        const EnergyProfile& target = profiles[index_of(c)];
        const EnergyProfile& ref_profile = profiles[index_of(ref)];
        out.emplace(c, options.mode == PredictionMode::Mean
                           ? predict_by_mean(point, target, ref_profile)
                           : predict_by_matched_level(point, target, ref_profile, options.matched_level));
    }
    return out;
}

double r2_score(std::span<const double> selected, std::span<const double> predicted) {
    if (selected.size() != predicted.size()) {
        throw ValidationError("predicted", "length differs from selected");
    }
    if (selected.empty()) throw ValidationError("selected", "no values to score");
    const double mean = std::accumulate(selected.begin(), selected.end(), 0.0) / static_cast<double>(selected.size());
    double ss_tot = 0.0;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        ss_tot += (selected[i] - mean) * (selected[i] - mean);
        ss_res += (selected[i] - predicted[i]) * (selected[i] - predicted[i]);
    }
    if (ss_tot == 0.0) throw UndefinedVarianceError("selected values are all identical");
    return 100.0 * (1.0 - ss_res / ss_tot);
}

namespace {

std::optional<double> average(const std::vector<double>& values) {
    if (values.empty()) return std::nullopt;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace

ScoreMatrix score_matrix(std::span<const ParticipantCalibration> cohort, const GroupingPolicy& policy,
                         const ProfileSet& profiles, const PredictOptions& options) {
    ScoreMatrix out;

    std::vector<Category> targets;
    for (auto c : kAllCategories) {
        if (!policy.is_reference(c)) targets.push_back(c);
    }

    // Selected and predicted energies per target category, over scored participants.
    std::array<std::vector<double>, kCategoryCount> selected_by_cat;
    std::array<std::vector<double>, kCategoryCount> predicted_by_cat;

    for (const auto& participant : cohort) {
        std::string missing;
        for (auto c : kAllCategories) {
            auto it = participant.levels.find(c);
            if (it == participant.levels.end() || it->second >= profiles[index_of(c)].size()) {
                missing += missing.empty() ? "" : ",";
                missing += to_string(c);
            }
        }
        if (!missing.empty()) {
            out.skipped.push_back({participant.participant_id, "incomplete calibration: " + missing});
            continue;
        }

        std::map<Category, CalibrationPoint> refs;
        for (auto ref : policy.references()) {
            refs.emplace(ref, make_calibration_point(ref, participant.levels.at(ref), profiles[index_of(ref)]));
        }
        const auto predictions = predict_all(refs, profiles, policy, options);

        std::vector<double> selected;
        std::vector<double> predicted;
        for (auto c : targets) {
            selected.push_back(profiles[index_of(c)].per_level[participant.levels.at(c)].a2s());
            predicted.push_back(predictions.at(c).predicted_energy.a2s());
        }
        try {
            out.per_participant.push_back({participant.participant_id, r2_score(selected, predicted)});
        } catch (const Error& e) {
            out.skipped.push_back({participant.participant_id, e.what()});
            continue;
        }
        for (std::size_t i = 0; i < targets.size(); ++i) {
            selected_by_cat[index_of(targets[i])].push_back(selected[i]);
            predicted_by_cat[index_of(targets[i])].push_back(predicted[i]);
        }
    }

    std::vector<double> participant_values;
    for (const auto& p : out.per_participant) participant_values.push_back(p.r2_percent);
    out.participant_average = average(participant_values);

    std::vector<double> category_values;
    for (auto c : targets) {
        CategoryScore score;
        score.category = c;
        try {
            score.r2_percent = r2_score(selected_by_cat[index_of(c)], predicted_by_cat[index_of(c)]);
            category_values.push_back(*score.r2_percent);
        } catch (const Error& e) {
            score.error = e.what();
        }
        out.per_category.push_back(std::move(score));
    }
    out.category_average = average(category_values);
    return out;
}

}  // namespace stimkit
