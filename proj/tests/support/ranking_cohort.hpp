#pragma once

// One hundred finished sessions whose ratings reproduce the reference
// per-category naturalness means (three ratings per category each).

#include <array>
#include <string>
#include <vector>

#include "stimkit/calibrate.hpp"
#include "stimkit/study.hpp"

namespace stimkit::testing {

inline constexpr std::size_t kRankingParticipants = 100;

inline std::vector<SessionRecord> ranking_cohort(const ProfileSet& profiles) {
    const auto dist = RatingDistribution::default_distribution();
    // Expand each histogram into its 300 ratings, lowest first.
    std::array<std::vector<int>, kCategoryCount> pool;
    for (auto c : kAllCategories) {
        for (int r = 0; r <= kMaxRating; ++r) {
            const auto n = static_cast<int>(dist.weights[index_of(c)][static_cast<std::size_t>(r)]);
            for (int k = 0; k < n; ++k) pool[index_of(c)].push_back(r);
        }
    }
    std::vector<SessionRecord> cohort;
    for (std::size_t p = 0; p < kRankingParticipants; ++p) {
        auto s = SessionRecord::start("T" + std::to_string(p + 1), 1000 + p);
        const auto ref = make_calibration_point(Category::Tonic100, 3 + p % 18, profiles[index_of(Category::Tonic100)]);
        const auto predicted = predict_all({{Category::Tonic100, ref}}, profiles, GroupingPolicy::single_reference());
        for (const auto& [c, r] : predicted) {
            s.calibration[c] = r.predicted_level;
            s.calibration_source[c] = CalibrationSource::Interactive;
        }
        s.phase = Phase::Evaluation;
        std::array<std::size_t, kCategoryCount> used{};
        while (auto pending = s.next_trial()) {
            const auto i = index_of(pending->category);
            // Participant p takes ratings p, p+100 and p+200 of every pool.
            const int rating = pool[i][p + kRankingParticipants * used[i]++];
            s = rate_trial(std::move(s), pending->index, rating);
        }
        cohort.push_back(std::move(s));
    }
    return cohort;
}

}  // namespace stimkit::testing
