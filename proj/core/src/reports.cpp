#include "stimkit/reports.hpp"

#include <cstdio>
#include <ostream>
#include <string>

namespace stimkit {

namespace {

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

}  // namespace

void write_predictions_csv(const std::map<Category, PredictionResult>& predictions, std::ostream& out) {
    out << "category,reference,predicted_energy_A2s,predicted_level_index,predicted_amplitude_mA\n";
    for (auto c : kAllCategories) {
        auto it = predictions.find(c);
        if (it == predictions.end()) continue;
        const auto& p = it->second;
        out << to_string(c) << ',' << to_string(p.reference_used) << ',' << fmt("%.9e", p.predicted_energy.a2s())
            << ',' << p.predicted_level << ',' << fmt("%.3f", p.predicted_amplitude_mA) << '\n';
    }
}

void write_participant_scores_csv(const ScoreMatrix& matrix, std::ostream& out) {
    out << "participant_id,r2_percent\n";
    for (const auto& p : matrix.per_participant) out << p.participant_id << ',' << fmt("%.3f", p.r2_percent) << '\n';
    out << "average," << (matrix.participant_average ? fmt("%.3f", *matrix.participant_average) : "") << '\n';
}

void write_category_scores_csv(const ScoreMatrix& matrix, std::ostream& out) {
    out << "category,r2_percent\n";
    for (const auto& c : matrix.per_category) {
        out << to_string(c.category) << ',' << (c.r2_percent ? fmt("%.3f", *c.r2_percent) : "") << '\n';
    }
    out << "average," << (matrix.category_average ? fmt("%.3f", *matrix.category_average) : "") << '\n';
}

void write_naturalness_csv(const NaturalnessSummary& summary, std::ostream& out) {
    out << "rank,stimulation,mean_score\n";
    for (auto c : summary.ranking()) {
        out << summary.at(c).rank << ',' << display_name(c) << ',' << fmt("%.2f", summary.at(c).mean) << '\n';
    }
}

}  // namespace stimkit
