#pragma once

#include <iosfwd>
#include <map>

#include "stimkit/calibrate.hpp"
#include "stimkit/study.hpp"

namespace stimkit {

// category,reference,predicted_energy_A2s,predicted_level_index,predicted_amplitude_mA
void write_predictions_csv(const std::map<Category, PredictionResult>& predictions, std::ostream& out);

// participant_id,r2_percent with a trailing `average` row.
void write_participant_scores_csv(const ScoreMatrix& matrix, std::ostream& out);

// category,r2_percent with a trailing `average` row; undefined scores are empty.
void write_category_scores_csv(const ScoreMatrix& matrix, std::ostream& out);

// rank,stimulation,mean_score in rank order.
void write_naturalness_csv(const NaturalnessSummary& summary, std::ostream& out);

}  // namespace stimkit
