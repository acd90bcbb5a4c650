#include "stimkit/category.hpp"

#include <algorithm>
#include <cctype>

#include "stimkit/errors.hpp"

namespace stimkit {

namespace {

struct CategoryInfo {
    std::string_view id;
    std::string_view label;
    FrequencyRange freq;
    bool amp_mod;
    bool freq_mod;
};

constexpr std::array<CategoryInfo, kCategoryCount> kInfo = {{
    {"tonic20", "Tonic 20 Hz", {20, 20}, false, false},
    {"tonic100", "Tonic 100 Hz", {100, 100}, false, false},
    {"amp20", "Amp 20 Hz", {20, 20}, true, false},
    {"amp100", "Amp 100 Hz", {100, 100}, true, false},
    {"freq20_100", "Freq 20-100 Hz", {20, 100}, false, true},
    {"freq40_170", "Freq 40-170 Hz", {40, 170}, false, true},
    {"both20_100", "Both 20-100 Hz", {20, 100}, true, true},
    {"both40_170", "Both 40-170 Hz", {40, 170}, true, true},
}};

}  // namespace

std::string_view to_string(Category c) noexcept { return kInfo[index_of(c)].id; }

std::string_view display_name(Category c) noexcept { return kInfo[index_of(c)].label; }

Category parse_category(std::string_view text) {
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    std::replace(lowered.begin(), lowered.end(), '-', '_');
    for (auto c : kAllCategories) {
        if (kInfo[index_of(c)].id == lowered) return c;
    }
    throw ValidationError("category", "unknown stimulation category '" + std::string(text) + "'");
}

bool modulates_amplitude(Category c) noexcept { return kInfo[index_of(c)].amp_mod; }
bool modulates_frequency(Category c) noexcept { return kInfo[index_of(c)].freq_mod; }
FrequencyRange frequency_range(Category c) noexcept { return kInfo[index_of(c)].freq; }

bool is_low_frequency(Category c) noexcept { return kInfo[index_of(c)].freq.high_hz < 100.0; }

}  // namespace stimkit
