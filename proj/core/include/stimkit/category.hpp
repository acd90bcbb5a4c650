#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace stimkit {

// The eight stimulation categories: two tonic baselines and six
// ramp-and-hold modulations over two frequency bands.
enum class Category {
    Tonic20,
    Tonic100,
    Amp20,
    Amp100,
    Freq20_100,
    Freq40_170,
    Both20_100,
    Both40_170,
};

inline constexpr std::size_t kCategoryCount = 8;

inline constexpr std::array<Category, kCategoryCount> kAllCategories = {
    Category::Tonic20,    Category::Tonic100,   Category::Amp20,      Category::Amp100,
    Category::Freq20_100, Category::Freq40_170, Category::Both20_100, Category::Both40_170,
};

constexpr std::size_t index_of(Category c) noexcept { return static_cast<std::size_t>(c); }

// Lower-case identifier used in files, flags and JSON ("tonic100", "both20_100").
std::string_view to_string(Category c) noexcept;

// Human label ("Tonic 100 Hz", "Both 20-100 Hz").
std::string_view display_name(Category c) noexcept;

// Accepts the identifier form, case-insensitively; throws ValidationError.
Category parse_category(std::string_view text);

bool modulates_amplitude(Category c) noexcept;
bool modulates_frequency(Category c) noexcept;

struct FrequencyRange {
    double low_hz;
    double high_hz;
};

FrequencyRange frequency_range(Category c) noexcept;

// 20 Hz categories form the low band; everything at or above 100 Hz the high band.
bool is_low_frequency(Category c) noexcept;

}  // namespace stimkit
