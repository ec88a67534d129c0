#pragma once

#include <array>
#include <string>
#include <string_view>

#include "lanecascade/errors.hpp"

namespace lanecascade {

// The eight boundary classes with fixed, stable integer codes.
enum class ClassLabel : int {
    single_white_continuous = 0,
    double_white_continuous = 1,
    single_yellow_continuous = 2,
    double_yellow_continuous = 3,
    dashed = 4,
    double_dashed = 5,
    botts_dots = 6,
    unknown = 7,
};

inline constexpr int kNumClasses = 8;

inline constexpr std::array<ClassLabel, kNumClasses> all_class_labels() {
    return {ClassLabel::single_white_continuous, ClassLabel::double_white_continuous,
            ClassLabel::single_yellow_continuous, ClassLabel::double_yellow_continuous,
            ClassLabel::dashed,                  ClassLabel::double_dashed,
            ClassLabel::botts_dots,              ClassLabel::unknown};
}

inline std::string_view class_token(ClassLabel label) {
    switch (label) {
        case ClassLabel::single_white_continuous: return "single_white_continuous";
        case ClassLabel::double_white_continuous: return "double_white_continuous";
        case ClassLabel::single_yellow_continuous: return "single_yellow_continuous";
        case ClassLabel::double_yellow_continuous: return "double_yellow_continuous";
        case ClassLabel::dashed: return "dashed";
        case ClassLabel::double_dashed: return "double_dashed";
        case ClassLabel::botts_dots: return "botts_dots";
        case ClassLabel::unknown: return "unknown";
    }
    throw InvalidArgumentError("class_token: invalid label code");
}

inline std::string valid_class_tokens() {
    std::string out;
    for (ClassLabel label : all_class_labels()) {
        if (!out.empty()) out += ", ";
        out += class_token(label);
    }
    return out;
}

inline ClassLabel parse_class_token(std::string_view token) {
    for (ClassLabel label : all_class_labels())
        if (class_token(label) == token) return label;
    throw InvalidArgumentError("unknown class token '" + std::string(token) + "'; valid tokens: " +
                               valid_class_tokens());
}

}  // namespace lanecascade
