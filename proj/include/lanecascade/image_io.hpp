#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "lanecascade/errors.hpp"
#include "lanecascade/image.hpp"

namespace lanecascade {

inline Image load_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw Error("failed to load image '" + path + "'");
    Image out(bgr.cols, bgr.rows);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) out.set_pixel(x, y, row[x][2], row[x][1], row[x][0]);
    }
    return out;
}

inline void save_image(const Image& image, const std::string& path) {
    if (image.empty()) throw InvalidArgumentError("save_image: empty image");
    cv::Mat bgr(image.height, image.width, CV_8UC3);
    for (int y = 0; y < image.height; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.width; ++x) {
            const auto px = image.pixel(x, y);
            row[x] = cv::Vec3b(px[2], px[1], px[0]);
        }
    }
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    if (!cv::imwrite(path, bgr)) throw Error("failed to write image '" + path + "'");
}

}  // namespace lanecascade
