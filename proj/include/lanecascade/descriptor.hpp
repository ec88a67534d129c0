#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lanecascade/errors.hpp"
#include "lanecascade/geometry.hpp"
#include "lanecascade/image.hpp"
#include "lanecascade/image_io.hpp"

namespace lanecascade {

// Square patch of boundary pixels resampled to a fixed size; the unit the
// second-stage classifier consumes.
struct Descriptor {
    int size = 0;
    Image pixels;             // size x size
    std::string source_id;    // originating frame
    int boundary_index = -1;  // position within that frame's boundary list
};

// Nearest-index positions of `count` samples uniformly spaced over [0, len-1].
inline std::vector<int> resample_indices(int len, int count) {
    std::vector<int> idx(static_cast<std::size_t>(count));
    if (count == 1) return idx;  // single sample reads index 0
    for (int k = 0; k < count; ++k)
        idx[static_cast<std::size_t>(k)] =
            static_cast<int>(std::floor(static_cast<double>(k) * (len - 1) / (count - 1) + 0.5));
    return idx;
}

// Boundary pixels must arrive in row-major scan order of the source image; the
// descriptor is the S^2 resampled colors written row-major into an S x S grid.
inline Descriptor extract_descriptor(const Image& image, const std::vector<Pixel>& boundary_pixels, int S) {
    if (S <= 0) throw InvalidArgumentError("descriptor size must be positive");
    if (boundary_pixels.empty()) throw InvalidArgumentError("descriptor extraction needs a non-empty pixel list");
    Descriptor d;
    d.size = S;
    d.pixels = Image(S, S);
    const auto idx = resample_indices(static_cast<int>(boundary_pixels.size()), S * S);
    for (int k = 0; k < S * S; ++k) {
        const Pixel& src = boundary_pixels[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
        if (src.x < 0 || src.x >= image.width || src.y < 0 || src.y >= image.height)
            throw InvalidArgumentError("boundary pixel outside the image");
        for (int c = 0; c < 3; ++c) d.pixels.at(k % S, k / S, c) = image.at(src.x, src.y, c);
    }
    return d;
}

// One descriptor per boundary, batch order = boundary order.
inline std::vector<Descriptor> batch_descriptors(const Image& image,
                                                 const std::vector<std::vector<Pixel>>& boundaries, int S) {
    std::vector<Descriptor> batch;
    batch.reserve(boundaries.size());
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
        try {
            Descriptor d = extract_descriptor(image, boundaries[i], S);
            d.boundary_index = static_cast<int>(i);
            batch.push_back(std::move(d));
        } catch (const Error& e) {
            throw InvalidArgumentError("boundary " + std::to_string(i) + ": " + e.what());
        }
    }
    return batch;
}

inline std::string sanitize_source_id(const std::string& source) {
    std::string out;
    out.reserve(source.size());
    for (char ch : source) out.push_back(std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_');
    return out.empty() ? std::string("frame") : out;
}

// Dumps the descriptor losslessly for inspection.
inline std::filesystem::path save_descriptor(const Descriptor& descriptor, const std::filesystem::path& dir) {
    const std::string name = sanitize_source_id(descriptor.source_id) + "_" +
                             std::to_string(descriptor.boundary_index) + "_" + std::to_string(descriptor.size) +
                             ".png";
    const std::filesystem::path path = dir / name;
    save_image(descriptor.pixels, path.string());
    return path;
}

}  // namespace lanecascade
