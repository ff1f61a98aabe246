#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "ode/digest.hpp"

namespace ode {

/// Interleaved 8-bit pixels, row-major, `channels` in {1, 3, 4}.
struct Raster {
    int width = 0;
    int height = 0;
    int channels = 3;
    Bytes pixels;

    std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels; }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }
    friend bool operator==(const Raster&, const Raster&) = default;
};

/// True when transforms can decode this media type.
bool is_decodable_mime(std::string_view mime);

Raster decode_image(std::span<const std::uint8_t> data, std::string_view mime);
/// Encodes as PNG, or PNM for the portable-anymap types. Output is deterministic.
Bytes encode_image(const Raster& raster, std::string_view mime);
/// Media type transforms emit for a source of type `mime` (lossy sources become PNG).
std::string output_mime_for(std::string_view mime);

struct CropBox {
    double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
};

enum class FlipAxis { horizontal, vertical };

/// Fractional crop. The box is clamped to [0,1]; the crop is
/// round((x1-x0)W) x round((y1-y0)H) starting at round(x0 W), round(y0 H).
Raster crop(const Raster& src, CropBox box);
/// Clockwise quarter turns; degrees must be 90, 180 or 270.
Raster rotate(const Raster& src, int degrees);
Raster flip(const Raster& src, FlipAxis axis);

}  // namespace ode
