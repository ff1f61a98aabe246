#include "ode/raster.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>

#include "ode/error.hpp"

namespace ode {

namespace {

constexpr std::string_view kPng = "image/png";
constexpr std::string_view kJpeg = "image/jpeg";
constexpr std::string_view kPpm = "image/x-portable-pixmap";
constexpr std::string_view kPgm = "image/x-portable-graymap";

// ---- PNM ----

Raster decode_pnm(std::span<const std::uint8_t> data) {
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(data[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&] {
        skip_ws();
        long v = 0;
        std::size_t start = pos;
        while (pos < data.size() && std::isdigit(data[pos])) v = v * 10 + (data[pos++] - '0');
        if (pos == start || v > 1'000'000) throw Error(ErrorKind::DecodeFailure, "bad PNM header");
        return static_cast<int>(v);
    };
    if (data.size() < 2 || data[0] != 'P' || (data[1] != '5' && data[1] != '6')) {
        throw Error(ErrorKind::DecodeFailure, "not a binary PNM");
    }
    Raster r;
    r.channels = data[1] == '6' ? 3 : 1;
    pos = 2;
    r.width = read_int();
    r.height = read_int();
    int maxval = read_int();
    if (maxval != 255) throw Error(ErrorKind::DecodeFailure, "only 8-bit PNM is supported");
    ++pos;  // single whitespace before raster
    std::size_t need = static_cast<std::size_t>(r.width) * r.height * r.channels;
    if (r.width <= 0 || r.height <= 0 || data.size() < pos + need) {
        throw Error(ErrorKind::DecodeFailure, "truncated PNM");
    }
    r.pixels.assign(data.begin() + static_cast<std::ptrdiff_t>(pos),
                    data.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return r;
}

Bytes encode_pnm(const Raster& r) {
    Raster src = r;
    if (src.channels == 4) {
        // PPM has no alpha; drop it.
        Raster rgb{src.width, src.height, 3, {}};
        rgb.pixels.reserve(static_cast<std::size_t>(src.width) * src.height * 3);
        for (std::size_t i = 0; i < src.pixels.size(); i += 4) {
            rgb.pixels.insert(rgb.pixels.end(), src.pixels.begin() + static_cast<std::ptrdiff_t>(i),
                              src.pixels.begin() + static_cast<std::ptrdiff_t>(i + 3));
        }
        src = std::move(rgb);
    }
    std::string header = std::string(src.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(src.width) + " " +
                         std::to_string(src.height) + "\n255\n";
    Bytes out(header.begin(), header.end());
    out.insert(out.end(), src.pixels.begin(), src.pixels.end());
    return out;
}

// ---- PNG ----

struct PngReadState {
    std::span<const std::uint8_t> data;
    std::size_t offset = 0;
};

void png_read_fn(png_structp png, png_bytep out, png_size_t len) {
    auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (st->offset + len > st->data.size()) png_error(png, "read past end");
    std::memcpy(out, st->data.data() + st->offset, len);
    st->offset += len;
}

void png_write_fn(png_structp png, png_bytep in, png_size_t len) {
    auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
    out->insert(out->end(), in, in + len);
}

void png_flush_fn(png_structp) {}

Raster decode_png(std::span<const std::uint8_t> data) {
    if (data.size() < 8 || png_sig_cmp(data.data(), 0, 8) != 0) throw Error(ErrorKind::DecodeFailure, "not a PNG");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error(ErrorKind::DecodeFailure, "png_create_read_struct");
    png_infop info = png_create_info_struct(png);
    Raster r;
    PngReadState st{data, 0};
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::DecodeFailure, "corrupt PNG");
    }
    png_set_read_fn(png, &st, png_read_fn);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_expand(png);
    int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    r.width = static_cast<int>(png_get_image_width(png, info));
    r.height = static_cast<int>(png_get_image_height(png, info));
    r.channels = png_get_channels(png, info);
    r.pixels.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
    rows.resize(static_cast<std::size_t>(r.height));
    for (int y = 0; y < r.height; ++y) rows[static_cast<std::size_t>(y)] = r.at(0, y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return r;
}

Bytes encode_png(const Raster& r) {
    Bytes out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error(ErrorKind::DecodeFailure, "png_create_write_struct");
    png_infop info = png_create_info_struct(png);
    std::vector<png_bytep> rows(static_cast<std::size_t>(r.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::DecodeFailure, "PNG encode failed");
    }
    png_set_write_fn(png, &out, png_write_fn, png_flush_fn);
    int color = r.channels == 1 ? PNG_COLOR_TYPE_GRAY : r.channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int y = 0; y < r.height; ++y) rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(r.at(0, y));
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

// ---- JPEG (decode only) ----

struct JpegErr {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

Raster decode_jpeg(std::span<const std::uint8_t> data) {
    jpeg_decompress_struct cinfo{};
    JpegErr err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    Raster r;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw Error(ErrorKind::DecodeFailure, "corrupt JPEG");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, data.data(), static_cast<unsigned long>(data.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    r.width = static_cast<int>(cinfo.output_width);
    r.height = static_cast<int>(cinfo.output_height);
    r.channels = cinfo.output_components;
    r.pixels.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = r.at(0, static_cast<int>(cinfo.output_scanline));
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return r;
}

}  // namespace

bool is_decodable_mime(std::string_view mime) {
    return mime == kPng || mime == kJpeg || mime == kPpm || mime == kPgm;
}

Raster decode_image(std::span<const std::uint8_t> data, std::string_view mime) {
    if (mime == kPng) return decode_png(data);
    if (mime == kJpeg) return decode_jpeg(data);
    if (mime == kPpm || mime == kPgm) return decode_pnm(data);
    throw Error(ErrorKind::UnsupportedMime, "cannot decode " + std::string(mime));
}

std::string output_mime_for(std::string_view mime) {
    if (mime == kPpm || mime == kPgm) return std::string(mime);
    return std::string(kPng);
}

Bytes encode_image(const Raster& raster, std::string_view mime) {
    if (mime == kPng) return encode_png(raster);
    if (mime == kPpm || mime == kPgm) return encode_pnm(raster);
    throw Error(ErrorKind::UnsupportedMime, "cannot encode " + std::string(mime));
}

Raster crop(const Raster& src, CropBox box) {
    auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
    box = {clamp01(box.x0), clamp01(box.y0), clamp01(box.x1), clamp01(box.y1)};
    int w = static_cast<int>(std::lround((box.x1 - box.x0) * src.width));
    int h = static_cast<int>(std::lround((box.y1 - box.y0) * src.height));
    if (box.x1 <= box.x0 || box.y1 <= box.y0 || w <= 0 || h <= 0) {
        throw Error(ErrorKind::DegenerateRegion, "crop region has zero area");
    }
    int x = std::min(static_cast<int>(std::lround(box.x0 * src.width)), src.width - w);
    int y = std::min(static_cast<int>(std::lround(box.y0 * src.height)), src.height - h);
    Raster out{w, h, src.channels, {}};
    out.pixels.resize(static_cast<std::size_t>(w) * h * src.channels);
    const std::size_t row_bytes = static_cast<std::size_t>(w) * src.channels;
    for (int r = 0; r < h; ++r) std::memcpy(out.at(0, r), src.at(x, y + r), row_bytes);
    return out;
}

Raster rotate(const Raster& src, int degrees) {
    if (degrees != 90 && degrees != 180 && degrees != 270) {
        throw Error(ErrorKind::UnsupportedAngle, std::to_string(degrees) + " is not a quarter turn");
    }
    const bool swap = degrees != 180;
    Raster out{swap ? src.height : src.width, swap ? src.width : src.height, src.channels, {}};
    out.pixels.resize(src.pixels.size());
    const auto c = static_cast<std::size_t>(src.channels);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            int nx = 0, ny = 0;
            switch (degrees) {
                case 90: nx = src.height - 1 - y; ny = x; break;
                case 180: nx = src.width - 1 - x; ny = src.height - 1 - y; break;
                default: nx = y; ny = src.width - 1 - x; break;
            }
            std::memcpy(out.at(nx, ny), src.at(x, y), c);
        }
    }
    return out;
}

Raster flip(const Raster& src, FlipAxis axis) {
    Raster out = src;
    const auto c = static_cast<std::size_t>(src.channels);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            int sx = axis == FlipAxis::horizontal ? src.width - 1 - x : x;
            int sy = axis == FlipAxis::vertical ? src.height - 1 - y : y;
            std::memcpy(out.at(x, y), src.at(sx, sy), c);
        }
    }
    return out;
}

}  // namespace ode
