#include "dasr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "dasr/checkpoint.hpp"

namespace dasr {

namespace {

struct ReadCursor {
    const std::string* bytes;
    std::size_t pos;
};

void read_bytes(png_structp png, png_bytep out, png_size_t len) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->pos + len > cur->bytes->size()) png_error(png, "unexpected end of PNG data");
    std::memcpy(out, cur->bytes->data() + cur->pos, len);
    cur->pos += len;
}

void write_bytes(png_structp png, png_bytep in, png_size_t len) {
    static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(in), len);
}

void flush_nothing(png_structp) {}

[[noreturn]] void on_error(png_structp png, png_const_charp msg) {
    *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
    png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

}  // namespace

Tensor<float> decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
        throw Error("not a PNG file");
    }
    std::string message;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, on_error, on_warning);
    if (!png) throw Error("png: cannot allocate decoder");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("png: cannot allocate decoder");
    }
    ReadCursor cursor{&bytes, 0};
    // Heap-held so the longjmp error path can release them.
    auto* raw = new std::vector<unsigned char>();
    auto* rows = new std::vector<png_bytep>();
    png_uint_32 width = 0, height = 0;
    int depth = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        delete raw;
        delete rows;
        throw Error("png: " + message);
    }
    png_set_read_fn(png, &cursor, read_bytes);
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // host little-endian samples
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    raw->resize(rowbytes * height);
    rows->resize(height);
    for (png_uint_32 y = 0; y < height; ++y) (*rows)[y] = raw->data() + y * rowbytes;
    png_read_image(png, rows->data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;

    const int h = static_cast<int>(height), w = static_cast<int>(width);
    Tensor<float> out({1, 3, h, w});
    auto v = out.mutable_values();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        const unsigned char* row = raw->data() + static_cast<std::size_t>(y) * rowbytes;
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float value;
                if (depth == 16) {
                    std::uint16_t s;
                    std::memcpy(&s, row + 2 * (3 * x + c), 2);
                    value = static_cast<float>(s / 65535.0);
                } else {
                    value = static_cast<float>(row[3 * x + c] / 255.0);
                }
                v[c * plane + static_cast<std::size_t>(y) * w + x] = value;
            }
    }
    delete raw;
    return out;
}

Tensor<float> read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

std::string encode_png(const Tensor<float>& image, int bit_depth) {
    const Shape& s = image.shape();
    if (s.c != 3 || s.n < 1 || s.h < 1 || s.w < 1) throw ShapeError("png: expected an RGB image, got " + s.str());
    if (bit_depth != 8 && bit_depth != 16) throw Error("png: bit depth must be 8 or 16");
    const int bytes_per = bit_depth / 8;
    const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
    const std::size_t rowbytes = static_cast<std::size_t>(s.w) * 3 * bytes_per;
    std::vector<unsigned char> raw(rowbytes * s.h);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(image(0, c, y, x)), 0.0, 1.0);
                const auto q = static_cast<unsigned>(std::lround(v * maxv));
                unsigned char* dst = raw.data() + static_cast<std::size_t>(y) * rowbytes + (3 * x + c) * bytes_per;
                if (bit_depth == 8) {
                    dst[0] = static_cast<unsigned char>(q);
                } else {
                    dst[0] = static_cast<unsigned char>(q >> 8);  // PNG samples are big-endian
                    dst[1] = static_cast<unsigned char>(q & 0xFF);
                }
            }
    std::vector<png_bytep> rows(static_cast<std::size_t>(s.h));
    for (int y = 0; y < s.h; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + static_cast<std::size_t>(y) * rowbytes;

    std::string out;
    std::string message;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, on_error, on_warning);
    if (!png) throw Error("png: cannot allocate encoder");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: encode failed: " + message);
    }
    png_set_write_fn(png, &out, write_bytes, flush_nothing);
    png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), bit_depth, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image, int bit_depth) {
    write_file_atomic(path, encode_png(image, bit_depth));
}

}  // namespace dasr
