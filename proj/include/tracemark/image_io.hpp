#pragma once

// PNG persistence (libpng simplified API) and in-memory JPEG transcoding
// (libjpeg). Pixels are quantized to 8 bits on write.

#include "tracemark/error.hpp"
#include "tracemark/image.hpp"

#include <cstdio>
#include <cstdlib>
#include <csetjmp>
#include <filesystem>
#include <vector>

#include <jpeglib.h>
#include <png.h>

namespace tracemark {

inline Image load_png(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(ErrorKind::MissingFile, path.string());
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str()))
        throw Error(ErrorKind::CodecFailure, path.string() + ": " + png.message);
    png.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&png);
        throw Error(ErrorKind::CodecFailure, path.string() + ": " + png.message);
    }
    std::vector<double> pixels(buffer.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) pixels[i] = buffer[i] / 255.0;
    return Image(png.width, png.height, std::move(pixels));
}

inline void save_png(const Image& img, const std::filesystem::path& path) {
    std::vector<png_byte> buffer(img.size());
    const auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) buffer[i] = quantize_8bit(px[i]);

    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width());
    png.height = static_cast<png_uint_32>(img.height());
    png.format = PNG_FORMAT_RGB;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0, nullptr))
        throw Error(ErrorKind::CodecFailure, path.string() + ": " + png.message);
}

namespace detail {

struct JpegErrorTrap {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr info) {
    auto* trap = reinterpret_cast<JpegErrorTrap*>(info->err);
    std::longjmp(trap->jump, 1);
}

// The setjmp frames below hold only trivially destructible locals.
inline bool jpeg_encode(const JSAMPLE* rgb, JDIMENSION width, JDIMENSION height, int quality,
                        unsigned char** encoded, unsigned long* encoded_size) {
    jpeg_compress_struct cinfo{};
    JpegErrorTrap trap{};
    cinfo.err = jpeg_std_error(&trap.base);
    trap.base.error_exit = jpeg_error_exit;
    if (setjmp(trap.jump)) {
        jpeg_destroy_compress(&cinfo);
        return false;
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, encoded, encoded_size);
    cinfo.image_width = width;
    cinfo.image_height = height;
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    const std::size_t stride = static_cast<std::size_t>(width) * 3;
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPLE*>(rgb) + cinfo.next_scanline * stride;
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    return true;
}

inline bool jpeg_decode(const unsigned char* encoded, unsigned long encoded_size, JSAMPLE* rgb, JDIMENSION width,
                        JDIMENSION height) {
    jpeg_decompress_struct dinfo{};
    JpegErrorTrap trap{};
    dinfo.err = jpeg_std_error(&trap.base);
    trap.base.error_exit = jpeg_error_exit;
    if (setjmp(trap.jump)) {
        jpeg_destroy_decompress(&dinfo);
        return false;
    }
    jpeg_create_decompress(&dinfo);
    jpeg_mem_src(&dinfo, encoded, encoded_size);
    jpeg_read_header(&dinfo, TRUE);
    dinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&dinfo);
    if (dinfo.output_width != width || dinfo.output_height != height || dinfo.output_components != 3) {
        jpeg_destroy_decompress(&dinfo);
        return false;
    }
    const std::size_t stride = static_cast<std::size_t>(width) * 3;
    while (dinfo.output_scanline < dinfo.output_height) {
        JSAMPROW row = rgb + dinfo.output_scanline * stride;
        jpeg_read_scanlines(&dinfo, &row, 1);
    }
    jpeg_finish_decompress(&dinfo);
    jpeg_destroy_decompress(&dinfo);
    return true;
}

} // namespace detail

/// Encodes to baseline JPEG at the given quality (1..100) and decodes back.
inline Image jpeg_roundtrip(const Image& img, int quality) {
    if (quality < 1 || quality > 100)
        throw Error(ErrorKind::InvalidArgument, "jpeg quality must be in 1..100");
    if (img.empty()) return img;

    std::vector<JSAMPLE> rgb(img.size());
    const auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) rgb[i] = quantize_8bit(px[i]);

    const auto width = static_cast<JDIMENSION>(img.width());
    const auto height = static_cast<JDIMENSION>(img.height());
    unsigned char* encoded = nullptr;
    unsigned long encoded_size = 0;
    const bool encoded_ok = detail::jpeg_encode(rgb.data(), width, height, quality, &encoded, &encoded_size);
    const bool decoded_ok = encoded_ok && detail::jpeg_decode(encoded, encoded_size, rgb.data(), width, height);
    std::free(encoded);
    if (!encoded_ok) throw Error(ErrorKind::CodecFailure, "jpeg encode");
    if (!decoded_ok) throw Error(ErrorKind::CodecFailure, "jpeg decode");

    std::vector<double> pixels(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) pixels[i] = rgb[i] / 255.0;
    return Image(img.width(), img.height(), std::move(pixels));
}

} // namespace tracemark
