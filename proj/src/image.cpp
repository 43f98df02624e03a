#include "ddcls/image.hpp"

#include "ddcls/error.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>

namespace ddcls::image {

namespace {

struct JpegErrorManager {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo)
{
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr, int) {}

Image decode_jpeg(std::span<const std::uint8_t> bytes)
{
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    err.pub.emit_message = jpeg_silent;
    Image img;
    // Nothing with a destructor may be created between setjmp and the decode loop.
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw ImageError(std::string("jpeg decode failed: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    img.width = cinfo.output_width;
    img.height = cinfo.output_height;
    img.rgb.resize(img.width * img.height * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

Image decode_png(std::span<const std::uint8_t> bytes)
{
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
        throw ImageError(std::string("png decode failed: ") + png.message);
    png.format = PNG_FORMAT_RGB;
    Image img;
    img.width = png.width;
    img.height = png.height;
    img.rgb.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
        png_image_free(&png);
        throw ImageError(std::string("png decode failed: ") + png.message);
    }
    return img;
}

Image decode_ppm(std::span<const std::uint8_t> bytes)
{
    std::size_t pos = 2;
    auto next_int = [&]() -> std::size_t {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n')
                    ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::size_t v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            any = true;
            if (v > (1u << 24))
                throw ImageError("ppm: header value too large");
        }
        if (!any)
            throw ImageError("ppm: malformed header");
        return v;
    };
    Image img;
    img.width = next_int();
    img.height = next_int();
    if (next_int() != 255)
        throw ImageError("ppm: only maxval 255 is supported");
    ++pos; // single whitespace before raster
    const std::size_t need = img.width * img.height * 3;
    if (img.width == 0 || img.height == 0 || pos > bytes.size() || bytes.size() - pos < need)
        throw ImageError("ppm: truncated raster");
    img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return img;
}

bool is_jpeg(std::span<const std::uint8_t> b) { return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF; }
bool is_png(std::span<const std::uint8_t> b)
{
    static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    return b.size() >= 8 && std::equal(std::begin(sig), std::end(sig), b.begin());
}
bool is_ppm(std::span<const std::uint8_t> b) { return b.size() >= 2 && b[0] == 'P' && b[1] == '6'; }

} // namespace

bool has_image_signature(std::span<const std::uint8_t> head) { return is_jpeg(head) || is_png(head) || is_ppm(head); }

Image decode(std::span<const std::uint8_t> bytes)
{
    Image img;
    if (is_jpeg(bytes))
        img = decode_jpeg(bytes);
    else if (is_png(bytes))
        img = decode_png(bytes);
    else if (is_ppm(bytes))
        img = decode_ppm(bytes);
    else
        throw ImageError("unrecognized image format");
    if (img.width == 0 || img.height == 0)
        throw ImageError("image has zero extent");
    return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ImageError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> encode_png(const Image& img)
{
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, img.rgb.data(), 0, nullptr))
        throw ImageError(std::string("png encode failed: ") + png.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, img.rgb.data(), 0, nullptr))
        throw ImageError(std::string("png encode failed: ") + png.message);
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> encode_ppm(const Image& img)
{
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.rgb.begin(), img.rgb.end());
    return out;
}

Tensor to_tensor(const Image& img)
{
    Tensor t(1, 3, img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                t.at(0, c, y, x) = img.at(x, y, c);
    return t;
}

Tensor resize_bilinear(const Tensor& t, std::size_t out_h, std::size_t out_w)
{
    if (out_h == 0 || out_w == 0 || t.h() == 0 || t.w() == 0)
        throw ShapeError("resize: empty extent");
    if (out_h == t.h() && out_w == t.w())
        return t;
    struct Tap {
        std::size_t i0, i1;
        float frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> v(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t o = 0; o < out; ++o) {
            const double src = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0,
                                          static_cast<double>(in - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(src));
            v[o] = {i0, std::min(i0 + 1, in - 1), static_cast<float>(src - static_cast<double>(i0))};
        }
        return v;
    };
    const auto ty = taps(t.h(), out_h);
    const auto tx = taps(t.w(), out_w);
    Tensor out(t.n(), t.c(), out_h, out_w);
    for (std::size_t n = 0; n < t.n(); ++n)
        for (std::size_t c = 0; c < t.c(); ++c)
            for (std::size_t y = 0; y < out_h; ++y) {
                const Tap& a = ty[y];
                for (std::size_t x = 0; x < out_w; ++x) {
                    const Tap& b = tx[x];
                    const float top = t.at(n, c, a.i0, b.i0) * (1 - b.frac) + t.at(n, c, a.i0, b.i1) * b.frac;
                    const float bot = t.at(n, c, a.i1, b.i0) * (1 - b.frac) + t.at(n, c, a.i1, b.i1) * b.frac;
                    out.at(n, c, y, x) = top * (1 - a.frac) + bot * a.frac;
                }
            }
    return out;
}

Tensor preprocess(const Image& img, std::size_t size)
{
    Tensor t = resize_bilinear(to_tensor(img), size, size);
    for (float& v : t.data())
        v = std::clamp(v / 255.0f, 0.0f, 1.0f);
    return t;
}

Tensor preprocess(std::span<const std::uint8_t> bytes, std::size_t size) { return preprocess(decode(bytes), size); }

} // namespace ddcls::image
