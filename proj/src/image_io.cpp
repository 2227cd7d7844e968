#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "pedpipe/error.hpp"
#include "pedpipe/image.hpp"

namespace pedpipe {
namespace {

// Skips whitespace and '#' comments between PPM header tokens.
int read_header_int(std::istream& in, const std::string& path) {
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int value = 0;
    if (!(in >> value)) throw ParseError(path + ": malformed PPM header");
    return value;
}

FrameImage read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P6") throw ParseError(path.string() + ": only binary PPM (P6) is supported");
    const int width = read_header_int(in, path.string());
    const int height = read_header_int(in, path.string());
    const int maxval = read_header_int(in, path.string());
    if (width <= 0 || height <= 0 || maxval != 255) {
        throw ParseError(path.string() + ": unsupported PPM dimensions or maxval");
    }
    in.get();  // single whitespace before the raster
    std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw FormatError(path.string() + ": truncated PPM raster");
    }
    FrameImage img(width, height, 3);
    std::transform(raw.begin(), raw.end(), img.data().begin(), [](unsigned char v) { return float(v); });
    return img;
}

FrameImage read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw ParseError(path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> raw(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw ParseError(path.string() + ": " + msg);
    }
    FrameImage img(static_cast<int>(image.width), static_cast<int>(image.height), 3);
    std::transform(raw.begin(), raw.end(), img.data().begin(), [](unsigned char v) { return float(v); });
    return img;
}

}  // namespace

FrameImage read_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open image " + path.string());
    unsigned char sig[8] = {};
    probe.read(reinterpret_cast<char*>(sig), 8);
    if (probe.gcount() >= 2 && sig[0] == 'P' && sig[1] == '6') return read_ppm(path);
    if (probe.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
    throw ParseError(path.string() + ": unrecognized image format (expected PPM P6 or PNG)");
}

void write_ppm(const FrameImage& img, const std::filesystem::path& path) {
    if (img.channels() != 3) throw ShapeError("write_ppm: expected a 3-channel image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
    std::vector<unsigned char> raw(img.data().size());
    std::transform(img.data().begin(), img.data().end(), raw.begin(), [](float v) {
        return static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
    });
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace pedpipe
