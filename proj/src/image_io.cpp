#include "f2bev/image_io.hpp"

#include "f2bev/error.hpp"

#include <fstream>
#include <string>

namespace f2bev {
namespace {

// Reads the next header token, skipping whitespace and `#` comments.
std::string next_token(std::istream& in) {
    std::string token;
    char c = 0;
    while (in.get(c)) {
        if (c == '#') {
            std::string discard;
            std::getline(in, discard);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!token.empty()) break;
            continue;
        }
        token.push_back(c);
    }
    return token;
}

Image8 read_netpbm(const std::filesystem::path& path, const char* magic, int channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (next_token(in) != magic) throw ParseError(path.string() + ": expected " + magic + " header");
    int width = 0;
    int height = 0;
    int maxval = 0;
    try {
        width = std::stoi(next_token(in));
        height = std::stoi(next_token(in));
        maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw ParseError(path.string() + ": malformed header");
    }
    if (width <= 0 || height <= 0 || maxval != 255) {
        throw ParseError(path.string() + ": unsupported dimensions or maxval");
    }
    Image8 image(width, height, channels);
    in.read(reinterpret_cast<char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
        throw ParseError(path.string() + ": truncated pixel data");
    }
    return image;
}

void write_netpbm(const std::filesystem::path& path, const Image8& image, const char* magic,
                  int channels) {
    if (image.channels != channels) throw PreconditionError("channel count does not match format");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << magic << '\n' << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

Image8 read_pgm(const std::filesystem::path& path) { return read_netpbm(path, "P5", 1); }
Image8 read_ppm(const std::filesystem::path& path) { return read_netpbm(path, "P6", 3); }
void write_pgm(const std::filesystem::path& path, const Image8& image) {
    write_netpbm(path, image, "P5", 1);
}
void write_ppm(const std::filesystem::path& path, const Image8& image) {
    write_netpbm(path, image, "P6", 3);
}

}  // namespace f2bev
