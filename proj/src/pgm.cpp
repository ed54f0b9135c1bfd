#include "mcfe/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

#include "mcfe/error.hpp"

namespace mcfe {

namespace {

int to_level(double v) {
    return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string token;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            if (!token.empty()) break;
        } else {
            token.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return token;
}

}  // namespace

double quantize_pixel(double v) { return static_cast<double>(to_level(v)) / 255.0; }

void write_pgm(const std::string& path, const Tensor& image) {
    std::size_t h = 0, w = 0;
    if (image.rank() == 3 && image.dim(0) == 1) {
        h = image.dim(1);
        w = image.dim(2);
    } else if (image.rank() == 2) {
        h = image.dim(0);
        w = image.dim(1);
    } else {
        throw Error(ErrorKind::shape_mismatch, "write_pgm: expected [1,H,W] or [H,W], got " + shape_string(image.shape()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot open " + path + " for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<char> bytes(h * w);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(static_cast<unsigned char>(to_level(image[i])));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "failed writing " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path);
    const std::string magic = next_token(in);
    if (magic != "P5" && magic != "P2") throw Error(ErrorKind::format, path + ": not a PGM (magic '" + magic + "')");
    std::size_t w = 0, h = 0;
    int maxval = 0;
    try {
        w = std::stoul(next_token(in));
        h = std::stoul(next_token(in));
        maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw Error(ErrorKind::format, path + ": malformed PGM header");
    }
    if (w == 0 || h == 0 || maxval <= 0 || maxval > 255) throw Error(ErrorKind::format, path + ": unsupported PGM dimensions or maxval");
    Tensor image({1, h, w}, 0.0);
    if (magic == "P5") {
        std::vector<unsigned char> bytes(h * w);
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw Error(ErrorKind::format, path + ": truncated pixel data");
        for (std::size_t i = 0; i < bytes.size(); ++i) image[i] = static_cast<double>(bytes[i]) / maxval;
    } else {
        for (std::size_t i = 0; i < h * w; ++i) {
            int v = 0;
            if (!(in >> v)) throw Error(ErrorKind::format, path + ": truncated pixel data");
            image[i] = static_cast<double>(v) / maxval;
        }
    }
    return image;
}

}  // namespace mcfe
