#include "racr/image.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace racr {

Image Image::make(int height, int width, int channels, uint8_t fill) {
    Image image;
    image.height = height;
    image.width = width;
    image.channels = channels;
    image.pixels.assign(static_cast<size_t>(height) * width * channels, fill);
    return image;
}

std::vector<uint8_t> to_grayscale(const Image& image) {
    std::vector<uint8_t> gray(static_cast<size_t>(image.height) * image.width);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            if (image.channels == 1) {
                gray[static_cast<size_t>(y) * image.width + x] = image.at(y, x);
            } else {
                double luma = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) +
                              0.114 * image.at(y, x, 2);
                gray[static_cast<size_t>(y) * image.width + x] =
                    static_cast<uint8_t>(std::lround(luma));
            }
        }
    return gray;
}

// --- PPM ------------------------------------------------------------------

static int next_token(std::istream& in) {
    // Skips whitespace and '#' comments between header fields.
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int value;
    in >> value;
    return value;
}

static Image read_ppm(std::istream& in, const fs::path& file) {
    char magic[2];
    in.read(magic, 2);
    int channels = (magic[1] == '6') ? 3 : 1;
    int width = next_token(in);
    int height = next_token(in);
    int maxval = next_token(in);
    if (width < 1 || height < 1 || maxval != 255)
        throw IoError("unsupported PPM header in " + file.string());
    in.get();  // single whitespace before payload
    Image image = Image::make(height, width, channels);
    in.read(reinterpret_cast<char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
    if (!in) throw IoError("truncated PPM payload in " + file.string());
    return image;
}

void write_ppm(const Image& image, const fs::path& file) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    out << (image.channels == 3 ? "P6" : "P5") << "\n"
        << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("short write: " + file.string());
}

// --- PNG ------------------------------------------------------------------

static uint32_t be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

static void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

static uint8_t paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return uint8_t(a);
    if (pb <= pc) return uint8_t(b);
    return uint8_t(c);
}

static Image read_png(const std::vector<uint8_t>& data, const fs::path& file) {
    if (data.size() < 8) throw IoError("truncated PNG: " + file.string());
    size_t pos = 8;
    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    while (pos + 8 <= data.size()) {
        uint32_t length = be32(&data[pos]);
        std::string type(reinterpret_cast<const char*>(&data[pos + 4]), 4);
        if (pos + 12 + length > data.size()) throw IoError("truncated PNG chunk: " + file.string());
        const uint8_t* body = &data[pos + 8];
        if (type == "IHDR") {
            width = int(be32(body));
            height = int(be32(body + 4));
            bit_depth = body[8];
            color_type = body[9];
            if (bit_depth != 8 || body[12] != 0 ||
                (color_type != 0 && color_type != 2 && color_type != 6))
                throw IoError("unsupported PNG format in " + file.string());
        } else if (type == "IDAT") {
            idat.insert(idat.end(), body, body + length);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + length;
    }
    if (width < 1 || height < 1) throw IoError("missing IHDR in " + file.string());

    int src_channels = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
    size_t stride = static_cast<size_t>(width) * src_channels;
    std::vector<uint8_t> raw((stride + 1) * height);
    uLongf raw_size = raw.size();
    if (uncompress(raw.data(), &raw_size, idat.data(), idat.size()) != Z_OK ||
        raw_size != raw.size())
        throw IoError("PNG inflate failed for " + file.string());

    std::vector<uint8_t> prior(stride, 0), line(stride);
    int out_channels = src_channels == 4 ? 3 : src_channels;
    Image image = Image::make(height, width, out_channels);
    for (int y = 0; y < height; ++y) {
        const uint8_t* src = &raw[(stride + 1) * y];
        uint8_t filter = src[0];
        for (size_t x = 0; x < stride; ++x) {
            int left = x >= size_t(src_channels) ? line[x - src_channels] : 0;
            int up = prior[x];
            int up_left = x >= size_t(src_channels) ? prior[x - src_channels] : 0;
            int v = src[1 + x];
            switch (filter) {
                case 0: line[x] = uint8_t(v); break;
                case 1: line[x] = uint8_t(v + left); break;
                case 2: line[x] = uint8_t(v + up); break;
                case 3: line[x] = uint8_t(v + (left + up) / 2); break;
                case 4: line[x] = uint8_t(v + paeth(left, up, up_left)); break;
                default: throw IoError("bad PNG filter in " + file.string());
            }
        }
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < out_channels; ++c)
                image.at(y, x, c) = line[static_cast<size_t>(x) * src_channels + c];
        prior = line;
    }
    return image;
}

void write_png(const Image& image, const fs::path& file) {
    if (image.channels != 1 && image.channels != 3)
        throw ValidationError("write_png: only gray or RGB images");
    size_t stride = static_cast<size_t>(image.width) * image.channels;
    std::vector<uint8_t> raw((stride + 1) * image.height);
    for (int y = 0; y < image.height; ++y)
        std::memcpy(&raw[(stride + 1) * y + 1], &image.pixels[stride * y], stride);

    uLongf bound = compressBound(raw.size());
    std::vector<uint8_t> deflated(bound);
    if (compress2(deflated.data(), &bound, raw.data(), raw.size(), 6) != Z_OK)
        throw IoError("PNG deflate failed for " + file.string());
    deflated.resize(bound);

    std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    auto chunk = [&](const char* type, const std::vector<uint8_t>& body) {
        put_be32(out, uint32_t(body.size()));
        size_t start = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), body.begin(), body.end());
        put_be32(out, uint32_t(crc32(0, &out[start], uInt(out.size() - start))));
    };
    std::vector<uint8_t> ihdr;
    put_be32(ihdr, uint32_t(image.width));
    put_be32(ihdr, uint32_t(image.height));
    ihdr.push_back(8);
    ihdr.push_back(image.channels == 3 ? 2 : 0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    chunk("IHDR", ihdr);
    chunk("IDAT", deflated);
    chunk("IEND", {});

    std::ofstream stream(file, std::ios::binary | std::ios::trunc);
    if (!stream) throw IoError("cannot open for writing: " + file.string());
    stream.write(reinterpret_cast<const char*>(out.data()),
                 static_cast<std::streamsize>(out.size()));
    if (!stream) throw IoError("short write: " + file.string());
}

Image read_image(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open: " + file.string());
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    if (data.size() >= 2 && data[0] == 'P' && (data[1] == '5' || data[1] == '6')) {
        std::istringstream stream(std::string(data.begin(), data.end()));
        return read_ppm(stream, file);
    }
    if (data.size() >= 8 && data[0] == 0x89 && data[1] == 'P') return read_png(data, file);
    throw IoError("unrecognized image format: " + file.string());
}

}  // namespace racr
