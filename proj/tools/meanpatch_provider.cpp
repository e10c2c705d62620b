// Minimal feature provider for the ingest pipeline: per-channel mean and
// standard deviation of each crop (d_f = 6). Usage: meanpatch-provider
// <crops_dir> <features_file>.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "racr/common.hpp"
#include "racr/image.hpp"

int main(int argc, char** argv) {
    if (argc != 3) {
        std::fprintf(stderr, "usage: meanpatch-provider <crops_dir> <features_file>\n");
        return 2;
    }
    try {
        std::vector<racr::fs::path> crops;
        for (const auto& entry : racr::fs::directory_iterator(argv[1]))
            if (entry.path().extension() == ".ppm") crops.push_back(entry.path());
        std::sort(crops.begin(), crops.end());

        std::vector<float> features;
        for (const auto& crop : crops) {
            racr::Image image = racr::read_image(crop);
            int channels = image.channels;
            size_t count = image.pixels.size() / channels;
            for (int c = 0; c < 3; ++c) {
                int src = std::min(c, channels - 1);
                double sum = 0, sum_sq = 0;
                for (size_t p = 0; p < count; ++p) {
                    double v = image.pixels[p * channels + src] / 255.0;
                    sum += v;
                    sum_sq += v * v;
                }
                double mean = sum / count;
                double var = std::max(0.0, sum_sq / count - mean * mean);
                features.push_back(static_cast<float>(mean));
                features.push_back(static_cast<float>(std::sqrt(var)));
            }
        }
        racr::write_f32(argv[2], features);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "meanpatch-provider: %s\n", e.what());
        return 1;
    }
    return 0;
}
