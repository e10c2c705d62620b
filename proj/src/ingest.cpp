#include "racr/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <numeric>

namespace racr {

size_t TissueMask::area() const {
    return static_cast<size_t>(std::count(mask.begin(), mask.end(), uint8_t(1)));
}

int otsu_threshold(const std::vector<uint8_t>& gray, bool* degenerate) {
    std::array<int64_t, 256> hist{};
    for (uint8_t v : gray) hist[v]++;
    int64_t total = static_cast<int64_t>(gray.size());

    double best_variance = 0.0;
    int best_threshold = 0;
    int64_t weight_low = 0;
    int64_t sum_low = 0;
    int64_t sum_all = 0;
    for (int v = 0; v < 256; ++v) sum_all += int64_t(v) * hist[v];
    for (int t = 0; t < 255; ++t) {
        weight_low += hist[t];
        sum_low += int64_t(t) * hist[t];
        int64_t weight_high = total - weight_low;
        if (weight_low == 0 || weight_high == 0) continue;
        double mean_low = double(sum_low) / weight_low;
        double mean_high = double(sum_all - sum_low) / weight_high;
        double variance = double(weight_low) * double(weight_high) *
                          (mean_low - mean_high) * (mean_low - mean_high);
        if (variance > best_variance) {
            best_variance = variance;
            best_threshold = t;
        }
    }
    if (degenerate) *degenerate = best_variance == 0.0;
    return best_threshold;
}

static void drop_small_components(TissueMask& tissue, size_t min_area) {
    std::vector<uint8_t> visited(tissue.mask.size(), 0);
    std::vector<size_t> component;
    for (size_t start = 0; start < tissue.mask.size(); ++start) {
        if (!tissue.mask[start] || visited[start]) continue;
        component.clear();
        std::deque<size_t> frontier{start};
        visited[start] = 1;
        while (!frontier.empty()) {
            size_t p = frontier.front();
            frontier.pop_front();
            component.push_back(p);
            int y = static_cast<int>(p / tissue.width), x = static_cast<int>(p % tissue.width);
            for (auto [dy, dx] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
                int ny = y + dy, nx = x + dx;
                if (ny < 0 || nx < 0 || ny >= tissue.height || nx >= tissue.width) continue;
                size_t q = static_cast<size_t>(ny) * tissue.width + nx;
                if (tissue.mask[q] && !visited[q]) {
                    visited[q] = 1;
                    frontier.push_back(q);
                }
            }
        }
        if (component.size() < min_area)
            for (size_t p : component) tissue.mask[p] = 0;
    }
}

TissueMask otsu_tissue_mask(const Image& image, const IngestConfig& cfg) {
    if (image.height < 1 || image.width < 1)
        throw ValidationError("otsu_tissue_mask: empty image");
    auto gray = to_grayscale(image);
    TissueMask tissue;
    tissue.height = image.height;
    tissue.width = image.width;
    tissue.mask.assign(gray.size(), 0);
    tissue.threshold = otsu_threshold(gray, &tissue.degenerate);
    if (tissue.degenerate) return tissue;
    // Stained tissue is the dark side of the split.
    for (size_t p = 0; p < gray.size(); ++p) tissue.mask[p] = gray[p] <= tissue.threshold ? 1 : 0;
    size_t min_area = static_cast<size_t>(cfg.min_component_tiles) * cfg.tile_size * cfg.tile_size;
    if (min_area > 0) drop_small_components(tissue, min_area);
    return tissue;
}

std::vector<Tile> tile(const Image& image, const TissueMask& mask, const IngestConfig& cfg) {
    if (cfg.tile_size < 1) throw ValidationError("tile: tile_size must be >= 1");
    std::vector<Tile> tiles;
    int rows = image.height / cfg.tile_size;
    int cols = image.width / cfg.tile_size;
    for (int s = 0; s < rows; ++s) {
        for (int t = 0; t < cols; ++t) {
            int64_t covered = 0;
            for (int y = 0; y < cfg.tile_size; ++y)
                for (int x = 0; x < cfg.tile_size; ++x)
                    covered += mask.at(s * cfg.tile_size + y, t * cfg.tile_size + x) ? 1 : 0;
            double fraction = double(covered) / (double(cfg.tile_size) * cfg.tile_size);
            if (fraction < cfg.coverage_fraction) continue;
            Image crop = Image::make(cfg.tile_size, cfg.tile_size, image.channels);
            for (int y = 0; y < cfg.tile_size; ++y)
                for (int x = 0; x < cfg.tile_size; ++x)
                    for (int c = 0; c < image.channels; ++c)
                        crop.at(y, x, c) = image.at(s * cfg.tile_size + y, t * cfg.tile_size + x, c);
            tiles.push_back({{s, t}, std::move(crop)});
        }
    }
    return tiles;
}

double gradient_entropy(const Image& crop) {
    auto gray = to_grayscale(crop);
    int h = crop.height, w = crop.width;
    auto value = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return double(gray[static_cast<size_t>(y) * w + x]);
    };
    std::vector<double> magnitude(gray.size());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double gx = 0.5 * (value(y, x + 1) - value(y, x - 1));
            double gy = 0.5 * (value(y + 1, x) - value(y - 1, x));
            double m = std::sqrt(gx * gx + gy * gy);
            magnitude[static_cast<size_t>(y) * w + x] = m;
            lo = std::min(lo, m);
            hi = std::max(hi, m);
        }
    std::array<int64_t, 256> hist{};
    if (hi == lo) {
        hist[0] = static_cast<int64_t>(magnitude.size());
    } else {
        for (double m : magnitude) {
            int bin = std::min(255, static_cast<int>((m - lo) / (hi - lo) * 256.0));
            hist[bin]++;
        }
    }
    double entropy = 0.0;
    for (int64_t count : hist) {
        if (count == 0) continue;
        double p = double(count) / double(magnitude.size());
        entropy -= p * std::log2(p);
    }
    return entropy;
}

bool entropy_filter(const Image& crop, const IngestConfig& cfg) {
    return gradient_entropy(crop) > cfg.entropy_threshold;
}

fs::path ingest_image(const fs::path& image_file, const fs::path& out_dir,
                      const std::string& bag_id, GradeLabel grade, int num_classes,
                      const std::string& provider_cmd, const IngestConfig& cfg) {
    Image image = read_image(image_file);
    TissueMask mask = otsu_tissue_mask(image, cfg);
    std::vector<Tile> tiles;
    for (auto& candidate : tile(image, mask, cfg))
        if (entropy_filter(candidate.crop, cfg)) tiles.push_back(std::move(candidate));
    if (tiles.empty()) throw ValidationError("ingest: no tissue tiles survived filtering");

    fs::path bag_dir = out_dir / bag_id;
    fs::path crops_dir = bag_dir / "crops";
    fs::create_directories(crops_dir);
    for (size_t i = 0; i < tiles.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "crop_%05zu.ppm", i);
        write_ppm(tiles[i].crop, crops_dir / name);
    }

    fs::path features_file = bag_dir / "features.f32";
    std::string command =
        provider_cmd + " '" + crops_dir.string() + "' '" + features_file.string() + "'";
    if (std::system(command.c_str()) != 0)
        throw IoError("feature provider command failed: " + command);

    auto payload = read_f32(features_file);
    if (payload.empty() || payload.size() % tiles.size() != 0)
        throw FeatureSizeError("provider payload size not a multiple of tile count");
    int d_f = static_cast<int>(payload.size() / tiles.size());

    Bag bag;
    bag.bag_id = bag_id;
    bag.grade = grade;
    bag.num_classes = num_classes;
    bag.features.resize(static_cast<int>(tiles.size()), d_f);
    for (size_t i = 0; i < tiles.size(); ++i) {
        bag.coords.push_back(tiles[i].coord);
        for (int c = 0; c < d_f; ++c) bag.features(static_cast<int>(i), c) = payload[i * d_f + c];
    }
    write_bag(bag, out_dir);
    fs::remove_all(crops_dir);
    return bag_dir;
}

}  // namespace racr
