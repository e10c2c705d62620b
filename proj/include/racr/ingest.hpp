#pragma once

#include <string>
#include <vector>

#include "racr/bag.hpp"
#include "racr/image.hpp"

namespace racr {

struct IngestConfig {
    int tile_size = 448;
    double coverage_fraction = 0.5;   // tile kept iff >= this fraction is tissue
    double entropy_threshold = 4.0;   // strict > to keep
    int min_component_tiles = 20;     // components below this many tiles' worth of pixels go
};

struct TissueMask {
    int height = 0, width = 0;
    std::vector<uint8_t> mask;  // 1 = tissue
    bool degenerate = false;    // constant image, no inter-class variance
    int threshold = 0;

    bool at(int y, int x) const { return mask[static_cast<size_t>(y) * width + x] != 0; }
    size_t area() const;
};

// Otsu threshold on the grayscale histogram; tissue is the darker side.
// Small connected components (4-neighborhood) are removed.
TissueMask otsu_tissue_mask(const Image& image, const IngestConfig& cfg = {});

// Exhaustive inter-class-variance maximization over the 256-level histogram.
int otsu_threshold(const std::vector<uint8_t>& gray, bool* degenerate = nullptr);

struct Tile {
    std::pair<int, int> coord;  // (s, t) grid indices, s = row
    Image crop;
};

std::vector<Tile> tile(const Image& image, const TissueMask& mask, const IngestConfig& cfg = {});

// Shannon entropy (base 2) of the 256-bin histogram of the gradient-magnitude
// image (central differences on grayscale, clamped at borders).
double gradient_entropy(const Image& crop);
bool entropy_filter(const Image& crop, const IngestConfig& cfg = {});

// Full pipeline: mask -> tile -> entropy filter -> feature provider -> bag dir.
// The provider command is run as `<cmd> <crops_dir> <features_file>`; it must
// write N*d_f little-endian float32 values for the crops crop_00000.ppm ... in
// index order. d_f is inferred from the payload size.
fs::path ingest_image(const fs::path& image_file, const fs::path& out_dir,
                      const std::string& bag_id, GradeLabel grade, int num_classes,
                      const std::string& provider_cmd, const IngestConfig& cfg = {});

}  // namespace racr
