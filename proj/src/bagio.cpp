#include "racr/bag.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace racr {

using nlohmann::json;

// --- common helpers -------------------------------------------------------

void write_f32(const fs::path& file, const std::vector<float>& values) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!out) throw IoError("short write: " + file.string());
}

std::vector<float> read_f32(const fs::path& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open: " + file.string());
    auto bytes = static_cast<size_t>(in.tellg());
    if (bytes % sizeof(float) != 0)
        throw FeatureSizeError("payload size not a multiple of 4 bytes: " + file.string());
    std::vector<float> values(bytes / sizeof(float));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("short read: " + file.string());
    return values;
}

std::string read_text_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open: " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    out << text;
    if (!out) throw IoError("short write: " + file.string());
}

// --- Bag ------------------------------------------------------------------

void Bag::validate() const {
    if (coords.empty()) throw ValidationError("bag has no patches: " + bag_id);
    if (num_classes < 2) throw ValidationError("bag num_classes < 2: " + bag_id);
    if (grade.value < 0 || grade.value >= num_classes)
        throw ValidationError("grade out of range: " + bag_id);
    if (static_cast<int>(coords.size()) != features.rows())
        throw ValidationError("coords/features row mismatch: " + bag_id);
    std::set<std::pair<int, int>> seen(coords.begin(), coords.end());
    if (seen.size() != coords.size())
        throw ValidationError("duplicate patch coordinates: " + bag_id);
    if (!features.allFinite()) throw ValidationError("non-finite feature values: " + bag_id);
    for (const auto& region : annotations) {
        if (region.patch_indices.empty())
            throw ValidationError("empty region annotation: " + bag_id);
        for (int idx : region.patch_indices)
            if (idx < 0 || idx >= n())
                throw ValidationError("annotation index out of range: " + bag_id);
        if (region.region_grade.value < 0 || region.region_grade.value >= num_classes)
            throw ValidationError("annotation grade out of range: " + bag_id);
    }
}

bool operator==(const Bag& a, const Bag& b) {
    if (a.bag_id != b.bag_id || a.grade != b.grade || a.num_classes != b.num_classes ||
        a.coords != b.coords || a.annotations != b.annotations)
        return false;
    if (a.features.rows() != b.features.rows() || a.features.cols() != b.features.cols())
        return false;
    return a.features.size() == 0 ||
           std::memcmp(a.features.data(), b.features.data(),
                       sizeof(float) * a.features.size()) == 0;
}

static json bag_manifest(const Bag& bag) {
    json coords = json::array();
    for (auto [s, t] : bag.coords) coords.push_back({s, t});
    json annotations = json::array();
    for (const auto& region : bag.annotations) {
        annotations.push_back({{"region_id", region.region_id},
                               {"patch_indices", region.patch_indices},
                               {"region_grade", region.region_grade.value}});
    }
    return json{{"bag_id", bag.bag_id},
                {"grade", bag.grade.value},
                {"num_classes", bag.num_classes},
                {"n", bag.n()},
                {"d_f", bag.feature_dim()},
                {"coords", coords},
                {"feature_file", "features.f32"},
                {"annotations", annotations}};
}

fs::path write_bag(const Bag& bag, const fs::path& directory) {
    bag.validate();
    fs::path bag_dir = directory / bag.bag_id;
    fs::create_directories(bag_dir);
    write_text_file(bag_dir / "manifest.json", bag_manifest(bag).dump(2) + "\n");
    std::vector<float> payload(bag.features.size());
    for (int r = 0; r < bag.features.rows(); ++r)
        for (int c = 0; c < bag.features.cols(); ++c)
            payload[static_cast<size_t>(r) * bag.features.cols() + c] = bag.features(r, c);
    write_f32(bag_dir / "features.f32", payload);
    return bag_dir;
}

Bag read_bag(const fs::path& bag_dir) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(bag_dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw ManifestError("bad manifest in " + bag_dir.string() + ": " + e.what());
    }

    Bag bag;
    int n = 0, d_f = 0;
    std::string feature_file;
    try {
        bag.bag_id = manifest.at("bag_id").get<std::string>();
        bag.grade.value = manifest.at("grade").get<int>();
        bag.num_classes = manifest.at("num_classes").get<int>();
        n = manifest.at("n").get<int>();
        d_f = manifest.at("d_f").get<int>();
        feature_file = manifest.at("feature_file").get<std::string>();
        for (const auto& coord : manifest.at("coords"))
            bag.coords.emplace_back(coord.at(0).get<int>(), coord.at(1).get<int>());
        for (const auto& entry : manifest.value("annotations", json::array())) {
            RegionAnnotation region;
            region.region_id = entry.at("region_id").get<std::string>();
            region.patch_indices = entry.at("patch_indices").get<std::vector<int>>();
            region.region_grade.value = entry.at("region_grade").get<int>();
            bag.annotations.push_back(std::move(region));
        }
    } catch (const json::exception& e) {
        throw ManifestError("bad manifest in " + bag_dir.string() + ": " + e.what());
    }
    if (n < 1 || d_f < 1 || static_cast<int>(bag.coords.size()) != n)
        throw ManifestError("inconsistent n/coords in " + bag_dir.string());

    auto payload = read_f32(bag_dir / feature_file);
    if (payload.size() != static_cast<size_t>(n) * d_f)
        throw FeatureSizeError("feature byte count mismatch in " + bag_dir.string() +
                               ": expected " + std::to_string(size_t(n) * d_f * 4) + " bytes, got " +
                               std::to_string(payload.size() * 4));
    bag.features.resize(n, d_f);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d_f; ++c) {
            float v = payload[static_cast<size_t>(r) * d_f + c];
            if (!std::isfinite(v))
                throw NonFiniteError("non-finite feature value in " + bag_dir.string());
            bag.features(r, c) = v;
        }
    try {
        bag.validate();
    } catch (const ValidationError& e) {
        throw ManifestError(std::string("invalid bag on load: ") + e.what());
    }
    return bag;
}

std::vector<Bag> load_dataset(const fs::path& dataset_dir) {
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(dataset_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<Bag> bags;
    bags.reserve(dirs.size());
    for (const auto& dir : dirs) bags.push_back(read_bag(dir));
    return bags;
}

// --- synthetic generator --------------------------------------------------

void SynthSpec::validate() const {
    if (num_classes < 2) throw ValidationError("synth spec: num_classes must be >= 2");
    if (static_cast<int>(class_counts.size()) != num_classes)
        throw ValidationError("synth spec: class_counts size != num_classes");
    for (int count : class_counts)
        if (count < 0) throw ValidationError("synth spec: negative class count");
    if (d_f < 1) throw ValidationError("synth spec: d_f must be >= 1");
    if (d_f < num_classes - 1)
        throw ValidationError("synth spec: d_f too small for distinct grade signatures");
    if (min_patches < 1 || max_patches < min_patches)
        throw ValidationError("synth spec: bad bag-size range");
    if (noise_scale < 0) throw ValidationError("synth spec: negative noise scale");
    if (planted_fraction < 0 || planted_fraction > 1)
        throw ValidationError("synth spec: planted_fraction outside [0,1]");
    if (secondary_region_prob < 0 || secondary_region_prob > 1)
        throw ValidationError("synth spec: secondary_region_prob outside [0,1]");
    if (signatures.size() != 0) {
        if (signatures.rows() != num_classes - 1 || signatures.cols() != d_f)
            throw ValidationError("synth spec: signature shape mismatch");
        for (int i = 0; i < signatures.rows(); ++i) {
            if (std::abs(signatures.row(i).norm() - 1.0) > 1e-6)
                throw ValidationError("synth spec: signature not unit-norm");
            for (int j = i + 1; j < signatures.rows(); ++j)
                if (signatures.row(i).dot(signatures.row(j)) > 0.5 + 1e-9)
                    throw ValidationError("synth spec: signature pair closer than 60 degrees");
        }
    }
}

// Random orthonormal rows via Gram-Schmidt on Gaussian draws (90 degrees apart).
static MatrixXd random_orthonormal_signatures(int count, int dim, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    MatrixXd rows(count, dim);
    for (int i = 0; i < count; ++i) {
        VectorXd v(dim);
        while (true) {
            for (int c = 0; c < dim; ++c) v(c) = gauss(rng);
            for (int j = 0; j < i; ++j) v -= rows.row(j).dot(v) * rows.row(j).transpose();
            if (v.norm() > 1e-6) break;
        }
        rows.row(i) = v.normalized();
    }
    return rows;
}

// Grow a spatially contiguous patch set of the requested size (4-neighborhood
// on the tile grid; jumps to the lowest unused index when the frontier dries up).
static std::vector<int> grow_region(const std::vector<std::pair<int, int>>& coords,
                                    const std::vector<bool>& used, int want, Rng& rng) {
    std::map<std::pair<int, int>, int> by_coord;
    for (int i = 0; i < static_cast<int>(coords.size()); ++i)
        if (!used[i]) by_coord[coords[i]] = i;
    if (by_coord.empty() || want <= 0) return {};

    std::vector<int> free_indices;
    for (const auto& [coord, idx] : by_coord) free_indices.push_back(idx);
    std::sort(free_indices.begin(), free_indices.end());
    int seed = free_indices[std::uniform_int_distribution<size_t>(0, free_indices.size() - 1)(rng)];

    std::vector<int> region;
    std::set<int> taken;
    std::deque<int> frontier{seed};
    while (static_cast<int>(region.size()) < want) {
        if (frontier.empty()) {
            auto it = std::find_if(free_indices.begin(), free_indices.end(),
                                   [&](int i) { return !taken.count(i); });
            if (it == free_indices.end()) break;
            frontier.push_back(*it);
        }
        int idx = frontier.front();
        frontier.pop_front();
        if (taken.count(idx)) continue;
        taken.insert(idx);
        region.push_back(idx);
        auto [s, t] = coords[idx];
        for (auto [ds, dt] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
            auto it = by_coord.find({s + ds, t + dt});
            if (it != by_coord.end() && !taken.count(it->second)) frontier.push_back(it->second);
        }
    }
    std::sort(region.begin(), region.end());
    return region;
}

std::vector<Bag> generate_synthetic_dataset(const SynthSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    MatrixXd signatures = spec.signatures.size() != 0
                              ? spec.signatures
                              : random_orthonormal_signatures(spec.num_classes - 1, spec.d_f, rng);

    std::vector<Bag> bags;
    for (int grade = 0; grade < spec.num_classes; ++grade) {
        for (int b = 0; b < spec.class_counts[grade]; ++b) {
            Bag bag;
            char id[64];
            std::snprintf(id, sizeof(id), "synth_g%d_%04d", grade, b);
            bag.bag_id = id;
            bag.num_classes = spec.num_classes;
            bag.grade.value = grade;

            int n = std::uniform_int_distribution<int>(spec.min_patches, spec.max_patches)(rng);
            int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))) + 1;
            std::vector<std::pair<int, int>> cells;
            for (int s = 0; s < side; ++s)
                for (int t = 0; t < side; ++t) cells.emplace_back(s, t);
            std::shuffle(cells.begin(), cells.end(), rng);
            bag.coords.assign(cells.begin(), cells.begin() + n);

            bag.features.resize(n, spec.d_f);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < spec.d_f; ++c)
                    bag.features(r, c) = static_cast<float>(spec.noise_scale * gauss(rng));

            std::vector<bool> used(n, false);
            auto plant = [&](int region_grade, int want, int region_no) {
                auto region = grow_region(bag.coords, used, want, rng);
                if (region.empty()) return;
                for (int idx : region) {
                    used[idx] = true;
                    for (int c = 0; c < spec.d_f; ++c)
                        bag.features(idx, c) =
                            static_cast<float>(signatures(region_grade - 1, c) +
                                               spec.noise_scale * gauss(rng));
                }
                RegionAnnotation annotation;
                annotation.region_id = "r" + std::to_string(region_no);
                annotation.patch_indices = region;
                annotation.region_grade.value = region_grade;
                bag.annotations.push_back(std::move(annotation));
            };

            if (grade > 0) {
                int primary = std::max(1, static_cast<int>(std::lround(spec.planted_fraction * n)));
                plant(grade, primary, 0);
                bool secondary =
                    std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec.secondary_region_prob;
                if (grade > 1 && secondary) plant(grade - 1, std::max(1, primary / 2), 1);
            }
            bag.validate();
            bags.push_back(std::move(bag));
        }
    }
    return bags;
}

// --- splits ---------------------------------------------------------------

std::vector<Fold> stratified_kfold_labels(const std::vector<int>& labels, const SplitSpec& spec,
                                          uint64_t seed) {
    if (spec.fold_count < 1) throw ValidationError("fold_count must be >= 1");
    double sum = spec.train_fraction + spec.val_fraction + spec.test_fraction;
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");

    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) by_class[labels[i]].push_back(i);
    for (const auto& [label, members] : by_class)
        if (static_cast<int>(members.size()) < spec.fold_count)
            throw ValidationError("class " + std::to_string(label) + " has fewer members (" +
                                  std::to_string(members.size()) + ") than folds");

    Rng rng(seed);
    for (auto& [label, members] : by_class) std::shuffle(members.begin(), members.end(), rng);

    std::vector<Fold> folds(spec.fold_count);
    double val_share = spec.train_fraction + spec.val_fraction > 0
                           ? spec.val_fraction / (spec.train_fraction + spec.val_fraction)
                           : 0.0;
    for (auto& [label, members] : by_class) {
        int n = static_cast<int>(members.size());
        for (int f = 0; f < spec.fold_count; ++f) {
            int lo, hi;
            if (spec.fold_count == 1) {
                // Single fold: carve the test set from the declared fraction.
                lo = 0;
                hi = static_cast<int>(std::lround(spec.test_fraction * n));
            } else {
                lo = static_cast<int>(static_cast<int64_t>(f) * n / spec.fold_count);
                hi = static_cast<int>(static_cast<int64_t>(f + 1) * n / spec.fold_count);
            }
            std::vector<int> rest;
            for (int i = 0; i < n; ++i) {
                if (i >= lo && i < hi)
                    folds[f].test.push_back(members[i]);
                else
                    rest.push_back(members[i]);
            }
            int n_val = static_cast<int>(std::lround(val_share * rest.size()));
            for (int i = 0; i < static_cast<int>(rest.size()); ++i)
                (i < n_val ? folds[f].val : folds[f].train).push_back(rest[i]);
        }
    }
    for (auto& fold : folds) {
        std::sort(fold.train.begin(), fold.train.end());
        std::sort(fold.val.begin(), fold.val.end());
        std::sort(fold.test.begin(), fold.test.end());
    }
    return folds;
}

std::vector<Fold> stratified_kfold(const std::vector<Bag>& bags, const SplitSpec& spec,
                                   uint64_t seed) {
    std::vector<int> labels;
    labels.reserve(bags.size());
    for (const auto& bag : bags) labels.push_back(bag.grade.value);
    return stratified_kfold_labels(labels, spec, seed);
}

// --- class-balanced sampling weights --------------------------------------

std::vector<double> class_balanced_weights(const std::vector<int>& class_counts, double beta) {
    if (class_counts.empty()) throw ValidationError("class_counts empty");
    if (beta < 0 || beta >= 1) throw ValidationError("beta must be in [0,1)");
    std::vector<double> weights(class_counts.size());
    double total = 0;
    for (size_t c = 0; c < class_counts.size(); ++c) {
        if (class_counts[c] < 1) throw ValidationError("class count must be >= 1");
        double effective = (1.0 - std::pow(beta, class_counts[c])) / (1.0 - beta);
        weights[c] = 1.0 / effective;
        total += weights[c];
    }
    for (auto& w : weights) w /= total;
    return weights;
}

// --- synth spec json ------------------------------------------------------

SynthSpec synth_spec_from_json(const std::string& json_text) {
    json parsed;
    try {
        parsed = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ManifestError(std::string("bad synth spec json: ") + e.what());
    }
    SynthSpec spec;
    spec.num_classes = parsed.value("num_classes", spec.num_classes);
    spec.class_counts = parsed.value("class_counts", spec.class_counts);
    spec.d_f = parsed.value("d_f", spec.d_f);
    spec.min_patches = parsed.value("min_patches", spec.min_patches);
    spec.max_patches = parsed.value("max_patches", spec.max_patches);
    spec.noise_scale = parsed.value("noise_scale", spec.noise_scale);
    spec.planted_fraction = parsed.value("planted_fraction", spec.planted_fraction);
    spec.secondary_region_prob = parsed.value("secondary_region_prob", spec.secondary_region_prob);
    if (parsed.contains("signatures")) {
        auto rows = parsed.at("signatures").get<std::vector<std::vector<double>>>();
        spec.signatures.resize(rows.size(), rows.empty() ? 0 : rows[0].size());
        for (size_t r = 0; r < rows.size(); ++r)
            for (size_t c = 0; c < rows[r].size(); ++c) spec.signatures(r, c) = rows[r][c];
    }
    spec.validate();
    return spec;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
    json out{{"num_classes", spec.num_classes},
             {"class_counts", spec.class_counts},
             {"d_f", spec.d_f},
             {"min_patches", spec.min_patches},
             {"max_patches", spec.max_patches},
             {"noise_scale", spec.noise_scale},
             {"planted_fraction", spec.planted_fraction},
             {"secondary_region_prob", spec.secondary_region_prob}};
    if (spec.signatures.size() != 0) {
        json rows = json::array();
        for (int r = 0; r < spec.signatures.rows(); ++r) {
            json row = json::array();
            for (int c = 0; c < spec.signatures.cols(); ++c) row.push_back(spec.signatures(r, c));
            rows.push_back(row);
        }
        out["signatures"] = rows;
    }
    return out.dump(2) + "\n";
}

}  // namespace racr
