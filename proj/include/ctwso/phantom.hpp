#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ctwso/rng.hpp"
#include "ctwso/windowing.hpp"

namespace ctwso {

enum class Label : int { NoCopd = 0, Copd = 1 };

enum class Split { Train, Validation, Test, OodTest };

std::string_view to_string(Label label) noexcept;
std::string_view to_string(Split split) noexcept;
Label parse_label(std::string_view text);
Split parse_split(std::string_view text);

/// Binary mask with the same geometry as the slice it belongs to.
struct LungMask {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    LungMask() = default;
    LungMask(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h, 0) {}

    bool at(std::size_t x, std::size_t y) const { return pixels[y * width + x] != 0; }
    std::size_t count() const noexcept;
};

/// Sørensen-Dice overlap of two equally sized masks (1 when both are empty).
double dice(const LungMask& a, const LungMask& b);

/// Synthetic chest phantom parameters. Every HU quantity is (mean, sigma) of a
/// per-pixel Gaussian. Diseased slices receive Gaussian-profile low-attenuation
/// blobs inside the lungs; vessels are small soft-tissue disks inside the lungs.
struct PhantomConfig {
    int image_size = 64;
    int subjects_per_class = 8;
    int slices_per_subject = 40;

    double body_hu_mean = 40.0;
    double body_hu_sigma = 15.0;
    double lung_hu_mean = -820.0;
    double lung_hu_sigma = 40.0;
    double air_hu = -1000.0;

    int blob_count_min = 3;
    int blob_count_max = 8;
    double blob_radius_min = 2.0;
    double blob_radius_max = 6.0;
    double blob_hu_mean = -980.0;
    double blob_hu_sigma = 15.0;

    int vessel_count = 3;  // per lung
    double vessel_radius_min = 1.0;
    double vessel_radius_max = 2.0;

    /// Soft-tissue (body and vessel) HU offset of the ood_test split.
    double ood_offset = 60.0;

    double train_fraction = 0.50;
    double validation_fraction = 0.17;

    std::uint64_t seed = 7;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

struct GeneratedSlice {
    HuSlice image;
    LungMask lung_mask;  // true only on rasterized lung tissue (vessels excluded)
};

/// `tissue_offset` is added to body and vessel HU only; lung tissue is unaffected.
GeneratedSlice generate_slice(const PhantomConfig& cfg, Rng& rng, bool diseased,
                              double tissue_offset = 0.0);

struct SubjectRecord {
    std::string subject_id;
    Label label = Label::NoCopd;
    std::vector<HuSlice> slices;
    std::vector<LungMask> lung_masks;
};

/// All slices of one subject from the stream derived from (cfg.seed, subject_id).
SubjectRecord generate_subject(const PhantomConfig& cfg, const std::string& subject_id,
                               Label label, double tissue_offset = 0.0);

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    std::string subject;
    Label label = Label::NoCopd;
    Split split = Split::Train;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::filesystem::path root;  // directory paths are relative to

    std::vector<ManifestEntry> split(Split s) const;
    bool has_split(Split s) const;
    std::filesystem::path resolve(const ManifestEntry& e) const { return root / e.path; }
};

struct SplitCounts {
    int train = 0;
    int validation = 0;
    int test = 0;
};

/// Subjects per class assigned to each split (rounded fractions, test gets the rest).
SplitCounts subject_split_counts(const PhantomConfig& cfg);

/// Writes slices under out_dir/slices and the manifest to out_dir/manifest.csv.
DatasetManifest generate_dataset(const PhantomConfig& cfg, const std::filesystem::path& out_dir);

/// Randomly drops entries of the larger class until both classes have equal
/// counts. Retained entries keep their relative order.
std::vector<ManifestEntry> balance_classes(const std::vector<ManifestEntry>& entries, Rng& rng);

/// Threshold at -500 HU, drop components touching the border, fill enclosed holes.
LungMask segment_lung(const HuSlice& img);

inline constexpr const char* kManifestFileName = "manifest.csv";

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace ctwso
