#include "ctwso/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ctwso/error.hpp"
#include "ctwso/husl.hpp"

namespace ctwso {

std::string_view to_string(Label label) noexcept {
    return label == Label::Copd ? "copd" : "no_copd";
}

std::string_view to_string(Split split) noexcept {
    switch (split) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Test: return "test";
        case Split::OodTest: return "ood_test";
    }
    return "train";
}

Label parse_label(std::string_view text) {
    if (text == "copd") return Label::Copd;
    if (text == "no_copd") return Label::NoCopd;
    throw Error("unknown label '" + std::string(text) + "' (expected copd or no_copd)");
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::Train;
    if (text == "validation") return Split::Validation;
    if (text == "test") return Split::Test;
    if (text == "ood_test") return Split::OodTest;
    throw Error("unknown split '" + std::string(text) +
                "' (expected train, validation, test or ood_test)");
}

std::size_t LungMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), 1));
}

double dice(const LungMask& a, const LungMask& b) {
    if (a.pixels.size() != b.pixels.size()) {
        throw ShapeError("dice: mask sizes differ");
    }
    std::size_t inter = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        inter += (a.pixels[i] != 0 && b.pixels[i] != 0) ? 1 : 0;
    }
    const std::size_t total = a.count() + b.count();
    return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

void PhantomConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
        throw ConfigError("phantom." + key + ": " + why);
    };
    if (image_size < 16) fail("image_size", "must be >= 16");
    if (image_size > 256) fail("image_size", "must be <= 256");
    if (subjects_per_class < 1) fail("subjects_per_class", "must be >= 1");
    if (slices_per_subject < 1) fail("slices_per_subject", "must be >= 1");
    if (body_hu_sigma < 0.0) fail("body_hu_sigma", "must be >= 0");
    if (lung_hu_sigma < 0.0) fail("lung_hu_sigma", "must be >= 0");
    if (blob_hu_sigma < 0.0) fail("blob_hu_sigma", "must be >= 0");
    if (blob_count_min < 1) fail("blob_count_min", "diseased slices need at least one blob");
    if (blob_count_max < blob_count_min) fail("blob_count_max", "must be >= blob_count_min");
    if (!(blob_radius_min > 0.0)) fail("blob_radius_min", "must be > 0");
    if (blob_radius_max < blob_radius_min) fail("blob_radius_max", "must be >= blob_radius_min");
    if (vessel_count < 0) fail("vessel_count", "must be >= 0");
    if (!(vessel_radius_min > 0.0)) fail("vessel_radius_min", "must be > 0");
    if (vessel_radius_max < vessel_radius_min)
        fail("vessel_radius_max", "must be >= vessel_radius_min");
    if (!(blob_hu_mean + 2.0 * blob_hu_sigma < lung_hu_mean - 2.0 * lung_hu_sigma))
        fail("blob_hu_mean", "blob band must be separable from lung parenchyma (mean + 2 sigma)");
    if (blob_hu_mean < -1024.0 || blob_hu_mean > -900.0)
        fail("blob_hu_mean", "must lie inside [-1024, -900] HU");
    if (!(train_fraction > 0.0) || !(validation_fraction > 0.0) ||
        train_fraction + validation_fraction >= 1.0)
        fail("train_fraction", "train and validation fractions must be positive and sum below 1");
}

namespace {

struct Ellipse {
    double cx, cy, ax, ay;

    /// Squared normalized radius of the pixel center (x + 0.5, y + 0.5).
    double rho2(std::size_t x, std::size_t y) const noexcept {
        const double dx = (static_cast<double>(x) + 0.5 - cx) / ax;
        const double dy = (static_cast<double>(y) + 0.5 - cy) / ay;
        return dx * dx + dy * dy;
    }

    std::pair<double, double> point(double rho, double theta) const noexcept {
        return {cx + rho * ax * std::cos(theta), cy + rho * ay * std::sin(theta)};
    }
};

constexpr double kTwoPi = 6.283185307179586476925286766559;

double jitter(Rng& rng, double fraction) { return 1.0 + rng.uniform(-fraction, fraction); }

template <typename Fn>
void for_disk(std::size_t n, double cx, double cy, double radius, Fn&& fn) {
    const auto lo_x = static_cast<long>(std::floor(cx - radius));
    const auto hi_x = static_cast<long>(std::ceil(cx + radius));
    const auto lo_y = static_cast<long>(std::floor(cy - radius));
    const auto hi_y = static_cast<long>(std::ceil(cy + radius));
    const long last = static_cast<long>(n) - 1;
    for (long y = std::max(0L, lo_y); y <= std::min(last, hi_y); ++y) {
        for (long x = std::max(0L, lo_x); x <= std::min(last, hi_x); ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double r2 = dx * dx + dy * dy;
            if (r2 <= radius * radius) {
                fn(static_cast<std::size_t>(x), static_cast<std::size_t>(y), r2);
            }
        }
    }
}

}  // namespace

GeneratedSlice generate_slice(const PhantomConfig& cfg, Rng& rng, bool diseased,
                              double tissue_offset) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.image_size);
    const double size = static_cast<double>(cfg.image_size);

    const double cx = 0.5 * size + rng.uniform(-0.02, 0.02) * size;
    const double cy = 0.5 * size + rng.uniform(-0.02, 0.02) * size;
    const Ellipse body{cx, cy, 0.44 * size * jitter(rng, 0.03), 0.34 * size * jitter(rng, 0.03)};
    const Ellipse lungs[2] = {
        {cx - 0.2 * size, cy, 0.14 * size * jitter(rng, 0.05), 0.24 * size * jitter(rng, 0.05)},
        {cx + 0.2 * size, cy, 0.14 * size * jitter(rng, 0.05), 0.24 * size * jitter(rng, 0.05)},
    };

    GeneratedSlice out{HuSlice(n, n, cfg.air_hu), LungMask(n, n)};
    HuSlice& img = out.image;
    LungMask& mask = out.lung_mask;

    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            if (lungs[0].rho2(x, y) <= 1.0 || lungs[1].rho2(x, y) <= 1.0) {
                img.at(x, y) = rng.normal(cfg.lung_hu_mean, cfg.lung_hu_sigma);
                mask.pixels[y * n + x] = 1;
            } else if (body.rho2(x, y) <= 1.0) {
                img.at(x, y) = rng.normal(cfg.body_hu_mean, cfg.body_hu_sigma) + tissue_offset;
            }
        }
    }

    for (const Ellipse& lung : lungs) {
        for (int v = 0; v < cfg.vessel_count; ++v) {
            const double theta = rng.uniform(0.0, kTwoPi);
            const double rho = rng.uniform(0.45, 0.8);
            const double radius = rng.uniform(cfg.vessel_radius_min, cfg.vessel_radius_max);
            const auto [vx, vy] = lung.point(rho, theta);
            for_disk(n, vx, vy, radius, [&](std::size_t x, std::size_t y, double) {
                if (mask.pixels[y * n + x] != 0) {
                    img.at(x, y) =
                        rng.normal(cfg.body_hu_mean, cfg.body_hu_sigma) + tissue_offset;
                    mask.pixels[y * n + x] = 0;
                }
            });
        }
    }

    if (diseased) {
        const auto blobs = rng.uniform_int(cfg.blob_count_min, cfg.blob_count_max);
        for (std::int64_t k = 0; k < blobs; ++k) {
            const Ellipse& lung = lungs[rng.uniform_int(0, 1)];
            const double theta = rng.uniform(0.0, kTwoPi);
            const double rho = 0.85 * std::sqrt(rng.uniform());
            const double radius = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max);
            const double sigma_r = 0.5 * radius;
            const auto [bx, by] = lung.point(rho, theta);
            for_disk(n, bx, by, radius, [&](std::size_t x, std::size_t y, double r2) {
                if (mask.pixels[y * n + x] == 0) {
                    return;
                }
                const double weight = std::exp(-r2 / (2.0 * sigma_r * sigma_r));
                const double target = rng.normal(cfg.blob_hu_mean, cfg.blob_hu_sigma);
                double& p = img.at(x, y);
                p += weight * (target - p);
            });
        }
    }

    clamp_to_recorded_range(img);
    return out;
}

SubjectRecord generate_subject(const PhantomConfig& cfg, const std::string& subject_id,
                               Label label, double tissue_offset) {
    Rng rng = Rng::derive(cfg.seed, subject_id);
    SubjectRecord rec;
    rec.subject_id = subject_id;
    rec.label = label;
    rec.slices.reserve(static_cast<std::size_t>(cfg.slices_per_subject));
    rec.lung_masks.reserve(static_cast<std::size_t>(cfg.slices_per_subject));
    for (int s = 0; s < cfg.slices_per_subject; ++s) {
        GeneratedSlice g = generate_slice(cfg, rng, label == Label::Copd, tissue_offset);
        rec.slices.push_back(std::move(g.image));
        rec.lung_masks.push_back(std::move(g.lung_mask));
    }
    return rec;
}

std::vector<ManifestEntry> DatasetManifest::split(Split s) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [s](const ManifestEntry& e) { return e.split == s; });
    return out;
}

bool DatasetManifest::has_split(Split s) const {
    return std::any_of(entries.begin(), entries.end(),
                       [s](const ManifestEntry& e) { return e.split == s; });
}

SplitCounts subject_split_counts(const PhantomConfig& cfg) {
    const double n = cfg.subjects_per_class;
    SplitCounts c;
    c.train = std::max(1, static_cast<int>(std::lround(cfg.train_fraction * n)));
    c.validation = std::max(1, static_cast<int>(std::lround(cfg.validation_fraction * n)));
    c.test = cfg.subjects_per_class - c.train - c.validation;
    if (c.test < 1) {
        throw ConfigError("phantom.subjects_per_class: too few subjects for a non-empty test split");
    }
    return c;
}

std::vector<ManifestEntry> balance_classes(const std::vector<ManifestEntry>& entries, Rng& rng) {
    std::vector<std::size_t> copd;
    std::vector<std::size_t> healthy;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        (entries[i].label == Label::Copd ? copd : healthy).push_back(i);
    }
    if (copd.empty() || healthy.empty()) {
        throw Error("balance_classes: a class has zero entries");
    }
    std::vector<std::size_t>& larger = copd.size() > healthy.size() ? copd : healthy;
    const std::size_t excess = copd.size() > healthy.size() ? copd.size() - healthy.size()
                                                            : healthy.size() - copd.size();
    std::vector<bool> removed(entries.size(), false);
    // Partial Fisher-Yates: the first `excess` positions become the removed set.
    for (std::size_t i = 0; i < excess; ++i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(i),
                            static_cast<std::int64_t>(larger.size()) - 1));
        std::swap(larger[i], larger[j]);
        removed[larger[i]] = true;
    }
    std::vector<ManifestEntry> out;
    out.reserve(entries.size() - excess);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!removed[i]) {
            out.push_back(entries[i]);
        }
    }
    return out;
}

namespace {

std::string subject_name(std::string_view prefix, Label label, int index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%s_%03d", std::string(prefix).c_str(),
                  label == Label::Copd ? "copd" : "nocopd", index);
    return buf;
}

struct SubjectPlan {
    std::string id;
    Label label;
    Split split;
    double tissue_offset;
};

}  // namespace

DatasetManifest generate_dataset(const PhantomConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    if (cfg.subjects_per_class < 4) {
        throw ConfigError("phantom.subjects_per_class: must be >= 4 for dataset generation");
    }
    const SplitCounts counts = subject_split_counts(cfg);

    std::vector<SubjectPlan> plan;
    for (Label label : {Label::Copd, Label::NoCopd}) {
        for (int i = 0; i < cfg.subjects_per_class; ++i) {
            const Split split = i < counts.train ? Split::Train
                                : i < counts.train + counts.validation ? Split::Validation
                                                                       : Split::Test;
            plan.push_back({subject_name("", label, i), label, split, 0.0});
        }
        for (int i = 0; i < counts.test; ++i) {
            plan.push_back({subject_name("ood_", label, i), label, Split::OodTest, cfg.ood_offset});
        }
    }

    std::vector<std::vector<ManifestEntry>> per_subject(plan.size());
    std::vector<std::string> errors(plan.size());

#pragma omp parallel for schedule(dynamic)
    for (std::size_t s = 0; s < plan.size(); ++s) {
        try {
            const SubjectRecord rec =
                generate_subject(cfg, plan[s].id, plan[s].label, plan[s].tissue_offset);
            for (std::size_t k = 0; k < rec.slices.size(); ++k) {
                char name[32];
                std::snprintf(name, sizeof name, "%03zu.husl", k);
                const std::string rel = "slices/" + plan[s].id + "/" + name;
                write_husl(out_dir / rel, rec.slices[k]);
                per_subject[s].push_back({rel, plan[s].id, plan[s].label, plan[s].split});
            }
        } catch (const std::exception& e) {
            errors[s] = e.what();
        }
    }
    for (std::size_t s = 0; s < plan.size(); ++s) {
        if (!errors[s].empty()) {
            throw IoError((out_dir / "slices" / plan[s].id).string(), errors[s]);
        }
    }

    DatasetManifest manifest;
    manifest.root = out_dir;
    for (Split split : {Split::Train, Split::Validation, Split::Test, Split::OodTest}) {
        std::vector<ManifestEntry> entries;
        for (std::size_t s = 0; s < plan.size(); ++s) {
            if (plan[s].split == split) {
                entries.insert(entries.end(), per_subject[s].begin(), per_subject[s].end());
            }
        }
        Rng rng = Rng::derive(cfg.seed, "balance/" + std::string(to_string(split)));
        auto balanced = balance_classes(entries, rng);
        manifest.entries.insert(manifest.entries.end(), balanced.begin(), balanced.end());
    }
    write_manifest(manifest, out_dir / kManifestFileName);
    return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::string text = "path,subject,label,split\n";
    for (const auto& e : manifest.entries) {
        text += e.path + "," + e.subject + "," + std::string(to_string(e.label)) + "," +
                std::string(to_string(e.split)) + "\n";
    }
    write_file_bytes(path, text);
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(path.string(), "cannot open manifest");
    }
    DatasetManifest manifest;
    manifest.root = path.parent_path();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line_no == 1) {
            if (line != "path,subject,label,split") {
                throw IoError(path.string(), "unexpected manifest header '" + line + "'");
            }
            continue;
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            fields.push_back(field);
        }
        if (fields.size() != 4) {
            throw IoError(path.string(), "line " + std::to_string(line_no) + ": expected 4 fields");
        }
        try {
            manifest.entries.push_back(
                {fields[0], fields[1], parse_label(fields[2]), parse_split(fields[3])});
        } catch (const Error& e) {
            throw IoError(path.string(), "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return manifest;
}

LungMask segment_lung(const HuSlice& img) {
    const std::size_t w = img.width;
    const std::size_t h = img.height;
    LungMask mask(w, h);
    if (w == 0 || h == 0) {
        return mask;
    }

    // Labels connected components (4-connectivity) of pixels where pred holds and
    // marks those touching the border.
    auto components = [&](auto&& pred, std::vector<int>& label, std::vector<bool>& touches) {
        label.assign(w * h, -1);
        touches.clear();
        std::vector<std::size_t> stack;
        for (std::size_t start = 0; start < w * h; ++start) {
            if (label[start] >= 0 || !pred(start)) {
                continue;
            }
            const int id = static_cast<int>(touches.size());
            touches.push_back(false);
            label[start] = id;
            stack.push_back(start);
            while (!stack.empty()) {
                const std::size_t p = stack.back();
                stack.pop_back();
                const std::size_t x = p % w;
                const std::size_t y = p / w;
                if (x == 0 || y == 0 || x == w - 1 || y == h - 1) {
                    touches[id] = true;
                }
                auto visit = [&](std::size_t q) {
                    if (label[q] < 0 && pred(q)) {
                        label[q] = id;
                        stack.push_back(q);
                    }
                };
                if (x > 0) visit(p - 1);
                if (x + 1 < w) visit(p + 1);
                if (y > 0) visit(p - w);
                if (y + 1 < h) visit(p + w);
            }
        }
    };

    std::vector<int> label;
    std::vector<bool> touches;
    components([&](std::size_t p) { return img.pixels[p] < -500.0; }, label, touches);
    for (std::size_t p = 0; p < w * h; ++p) {
        if (label[p] >= 0 && !touches[label[p]]) {
            mask.pixels[p] = 1;
        }
    }

    // Enclosed holes (e.g. vessels) belong to the lung field.
    components([&](std::size_t p) { return mask.pixels[p] == 0; }, label, touches);
    for (std::size_t p = 0; p < w * h; ++p) {
        if (label[p] >= 0 && !touches[label[p]]) {
            mask.pixels[p] = 1;
        }
    }
    return mask;
}

}  // namespace ctwso
