#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "splatedit/common.hpp"
#include "splatedit/image.hpp"

namespace splatedit {

/// One scored image: id, pixels, and an optional foreground mask that
/// focuses scoring on the subject.
struct ImageEntry {
    std::string id;
    Image image;
    std::optional<ImageMask> fg_mask;
};

struct ImageSet {
    std::vector<ImageEntry> entries;

    const ImageEntry* find(const std::string& id) const {
        for (const auto& e : entries)
            if (e.id == id) return &e;
        return nullptr;
    }

    void validate() const {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].id.empty()) throw InputError("image set entries need ids");
            for (std::size_t j = i + 1; j < entries.size(); ++j)
                if (entries[i].id == entries[j].id)
                    throw InputError("duplicate image id " + entries[i].id);
            for (double v : entries[i].image.data)
                if (!std::isfinite(v))
                    throw InputError("image " + entries[i].id + " has non-finite pixels");
        }
    }
};

/// Pairwise image similarity in [0, 1].
class SimilarityBackend {
public:
    virtual ~SimilarityBackend() = default;
    virtual double score(const ImageEntry& a, const ImageEntry& b) const = 0;
};

namespace detail {

struct CropRect {
    int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open
    int height() const { return y1 - y0; }
    int width() const { return x1 - x0; }
};

/// Bounding box of the true pixels, or nothing for an empty mask.
inline std::optional<CropRect> mask_bounds(const ImageMask& mask) {
    CropRect r{mask.height, mask.width, 0, 0};
    bool any = false;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                any = true;
                r.y0 = std::min(r.y0, y);
                r.x0 = std::min(r.x0, x);
                r.y1 = std::max(r.y1, y + 1);
                r.x1 = std::max(r.x1, x + 1);
            }
    if (!any) return std::nullopt;
    return r;
}

/// Region both scores look at: the union of the two foreground boxes, or
/// the full frame when neither entry carries a usable mask.
inline CropRect shared_crop(const ImageEntry& a, const ImageEntry& b) {
    std::optional<CropRect> rect;
    for (const ImageEntry* e : {&a, &b}) {
        if (!e->fg_mask) continue;
        if (e->fg_mask->height != e->image.height || e->fg_mask->width != e->image.width)
            throw InputError("foreground mask of " + e->id + " does not match its image");
        const auto r = mask_bounds(*e->fg_mask);
        if (!r) continue;
        if (!rect) {
            rect = r;
        } else {
            rect->y0 = std::min(rect->y0, r->y0);
            rect->x0 = std::min(rect->x0, r->x0);
            rect->y1 = std::max(rect->y1, r->y1);
            rect->x1 = std::max(rect->x1, r->x1);
        }
    }
    if (!rect) return CropRect{0, 0, a.image.height, a.image.width};
    return *rect;
}

/// Zero-mean NCC of one aligned patch pair, flattened across channels.
/// Near-constant patches compare by mean; mixed cases score zero.
inline double patch_score(const Image& a, const Image& b, int y0, int x0, int y1, int x1) {
    double sa = 0, sb = 0;
    int n = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int c = 0; c < a.channels; ++c) {
                sa += a.at(y, x, c);
                sb += b.at(y, x, c);
                ++n;
            }
    const double ma = sa / n, mb = sb / n;
    double vaa = 0, vbb = 0, vab = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int c = 0; c < a.channels; ++c) {
                const double da = a.at(y, x, c) - ma;
                const double db = b.at(y, x, c) - mb;
                vaa += da * da;
                vbb += db * db;
                vab += da * db;
            }
    vaa /= n;
    vbb /= n;
    vab /= n;
    const bool flat_a = vaa < 1e-12, flat_b = vbb < 1e-12;
    if (flat_a || flat_b) {
        if (flat_a && flat_b && std::abs(ma - mb) < 1e-6) return 1.0;
        return 0.0;
    }
    return std::max(0.0, vab / std::sqrt(vaa * vbb));
}

} // namespace detail

/// Mean of max(0, NCC) over an aligned patch tiling. Edge patches shrink to
/// fit; masks restrict scoring to the union of the two foreground boxes.
class PatchNccBackend : public SimilarityBackend {
public:
    explicit PatchNccBackend(int patch = 8) : patch_(patch) {
        if (patch_ < 2) throw InputError("ncc patch size must be at least 2");
    }

    double score(const ImageEntry& a, const ImageEntry& b) const override {
        if (!a.image.same_shape(b.image))
            throw InputError("cannot compare images of different shapes (" + a.id +
                             " vs " + b.id + ")");
        if (a.image.height == 0 || a.image.width == 0 || a.image.channels == 0)
            throw InputError("cannot compare empty images");
        const detail::CropRect crop = detail::shared_crop(a, b);

        double total = 0;
        int patches = 0;
        for (int y = crop.y0; y < crop.y1; y += patch_)
            for (int x = crop.x0; x < crop.x1; x += patch_) {
                total += detail::patch_score(a.image, b.image, y, x,
                                             std::min(y + patch_, crop.y1),
                                             std::min(x + patch_, crop.x1));
                ++patches;
            }
        return total / patches;
    }

private:
    int patch_;
};

/// Scores supplied by an external matcher as CSV rows `id_a,id_b,score`.
/// Pairs are looked up symmetrically.
class ScoreTableBackend : public SimilarityBackend {
public:
    explicit ScoreTableBackend(const std::string& csv_path) {
        std::ifstream in(csv_path);
        if (!in) throw IoError("cannot open score table " + csv_path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string id_a, id_b, score_text;
            if (!std::getline(row, id_a, ',') || !std::getline(row, id_b, ',') ||
                !std::getline(row, score_text))
                throw FormatError(csv_path + ":" + std::to_string(lineno) +
                                  ": expected id_a,id_b,score");
            double value = 0;
            try {
                std::size_t used = 0;
                value = std::stod(score_text, &used);
                while (used < score_text.size() && std::isspace(
                           static_cast<unsigned char>(score_text[used])))
                    ++used;
                if (used != score_text.size()) throw std::invalid_argument(score_text);
            } catch (const std::exception&) {
                throw FormatError(csv_path + ":" + std::to_string(lineno) +
                                  ": bad score '" + score_text + "'");
            }
            if (!std::isfinite(value) || value < 0.0 || value > 1.0)
                throw FormatError(csv_path + ":" + std::to_string(lineno) +
                                  ": score must be in [0, 1]");
            scores_[std::make_pair(id_a, id_b)] = value;
        }
    }

    double score(const ImageEntry& a, const ImageEntry& b) const override {
        auto it = scores_.find(std::make_pair(a.id, b.id));
        if (it == scores_.end()) it = scores_.find(std::make_pair(b.id, a.id));
        if (it == scores_.end())
            throw InputError("score table has no entry for pair " + a.id + "," + b.id);
        return it->second;
    }

private:
    std::map<std::pair<std::string, std::string>, double> scores_;
};

} // namespace splatedit
