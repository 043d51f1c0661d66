#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "splatedit/camera.hpp"
#include "splatedit/common.hpp"
#include "splatedit/image.hpp"
#include "splatedit/obb.hpp"
#include "splatedit/parallel.hpp"
#include "splatedit/splat.hpp"

namespace splatedit {

/// Foreground/background split of a scene, with the source index of every
/// splat so callers can map the partition back onto the original order.
struct PrunePartition {
    SplatScene foreground;
    SplatScene background;
    std::vector<std::size_t> foreground_indices;
    std::vector<std::size_t> background_indices;
};

namespace detail {

/// Nearest-pixel mask vote for one splat center in one view. Returns
/// -1 when the center does not project in-frame with positive depth,
/// otherwise 0/1 for the mask value at the landing pixel.
inline int mask_vote(const Vec3& center, const CameraView& view, const ImageMask& mask) {
    const Vec3 cam = view.rotation * center + view.translation;
    if (cam.z() <= 1e-9) return -1;
    const double px = view.fx * cam.x() / cam.z() + view.cx;
    const double py = view.fy * cam.y() / cam.z() + view.cy;
    const auto ix = static_cast<long>(std::llround(px));
    const auto iy = static_cast<long>(std::llround(py));
    if (ix < 0 || iy < 0 || ix >= mask.width || iy >= mask.height) return -1;
    return mask.at(static_cast<int>(iy), static_cast<int>(ix)) ? 1 : 0;
}

/// Splats whose centers land in the mask in at least vote_fraction of the
/// views that see them. Splats seen by no view never qualify.
inline std::vector<std::uint8_t> vote_in_masks(const std::vector<GaussianSplat>& splats,
                                               const std::vector<CameraView>& views,
                                               const std::vector<ImageMask>& masks,
                                               double vote_fraction, int workers) {
    std::vector<std::uint8_t> selected(splats.size(), 0);
    parallel_chunks(splats.size(), workers, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const Vec3 center = splats[i].position.cast<double>();
            int seen = 0, hits = 0;
            for (std::size_t v = 0; v < views.size(); ++v) {
                const int vote = mask_vote(center, views[v], masks[v]);
                if (vote < 0) continue;
                ++seen;
                hits += vote;
            }
            if (seen > 0 && static_cast<double>(hits) >= vote_fraction * seen - 1e-12)
                selected[i] = 1;
        }
    });
    return selected;
}

} // namespace detail

/// Splits a scene by projecting splat centers into per-view masks.
inline PrunePartition prune_foreground(const SplatScene& scene,
                                       const std::vector<CameraView>& views,
                                       const std::vector<ImageMask>& masks,
                                       double vote_fraction = 0.5, int workers = 1) {
    if (views.empty()) throw InputError("prune_foreground needs at least one view");
    if (masks.size() != views.size())
        throw InputError("prune_foreground needs one mask per view");
    if (!(vote_fraction > 0.0) || vote_fraction > 1.0)
        throw InputError("vote_fraction must be in (0, 1]");
    for (std::size_t v = 0; v < views.size(); ++v) {
        views[v].validate();
        if (masks[v].height != views[v].height || masks[v].width != views[v].width)
            throw InputError("mask dimensions do not match view " + std::to_string(v));
    }

    const auto selected =
        detail::vote_in_masks(scene.splats, views, masks, vote_fraction, workers);

    PrunePartition out;
    out.foreground.background_color = scene.background_color;
    out.background.background_color = scene.background_color;
    for (std::size_t i = 0; i < scene.splats.size(); ++i) {
        if (selected[i]) {
            out.foreground.splats.push_back(scene.splats[i]);
            out.foreground_indices.push_back(i);
        } else {
            out.background.splats.push_back(scene.splats[i]);
            out.background_indices.push_back(i);
        }
    }
    return out;
}

/// Maps an asset scene into a target box with rotation, uniform scale, and
/// translation derived from the asset's own principal-axis box.
inline SplatScene fit_asset(const SplatScene& asset, const OrientedBBox& bbox,
                            const Vec3& asset_up_hint = Vec3(0, 1, 0)) {
    if (asset.splats.empty()) throw InputError("fit_asset needs a non-empty asset");
    bbox.validate();

    std::vector<Vec3> centers;
    centers.reserve(asset.splats.size());
    for (const auto& s : asset.splats) centers.push_back(s.position.cast<double>());
    const OrientedBBox own = pca_bbox_with_up(centers, asset_up_hint);

    const Mat3 rot = bbox.axes * own.axes.transpose();
    const double scale = (bbox.half_extents.array() / own.half_extents.array()).minCoeff();
    const Vec3 shift = bbox.center - scale * (rot * own.center);
    const Eigen::Quaterniond qrot(rot);
    const auto log_shift = static_cast<float>(std::log(scale));

    SplatScene fitted = asset;
    for (auto& s : fitted.splats) {
        const Vec3 p = scale * (rot * s.position.cast<double>()) + shift;
        s.position = p.cast<float>();
        s.log_scale.array() += log_shift;
        const Eigen::Quaterniond q(s.rotation[0], s.rotation[1], s.rotation[2],
                                   s.rotation[3]);
        const Eigen::Quaterniond composed = (qrot * q).normalized();
        s.rotation = Vec4(composed.w(), composed.x(), composed.y(), composed.z())
                         .cast<float>();
    }
    return fitted;
}

/// Merged scene plus bookkeeping about where the asset landed.
struct IntegrateResult {
    SplatScene scene;
    std::vector<std::size_t> inserted;
    /// "mask" or "height_band" in replace mode, empty in add mode.
    std::string ground_source;
};

/// Appends an asset fitted into a caller-provided box.
inline IntegrateResult integrate_add(const SplatScene& source, const SplatScene& asset,
                                     const OrientedBBox& bbox,
                                     const Vec3& asset_up_hint = Vec3(0, 1, 0)) {
    IntegrateResult out;
    if (asset.splats.empty()) {
        out.scene = source;
        return out;
    }
    out.scene = merge(source, fit_asset(asset, bbox, asset_up_hint));
    for (std::size_t i = source.splats.size(); i < out.scene.splats.size(); ++i)
        out.inserted.push_back(i);
    return out;
}

/// Inputs for replace mode. Foreground masks mark the content to remove;
/// ground masks, when present, mark the supporting surface. Without ground
/// masks the supporting surface is estimated as the lowest 5% band of the
/// background along its thinnest principal axis.
struct ReplaceInputs {
    std::vector<CameraView> views;
    std::vector<ImageMask> masks;
    std::vector<ImageMask> ground_masks;
    double vote_fraction = 0.5;
    Vec3 asset_up_hint = Vec3(0, 1, 0);
    int workers = 1;
};

namespace detail {

/// Background centers in the lowest 5% band along the thinnest principal
/// axis, with the axis signed so the foreground sits on its positive side.
inline std::vector<Vec3> height_band_ground(const std::vector<Vec3>& background,
                                            const Vec3& foreground_centroid) {
    if (background.size() < 3)
        throw InputError("too few background splats to estimate a ground band");
    const Vec3 mean = centroid(background);
    Eigen::SelfAdjointEigenSolver<Mat3> es(covariance_of(background));
    Vec3 axis = es.eigenvectors().col(0);
    const double toward = axis.dot(foreground_centroid - mean);
    if (std::abs(toward) > 1e-12) {
        if (toward < 0) axis = -axis;
    } else {
        int major = 0;
        axis.cwiseAbs().maxCoeff(&major);
        if (axis[major] < 0) axis = -axis;
    }

    std::vector<double> heights;
    heights.reserve(background.size());
    for (const auto& p : background) heights.push_back(axis.dot(p));
    const double cut = quantile(heights, 0.05);

    std::vector<Vec3> band;
    for (std::size_t i = 0; i < background.size(); ++i)
        if (heights[i] <= cut) band.push_back(background[i]);
    return band;
}

} // namespace detail

/// Removes mask-voted foreground splats and fits the asset into the box the
/// removed content occupied.
inline IntegrateResult integrate_replace(const SplatScene& source, const SplatScene& asset,
                                         const ReplaceInputs& in) {
    if (asset.splats.empty()) throw InputError("replace mode needs a non-empty asset");
    const PrunePartition parts =
        prune_foreground(source, in.views, in.masks, in.vote_fraction, in.workers);
    if (parts.foreground.splats.empty())
        throw InputError("replace mode found no foreground splats to replace");

    std::vector<Vec3> object;
    object.reserve(parts.foreground.splats.size());
    for (const auto& s : parts.foreground.splats) object.push_back(s.position.cast<double>());
    std::vector<Vec3> background;
    background.reserve(parts.background.splats.size());
    for (const auto& s : parts.background.splats)
        background.push_back(s.position.cast<double>());

    IntegrateResult out;
    std::vector<Vec3> ground;
    if (!in.ground_masks.empty()) {
        if (in.ground_masks.size() != in.views.size())
            throw InputError("replace mode needs one ground mask per view");
        const auto picked = detail::vote_in_masks(parts.background.splats, in.views,
                                                  in.ground_masks, in.vote_fraction,
                                                  in.workers);
        for (std::size_t i = 0; i < background.size(); ++i)
            if (picked[i]) ground.push_back(background[i]);
        if (ground.empty()) throw InputError("ground masks select no background splats");
        out.ground_source = "mask";
    } else {
        ground = detail::height_band_ground(background, detail::centroid(object));
        out.ground_source = "height_band";
    }

    const OrientedBBox target = pca_bbox(object, ground);
    out.scene = merge(parts.background, fit_asset(asset, target, in.asset_up_hint));
    out.scene.background_color = source.background_color;
    for (std::size_t i = parts.background.splats.size(); i < out.scene.splats.size(); ++i)
        out.inserted.push_back(i);
    return out;
}

} // namespace splatedit
