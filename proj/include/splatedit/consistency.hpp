#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "splatedit/camera.hpp"
#include "splatedit/common.hpp"
#include "splatedit/parallel.hpp"
#include "splatedit/tokens.hpp"

namespace splatedit {

/// Key view indices in selection order.
struct KeyViewSet {
    std::vector<std::size_t> indices;
};

/// Greedy farthest-point selection on unit viewing directions, seeded with
/// the view that sees the most foreground. Views whose masks are empty are
/// skipped entirely; k is capped at the eligible count.
inline KeyViewSet select_key_views(const std::vector<CameraView>& views,
                                   const std::vector<ImageMask>& fg_masks,
                                   std::size_t k = 4) {
    if (views.empty()) throw InputError("select_key_views needs at least one view");
    if (fg_masks.size() != views.size())
        throw InputError("select_key_views needs one mask per view");
    if (k < 1 || k > views.size())
        throw InputError("key view count must be between 1 and the view count");

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < views.size(); ++i) {
        views[i].validate();
        if (fg_masks[i].count() > 0) eligible.push_back(i);
    }
    if (eligible.empty())
        throw InputError("no view sees any foreground; cannot pick key views");

    KeyViewSet keys;
    std::size_t first = eligible[0];
    for (std::size_t i : eligible)
        if (fg_masks[i].count() > fg_masks[first].count()) first = i;
    keys.indices.push_back(first);

    std::vector<Vec3> dirs(views.size());
    for (std::size_t i : eligible) dirs[i] = views[i].view_direction();

    const std::size_t want = std::min(k, eligible.size());
    while (keys.indices.size() < want) {
        std::size_t best = views.size();
        double best_gap = -1.0;
        for (std::size_t i : eligible) {
            if (std::find(keys.indices.begin(), keys.indices.end(), i) != keys.indices.end())
                continue;
            double gap = M_PI;
            for (std::size_t s : keys.indices) {
                const double d = std::clamp(dirs[i].dot(dirs[s]), -1.0, 1.0);
                gap = std::min(gap, std::acos(d));
            }
            if (gap > best_gap) {
                best_gap = gap;
                best = i;
            }
        }
        keys.indices.push_back(best);
    }
    return keys;
}

namespace detail {

/// One candidate token cell hit by the discretized epipolar line.
struct LineCandidate {
    int cy = 0;
    int cx = 0;
    long j = 0;
};

/// Walks the epipolar line through a key view at one-token spacing and
/// collects the distinct foreground cells it crosses. The walk is anchored
/// at the foot of the perpendicular from the image center and proceeds in
/// ascending steps of (-b, a); each cell keeps its first hit.
inline std::vector<LineCandidate> line_candidates(const TokenGrid& grid,
                                                  const EpipolarLine& line) {
    const double wpx = static_cast<double>(grid.width) * grid.stride;
    const double hpx = static_cast<double>(grid.height) * grid.stride;
    const double x0 = (wpx - 1.0) / 2.0, y0 = (hpx - 1.0) / 2.0;
    const double d = line.a * x0 + line.b * y0 + line.c;
    const double fx = x0 - line.a * d, fy = y0 - line.b * d;

    const double diag = std::hypot(wpx, hpx);
    const long reach = static_cast<long>(std::ceil(diag / grid.stride)) + 2;

    std::vector<LineCandidate> out;
    std::vector<std::uint8_t> hit(grid.count(), 0);
    for (long j = -reach; j <= reach; ++j) {
        const double px = fx - line.b * grid.stride * static_cast<double>(j);
        const double py = fy + line.a * grid.stride * static_cast<double>(j);
        if (px < 0 || py < 0 || px >= wpx || py >= hpx) continue;
        const int cx = static_cast<int>(std::floor(px / grid.stride));
        const int cy = static_cast<int>(std::floor(py / grid.stride));
        const std::size_t flat = static_cast<std::size_t>(cy) * grid.width + cx;
        if (hit[flat]) continue;
        hit[flat] = 1;
        if (grid.fg_mask[flat]) out.push_back({cy, cx, j});
    }
    return out;
}

/// Argmax of the dot product over candidates; earlier line parameter wins
/// ties. Returns -1 when there are no candidates.
inline int argmax_candidate(const TokenGrid& grid, const double* query,
                            const std::vector<LineCandidate>& candidates) {
    int best = -1;
    double best_dot = 0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const double* tok = grid.token(candidates[c].cy, candidates[c].cx);
        double dot = 0;
        for (int k = 0; k < grid.dim; ++k) dot += query[k] * tok[k];
        if (best < 0 || dot > best_dot) {
            best = static_cast<int>(c);
            best_dot = dot;
        }
    }
    return best;
}

} // namespace detail

/// How one foreground token was rewritten, for diagnostics and testing.
struct TokenChoice {
    /// Selected key view indices, nearest first; -1 when unused.
    int key_a = -1;
    int key_b = -1;
    /// Flattened argmax cells in each key grid; -1 when the line saw no
    /// foreground cells there.
    int cell_a = -1;
    int cell_b = -1;
    /// 0 = kept, 1 = copied from a coincident key, 2 = single key, 3 = blend.
    int rule = 0;
};

struct ReplaceTrace {
    std::vector<std::vector<TokenChoice>> choices;
};

struct ReplaceOptions {
    /// Weight each key by 1/distance instead of distance.
    bool inverse_distance = false;
    int workers = 1;
};

/// Rewrites every foreground token of every non-key view as an interpolation
/// of the most similar tokens along its epipolar lines in the two nearest key
/// views. Key grids and background tokens pass through unchanged.
inline std::vector<TokenGrid> replace_tokens(const std::vector<TokenGrid>& grids,
                                             const std::vector<CameraView>& views,
                                             const KeyViewSet& keys,
                                             const ReplaceOptions& opts = {},
                                             ReplaceTrace* trace = nullptr) {
    if (grids.size() != views.size())
        throw InputError("replace_tokens needs one token grid per view");
    if (keys.indices.empty()) throw InputError("replace_tokens needs at least one key view");
    for (std::size_t i = 0; i < keys.indices.size(); ++i) {
        if (keys.indices[i] >= views.size())
            throw InputError("key view index out of range");
        for (std::size_t j = i + 1; j < keys.indices.size(); ++j)
            if (keys.indices[i] == keys.indices[j])
                throw InputError("key view indices must be distinct");
    }
    for (std::size_t i = 0; i < grids.size(); ++i) {
        grids[i].validate();
        views[i].validate();
        if (grids[i].dim != grids[0].dim)
            throw InputError("token grids must share one feature dimension");
        if (grids[i].width * grids[i].stride != views[i].width ||
            grids[i].height * grids[i].stride != views[i].height)
            throw InputError("token grid does not tile the pixels of view " +
                             std::to_string(i));
    }

    std::vector<TokenGrid> out = grids;
    if (trace) trace->choices.assign(grids.size(), {});

    for (std::size_t a = 0; a < grids.size(); ++a) {
        if (trace) trace->choices[a].assign(grids[a].count(), TokenChoice{});
        if (std::find(keys.indices.begin(), keys.indices.end(), a) != keys.indices.end())
            continue;

        // nearest keys by camera distance, index-ordered on ties
        std::vector<std::size_t> order = keys.indices;
        std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
            const double dl = camera_distance(views[a], views[l]);
            const double dr = camera_distance(views[a], views[r]);
            if (dl != dr) return dl < dr;
            return l < r;
        });
        order.resize(std::min<std::size_t>(2, order.size()));

        struct KeyContext {
            std::size_t view = 0;
            double dist = 0;
            Mat3 fund = Mat3::Zero();
            bool usable = false;
        };
        std::vector<KeyContext> ctx(order.size());
        for (std::size_t s = 0; s < order.size(); ++s) {
            ctx[s].view = order[s];
            ctx[s].dist = camera_distance(views[a], views[order[s]]);
            if (ctx[s].dist < 1e-9) continue;  // coincident: no line needed
            try {
                ctx[s].fund = fundamental_matrix(views[a], views[order[s]]);
                ctx[s].usable = true;
            } catch (const DegeneracyError&) {
                ctx[s].usable = false;
            }
        }

        const TokenGrid& src = grids[a];
        TokenGrid& dst = out[a];
        parallel_chunks(src.count(), opts.workers,
                        [&](std::size_t, std::size_t lo, std::size_t hi) {
            for (std::size_t t = lo; t < hi; ++t) {
                if (!src.fg_mask[t]) continue;
                const int ty = static_cast<int>(t) / src.width;
                const int tx = static_cast<int>(t) % src.width;
                const double half = (src.stride - 1.0) / 2.0;
                const Vec2 pixel(tx * src.stride + half, ty * src.stride + half);
                const double* query = src.token(ty, tx);

                TokenChoice choice;
                struct Pick {
                    const double* token = nullptr;
                    double weight = 0;
                    bool coincident = false;
                };
                std::vector<Pick> picks;
                for (std::size_t s = 0; s < ctx.size(); ++s) {
                    const TokenGrid& kg = grids[ctx[s].view];
                    int* choice_key = s == 0 ? &choice.key_a : &choice.key_b;
                    int* choice_cell = s == 0 ? &choice.cell_a : &choice.cell_b;
                    *choice_key = static_cast<int>(ctx[s].view);

                    if (ctx[s].dist < 1e-9) {
                        // coincident cameras have no epipolar line; the
                        // matching token is the one at the same position
                        if (t < kg.count() && kg.fg_mask[t]) {
                            *choice_cell = static_cast<int>(t);
                            picks.push_back({kg.tokens.data() + t * kg.dim, 1.0, true});
                        }
                        continue;
                    }
                    if (!ctx[s].usable) continue;
                    EpipolarLine line;
                    try {
                        line = epipolar_line(ctx[s].fund, pixel);
                    } catch (const DegeneracyError&) {
                        continue;
                    }
                    const auto cands = detail::line_candidates(kg, line);
                    const int best = detail::argmax_candidate(kg, query, cands);
                    if (best < 0) continue;
                    const auto& cell = cands[static_cast<std::size_t>(best)];
                    *choice_cell = cell.cy * kg.width + cell.cx;
                    const double w =
                        opts.inverse_distance ? 1.0 / ctx[s].dist : ctx[s].dist;
                    picks.push_back({kg.token(cell.cy, cell.cx), w, false});
                }

                double* dst_tok = dst.token(ty, tx);
                const auto coincident =
                    std::find_if(picks.begin(), picks.end(),
                                 [](const Pick& p) { return p.coincident; });
                if (coincident != picks.end()) {
                    for (int k = 0; k < src.dim; ++k) dst_tok[k] = coincident->token[k];
                    choice.rule = 1;
                } else if (picks.size() == 1) {
                    for (int k = 0; k < src.dim; ++k) dst_tok[k] = picks[0].token[k];
                    choice.rule = 2;
                } else if (picks.size() == 2) {
                    const double wsum = picks[0].weight + picks[1].weight;
                    for (int k = 0; k < src.dim; ++k)
                        dst_tok[k] = (picks[0].token[k] * picks[0].weight +
                                      picks[1].token[k] * picks[1].weight) /
                                     wsum;
                    choice.rule = 3;
                } else {
                    choice.rule = 0;  // no candidates anywhere: keep f(u)
                }
                if (trace) trace->choices[a][t] = choice;
            }
        });
    }
    return out;
}

} // namespace splatedit
