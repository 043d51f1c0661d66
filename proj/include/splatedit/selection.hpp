#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "splatedit/common.hpp"
#include "splatedit/image.hpp"
#include "splatedit/parallel.hpp"
#include "splatedit/similarity.hpp"

namespace splatedit {

/// Outcome of one training-set expansion round, including every pairwise
/// score so selections can be audited.
struct SelectionResult {
    std::string chosen_id;
    std::size_t chosen_index = 0;
    /// scores[i][j] compares candidate i against training image j.
    std::vector<std::vector<double>> scores;
    std::vector<double> sums;
};

/// Picks the candidate least similar to the current training set: the
/// argmin of summed pairwise similarity, earliest candidate on ties.
inline SelectionResult select_augment(const ImageSet& train, const ImageSet& candidates,
                                      const SimilarityBackend& backend, int workers = 1) {
    if (train.entries.empty()) throw InputError("select_augment needs training images");
    if (candidates.entries.empty()) throw InputError("select_augment needs candidates");
    train.validate();
    candidates.validate();

    SelectionResult result;
    result.scores.assign(candidates.entries.size(),
                         std::vector<double>(train.entries.size(), 0.0));
    parallel_chunks(candidates.entries.size(), workers,
                    [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t j = 0; j < train.entries.size(); ++j)
                result.scores[i][j] =
                    backend.score(candidates.entries[i], train.entries[j]);
    });

    result.sums.resize(candidates.entries.size());
    for (std::size_t i = 0; i < candidates.entries.size(); ++i) {
        double sum = 0;
        for (double s : result.scores[i]) sum += s;
        result.sums[i] = sum;
        if (i > 0 && sum >= result.sums[result.chosen_index]) continue;
        result.chosen_index = i;
    }
    result.chosen_id = candidates.entries[result.chosen_index].id;
    return result;
}

/// Directory handshake with the external image translator. For each round
/// the caller writes inputs under `root/iter_t` and waits for the sentinel.
struct TranslatorProtocol {
    std::string root;
    double timeout_seconds = 60.0;
    double poll_seconds = 0.05;
};

struct IterationConfig {
    std::string prompt;
    std::string negative_prompt =
        "ugly, deformed, disfigured, poor details, bad anatomy, cartoon, CGI, unrealistic";
    int iterations = 1;
    int workers = 1;
};

namespace detail {

inline void check_protocol_id(const std::string& id) {
    if (id.empty()) throw InputError("image ids must be non-empty");
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
        if (!ok)
            throw InputError("image id '" + id + "' cannot name a protocol file");
    }
}

} // namespace detail

/// Grows a training set one image per round: translate the current renders,
/// score them against the training set, and keep the least similar one.
/// Chosen render ids leave the candidate pool; chosen images are frozen.
inline ImageSet run_iterations(const ImageEntry& initial_ref, const ImageSet& renders,
                               const TranslatorProtocol& translator,
                               const IterationConfig& config,
                               const SimilarityBackend& backend) {
    namespace fs = std::filesystem;
    if (config.iterations < 1) throw InputError("iteration count must be at least 1");
    renders.validate();
    if (renders.entries.size() < static_cast<std::size_t>(config.iterations))
        throw InputError("need at least one candidate render per iteration");
    detail::check_protocol_id(initial_ref.id);
    for (const auto& e : renders.entries) detail::check_protocol_id(e.id);
    if (translator.root.empty()) throw InputError("translator root directory not set");

    ImageSet train;
    train.entries.push_back(initial_ref);
    std::vector<ImageEntry> pool = renders.entries;

    for (int t = 1; t <= config.iterations; ++t) {
        const fs::path iter_dir = fs::path(translator.root) / ("iter_" + std::to_string(t));
        const std::string where = "iteration " + std::to_string(t);
        try {
            fs::create_directories(iter_dir / "renders");
            fs::create_directories(iter_dir / "train");

            nlohmann::json request;
            request["prompt"] = config.prompt;
            request["negative_prompt"] = config.negative_prompt;
            auto& train_ids = request["train_ids"] = nlohmann::json::array();
            for (const auto& e : train.entries) {
                train_ids.push_back(e.id);
                write_png_rgb(e.image, (iter_dir / "train" / (e.id + ".png")).string());
            }
            auto& render_ids = request["render_ids"] = nlohmann::json::array();
            for (const auto& e : pool) {
                render_ids.push_back(e.id);
                write_png_rgb(e.image, (iter_dir / "renders" / (e.id + ".png")).string());
            }
            {
                std::ofstream req(iter_dir / "request.json.tmp");
                req << request.dump(2) << "\n";
                if (!req) throw IoError("failed writing request.json");
            }
            // the request appears atomically, after all inputs are staged
            fs::rename(iter_dir / "request.json.tmp", iter_dir / "request.json");
        } catch (const fs::filesystem_error& e) {
            throw PipelineError("translator handoff failed in " + where + ": " + e.what());
        }

        const auto deadline = std::chrono::steady_clock::now() +
                              std::chrono::duration<double>(translator.timeout_seconds);
        while (!fs::exists(iter_dir / "done")) {
            if (std::chrono::steady_clock::now() >= deadline)
                throw PipelineError("translator timed out in " + where);
            std::this_thread::sleep_for(
                std::chrono::duration<double>(translator.poll_seconds));
        }

        ImageSet translated;
        for (const auto& e : pool) {
            const fs::path out = iter_dir / "translated" / (e.id + ".png");
            ImageEntry entry;
            entry.id = e.id;
            entry.fg_mask = e.fg_mask;
            try {
                entry.image = read_png_rgb(out.string());
            } catch (const Error& err) {
                throw PipelineError("translator output missing or unreadable in " + where +
                                    ": " + err.what());
            }
            translated.entries.push_back(std::move(entry));
        }

        const SelectionResult pick =
            select_augment(train, translated, backend, config.workers);
        train.entries.push_back(translated.entries[pick.chosen_index]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick.chosen_index));
    }
    return train;
}

} // namespace splatedit
