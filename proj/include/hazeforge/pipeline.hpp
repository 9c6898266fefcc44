#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hazeforge/checkpoint.hpp"
#include "hazeforge/core.hpp"
#include "hazeforge/io.hpp"
#include "hazeforge/mappers.hpp"
#include "hazeforge/metrics.hpp"
#include "hazeforge/resampler.hpp"
#include "hazeforge/scattering.hpp"

namespace hazeforge {

// ---------------------------------------------------------------------------
// dataset ingestion
// ---------------------------------------------------------------------------

// "paired-dirs": root/hazy/*.png matched to root/clean/<stem>.png, with an
// optional root/depth/<stem>.hfpm map. "list-file": root is a text file of
// comma-separated lines "id,hazy,clean[,depth]" with paths relative to the
// file. Pairs come back sorted by id.
inline std::vector<HazePair> ingest_dataset(const std::string& root, const std::string& layout) {
    namespace fs = std::filesystem;
    struct Record {
        std::string id;
        fs::path hazy, clean;
        std::optional<fs::path> depth;
    };
    std::vector<Record> records;

    if (layout == "paired-dirs") {
        const fs::path hazy_dir = fs::path(root) / "hazy";
        const fs::path clean_dir = fs::path(root) / "clean";
        const fs::path depth_dir = fs::path(root) / "depth";
        if (!fs::is_directory(hazy_dir))
            throw IoError("ingest_dataset: missing directory " + hazy_dir.string());
        for (const auto& entry : fs::directory_iterator(hazy_dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".png")
                continue;
            Record r;
            r.id = entry.path().stem().string();
            r.hazy = entry.path();
            r.clean = clean_dir / entry.path().filename();
            if (!fs::is_regular_file(r.clean))
                throw IoError("ingest_dataset: hazy image \"" + r.id + "\" has no clean counterpart at " +
                              r.clean.string());
            const fs::path depth_path = depth_dir / (r.id + ".hfpm");
            if (fs::is_regular_file(depth_path))
                r.depth = depth_path;
            records.push_back(std::move(r));
        }
    } else if (layout == "list-file") {
        std::ifstream in(root);
        if (!in)
            throw IoError("ingest_dataset: cannot open list file " + root);
        const fs::path base = fs::path(root).parent_path();
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#')
                continue;
            std::vector<std::string> fields;
            std::stringstream ss(line);
            std::string field;
            while (std::getline(ss, field, ','))
                fields.push_back(field);
            if (fields.size() < 3 || fields.size() > 4)
                throw UsageError(root + ":" + std::to_string(line_no) +
                                 ": expected \"id,hazy,clean[,depth]\"");
            Record r;
            r.id = fields[0];
            r.hazy = base / fields[1];
            r.clean = base / fields[2];
            if (fields.size() == 4)
                r.depth = base / fields[3];
            records.push_back(std::move(r));
        }
    } else {
        throw UsageError("ingest_dataset: unknown layout \"" + layout + "\"");
    }

    std::sort(records.begin(), records.end(),
              [](const Record& a, const Record& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i].id == records[i - 1].id)
            throw ValidationError("ingest_dataset: duplicate pair id \"" + records[i].id + "\"");

    std::vector<HazePair> pairs;
    pairs.reserve(records.size());
    for (const auto& r : records) {
        HazePair pair{load_image(r.hazy.string()), load_image(r.clean.string()), r.id, std::nullopt};
        if (r.depth)
            pair.depth = DepthMap(load_map(r.depth->string()));
        pairs.push_back(validate_pair(std::move(pair)));
    }
    if (pairs.empty())
        throw ValidationError("ingest_dataset: no pairs found under " + root);
    return pairs;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
    int index = 0;
    std::string source_pair_id;
    std::string output_hazy;  // relative to the manifest's directory
    std::string output_clean;
    AugmentationSpec spec;
    std::uint64_t rng_seed = 0; // seed this entry's AugmentationSpec was drawn from
};

struct Manifest {
    int version = kManifestVersion;
    std::string checkpoint_id;
    std::string checkpoint_path;
    DepthProviderConfig depth;
    ModelToggles toggles;
    double haze_free_threshold = 0.9;
    std::uint64_t seed = 0;
    int count = 0;
    std::vector<ManifestEntry> entries;
    bool failed = false;
    std::string error;
};

namespace detail {

inline nlohmann::json spec_to_json(const AugmentationSpec& spec) {
    return {{"alpha", spec.alpha},          {"gamma", spec.gamma},
            {"eta", spec.eta},              {"fill_lo", spec.fill_range.lo},
            {"fill_hi", spec.fill_range.hi}, {"strategy", to_string(spec.strategy)},
            {"seed", spec.seed}};
}

inline AugmentationSpec spec_from_json(const nlohmann::json& j) {
    AugmentationSpec spec;
    spec.alpha = j.at("alpha").get<double>();
    spec.gamma = j.at("gamma").get<double>();
    spec.eta = j.at("eta").get<double>();
    spec.fill_range.lo = j.at("fill_lo").get<double>();
    spec.fill_range.hi = j.at("fill_hi").get<double>();
    spec.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.validate();
    return spec;
}

} // namespace detail

inline std::string manifest_to_json(const Manifest& m) {
    nlohmann::json j;
    j["version"] = m.version;
    j["checkpoint_id"] = m.checkpoint_id;
    j["checkpoint_path"] = m.checkpoint_path;
    j["depth_provider"] = {{"kind", m.depth.kind}, {"source", m.depth.source}};
    j["toggles"] = {{"use_dhr", m.toggles.use_dhr}, {"use_drm", m.toggles.use_drm}};
    j["haze_free_threshold"] = m.haze_free_threshold;
    j["seed"] = m.seed;
    j["count"] = m.count;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries)
        entries.push_back({{"index", e.index},
                           {"source_pair_id", e.source_pair_id},
                           {"output_hazy", e.output_hazy},
                           {"output_clean", e.output_clean},
                           {"spec", detail::spec_to_json(e.spec)},
                           {"rng_seed", e.rng_seed}});
    j["entries"] = std::move(entries);
    if (m.failed) {
        j["failed"] = true;
        j["error"] = m.error;
    }
    return j.dump(2) + "\n";
}

inline void write_manifest(const Manifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    const std::string text = manifest_to_json(m);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out.good())
        throw IoError("failed writing " + path);
}

inline Manifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": invalid manifest JSON: " + e.what());
    }
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion)
        throw IoError(path + ": unsupported manifest version " + std::to_string(m.version));
    m.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    m.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    m.depth.kind = j.at("depth_provider").at("kind").get<std::string>();
    m.depth.source = j.at("depth_provider").at("source").get<std::string>();
    m.toggles.use_dhr = j.at("toggles").at("use_dhr").get<bool>();
    m.toggles.use_drm = j.at("toggles").at("use_drm").get<bool>();
    m.haze_free_threshold = j.at("haze_free_threshold").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.count = j.at("count").get<int>();
    m.failed = j.value("failed", false);
    m.error = j.value("error", "");
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.index = je.at("index").get<int>();
        e.source_pair_id = je.at("source_pair_id").get<std::string>();
        e.output_hazy = je.at("output_hazy").get<std::string>();
        e.output_clean = je.at("output_clean").get<std::string>();
        e.spec = detail::spec_from_json(je.at("spec"));
        e.rng_seed = je.at("rng_seed").get<std::uint64_t>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace detail {

inline int worker_count(int jobs) {
    int n = 0;
    if (const char* env = std::getenv("HAZEFORGE_THREADS"))
        n = std::atoi(env);
    if (n < 1)
        n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1)
        n = 1;
    return std::min(n, jobs);
}

// One augmented pair: estimate parameters, derive depth, resample per the
// spec, render, refine, save both images. Pure given (pair, spec, model,
// provider), so replay can call it with a recorded spec.
inline ManifestEntry generate_entry(const HazePair& pair, const AugmentationSpec& spec,
                                    std::uint64_t entry_seed, int index, const AugmenterModel& model,
                                    const DepthProvider& provider, double haze_free_threshold,
                                    const std::filesystem::path& out_dir) {
    const int multiple = model.config().spatial_multiple();
    const auto params = estimate_parameters(model.estimator(), pair.hazy, multiple);

    DepthMap raw = pair.depth ? *pair.depth
                              : normalize_depth(provider.raw_depth(pair.clean, pair.id)).map;
    const DepthMap depth = model.toggles().use_drm
                               ? refine_depth(model.depth_refiner(), raw, pair.clean, multiple)
                               : std::move(raw);

    DensityMap density = params.density;
    AtmosphericMap atmospheric = params.atmospheric;
    switch (spec.strategy) {
        case Strategy::scale:
            density = scale_density(density, spec.alpha);
            break;
        case Strategy::reverse: {
            const TransmissionMap t = compute_transmission(density, depth);
            auto reversed = reverse_atmospheric(atmospheric, density, t, spec.fill_range,
                                                haze_free_threshold, spec.seed);
            atmospheric = std::move(reversed.atmospheric);
            density = std::move(reversed.density);
            break;
        }
        case Strategy::interpolate:
            atmospheric = interpolate_atmospheric(atmospheric, spec.gamma, spec.eta);
            break;
        case Strategy::compose:
            density = scale_density(density, spec.alpha);
            atmospheric = interpolate_atmospheric(atmospheric, spec.gamma, spec.eta);
            break;
    }

    const HazeRefiner* refiner = model.toggles().use_dhr ? &model.haze_refiner() : nullptr;
    const auto result = synthesize_hazy(pair.clean, density, atmospheric, depth, refiner, multiple);

    const std::string name =
        pair.id + "_aug" + std::to_string(index) + "_" + to_string(spec.strategy) + ".png";
    save_image((out_dir / "hazy" / name).string(), result.final);
    save_image((out_dir / "clean" / name).string(), pair.clean);

    ManifestEntry entry;
    entry.index = index;
    entry.source_pair_id = pair.id;
    entry.output_hazy = "hazy/" + name;
    entry.output_clean = "clean/" + name;
    entry.spec = spec;
    entry.rng_seed = entry_seed;
    return entry;
}

// Runs fn(index) for every index on a small pool. The first exception wins;
// remaining workers stop at the next fetch.
template <class Fn>
inline void run_indexed(int jobs, Fn&& fn) {
    const int workers = worker_count(jobs);
    if (workers <= 1) {
        for (int i = 0; i < jobs; ++i)
            fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::atomic<bool> stop{false};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto body = [&] {
        while (!stop.load()) {
            const int i = next.fetch_add(1);
            if (i >= jobs)
                return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error)
                    first_error = std::current_exception();
                stop.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (int t = 0; t < workers; ++t)
        threads.emplace_back(body);
    for (auto& t : threads)
        t.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

} // namespace detail

struct AugmentOptions {
    std::string checkpoint_path;
    SamplingPolicy policy;
    DepthProviderConfig depth;
    int count = 1;
    std::uint64_t seed = 0;
    std::string out_dir;
};

// Generates `count` new pairs round-robin over the sources and writes
// out_dir/{hazy,clean}/... plus out_dir/manifest.json. Each entry is keyed
// by a seed derived from (run seed, entry index), so results do not depend
// on worker count. On failure the manifest of completed entries is still
// written, marked failed.
inline Manifest augment_dataset(const std::vector<HazePair>& pairs, const AugmentOptions& opts) {
    if (opts.count < 1)
        throw UsageError("augment_dataset: count must be >= 1");
    if (pairs.empty())
        throw ValidationError("augment_dataset: no source pairs");
    opts.policy.validate();

    namespace fs = std::filesystem;
    const fs::path out_dir(opts.out_dir);
    fs::create_directories(out_dir / "hazy");
    fs::create_directories(out_dir / "clean");

    const auto loaded = load_checkpoint(opts.checkpoint_path, /*trainable=*/false);
    const DepthProvider provider(opts.depth);

    Manifest manifest;
    manifest.checkpoint_id = loaded.id;
    manifest.checkpoint_path = opts.checkpoint_path;
    manifest.depth = opts.depth;
    manifest.toggles = loaded.model->toggles();
    manifest.haze_free_threshold = opts.policy.haze_free_threshold;
    manifest.seed = opts.seed;
    manifest.count = opts.count;

    std::vector<std::optional<ManifestEntry>> slots(opts.count);
    auto make_entry = [&](int k) {
        const HazePair& pair = pairs[static_cast<std::size_t>(k) % pairs.size()];
        const std::uint64_t entry_seed = derive_seed(opts.seed, static_cast<std::uint64_t>(k));
        const AugmentationSpec spec = sample_spec(opts.policy, entry_seed);
        slots[k] = detail::generate_entry(pair, spec, entry_seed, k, *loaded.model, provider,
                                          opts.policy.haze_free_threshold, out_dir);
    };

    const std::string manifest_path = (out_dir / "manifest.json").string();
    try {
        detail::run_indexed(opts.count, make_entry);
    } catch (const std::exception& e) {
        for (auto& slot : slots)
            if (slot)
                manifest.entries.push_back(std::move(*slot));
        manifest.failed = true;
        manifest.error = e.what();
        write_manifest(manifest, manifest_path);
        throw;
    }

    for (auto& slot : slots)
        manifest.entries.push_back(std::move(*slot));
    write_manifest(manifest, manifest_path);
    return manifest;
}

struct ReplayOptions {
    std::string manifest_path;
    std::string checkpoint_path; // empty: use the path recorded in the manifest
    std::string out_dir;
};

// Regenerates every manifest entry from its recorded spec. Output bytes are
// identical to the original run's, which is verified by the caller if wanted.
inline Manifest replay_manifest(const std::vector<HazePair>& pairs, const ReplayOptions& opts) {
    Manifest manifest = read_manifest(opts.manifest_path);
    if (manifest.failed)
        throw UsageError("replay_manifest: manifest is marked failed (" + manifest.error + ")");

    const std::string ck_path =
        opts.checkpoint_path.empty() ? manifest.checkpoint_path : opts.checkpoint_path;
    const auto loaded = load_checkpoint(ck_path, /*trainable=*/false);
    if (loaded.id != manifest.checkpoint_id)
        throw ValidationError("replay_manifest: checkpoint " + ck_path + " has id " + loaded.id +
                              " but the manifest records " + manifest.checkpoint_id);
    if (loaded.model->toggles().use_dhr != manifest.toggles.use_dhr ||
        loaded.model->toggles().use_drm != manifest.toggles.use_drm)
        throw ValidationError("replay_manifest: checkpoint toggles differ from the manifest");

    std::map<std::string, const HazePair*> by_id;
    for (const auto& pair : pairs)
        by_id[pair.id] = &pair;

    namespace fs = std::filesystem;
    const fs::path out_dir(opts.out_dir);
    fs::create_directories(out_dir / "hazy");
    fs::create_directories(out_dir / "clean");
    const DepthProvider provider(manifest.depth);

    auto replay_entry = [&](int i) {
        const ManifestEntry& e = manifest.entries[i];
        auto it = by_id.find(e.source_pair_id);
        if (it == by_id.end())
            throw ValidationError("replay_manifest: dataset has no pair \"" + e.source_pair_id + "\"");
        ManifestEntry regenerated =
            detail::generate_entry(*it->second, e.spec, e.rng_seed, e.index, *loaded.model, provider,
                                   manifest.haze_free_threshold, out_dir);
        if (regenerated.output_hazy != e.output_hazy || regenerated.output_clean != e.output_clean)
            throw ValidationError("replay_manifest: entry " + std::to_string(e.index) +
                                  " produced different output paths");
    };
    detail::run_indexed(static_cast<int>(manifest.entries.size()), replay_entry);

    write_manifest(manifest, (out_dir / "manifest.json").string());
    return manifest;
}

// ---------------------------------------------------------------------------
// directory evaluation
// ---------------------------------------------------------------------------

struct EvalRow {
    std::string name;
    double psnr_db = 0.0;
    double ssim_value = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0; // infinity when any row is infinite
    double mean_ssim = 0.0;
};

// Compares PNGs with matching filenames across two directories.
inline EvalReport evaluate_directories(const std::string& dir_a, const std::string& dir_b) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir_a) || !fs::is_directory(dir_b))
        throw IoError("evaluate_directories: both arguments must be directories");
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir_a))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty())
        throw ValidationError("evaluate_directories: no PNG files in " + dir_a);

    EvalReport report;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const auto& name : names) {
        const fs::path other = fs::path(dir_b) / name;
        if (!fs::is_regular_file(other))
            throw IoError("evaluate_directories: " + dir_b + " has no file " + name);
        const Image a = load_image((fs::path(dir_a) / name).string());
        const Image b = load_image(other.string());
        EvalRow row{name, psnr(a, b), ssim(a, b)};
        psnr_sum += row.psnr_db;
        ssim_sum += row.ssim_value;
        report.rows.push_back(std::move(row));
    }
    report.mean_psnr = psnr_sum / static_cast<double>(report.rows.size());
    report.mean_ssim = ssim_sum / static_cast<double>(report.rows.size());
    return report;
}

} // namespace hazeforge
