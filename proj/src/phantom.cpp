#include "qmri/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qmri/errors.hpp"
#include "qmri/flash.hpp"

namespace qmri {

namespace {

struct Ellipse {
    double cx, cy, ax, ay, angle;
    std::size_t cls;
};

// Masked box filter: each foreground voxel becomes the mean of the
// foreground voxels in its (2r+1)^2 neighborhood, so smoothed values stay
// inside the convex hull of the drawn values.
void smooth_foreground(PropertyMap& map, const std::vector<std::uint8_t>& fg, int radius) {
    if (radius <= 0) return;
    const int w = static_cast<int>(map.width);
    const int h = static_cast<int>(map.height);
    std::vector<TissueProperties> src = map.voxels;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (!fg[idx]) continue;
            double t1 = 0.0, t2s = 0.0, pd = 0.0;
            int count = 0;
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
                    if (!fg[nidx]) continue;
                    t1 += src[nidx].t1_ms;
                    t2s += src[nidx].t2s_ms;
                    pd += src[nidx].pd;
                    ++count;
                }
            }
            map.voxels[idx] = {t1 / count, t2s / count, pd / count};
        }
    }
}

}  // namespace

std::vector<TissueClass> default_tissue_classes() {
    return {
        {"short", {400.0, 900.0}, {30.0, 60.0}, {0.6, 0.8}},
        {"medium", {900.0, 1600.0}, {50.0, 90.0}, {0.7, 0.9}},
        {"long", {2000.0, 3000.0}, {80.0, 150.0}, {0.9, 1.0}},
    };
}

Phantom generate_phantom(const PhantomConfig& cfg, RandomStream& rng) {
    if (cfg.width < 8 || cfg.height < 8) {
        throw ConfigError("generate_phantom: dimensions must be >= 8");
    }
    if (cfg.classes.empty()) {
        throw ConfigError("generate_phantom: at least one tissue class required");
    }
    for (const auto& c : cfg.classes) {
        const TissueProperties lo{c.t1_range_ms[0], c.t2s_range_ms[0], c.pd_range[0]};
        const TissueProperties hi{c.t1_range_ms[1], c.t2s_range_ms[1], c.pd_range[1]};
        if (!is_valid(validate(lo)) || !is_valid(validate(hi)) ||
            c.t1_range_ms[0] > c.t1_range_ms[1] || c.t2s_range_ms[0] > c.t2s_range_ms[1] ||
            c.pd_range[0] > c.pd_range[1]) {
            throw ConfigError("generate_phantom: class '" + c.name + "' has invalid ranges");
        }
    }

    const double w = cfg.width, h = cfg.height;
    const double scale = std::min(w, h);

    std::vector<Ellipse> blobs;
    for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
        for (std::uint32_t b = 0; b < std::max<std::uint32_t>(cfg.blobs_per_class, 1); ++b) {
            Ellipse e;
            e.cx = rng.uniform(0.18, 0.82) * w;
            e.cy = rng.uniform(0.18, 0.82) * h;
            e.ax = rng.uniform(0.10, 0.30) * scale;
            e.ay = rng.uniform(0.10, 0.30) * scale;
            e.angle = rng.uniform(0.0, 3.14159265358979323846);
            e.cls = c;
            blobs.push_back(e);
        }
    }

    Phantom out;
    out.map = PropertyMap(cfg.width, cfg.height);
    out.foreground.assign(out.map.size(), 0);
    std::vector<int> cls_of(out.map.size(), -1);

    for (const auto& e : blobs) {
        const double ca = std::cos(e.angle), sa = std::sin(e.angle);
        for (std::uint32_t y = 0; y < cfg.height; ++y) {
            for (std::uint32_t x = 0; x < cfg.width; ++x) {
                const double dx = x + 0.5 - e.cx, dy = y + 0.5 - e.cy;
                const double u = (ca * dx + sa * dy) / e.ax;
                const double v = (-sa * dx + ca * dy) / e.ay;
                if (u * u + v * v <= 1.0) {
                    cls_of[static_cast<std::size_t>(y) * cfg.width + x] =
                        static_cast<int>(e.cls);
                }
            }
        }
    }

    // Hull midpoints fill the background relaxation times; pd gets the
    // storage-safe positive sentinel.
    double t1_lo = cfg.classes[0].t1_range_ms[0], t1_hi = cfg.classes[0].t1_range_ms[1];
    double t2s_lo = cfg.classes[0].t2s_range_ms[0], t2s_hi = cfg.classes[0].t2s_range_ms[1];
    for (const auto& c : cfg.classes) {
        t1_lo = std::min(t1_lo, c.t1_range_ms[0]);
        t1_hi = std::max(t1_hi, c.t1_range_ms[1]);
        t2s_lo = std::min(t2s_lo, c.t2s_range_ms[0]);
        t2s_hi = std::max(t2s_hi, c.t2s_range_ms[1]);
    }
    const TissueProperties background{0.5 * (t1_lo + t1_hi), 0.5 * (t2s_lo + t2s_hi),
                                      kBackgroundPd};

    for (std::size_t i = 0; i < out.map.size(); ++i) {
        if (cls_of[i] < 0) {
            out.map.voxels[i] = background;
            continue;
        }
        const TissueClass& c = cfg.classes[static_cast<std::size_t>(cls_of[i])];
        out.map.voxels[i] = {rng.uniform(c.t1_range_ms[0], c.t1_range_ms[1]),
                             rng.uniform(c.t2s_range_ms[0], c.t2s_range_ms[1]),
                             rng.uniform(c.pd_range[0], c.pd_range[1])};
        out.foreground[i] = 1;
    }

    smooth_foreground(out.map, out.foreground, static_cast<int>(cfg.smooth_radius));
    return out;
}

Phantom generate_phantom(std::uint32_t width, std::uint32_t height,
                         const std::vector<TissueClass>& classes, RandomStream& rng) {
    PhantomConfig cfg;
    cfg.width = width;
    cfg.height = height;
    cfg.classes = classes;
    return generate_phantom(cfg, rng);
}

std::vector<DatasetItem> simulate_dataset(std::uint32_t n_items, const SimulateConfig& cfg,
                                          RandomStream& rng) {
    std::vector<DatasetItem> items;
    items.reserve(n_items);
    for (std::uint32_t i = 0; i < n_items; ++i) {
        DatasetItem item;
        item.phantom_seed = rng.next_u64();
        item.protocol_seed = rng.next_u64();
        item.noise_seed = rng.next_u64();
        item.snr = cfg.snr;

        RandomStream phantom_rng = seeded_rng(item.phantom_seed);
        Phantom ph = generate_phantom(cfg.phantom, phantom_rng);
        item.gt = std::move(ph.map);
        item.foreground = std::move(ph.foreground);

        RandomStream proto_rng = seeded_rng(item.protocol_seed);
        item.input_session = cfg.fixed_input ? fixed_baseline_session()
                                             : sample_input_session(cfg.input_dist, proto_rng);
        if (cfg.fixed_input && cfg.input_fa_perturb_deg > 0.0)
            item.input_session =
                perturb_flip_angle(item.input_session, cfg.input_fa_perturb_deg, proto_rng);
        if (cfg.outputs_are_inputs)
            item.output_protocol = item.input_session.protocol;
        else
            item.output_protocol =
                cfg.fixed_output
                    ? fixed_baseline_session().protocol
                    : sample_output_contrasts(cfg.output_dist, cfg.n_output_contrasts, proto_rng);

        RandomStream noise_rng = seeded_rng(item.noise_seed);
        item.input_stack = add_gaussian_noise(
            flash_signal_batch(item.gt, item.input_session.protocol), cfg.snr, noise_rng);
        if (cfg.outputs_are_inputs) {
            item.output_stack = item.input_stack;
        } else {
            item.output_stack = flash_signal_batch(item.gt, item.output_protocol);
            if (cfg.noisy_targets) {
                RandomStream target_rng = seeded_rng(mix_seed(item.noise_seed, 1));
                item.output_stack = add_gaussian_noise(item.output_stack, cfg.snr, target_rng);
            }
        }
        items.push_back(std::move(item));
    }
    return items;
}

std::pair<std::vector<DatasetItem>, std::vector<DatasetItem>> split_dataset(
    std::vector<DatasetItem> items, double holdout_fraction) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        throw ConfigError("split_dataset: holdout_fraction must lie in (0, 1)");
    }
    const std::size_t n = items.size();
    const std::size_t n_test =
        static_cast<std::size_t>(std::llround(static_cast<double>(n) * holdout_fraction));
    if (n_test == 0 || n_test >= n) {
        throw ConfigError("split_dataset: too few items for the requested split");
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [](std::size_t a, std::size_t b) {
        return detail::splitmix64(0x5EEDF00Dull + a) < detail::splitmix64(0x5EEDF00Dull + b);
    });

    std::vector<bool> is_test(n, false);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

    std::pair<std::vector<DatasetItem>, std::vector<DatasetItem>> out;
    for (std::size_t i = 0; i < n; ++i) {
        (is_test[i] ? out.second : out.first).push_back(std::move(items[i]));
    }
    return out;
}

}  // namespace qmri
