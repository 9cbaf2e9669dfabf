#include "phantom.hpp"

#include <cmath>
#include <numbers>

namespace voxseed {

namespace {

constexpr int kMaxJitterAttempts = 32;
constexpr double kStreakHalfWidth = 0.75;

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

}  // namespace

void PhantomSpec::validate() const {
    try {
        check_dims(dims);
        check_spacing(spacing);
    } catch (const Error& e) {
        throw InvalidSpec(e.what());
    }
    if (lobes.empty()) throw InvalidSpec("phantom needs at least one lobe");
    if (!finite_nonneg(deformation) || deformation > 0.5) throw InvalidSpec("deformation must be in [0, 0.5]");
    if (!finite_nonneg(noise)) throw InvalidSpec("noise sigma must be finite and >= 0");
    if (!finite_nonneg(gap)) throw InvalidSpec("gap must be finite and >= 0");
    if (!std::isfinite(foreground) || !std::isfinite(background)) throw InvalidSpec("intensities must be finite");
    const int extent[3] = {dims.h, dims.w, dims.d};
    for (const auto& lobe : lobes) {
        for (int a = 0; a < 3; ++a) {
            if (!(lobe.radii[a] > 0.0) || !std::isfinite(lobe.center[a])) throw InvalidSpec("bad lobe geometry");
            if (lobe.center[a] - lobe.radii[a] < -0.5 || lobe.center[a] + lobe.radii[a] > extent[a] - 0.5) {
                throw InvalidSpec("lobe exceeds volume dims " + dims.str());
            }
        }
    }
    if (artifact) {
        if (artifact->rays < 1) throw InvalidSpec("artifact needs at least one ray");
        if (!(artifact->darkening >= 0.0 && artifact->darkening <= 1.0)) {
            throw InvalidSpec("artifact darkening must be in [0, 1]");
        }
    }
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = nlohmann::json{{"dims", {s.dims.h, s.dims.w, s.dims.d}},
                       {"spacing", {s.spacing[0], s.spacing[1], s.spacing[2]}},
                       {"deformation", s.deformation},
                       {"gap", s.gap},
                       {"foreground", s.foreground},
                       {"background", s.background},
                       {"noise", s.noise}};
    auto lobes = nlohmann::json::array();
    for (const auto& l : s.lobes) lobes.push_back({{"center", l.center}, {"radii", l.radii}});
    j["lobes"] = lobes;
    if (s.artifact) {
        j["artifact"] = {{"rays", s.artifact->rays}, {"darkening", s.artifact->darkening}};
    } else {
        j["artifact"] = nullptr;
    }
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
    const auto d = j.at("dims").get<std::array<int, 3>>();
    s.dims = {d[0], d[1], d[2]};
    s.spacing = j.at("spacing").get<Spacing>();
    s.deformation = j.at("deformation").get<double>();
    s.gap = j.at("gap").get<double>();
    s.foreground = j.at("foreground").get<double>();
    s.background = j.at("background").get<double>();
    s.noise = j.at("noise").get<double>();
    s.lobes.clear();
    for (const auto& l : j.at("lobes")) {
        s.lobes.push_back({l.at("center").get<std::array<double, 3>>(), l.at("radii").get<std::array<double, 3>>()});
    }
    s.artifact.reset();
    if (j.contains("artifact") && !j.at("artifact").is_null()) {
        s.artifact = StreakArtifact{j["artifact"].at("rays").get<int>(), j["artifact"].at("darkening").get<double>()};
    }
}

Mask3D phantom_geometry(const PhantomSpec& spec) {
    spec.validate();
    const Dims& d = spec.dims;
    Mask3D mask(d);
    for (const auto& lobe : spec.lobes) {
        for (int i = 0; i < d.h; ++i) {
            for (int j = 0; j < d.w; ++j) {
                for (int k = 0; k < d.d; ++k) {
                    const double u = (i - lobe.center[0]) / lobe.radii[0];
                    const double v = (j - lobe.center[1]) / lobe.radii[1];
                    const double w = (k - lobe.center[2]) / lobe.radii[2];
                    const double rho2 = u * u + v * v + w * w;
                    double bound = 1.0;
                    if (spec.deformation > 0.0 && rho2 > 0.0) {
                        const double theta = std::acos(std::clamp(w / std::sqrt(rho2), -1.0, 1.0));
                        const double phi = std::atan2(v, u);
                        bound = 1.0 + spec.deformation * std::sin(3.0 * theta) * std::sin(2.0 * phi);
                    }
                    // Small tolerance so lattice points exactly on the surface count as inside.
                    if (rho2 <= bound * bound + 1e-9) mask.at(i, j, k) = 1;
                }
            }
        }
    }
    if (spec.lobes.size() >= 2 && spec.gap > 0.0) {
        const auto& a = spec.lobes[0];
        const auto& b = spec.lobes[1];
        std::array<double, 3> axis{b.center[0] - a.center[0], b.center[1] - a.center[1], b.center[2] - a.center[2]};
        const double len = std::hypot(axis[0], axis[1], axis[2]);
        if (len > 0.0) {
            for (auto& x : axis) x /= len;
            const double ra = (a.radii[0] + a.radii[1] + a.radii[2]) / 3.0;
            const double rb = (b.radii[0] + b.radii[1] + b.radii[2]) / 3.0;
            const double t = len * ra / (ra + rb);
            const std::array<double, 3> plane{a.center[0] + axis[0] * t, a.center[1] + axis[1] * t,
                                              a.center[2] + axis[2] * t};
            for (int i = 0; i < d.h; ++i) {
                for (int j = 0; j < d.w; ++j) {
                    for (int k = 0; k < d.d; ++k) {
                        const double s = (i - plane[0]) * axis[0] + (j - plane[1]) * axis[1] + (k - plane[2]) * axis[2];
                        if (std::abs(s) < spec.gap / 2.0) mask.at(i, j, k) = 0;
                    }
                }
            }
        }
    }
    return mask;
}

namespace {

// Blur only voxels whose 3x3x3 neighbourhood straddles the label boundary.
void blur_boundary_shell(const Mask3D& mask, Volume3D& vol) {
    const Dims& d = mask.dims;
    const std::vector<float> src = vol.data;
    for (int i = 0; i < d.h; ++i) {
        for (int j = 0; j < d.w; ++j) {
            for (int k = 0; k < d.d; ++k) {
                bool seen[2] = {false, false};
                double sum = 0.0;
                int n = 0;
                for (int a = -1; a <= 1; ++a) {
                    for (int b = -1; b <= 1; ++b) {
                        for (int c = -1; c <= 1; ++c) {
                            if (!d.contains(i + a, j + b, k + c)) continue;
                            const auto v = d.index(i + a, j + b, k + c);
                            seen[mask.data[v]] = true;
                            sum += src[v];
                            ++n;
                        }
                    }
                }
                if (seen[0] && seen[1]) vol.at(i, j, k) = static_cast<float>(sum / n);
            }
        }
    }
}

std::array<double, 3> random_unit(Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (;;) {
        std::array<double, 3> v{normal(rng), normal(rng), normal(rng)};
        const double n = std::hypot(v[0], v[1], v[2]);
        if (n > 1e-9) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// Dark rays fanning out in a random plane from a random point inside the object.
void apply_streaks(const StreakArtifact& art, const Mask3D& mask, Volume3D& vol, Rng& rng) {
    std::vector<std::size_t> inside;
    for (std::size_t v = 0; v < mask.data.size(); ++v) {
        if (mask.data[v]) inside.push_back(v);
    }
    if (inside.empty()) return;
    const auto apex_idx = inside[std::uniform_int_distribution<std::size_t>(0, inside.size() - 1)(rng)];
    const auto apex = mask.dims.coords(apex_idx);
    const auto normal = random_unit(rng);
    auto e1 = cross(normal, random_unit(rng));
    while (std::hypot(e1[0], e1[1], e1[2]) < 1e-6) e1 = cross(normal, random_unit(rng));
    const double n1 = std::hypot(e1[0], e1[1], e1[2]);
    for (auto& x : e1) x /= n1;
    const auto e2 = cross(normal, e1);
    const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);

    std::vector<std::array<double, 3>> rays;
    for (int r = 0; r < art.rays; ++r) {
        const double ang = phase + 2.0 * std::numbers::pi * r / art.rays;
        rays.push_back({std::cos(ang) * e1[0] + std::sin(ang) * e2[0], std::cos(ang) * e1[1] + std::sin(ang) * e2[1],
                        std::cos(ang) * e1[2] + std::sin(ang) * e2[2]});
    }
    const Dims& d = vol.dims;
    for (int i = 0; i < d.h; ++i) {
        for (int j = 0; j < d.w; ++j) {
            for (int k = 0; k < d.d; ++k) {
                const double q[3] = {double(i - apex[0]), double(j - apex[1]), double(k - apex[2])};
                const double q2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2];
                for (const auto& ray : rays) {
                    const double t = q[0] * ray[0] + q[1] * ray[1] + q[2] * ray[2];
                    if (t < 0.0) continue;
                    if (q2 - t * t < kStreakHalfWidth * kStreakHalfWidth) {
                        vol.at(i, j, k) = static_cast<float>(vol.at(i, j, k) * art.darkening);
                        break;
                    }
                }
            }
        }
    }
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec, Rng& rng) {
    spec.validate();
    Phantom out;
    out.spec = spec;
    out.mask = phantom_geometry(spec);
    std::uniform_real_distribution<double> jitter(-2.0, 2.0);
    for (int attempt = 0; attempt < kMaxJitterAttempts; ++attempt) {
        const auto fg = out.mask.count();
        if (fg > 0 && fg < out.mask.data.size()) break;
        if (attempt + 1 == kMaxJitterAttempts) throw InvalidSpec("phantom mask lacks a class after jitter retries");
        PhantomSpec moved = spec;
        for (auto& lobe : moved.lobes) {
            for (int a = 0; a < 3; ++a) lobe.center[a] += jitter(rng);
        }
        try {
            out.mask = phantom_geometry(moved);
            out.spec = moved;
        } catch (const InvalidSpec&) {
            // jittered out of bounds; try again
        }
    }

    out.volume = Volume3D(spec.dims, spec.spacing);
    for (std::size_t v = 0; v < out.mask.data.size(); ++v) {
        out.volume.data[v] = static_cast<float>(out.mask.data[v] ? spec.foreground : spec.background);
    }
    blur_boundary_shell(out.mask, out.volume);
    if (spec.artifact) apply_streaks(*spec.artifact, out.mask, out.volume, rng);
    out.volume = add_gaussian_noise(out.volume, spec.noise, rng);
    return out;
}

void to_json(nlohmann::json& j, const PhantomRanges& r) {
    j = nlohmann::json{{"dims", {r.dims.h, r.dims.w, r.dims.d}},
                       {"spacing", {r.spacing[0], r.spacing[1], r.spacing[2]}},
                       {"radius", {r.radius_min, r.radius_max}},
                       {"delta", {r.delta_min, r.delta_max}},
                       {"gap", {r.gap_min, r.gap_max}},
                       {"noise", {r.noise_min, r.noise_max}},
                       {"artifact_prob", r.artifact_prob},
                       {"rays", {r.rays_min, r.rays_max}},
                       {"darkening", {r.darkening_min, r.darkening_max}}};
}

void from_json(const nlohmann::json& j, PhantomRanges& r) {
    PhantomRanges def;
    r = def;
    if (j.contains("dims")) {
        const auto d = j["dims"].get<std::array<int, 3>>();
        r.dims = {d[0], d[1], d[2]};
    }
    if (j.contains("spacing")) r.spacing = j["spacing"].get<Spacing>();
    auto pair = [&](const char* key, double& lo, double& hi) {
        if (!j.contains(key)) return;
        const auto p = j[key].get<std::array<double, 2>>();
        lo = p[0];
        hi = p[1];
    };
    pair("radius", r.radius_min, r.radius_max);
    pair("delta", r.delta_min, r.delta_max);
    pair("gap", r.gap_min, r.gap_max);
    pair("noise", r.noise_min, r.noise_max);
    pair("darkening", r.darkening_min, r.darkening_max);
    if (j.contains("artifact_prob")) r.artifact_prob = j["artifact_prob"].get<double>();
    if (j.contains("rays")) {
        const auto p = j["rays"].get<std::array<int, 2>>();
        r.rays_min = p[0];
        r.rays_max = p[1];
    }
}

PhantomSpec sample_spec(const PhantomRanges& ranges, Rng& rng) {
    auto uniform = [&](double lo, double hi) {
        return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    if (ranges.delta_max > 0.5 || ranges.delta_min < 0.0 || ranges.delta_min > ranges.delta_max) {
        throw InvalidArgument("deformation range must lie within [0, 0.5]");
    }
    if (!(ranges.artifact_prob >= 0.0 && ranges.artifact_prob <= 1.0)) {
        throw InvalidArgument("artifact probability must be in [0, 1]");
    }
    const std::array<double, 3> mid{ranges.dims.h / 2.0 - 0.5, ranges.dims.w / 2.0 - 0.5, ranges.dims.d / 2.0 - 0.5};
    for (int attempt = 0; attempt < 256; ++attempt) {
        PhantomSpec s;
        s.dims = ranges.dims;
        s.spacing = ranges.spacing;
        s.deformation = uniform(ranges.delta_min, ranges.delta_max);
        s.gap = uniform(ranges.gap_min, ranges.gap_max);
        s.noise = uniform(ranges.noise_min, ranges.noise_max);

        // A round "head" lobe and an elongated "socket" lobe meeting along a random axis.
        const double ra = uniform(ranges.radius_min, ranges.radius_max);
        const double rb = uniform(ranges.radius_min, ranges.radius_max);
        const auto axis = random_unit(rng);
        const double dist = (ra + rb) * uniform(0.8, 1.0);
        std::array<double, 3> centre_a{}, centre_b{};
        for (int a = 0; a < 3; ++a) {
            const double m = mid[a] + uniform(-2.0, 2.0);
            centre_a[a] = m - axis[a] * dist * ra / (ra + rb);
            centre_b[a] = m + axis[a] * dist * rb / (ra + rb);
        }
        s.lobes.push_back({centre_a, {ra, ra, ra}});
        s.lobes.push_back({centre_b, {rb * uniform(0.8, 1.2), rb * uniform(0.8, 1.2), rb * uniform(0.8, 1.2)}});
        if (uniform(0.0, 1.0) < ranges.artifact_prob) {
            s.artifact = StreakArtifact{
                std::uniform_int_distribution<int>(ranges.rays_min, ranges.rays_max)(rng),
                uniform(ranges.darkening_min, ranges.darkening_max)};
        }
        try {
            s.validate();
            return s;
        } catch (const InvalidSpec&) {
            // lobes did not fit; resample
        }
    }
    throw InvalidArgument("phantom ranges do not admit a spec that fits the volume");
}

DatasetSplit make_dataset(int n_total, int n_labeled, int n_val, int n_test, const PhantomRanges& ranges,
                          std::uint64_t seed) {
    if (n_total < 1 || n_labeled < 1 || n_val < 1 || n_test < 1) {
        throw InvalidArgument("dataset counts must be >= 1");
    }
    if (n_labeled > n_total) throw InvalidArgument("n_labeled exceeds n_total");
    DatasetSplit split;
    const int n_cases = n_total + n_val + n_test;
    for (int id = 0; id < n_cases; ++id) {
        Case c;
        c.id = id;
        c.seed = derive_rng(seed, {0x70686e74ULL, static_cast<std::uint64_t>(id)})();
        Rng rng(c.seed);
        auto phantom = generate_phantom(sample_spec(ranges, rng), rng);
        c.spec = phantom.spec;
        c.volume = std::move(phantom.volume);
        c.mask = std::move(phantom.mask);
        if (id < n_labeled) {
            split.labeled.push_back(std::move(c));
        } else if (id < n_total) {
            c.mask.reset();
            split.unlabeled.push_back(std::move(c));
        } else if (id < n_total + n_val) {
            split.validation.push_back(std::move(c));
        } else {
            split.test.push_back(std::move(c));
        }
    }
    return split;
}

}  // namespace voxseed
