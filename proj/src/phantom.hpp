#pragma once

// Synthetic stand-in for bone CT patches: one or two bright lobes (deformed
// ellipsoids) separated by a thin dark gap, a blurred boundary shell,
// additive Gaussian noise and optional dark fan-shaped streaks.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "rng.hpp"
#include "volume.hpp"

namespace voxseed {

struct Lobe {
    std::array<double, 3> center{};  // voxel coordinates (i, j, k)
    std::array<double, 3> radii{};   // voxels
};

struct StreakArtifact {
    int rays = 4;
    double darkening = 0.3;  // intensity multiplier along the rays
};

struct PhantomSpec {
    Dims dims{32, 32, 32};
    Spacing spacing{1.0f, 1.0f, 1.0f};
    std::vector<Lobe> lobes;
    double deformation = 0.0;  // r = r0 (1 + delta sin(3 theta) sin(2 phi))
    double gap = 0.0;          // slab width (voxels) cut between lobes 0 and 1
    double foreground = 1.0;
    double background = 0.0;
    double noise = 0.0;
    std::optional<StreakArtifact> artifact;

    void validate() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

// Noiseless label geometry: union of deformed lobes minus the gap slab.
Mask3D phantom_geometry(const PhantomSpec& spec);

struct Phantom {
    Volume3D volume;
    Mask3D mask;
    PhantomSpec spec;  // as generated, after any center jitter
};

// Retries with jittered lobe centers if the mask would lack a class.
Phantom generate_phantom(const PhantomSpec& spec, Rng& rng);

// Uniform parameter ranges for dataset generation.
struct PhantomRanges {
    Dims dims{32, 32, 32};
    Spacing spacing{1.0f, 1.0f, 1.0f};
    double radius_min = 4.5;
    double radius_max = 7.0;
    double delta_min = 0.0;
    double delta_max = 0.3;
    double gap_min = 1.0;
    double gap_max = 2.5;
    double noise_min = 0.1;
    double noise_max = 0.3;
    double artifact_prob = 0.0;
    int rays_min = 2;
    int rays_max = 5;
    double darkening_min = 0.2;
    double darkening_max = 0.5;
};

void to_json(nlohmann::json& j, const PhantomRanges& r);
void from_json(const nlohmann::json& j, PhantomRanges& r);

PhantomSpec sample_spec(const PhantomRanges& ranges, Rng& rng);

struct Case {
    int id = 0;
    std::uint64_t seed = 0;
    PhantomSpec spec;
    Volume3D volume;
    std::optional<Mask3D> mask;  // absent for unlabeled cases
};

struct DatasetSplit {
    std::vector<Case> labeled;
    std::vector<Case> unlabeled;
    std::vector<Case> validation;
    std::vector<Case> test;
};

// n_total training phantoms (the first n_labeled keep masks), then n_val
// validation and n_test test phantoms, each from its own derived seed.
DatasetSplit make_dataset(int n_total, int n_labeled, int n_val, int n_test, const PhantomRanges& ranges,
                          std::uint64_t seed);

}  // namespace voxseed
