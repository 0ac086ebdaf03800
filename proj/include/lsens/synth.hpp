#pragma once

#include <cstdint>
#include <string>

#include "lsens/scene.hpp"

namespace lsens {

// Knobs for the synthetic case-study generator. The optical change signal
// (band 14) is deliberately stronger than the SAR change signal (bands 0-5),
// and water bodies mimic the optical signature of slides while staying
// separable through SAR backscatter and the land-cover band.
struct SynthSpec {
    int width = 256;
    int height = 256;
    int min_blobs = 2;               // elliptical landslide regions
    int max_blobs = 6;
    float min_radius = 5.0f;         // semi-axis range, pixels
    float max_radius = 14.0f;
    float water_fraction = 0.08f;    // target fraction of water pixels
    float sar_noise = 0.30f;         // speckle std on bands 0-5
    float sar_strength = 0.45f;      // backscatter change inside slides
    float optical_noise = 0.08f;     // noise std on band 14
    float optical_strength = 1.0f;   // scales the dNDVI drop inside slides
    float landcover_water_acc = 0.8f;  // fraction of water pixels coded as water
    int max_invalid_border = 5;      // nodata strip width, one random edge
};

// Deterministic for fixed (seed, spec). Label blobs are connected ellipses;
// positive fraction is kept inside [0.1%, 5%] of the scene or an Error is
// raised.
Scene synth_case_study(std::uint64_t seed, const SynthSpec& spec = {});

// Writes `scene_count` scenes plus dataset.json under dir and returns the
// manifest path. 21 scenes split 16/4/1; other counts split proportionally.
std::string make_synthetic_dataset(const std::string& dir, int scene_count, std::uint64_t seed,
                                   const SynthSpec& spec = {});

}  // namespace lsens
