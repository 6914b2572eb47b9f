#pragma once

#include "shapex/core.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace shapex {

enum class MotifShape { sine_bump, triangle };

struct MotifSpec {
    MotifShape shape = MotifShape::sine_bump;
    std::size_t length = 40;
    double amplitude = 1.0;
};

// sine_bump: amplitude * sin(pi j / (length - 1)).
// triangle: symmetric ramp, zero at both ends, peak exactly `amplitude`.
std::vector<double> motif_waveform(const MotifSpec& spec);

enum class SynthVariant {
    mcc,  // class decided by motif count: 1 vs 2 sine bumps
    mtc,  // class decided by motif type: sine bump vs triangle
};

enum class AmplitudeMode {
    equal,  // motif peak = 1 x base std
    high,   // motif peak = 3 x base std
};

struct SynthConfig {
    SynthVariant variant = SynthVariant::mcc;
    AmplitudeMode amplitude_mode = AmplitudeMode::high;
    std::size_t length = 800;
    std::size_t n_train = 10000;
    std::size_t n_test = 2000;
    std::size_t motif_len = 40;
    std::uint64_t seed = 0;

    // e.g. "MCC-H"
    std::string name() const;
    // Throws ConfigError when the motifs cannot be placed.
    void validate() const;
};

struct SynthSplits {
    Dataset train;
    Dataset test;
};

// Smoothed-noise base (moving average of width 5, rescaled to unit std) with
// motifs replacing the signal at random non-overlapping positions at least
// motif_len/2 from either edge. Ground truth marks the inserted windows.
SynthSplits generate(const SynthConfig& cfg);

} // namespace shapex
