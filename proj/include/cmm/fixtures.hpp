#pragma once

#include "cmm/block.hpp"
#include "cmm/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cmm {

// Counter-based generator: every value is a pure function of
// (seed, stream, index), so any language can reproduce the fixture stream.
//
//   mix(x): x += 0x9E3779B97F4A7C15
//           x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9
//           x = (x ^ (x >> 27)) * 0x94D049BB133111EB
//           return x ^ (x >> 31)
//   word(seed, stream, index) = mix(mix(mix(seed) ^ stream) ^ index)
//   uniform = ((word >> 11) + 0.5) * 2^-53          in (0, 1)
//   normal  = inverse standard normal CDF of the uniform
namespace rng {

std::uint64_t word(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);
Scalar uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);
Scalar normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Inverse standard normal CDF (rational approximation plus one Halley
/// refinement against erfc; accurate to ~1e-15 over (0,1)).
Scalar inverse_normal_cdf(Scalar p);

}  // namespace rng

struct SyntheticInputs {
    std::uint64_t seed = 0;
    TokenEmbeddings xt;
    GridEmbeddings xv;
};

/// Standard-normal token/grid embeddings; bit-identical for equal
/// (dims, seed).
SyntheticInputs generate_inputs(Index tokens, Index grids, Index d_t, Index d_v,
                                std::uint64_t seed);

/// Deterministic weight bundle: fan-in uniform projections, diagonal-linear
/// SSM poles, alpha = 0.1.
CmmWeights generate_weights(const CmmConfig& cfg, std::uint64_t seed);

/// Deterministic weights for the prepend / cross-attention baselines.
BaselineWeights generate_baseline_weights(const CmmConfig& cfg, std::uint64_t seed);

// --- bundle file format -------------------------------------------------
// magic "CMMWB001" | u64 LE header byte length | UTF-8 header text |
// contiguous little-endian float64 payload in table order.

struct TensorEntry {
    std::string name;
    Index rows = 0;
    Index cols = 0;
    Index offset = 0;  // in float64 elements from payload start
};

struct BundleHeader {
    std::uint64_t seed = 0;
    CmmConfig config;
    std::vector<TensorEntry> table;
};

std::string emit_header(const BundleHeader& h);
BundleHeader parse_header(const std::string& text);

void save_bundle(const CmmWeights& w, const CmmConfig& cfg, std::uint64_t seed,
                 const std::string& path);

struct LoadedBundle {
    CmmWeights weights;
    CmmConfig config;
    std::uint64_t seed = 0;
};

LoadedBundle load_bundle(const std::string& path);

std::string backend_name(SsmBackendChoice backend);
SsmBackendChoice backend_from_name(const std::string& name);

}  // namespace cmm
