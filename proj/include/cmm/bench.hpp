#pragma once

#include "cmm/block.hpp"
#include "cmm/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cmm {

enum class Connector { Cmm, Prepend, CrossAttend };

std::string connector_name(Connector c);
Connector connector_from_name(const std::string& name);

/// One benchmark measurement row.
struct ScalingRecord {
    Connector connector = Connector::Cmm;
    std::optional<SsmBackendChoice> backend;
    Index tokens = 0;  // T
    Index grids = 0;   // G
    Index d_t = 0;
    Index heads = 0;
    Index top_k = 0;
    Index repeats = 0;
    std::int64_t wall_ns_median = 0;
    std::int64_t wall_ns_p10 = 0;
    std::int64_t wall_ns_p90 = 0;
    double tokens_per_sec = 0;  // T * repeats / total seconds
    std::uint64_t seed = 0;
};

struct SweepSpec {
    std::vector<Connector> connectors;
    SsmBackendChoice backend = SsmBackendChoice::DiagonalLti;
    std::vector<Index> token_counts;
    Index grids = 5;
    Index d_t = 64;
    Index heads = 4;
    Index top_k = 4;
    Index repeats = 20;
    Index warmup = 3;
    std::uint64_t seed = 42;
    bool parallel_points = false;
};

/// Run every (connector, T) point: generate fixtures, warm up, time
/// `repeats` forward calls. Fixture generation and I/O are outside the
/// timed region.
std::vector<ScalingRecord> run_sweep(const SweepSpec& spec);

struct SlopeReport {
    Connector connector = Connector::Cmm;
    double slope = 0;
    double intercept = 0;
    double r_squared = 0;
    double band_lo = 0, band_hi = 0;
    bool pass = false;
};

/// Ordinary least squares on (ln T, ln median wall time). Needs >= 5 points
/// with strictly increasing T.
SlopeReport fit_slope(const std::vector<ScalingRecord>& records,
                      double band_lo, double band_hi);

/// Default slope acceptance band per connector: cmm [0.9, 1.3],
/// prepend [1.6, 2.4], cross_attend [0.9, 1.3].
std::pair<double, double> default_slope_band(Connector c);

enum class RecordFormat { Csv, JsonLines };

void emit_records(const std::vector<ScalingRecord>& records, RecordFormat format,
                  std::ostream& os);
void emit_records(const std::vector<ScalingRecord>& records, RecordFormat format,
                  const std::string& path);
std::vector<ScalingRecord> parse_records(RecordFormat format,
                                         const std::string& path);

/// FNV-1a over the raw bytes of sequence + pooled; bit-exact comparator for
/// determinism checks.
std::uint64_t output_checksum(const FusionOutput& out);

/// Run one connector forward pass for a config built from the sweep axes.
FusionOutput run_connector(Connector c, const CmmConfig& cfg,
                           const TokenEmbeddings& xt, const GridEmbeddings& xv,
                           const CmmWeights& cmm_w, const BaselineWeights& base_w);

/// Invariant suite behind the `verify` subcommand: ablation matrix of
/// backends x connectors x k in 1..G, plus score/pooling invariants.
/// Returns the failure messages (empty on success) and prints one line per
/// check when verbose.
std::vector<std::string> run_verify(std::uint64_t seed, bool verbose);

}  // namespace cmm
