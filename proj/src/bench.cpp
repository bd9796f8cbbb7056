#include "cmm/bench.hpp"

#include "cmm/fixtures.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>

namespace cmm {

std::string connector_name(Connector c) {
    switch (c) {
        case Connector::Cmm: return "cmm";
        case Connector::Prepend: return "prepend";
        case Connector::CrossAttend: return "cross_attend";
    }
    throw ParamError("connector_name: bad enum value");
}

Connector connector_from_name(const std::string& name) {
    if (name == "cmm") return Connector::Cmm;
    if (name == "prepend") return Connector::Prepend;
    if (name == "cross_attend") return Connector::CrossAttend;
    throw ParamError("unknown connector: " + name);
}

FusionOutput run_connector(Connector c, const CmmConfig& cfg,
                           const TokenEmbeddings& xt, const GridEmbeddings& xv,
                           const CmmWeights& cmm_w, const BaselineWeights& base_w) {
    switch (c) {
        case Connector::Cmm: return cmm_forward(xt, xv, cmm_w, cfg);
        case Connector::Prepend: return prepend_forward(xt, xv, base_w);
        case Connector::CrossAttend: return cross_attention_forward(xt, xv, base_w);
    }
    throw ParamError("run_connector: bad enum value");
}

std::uint64_t output_checksum(const FusionOutput& out) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    auto feed = [&h](const Scalar* p, Index n) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p);
        for (Index i = 0; i < n * static_cast<Index>(sizeof(Scalar)); ++i) {
            h ^= bytes[i];
            h *= 0x100000001B3ull;
        }
    };
    feed(out.sequence.data(), out.sequence.size());
    feed(out.pooled.data(), out.pooled.size());
    return h;
}

namespace {

CmmConfig config_for_point(const SweepSpec& spec, Index tokens) {
    CmmConfig cfg;
    cfg.tokens = tokens;
    cfg.grids = spec.grids;
    cfg.d_t = spec.d_t;
    cfg.d_v = spec.d_t;
    cfg.d_shared = spec.d_t;
    cfg.heads = spec.heads;
    if (spec.d_t % spec.heads != 0) {
        throw ParamError("sweep: D=" + std::to_string(spec.d_t) +
                         " not divisible by heads=" + std::to_string(spec.heads));
    }
    cfg.head_dim = spec.d_t / spec.heads;
    cfg.top_k = spec.top_k;
    cfg.backend = spec.backend;
    cfg.ffn_hidden = 2 * spec.d_t;
    return cfg;
}

std::int64_t percentile_ns(const std::vector<std::int64_t>& sorted, double q) {
    const auto idx = static_cast<size_t>(
        std::llround(q * static_cast<double>(sorted.size() - 1)));
    return sorted[idx];
}

ScalingRecord measure_point(const SweepSpec& spec, Connector conn, Index tokens) {
    const CmmConfig cfg = config_for_point(spec, tokens);
    const auto inputs =
        generate_inputs(cfg.tokens, cfg.grids, cfg.d_t, cfg.d_v, spec.seed);
    const CmmWeights cmm_w = generate_weights(cfg, spec.seed);
    const BaselineWeights base_w = generate_baseline_weights(cfg, spec.seed);

    volatile std::uint64_t sink = 0;
    for (Index i = 0; i < spec.warmup; ++i) {
        sink ^= output_checksum(
            run_connector(conn, cfg, inputs.xt, inputs.xv, cmm_w, base_w));
    }
    std::vector<std::int64_t> laps;
    laps.reserve(static_cast<size_t>(spec.repeats));
    std::int64_t total_ns = 0;
    for (Index i = 0; i < spec.repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const FusionOutput out =
            run_connector(conn, cfg, inputs.xt, inputs.xv, cmm_w, base_w);
        const auto t1 = std::chrono::steady_clock::now();
        sink ^= output_checksum(out);
        const auto ns =
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
        laps.push_back(ns);
        total_ns += ns;
    }
    std::sort(laps.begin(), laps.end());

    ScalingRecord rec;
    rec.connector = conn;
    if (conn == Connector::Cmm) rec.backend = spec.backend;
    rec.tokens = tokens;
    rec.grids = spec.grids;
    rec.d_t = spec.d_t;
    rec.heads = spec.heads;
    rec.top_k = spec.top_k;
    rec.repeats = spec.repeats;
    rec.wall_ns_median = percentile_ns(laps, 0.5);
    rec.wall_ns_p10 = percentile_ns(laps, 0.1);
    rec.wall_ns_p90 = percentile_ns(laps, 0.9);
    rec.tokens_per_sec = static_cast<double>(tokens * spec.repeats) /
                         (static_cast<double>(total_ns) * 1e-9);
    rec.seed = spec.seed;
    return rec;
}

void check_spec(const SweepSpec& spec) {
    if (spec.connectors.empty()) throw ParamError("sweep: no connectors given");
    if (spec.token_counts.empty()) throw ParamError("sweep: no T values given");
    if (spec.repeats < 5) throw ParamError("sweep: repeats must be >= 5");
    if (spec.warmup < 2) throw ParamError("sweep: warmup must be >= 2");
    for (Index t : spec.token_counts) {
        if (t < 1) throw ParamError("sweep: T values must be positive");
    }
}

}  // namespace

std::vector<ScalingRecord> run_sweep(const SweepSpec& spec) {
    check_spec(spec);
    std::vector<ScalingRecord> records;
    if (spec.parallel_points) {
        std::vector<std::future<ScalingRecord>> futures;
        for (Connector conn : spec.connectors) {
            for (Index t : spec.token_counts) {
                futures.push_back(std::async(std::launch::async, measure_point,
                                             spec, conn, t));
            }
        }
        for (auto& f : futures) records.push_back(f.get());
    } else {
        for (Connector conn : spec.connectors) {
            for (Index t : spec.token_counts) {
                records.push_back(measure_point(spec, conn, t));
            }
        }
    }
    return records;
}

std::pair<double, double> default_slope_band(Connector c) {
    switch (c) {
        case Connector::Prepend: return {1.6, 2.4};
        case Connector::Cmm:
        case Connector::CrossAttend: return {0.9, 1.3};
    }
    throw ParamError("default_slope_band: bad enum value");
}

SlopeReport fit_slope(const std::vector<ScalingRecord>& records,
                      double band_lo, double band_hi) {
    if (records.size() < 5) {
        throw ParamError("fit_slope: need >= 5 points, got " +
                         std::to_string(records.size()));
    }
    for (size_t i = 0; i < records.size(); ++i) {
        if (records[i].connector != records[0].connector) {
            throw ParamError("fit_slope: records mix connectors");
        }
        if (i > 0 && records[i].tokens <= records[i - 1].tokens) {
            throw ParamError("fit_slope: T values must be strictly increasing");
        }
    }
    const auto n = static_cast<double>(records.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (const auto& r : records) {
        const double x = std::log(static_cast<double>(r.tokens));
        const double y = std::log(static_cast<double>(r.wall_ns_median));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    SlopeReport rep;
    rep.connector = records[0].connector;
    rep.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    rep.intercept = (sy - rep.slope * sx) / n;
    const double ss_tot = syy - sy * sy / n;
    double ss_res = 0;
    for (const auto& r : records) {
        const double x = std::log(static_cast<double>(r.tokens));
        const double y = std::log(static_cast<double>(r.wall_ns_median));
        const double e = y - (rep.slope * x + rep.intercept);
        ss_res += e * e;
    }
    rep.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    rep.band_lo = band_lo;
    rep.band_hi = band_hi;
    rep.pass = rep.slope >= band_lo && rep.slope <= band_hi;
    return rep;
}

// --- record I/O -------------------------------------------------------

namespace {

constexpr const char* kCsvHeader =
    "connector,backend,T,G,D_t,H,k,repeats,wall_ns_median,wall_ns_p10,"
    "wall_ns_p90,tokens_per_sec,seed";

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

nlohmann::json record_to_json(const ScalingRecord& r) {
    nlohmann::json j;
    j["connector"] = connector_name(r.connector);
    j["backend"] = r.backend ? nlohmann::json(backend_name(*r.backend))
                             : nlohmann::json(nullptr);
    j["T"] = r.tokens;
    j["G"] = r.grids;
    j["D_t"] = r.d_t;
    j["H"] = r.heads;
    j["k"] = r.top_k;
    j["repeats"] = r.repeats;
    j["wall_ns_median"] = r.wall_ns_median;
    j["wall_ns_p10"] = r.wall_ns_p10;
    j["wall_ns_p90"] = r.wall_ns_p90;
    j["tokens_per_sec"] = r.tokens_per_sec;
    j["seed"] = r.seed;
    return j;
}

ScalingRecord record_from_json(const nlohmann::json& j) {
    ScalingRecord r;
    r.connector = connector_from_name(j.at("connector").get<std::string>());
    if (!j.at("backend").is_null()) {
        r.backend = backend_from_name(j.at("backend").get<std::string>());
    }
    r.tokens = j.at("T").get<Index>();
    r.grids = j.at("G").get<Index>();
    r.d_t = j.at("D_t").get<Index>();
    r.heads = j.at("H").get<Index>();
    r.top_k = j.at("k").get<Index>();
    r.repeats = j.at("repeats").get<Index>();
    r.wall_ns_median = j.at("wall_ns_median").get<std::int64_t>();
    r.wall_ns_p10 = j.at("wall_ns_p10").get<std::int64_t>();
    r.wall_ns_p90 = j.at("wall_ns_p90").get<std::int64_t>();
    r.tokens_per_sec = j.at("tokens_per_sec").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string field;
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

void emit_records(const std::vector<ScalingRecord>& records, RecordFormat format,
                  std::ostream& os) {
    if (format == RecordFormat::Csv) {
        os << kCsvHeader << "\n";
        for (const auto& r : records) {
            os << connector_name(r.connector) << ","
               << (r.backend ? backend_name(*r.backend) : "") << "," << r.tokens
               << "," << r.grids << "," << r.d_t << "," << r.heads << ","
               << r.top_k << "," << r.repeats << "," << r.wall_ns_median << ","
               << r.wall_ns_p10 << "," << r.wall_ns_p90 << ","
               << format_double(r.tokens_per_sec) << "," << r.seed << "\n";
        }
    } else {
        for (const auto& r : records) {
            os << record_to_json(r).dump() << "\n";
        }
    }
}

void emit_records(const std::vector<ScalingRecord>& records, RecordFormat format,
                  const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw IoError("emit_records: cannot open '" + path + "' for writing");
    }
    emit_records(records, format, f);
    if (!f) {
        throw IoError("emit_records: write failed for '" + path + "'");
    }
}

std::vector<ScalingRecord> parse_records(RecordFormat format,
                                         const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("parse_records: cannot open '" + path + "'");
    }
    std::vector<ScalingRecord> out;
    std::string line;
    if (format == RecordFormat::Csv) {
        if (!std::getline(f, line) || line != kCsvHeader) {
            throw FormatError("parse_records: bad CSV header in '" + path + "'");
        }
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != 13) {
                throw FormatError("parse_records: expected 13 fields, got " +
                                  std::to_string(fields.size()));
            }
            ScalingRecord r;
            r.connector = connector_from_name(fields[0]);
            if (!fields[1].empty()) r.backend = backend_from_name(fields[1]);
            r.tokens = std::stoll(fields[2]);
            r.grids = std::stoll(fields[3]);
            r.d_t = std::stoll(fields[4]);
            r.heads = std::stoll(fields[5]);
            r.top_k = std::stoll(fields[6]);
            r.repeats = std::stoll(fields[7]);
            r.wall_ns_median = std::stoll(fields[8]);
            r.wall_ns_p10 = std::stoll(fields[9]);
            r.wall_ns_p90 = std::stoll(fields[10]);
            r.tokens_per_sec = std::stod(fields[11]);
            r.seed = std::stoull(fields[12]);
            out.push_back(r);
        }
    } else {
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        }
    }
    return out;
}

// --- verify suite -------------------------------------------------------

namespace {

void check_scores(const CorrelationScores& s, Index k,
                  std::vector<std::string>& failures, const std::string& tag) {
    for (Index h = 0; h < s.scores.d0; ++h) {
        for (Index t = 0; t < s.scores.d1; ++t) {
            Scalar sum = 0, rsum = 0;
            Index marked = 0;
            for (Index g = 0; g < s.scores.d2; ++g) {
                sum += s.scores(h, t, g);
                rsum += s.renormalized(h, t, g);
                if (s.mask(h, t, g)) {
                    ++marked;
                } else if (s.renormalized(h, t, g) != 0) {
                    failures.push_back(tag + ": nonzero outside mask");
                    return;
                }
            }
            if (std::abs(sum - 1) > 1e-9 || std::abs(rsum - 1) > 1e-9 ||
                marked != k) {
                failures.push_back(tag + ": score row invariants violated");
                return;
            }
        }
    }
}

}  // namespace

std::vector<std::string> run_verify(std::uint64_t seed, bool verbose) {
    std::vector<std::string> failures;
    const std::vector<SsmBackendChoice> backends = {
        SsmBackendChoice::DiagonalLti, SsmBackendChoice::SelectiveScan};
    const std::vector<Connector> connectors = {
        Connector::Cmm, Connector::Prepend, Connector::CrossAttend};
    for (SsmBackendChoice backend : backends) {
        for (Connector conn : connectors) {
            for (Index k = 1; k <= 5; ++k) {
                CmmConfig cfg;
                cfg.tokens = 16;
                cfg.grids = 5;
                cfg.d_t = cfg.d_v = cfg.d_shared = 32;
                cfg.heads = 4;
                cfg.head_dim = 8;
                cfg.top_k = k;
                cfg.backend = backend;
                cfg.ffn_hidden = 64;

                const std::string tag = "verify " + connector_name(conn) + "/" +
                                        backend_name(backend) +
                                        "/k=" + std::to_string(k);
                const auto before = failures.size();
                try {
                    const auto inputs = generate_inputs(cfg.tokens, cfg.grids,
                                                        cfg.d_t, cfg.d_v, seed);
                    const CmmWeights w = generate_weights(cfg, seed);
                    const BaselineWeights bw = generate_baseline_weights(cfg, seed);
                    const FusionOutput out =
                        run_connector(conn, cfg, inputs.xt, inputs.xv, w, bw);
                    if (!out.sequence.allFinite() || !out.pooled.allFinite()) {
                        failures.push_back(tag + ": non-finite output");
                    }
                    const Vector mean = out.sequence.colwise().mean();
                    if ((mean - out.pooled).cwiseAbs().maxCoeff() > 1e-10) {
                        failures.push_back(tag + ": pooled != column mean");
                    }
                    if (conn == Connector::Cmm) {
                        check_scores(out.scores, k, failures, tag);
                    }
                } catch (const std::exception& e) {
                    failures.push_back(tag + ": exception: " + e.what());
                }
                if (verbose) {
                    std::printf("%s %s\n",
                                failures.size() == before ? "PASS" : "FAIL",
                                tag.c_str());
                }
            }
        }
    }
    return failures;
}

}  // namespace cmm
