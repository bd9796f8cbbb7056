#include "cmm/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace cmm {

namespace rng {

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t word(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return mix(mix(mix(seed) ^ stream) ^ index);
}

Scalar uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return (static_cast<Scalar>(word(seed, stream, index) >> 11) + 0.5) *
           0x1.0p-53;
}

Scalar inverse_normal_cdf(Scalar p) {
    if (!(p > 0 && p < 1)) {
        throw ParamError("inverse_normal_cdf: p must lie in (0,1)");
    }
    // Acklam's rational approximation
    static constexpr Scalar a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr Scalar b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr Scalar c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr Scalar d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr Scalar p_low = 0.02425;
    Scalar x;
    if (p < p_low) {
        const Scalar q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p <= 1 - p_low) {
        const Scalar q = p - 0.5;
        const Scalar r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
            q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        const Scalar q = std::sqrt(-2 * std::log(1 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    // one Halley step against the exact CDF
    const Scalar e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const Scalar u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
    return x - u / (1 + x * u / 2);
}

Scalar normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return inverse_normal_cdf(uniform(seed, stream, index));
}

}  // namespace rng

namespace {

// fixed stream ids; the header documents the scheme, so these must not move
enum Stream : std::uint64_t {
    kInputTokens = 0,
    kInputGrids = 1,
    kWt = 10,
    kWv = 11,
    kFilmIn = 12,
    kFilmOut = 13,
    kSsmCRe = 14,
    kSsmCIm = 15,
    kSsmLogDt = 16,
    kSsmWDelta = 17,
    kSsmWB = 18,
    kSsmWC = 19,
    kFfnW1 = 20,
    kFfnW2 = 21,
    kBaseMlpW1 = 30,
    kBaseMlpW2 = 31,
    kBaseWq = 32,
    kBaseWk = 33,
    kBaseWv = 34,
    kBaseWo = 35,
    kBaseFfnW1 = 36,
    kBaseFfnW2 = 37,
};

Matrix normal_matrix(Index rows, Index cols, std::uint64_t seed,
                     std::uint64_t stream, Scalar scale) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = scale * rng::normal(seed, stream,
                                          static_cast<std::uint64_t>(i * cols + j));
        }
    }
    return m;
}

Matrix fanin_matrix(Index rows, Index cols, std::uint64_t seed,
                    std::uint64_t stream) {
    const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(rows));
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            const Scalar u = rng::uniform(seed, stream,
                                          static_cast<std::uint64_t>(i * cols + j));
            m(i, j) = (2 * u - 1) * bound;
        }
    }
    return m;
}

}  // namespace

SyntheticInputs generate_inputs(Index tokens, Index grids, Index d_t, Index d_v,
                                std::uint64_t seed) {
    if (tokens < 1 || grids < 1 || d_t < 1 || d_v < 1) {
        throw ParamError("generate_inputs: dimensions must be positive");
    }
    SyntheticInputs out;
    out.seed = seed;
    out.xt.values = normal_matrix(tokens, d_t, seed, kInputTokens, 1.0);
    out.xv.values = normal_matrix(grids, d_v, seed, kInputGrids, 1.0);
    return out;
}

CmmWeights generate_weights(const CmmConfig& cfg, std::uint64_t seed) {
    if (cfg.d_shared != cfg.heads * cfg.head_dim) {
        throw ParamError("generate_weights: d_shared != heads * head_dim");
    }
    CmmWeights w;
    w.correlation.w_t = fanin_matrix(cfg.d_t, cfg.d_shared, seed, kWt);
    w.correlation.w_v = fanin_matrix(cfg.d_v, cfg.d_shared, seed, kWv);

    w.film.w_in = fanin_matrix(cfg.d_shared, 2 * cfg.d_t, seed, kFilmIn);
    w.film.w_out = fanin_matrix(cfg.d_shared, 2 * cfg.d_t, seed, kFilmOut);
    w.film.alpha = 0.1;
    w.film.ln_gamma = Vector::Ones(cfg.d_t);
    w.film.ln_beta = Vector::Zero(cfg.d_t);

    const Index n = 16;
    if (cfg.backend == SsmBackendChoice::DiagonalLti) {
        DiagonalSsmParams p;
        p.state_size = n;
        // diagonal-linear poles lambda_n = -1/2 + i*pi*n
        p.lambda_re = Vector::Constant(n, -0.5);
        p.lambda_im.resize(n);
        for (Index j = 0; j < n; ++j) {
            p.lambda_im[j] = std::numbers::pi * static_cast<Scalar>(j);
        }
        p.b_re = Vector::Ones(n);
        p.b_im = Vector::Zero(n);
        const Scalar c_scale = 1.0 / std::sqrt(static_cast<Scalar>(n));
        p.c_re = normal_matrix(cfg.d_t, n, seed, kSsmCRe, c_scale);
        p.c_im = normal_matrix(cfg.d_t, n, seed, kSsmCIm, c_scale);
        p.d_skip = Vector::Ones(cfg.d_t);
        // log-uniform step size over (1e-3, 1e-1)
        p.log_dt.resize(cfg.d_t);
        for (Index c = 0; c < cfg.d_t; ++c) {
            const Scalar u = rng::uniform(seed, kSsmLogDt, static_cast<std::uint64_t>(c));
            p.log_dt[c] = std::log(1e-3) + u * (std::log(1e-1) - std::log(1e-3));
        }
        w.ssm = std::move(p);
    } else {
        SelectiveScanParams p;
        p.state_size = n;
        p.a_log.resize(cfg.d_t, n);
        for (Index c = 0; c < cfg.d_t; ++c) {
            for (Index j = 0; j < n; ++j) {
                p.a_log(c, j) = std::log(static_cast<Scalar>(j + 1));
            }
        }
        p.w_delta = fanin_matrix(cfg.d_t, cfg.d_t, seed, kSsmWDelta);
        p.w_b = fanin_matrix(cfg.d_t, n, seed, kSsmWB);
        p.w_c = fanin_matrix(cfg.d_t, n, seed, kSsmWC);
        p.d_skip = Vector::Ones(cfg.d_t);
        w.ssm = std::move(p);
    }

    w.ffn_w1 = fanin_matrix(cfg.d_t, cfg.ffn_hidden, seed, kFfnW1);
    w.ffn_b1 = Vector::Zero(cfg.ffn_hidden);
    w.ffn_w2 = fanin_matrix(cfg.ffn_hidden, cfg.d_t, seed, kFfnW2);
    w.ffn_b2 = Vector::Zero(cfg.d_t);
    w.out_ln_gamma = Vector::Ones(cfg.d_t);
    w.out_ln_beta = Vector::Zero(cfg.d_t);
    return w;
}

BaselineWeights generate_baseline_weights(const CmmConfig& cfg, std::uint64_t seed) {
    BaselineWeights w;
    const Index hidden = 2 * cfg.d_t;
    w.mlp_w1 = fanin_matrix(cfg.d_v, hidden, seed, kBaseMlpW1);
    w.mlp_b1 = Vector::Zero(hidden);
    w.mlp_w2 = fanin_matrix(hidden, cfg.d_t, seed, kBaseMlpW2);
    w.mlp_b2 = Vector::Zero(cfg.d_t);
    w.attn.heads = cfg.heads;
    w.attn.w_q = fanin_matrix(cfg.d_t, cfg.d_t, seed, kBaseWq);
    w.attn.w_k = fanin_matrix(cfg.d_t, cfg.d_t, seed, kBaseWk);
    w.attn.w_v = fanin_matrix(cfg.d_t, cfg.d_t, seed, kBaseWv);
    w.attn.w_o = fanin_matrix(cfg.d_t, cfg.d_t, seed, kBaseWo);
    w.ffn_w1 = fanin_matrix(cfg.d_t, cfg.ffn_hidden, seed, kBaseFfnW1);
    w.ffn_b1 = Vector::Zero(cfg.ffn_hidden);
    w.ffn_w2 = fanin_matrix(cfg.ffn_hidden, cfg.d_t, seed, kBaseFfnW2);
    w.ffn_b2 = Vector::Zero(cfg.d_t);
    w.ln_gamma = Vector::Ones(cfg.d_t);
    w.ln_beta = Vector::Zero(cfg.d_t);
    return w;
}

// --- bundle serialization -------------------------------------------------

namespace {

constexpr char kMagic[9] = "CMMWB001";

std::vector<std::pair<std::string, const Matrix*>> collect_matrices(
    const CmmWeights& w, std::vector<Matrix>& scratch) {
    std::vector<std::pair<std::string, const Matrix*>> out;
    auto add_vec = [&](const std::string& name, const Vector& v) {
        scratch.emplace_back(v);
        out.emplace_back(name, &scratch.back());
    };
    auto add_scalar = [&](const std::string& name, Scalar s) {
        scratch.emplace_back(Matrix::Constant(1, 1, s));
        out.emplace_back(name, &scratch.back());
    };
    out.emplace_back("w_t", &w.correlation.w_t);
    out.emplace_back("w_v", &w.correlation.w_v);
    out.emplace_back("film_w_in", &w.film.w_in);
    out.emplace_back("film_w_out", &w.film.w_out);
    add_scalar("film_alpha", w.film.alpha);
    add_vec("film_ln_gamma", w.film.ln_gamma);
    add_vec("film_ln_beta", w.film.ln_beta);
    if (std::holds_alternative<DiagonalSsmParams>(w.ssm)) {
        const auto& p = std::get<DiagonalSsmParams>(w.ssm);
        add_vec("ssm_lambda_re", p.lambda_re);
        add_vec("ssm_lambda_im", p.lambda_im);
        add_vec("ssm_b_re", p.b_re);
        add_vec("ssm_b_im", p.b_im);
        out.emplace_back("ssm_c_re", &p.c_re);
        out.emplace_back("ssm_c_im", &p.c_im);
        add_vec("ssm_d_skip", p.d_skip);
        add_vec("ssm_log_dt", p.log_dt);
    } else {
        const auto& p = std::get<SelectiveScanParams>(w.ssm);
        out.emplace_back("ssm_a_log", &p.a_log);
        out.emplace_back("ssm_w_delta", &p.w_delta);
        out.emplace_back("ssm_w_b", &p.w_b);
        out.emplace_back("ssm_w_c", &p.w_c);
        add_vec("ssm_d_skip", p.d_skip);
    }
    out.emplace_back("ffn_w1", &w.ffn_w1);
    add_vec("ffn_b1", w.ffn_b1);
    out.emplace_back("ffn_w2", &w.ffn_w2);
    add_vec("ffn_b2", w.ffn_b2);
    add_vec("out_ln_gamma", w.out_ln_gamma);
    add_vec("out_ln_beta", w.out_ln_beta);
    return out;
}

}  // namespace

std::string backend_name(SsmBackendChoice backend) {
    return backend == SsmBackendChoice::DiagonalLti ? "diagonal_lti"
                                                    : "selective_scan";
}

SsmBackendChoice backend_from_name(const std::string& name) {
    if (name == "diagonal_lti") return SsmBackendChoice::DiagonalLti;
    if (name == "selective_scan") return SsmBackendChoice::SelectiveScan;
    throw ParamError("unknown backend: " + name);
}

std::string emit_header(const BundleHeader& h) {
    std::ostringstream os;
    os << "format cmm-weight-bundle v1\n";
    os << "rng splitmix64-invcdf\n";
    os << "seed " << h.seed << "\n";
    const auto& c = h.config;
    os << "config tokens=" << c.tokens << " grids=" << c.grids << " d_t=" << c.d_t
       << " d_v=" << c.d_v << " d_shared=" << c.d_shared << " heads=" << c.heads
       << " head_dim=" << c.head_dim << " top_k=" << c.top_k
       << " backend=" << backend_name(c.backend) << " ffn_hidden=" << c.ffn_hidden
       << " pool_output=" << (c.pool_output ? 1 : 0) << "\n";
    for (const auto& t : h.table) {
        os << "tensor " << t.name << " " << t.rows << " " << t.cols << " "
           << t.offset << "\n";
    }
    os << "end\n";
    return os.str();
}

BundleHeader parse_header(const std::string& text) {
    BundleHeader h;
    std::istringstream is(text);
    std::string line;
    bool saw_end = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "format") {
            std::string name, version;
            ls >> name >> version;
            if (name != "cmm-weight-bundle" || version != "v1") {
                throw FormatError("bundle header: unsupported format '" + line + "'");
            }
        } else if (tag == "rng") {
            // informational
        } else if (tag == "seed") {
            ls >> h.seed;
        } else if (tag == "config") {
            std::string kv;
            while (ls >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) {
                    throw FormatError("bundle header: bad config field '" + kv + "'");
                }
                const std::string key = kv.substr(0, eq);
                const std::string val = kv.substr(eq + 1);
                auto& c = h.config;
                if (key == "tokens") c.tokens = std::stoll(val);
                else if (key == "grids") c.grids = std::stoll(val);
                else if (key == "d_t") c.d_t = std::stoll(val);
                else if (key == "d_v") c.d_v = std::stoll(val);
                else if (key == "d_shared") c.d_shared = std::stoll(val);
                else if (key == "heads") c.heads = std::stoll(val);
                else if (key == "head_dim") c.head_dim = std::stoll(val);
                else if (key == "top_k") c.top_k = std::stoll(val);
                else if (key == "backend") c.backend = backend_from_name(val);
                else if (key == "ffn_hidden") c.ffn_hidden = std::stoll(val);
                else if (key == "pool_output") c.pool_output = (val == "1");
                else throw FormatError("bundle header: unknown config key '" + key + "'");
            }
        } else if (tag == "tensor") {
            TensorEntry t;
            if (!(ls >> t.name >> t.rows >> t.cols >> t.offset)) {
                throw FormatError("bundle header: bad tensor line '" + line + "'");
            }
            h.table.push_back(std::move(t));
        } else if (tag == "end") {
            saw_end = true;
            break;
        } else {
            throw FormatError("bundle header: unknown line '" + line + "'");
        }
    }
    if (!saw_end) {
        throw FormatError("bundle header: missing end marker");
    }
    return h;
}

void save_bundle(const CmmWeights& w, const CmmConfig& cfg, std::uint64_t seed,
                 const std::string& path) {
    std::vector<Matrix> scratch;
    scratch.reserve(32);
    const auto tensors = collect_matrices(w, scratch);

    BundleHeader h;
    h.seed = seed;
    h.config = cfg;
    Index offset = 0;
    for (const auto& [name, m] : tensors) {
        h.table.push_back({name, m->rows(), m->cols(), offset});
        offset += m->size();
    }
    const std::string header = emit_header(h);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("save_bundle: cannot open '" + path + "' for writing");
    }
    f.write(kMagic, 8);
    const std::uint64_t hlen = header.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, m] : tensors) {
        f.write(reinterpret_cast<const char*>(m->data()),
                static_cast<std::streamsize>(m->size() * sizeof(Scalar)));
    }
    if (!f) {
        throw IoError("save_bundle: write failed for '" + path + "'");
    }
}

LoadedBundle load_bundle(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("load_bundle: cannot open '" + path + "'");
    }
    char magic[8];
    if (!f.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw FormatError("load_bundle: bad magic in '" + path + "'");
    }
    std::uint64_t hlen = 0;
    if (!f.read(reinterpret_cast<char*>(&hlen), 8)) {
        throw FormatError("load_bundle: truncated header length");
    }
    std::string header(hlen, '\0');
    if (!f.read(header.data(), static_cast<std::streamsize>(hlen))) {
        throw FormatError("load_bundle: truncated header");
    }
    const BundleHeader h = parse_header(header);

    std::vector<char> payload(std::istreambuf_iterator<char>(f), {});
    const Index available = static_cast<Index>(payload.size() / sizeof(Scalar));

    // sorted copy for the overlap check
    std::vector<TensorEntry> sorted = h.table;
    std::sort(sorted.begin(), sorted.end(),
              [](const TensorEntry& a, const TensorEntry& b) {
                  return a.offset < b.offset;
              });
    for (size_t i = 0; i + 1 < sorted.size(); ++i) {
        if (sorted[i].offset + sorted[i].rows * sorted[i].cols >
            sorted[i + 1].offset) {
            throw FormatError("load_bundle: tensor table overlap at '" +
                              sorted[i].name + "'");
        }
    }
    for (const auto& t : h.table) {
        if (t.offset < 0 || t.rows < 0 || t.cols < 0 ||
            t.offset + t.rows * t.cols > available) {
            throw CorruptionError("load_bundle: truncated payload, tensor '" +
                                  t.name + "' incomplete");
        }
    }

    auto read_mat = [&](const std::string& name) {
        for (const auto& t : h.table) {
            if (t.name == name) {
                Matrix m(t.rows, t.cols);
                std::memcpy(m.data(), payload.data() + t.offset * sizeof(Scalar),
                            static_cast<size_t>(t.rows * t.cols) * sizeof(Scalar));
                return m;
            }
        }
        throw FormatError("load_bundle: missing tensor '" + name + "'");
    };
    auto read_vec = [&](const std::string& name) -> Vector {
        return read_mat(name).reshaped();
    };

    LoadedBundle out;
    out.seed = h.seed;
    out.config = h.config;
    auto& w = out.weights;
    w.correlation.w_t = read_mat("w_t");
    w.correlation.w_v = read_mat("w_v");
    w.film.w_in = read_mat("film_w_in");
    w.film.w_out = read_mat("film_w_out");
    w.film.alpha = read_mat("film_alpha")(0, 0);
    w.film.ln_gamma = read_vec("film_ln_gamma");
    w.film.ln_beta = read_vec("film_ln_beta");
    if (h.config.backend == SsmBackendChoice::DiagonalLti) {
        DiagonalSsmParams p;
        p.lambda_re = read_vec("ssm_lambda_re");
        p.lambda_im = read_vec("ssm_lambda_im");
        p.b_re = read_vec("ssm_b_re");
        p.b_im = read_vec("ssm_b_im");
        p.c_re = read_mat("ssm_c_re");
        p.c_im = read_mat("ssm_c_im");
        p.d_skip = read_vec("ssm_d_skip");
        p.log_dt = read_vec("ssm_log_dt");
        p.state_size = p.lambda_re.size();
        w.ssm = std::move(p);
    } else {
        SelectiveScanParams p;
        p.a_log = read_mat("ssm_a_log");
        p.w_delta = read_mat("ssm_w_delta");
        p.w_b = read_mat("ssm_w_b");
        p.w_c = read_mat("ssm_w_c");
        p.d_skip = read_vec("ssm_d_skip");
        p.state_size = p.a_log.cols();
        w.ssm = std::move(p);
    }
    w.ffn_w1 = read_mat("ffn_w1");
    w.ffn_b1 = read_vec("ffn_b1");
    w.ffn_w2 = read_mat("ffn_w2");
    w.ffn_b2 = read_vec("ffn_b2");
    w.out_ln_gamma = read_vec("out_ln_gamma");
    w.out_ln_beta = read_vec("out_ln_beta");
    return out;
}

}  // namespace cmm
