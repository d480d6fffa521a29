#include "ocs/experiments.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/version.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include "ocs/errors.hpp"
#include "ocs/greens.hpp"
#include "ocs/models.hpp"
#include "ocs/parallel.hpp"
#include "ocs/spectral.hpp"

#ifndef OCS_VERSION
#define OCS_VERSION "0.0.0"
#endif

namespace ocs {

namespace fs = std::filesystem;

namespace {

// Stream ids under the master seed.
constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kRunStream = 2;

[[noreturn]] void bad(const std::string& where, const std::string& msg)
{
    throw ValidationError(where + ": " + msg);
}

const json& field(const json& j, const std::string& key, const std::string& where)
{
    if (!j.is_object() || !j.contains(key))
        bad(where + "/" + key, "required field missing");
    return j.at(key);
}

double as_double(const json& j, const std::string& where)
{
    if (!j.is_number())
        bad(where, "expected a number");
    const double x = j.get<double>();
    if (!std::isfinite(x))
        bad(where, "expected a finite number");
    return x;
}

long as_long(const json& j, const std::string& where)
{
    if (!j.is_number_integer())
        bad(where, "expected an integer");
    return j.get<long>();
}

long as_positive(const json& j, const std::string& where)
{
    const long v = as_long(j, where);
    if (v < 1)
        bad(where, "must be >= 1");
    return v;
}

cplx as_cplx(const json& j, const std::string& where)
{
    if (j.is_number())
        return as_double(j, where);
    if (j.is_array() && j.size() == 2)
        return {as_double(j[0], where + "/0"), as_double(j[1], where + "/1")};
    bad(where, "expected a number or [re, im]");
}

std::vector<double> as_doubles(const json& j, const std::string& where)
{
    if (!j.is_array())
        bad(where, "expected an array of numbers");
    std::vector<double> v;
    for (size_t i = 0; i < j.size(); ++i)
        v.push_back(as_double(j[i], where + "/" + std::to_string(i)));
    return v;
}

std::vector<long> as_longs(const json& j, const std::string& where)
{
    if (!j.is_array() || j.empty())
        bad(where, "expected a nonempty array of integers");
    std::vector<long> v;
    for (size_t i = 0; i < j.size(); ++i)
        v.push_back(as_positive(j[i], where + "/" + std::to_string(i)));
    return v;
}

std::vector<cplx> as_cplxs(const json& j, const std::string& where)
{
    if (!j.is_array() || j.empty())
        bad(where, "expected a nonempty array");
    std::vector<cplx> v;
    for (size_t i = 0; i < j.size(); ++i)
        v.push_back(as_cplx(j[i], where + "/" + std::to_string(i)));
    return v;
}

CVec as_cvec(const json& j, const std::string& where)
{
    const auto v = as_cplxs(j, where);
    CVec x(static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i)
        x(static_cast<Eigen::Index>(i)) = v[i];
    return x;
}

CMat as_cmat(const json& j, const std::string& where)
{
    if (!j.is_array() || j.empty())
        bad(where, "expected a nonempty matrix");
    const size_t n = j.size();
    CMat M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (size_t r = 0; r < n; ++r) {
        const std::string wr = where + "/" + std::to_string(r);
        if (!j[r].is_array() || j[r].size() != n)
            bad(wr, "matrix must be square");
        for (size_t c = 0; c < n; ++c)
            M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                as_cplx(j[r][c], wr + "/" + std::to_string(c));
    }
    return M;
}

RMat as_rmat(const json& j, const std::string& where)
{
    const CMat M = as_cmat(j, where);
    if (M.imag().cwiseAbs().maxCoeff() > 0)
        bad(where, "expected a real matrix");
    return M.real();
}

void check_increasing(const std::vector<double>& g, const std::string& where)
{
    for (size_t i = 1; i < g.size(); ++i)
        if (!(g[i] > g[i - 1]))
            bad(where + "/" + std::to_string(i), "grid must be strictly increasing");
}

std::pair<double, double> as_interval(const json& j, const std::string& where)
{
    const auto v = as_doubles(j, where);
    if (v.size() != 2 || !(v[1] > v[0]))
        bad(where, "expected [lo, hi] with lo < hi");
    return {v[0], v[1]};
}

std::pair<long, long> as_window(const json& j, const std::string& where)
{
    if (!j.is_array() || j.size() != 2)
        bad(where, "expected [lo, hi]");
    const long a = as_long(j[0], where + "/0"), b = as_long(j[1], where + "/1");
    if (b < a)
        bad(where, "window must have lo <= hi");
    return {a, b};
}

Geometry as_geometry(const json& m, const std::string& where)
{
    const std::string g = m.value("geometry", "half");
    if (g == "half")
        return Geometry::half;
    if (g == "full")
        return Geometry::full;
    bad(where + "/geometry", "expected \"half\" or \"full\"");
}

std::string num(double x)
{
    if (std::isnan(x))
        return "nan";
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

class Csv {
public:
    explicit Csv(const std::vector<std::string>& header)
    {
        for (size_t i = 0; i < header.size(); ++i)
            s_ << (i ? "," : "") << header[i];
        s_ << '\n';
    }
    template <class... T>
    void row(const T&... v)
    {
        bool first = true;
        ((s_ << (first ? "" : ",") << cell(v), first = false), ...);
        s_ << '\n';
    }
    std::string str() const { return s_.str(); }

private:
    static std::string cell(double x) { return num(x); }
    static std::string cell(long x) { return std::to_string(x); }
    static std::string cell(int x) { return std::to_string(x); }
    static std::string cell(bool x) { return x ? "1" : "0"; }
    static std::string cell(const std::string& x) { return x; }
    static std::string cell(const char* x) { return x; }
    std::ostringstream s_;
};

// Writes CSVs with a manifest next to each.
class Writer {
public:
    Writer(const json& cfg, const RunOptions& o, RunResult& r)
        : cfg_(cfg), o_(o), r_(r), start_(std::chrono::steady_clock::now())
    {
        hash_ = sha256_hex(cfg.dump());
    }

    void csv(const std::string& name, const std::string& content, const json& summary = json::object())
    {
        fs::create_directories(o_.out_dir);
        const fs::path p = o_.out_dir / (name + ".csv");
        write_file(p, content);
        json m;
        m["artifact"] = p.filename().string();
        m["experiment"] = cfg_.at("experiment");
        m["input_sha256"] = hash_;
        m["artifact_sha256"] = sha256_hex(content);
        m["master_seed"] = cfg_.at("master_seed");
        m["versions"] = version_info();
        m["wall_time_s"] = elapsed();
        m["summary"] = summary;
        m["config"] = cfg_;
        write_file(o_.out_dir / (name + ".manifest.json"), m.dump(2) + "\n");
        r_.artifacts.push_back(p);
        if (o_.verbose)
            std::cerr << "wrote " << p.string() << "\n";
    }

    void summary(const json& s)
    {
        fs::create_directories(o_.out_dir);
        json out = s;
        out["input_sha256"] = hash_;
        out["wall_time_s"] = elapsed();
        write_file(o_.out_dir / "summary.json", out.dump(2) + "\n");
    }

private:
    static void write_file(const fs::path& p, const std::string& s)
    {
        std::ofstream f(p, std::ios::binary);
        f << s;
        if (!f)
            throw Error("cannot write " + p.string());
    }
    double elapsed() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    const json& cfg_;
    const RunOptions& o_;
    RunResult& r_;
    std::chrono::steady_clock::time_point start_;
    std::string hash_;
};

std::uint64_t model_seed(const json& cfg)
{
    return derive_seed(cfg.at("master_seed").get<std::uint64_t>(), {kModelStream});
}

std::uint64_t run_seed(const json& cfg)
{
    return derive_seed(cfg.at("master_seed").get<std::uint64_t>(), {kRunStream});
}

std::vector<double> scalar_list(const json& m, const char* key, long count, double dflt,
                                const std::string& where)
{
    if (!m.contains(key))
        return std::vector<double>(static_cast<size_t>(count), dflt);
    const json& j = m.at(key);
    if (j.is_number())
        return std::vector<double>(static_cast<size_t>(count), as_double(j, where + "/" + key));
    auto v = as_doubles(j, where + "/" + key);
    if (static_cast<long>(v.size()) != count)
        bad(where + "/" + key, "length must match the shell count");
    return v;
}

}  // namespace

std::string sha256_hex(const std::string& bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

json version_info()
{
    return {{"ocs", OCS_VERSION},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                          "." + std::to_string(EIGEN_MINOR_VERSION)},
            {"boost", BOOST_LIB_VERSION},
            {"openssl", OPENSSL_VERSION_TEXT},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"compiler", __VERSION__}};
}

DisorderSpec parse_disorder(const json& j, const std::string& where)
{
    if (!j.is_object())
        bad(where, "expected a disorder object");
    const std::string kind = j.value("kind", "");
    try {
        if (kind == "delta")
            return DisorderSpec::delta(j.contains("at") ? as_double(j.at("at"), where + "/at") : 0.0);
        if (kind == "two_point") {
            if (j.contains("sigma")) {
                const double s = as_double(j.at("sigma"), where + "/sigma");
                if (!(s > 0))
                    bad(where + "/sigma", "must be positive");
                return DisorderSpec::two_point(-s, s);
            }
            const auto p = as_doubles(field(j, "points", where), where + "/points");
            if (p.size() != 2)
                bad(where + "/points", "expected two points");
            return DisorderSpec::two_point(p[0], p[1], j.contains("p") ? as_double(j.at("p"), where + "/p") : 0.5);
        }
        if (kind == "discrete")
            return DisorderSpec::discrete(as_doubles(field(j, "points", where), where + "/points"),
                                          as_doubles(field(j, "weights", where), where + "/weights"));
        if (kind == "uniform")
            return DisorderSpec::uniform(as_double(field(j, "lo", where), where + "/lo"),
                                         as_double(field(j, "hi", where), where + "/hi"));
        if (kind == "quadrature")
            return DisorderSpec::quadrature(as_doubles(field(j, "nodes", where), where + "/nodes"),
                                            as_doubles(field(j, "weights", where), where + "/weights"));
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        if (msg.rfind(where, 0) == 0)
            throw;
        bad(where, msg);
    }
    bad(where + "/kind", "expected delta, two_point, discrete, uniform or quadrature");
}

SizeLaw parse_size_law(const json& j, const std::string& where)
{
    if (j.is_number_integer()) {
        const long c = as_positive(j, where);
        return [c](long) { return c; };
    }
    if (j.is_array()) {
        std::vector<long> v;
        for (size_t i = 0; i < j.size(); ++i)
            v.push_back(as_long(j[i], where + "/" + std::to_string(i)));
        if (v.empty())
            bad(where, "empty size list");
        return [v, where](long n) {
            if (n < 1 || n > static_cast<long>(v.size()))
                throw ValidationError(where + ": size list too short for index " + std::to_string(n));
            return v[static_cast<size_t>(n - 1)];
        };
    }
    if (!j.is_string())
        bad(where, "expected an integer, a list or a law such as \"poly:d=3\"");
    const std::string s = j.get<std::string>();
    const auto colon = s.find(':');
    const std::string law = s.substr(0, colon);
    std::map<std::string, double> args;
    if (colon != std::string::npos) {
        std::stringstream ss(s.substr(colon + 1));
        std::string kv;
        while (std::getline(ss, kv, ',')) {
            const auto eq = kv.find('=');
            try {
                if (eq == std::string::npos)
                    args["c"] = std::stod(kv);
                else
                    args[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
            } catch (const std::exception&) {
                bad(where, "cannot parse law argument \"" + kv + "\"");
            }
        }
    }
    auto arg = [&](const char* k, double d) { return args.count(k) ? args[k] : d; };
    if (law == "const") {
        const long c = std::lround(arg("c", 1));
        if (c < 1)
            bad(where, "constant size must be >= 1");
        return [c](long) { return c; };
    }
    if (law == "poly") {
        const double d = arg("d", 1), c = arg("c", 1);
        if (!(d >= 0 && c > 0))
            bad(where, "poly law needs d >= 0 and c > 0");
        return [d, c](long n) { return std::max(1L, std::lround(c * std::pow(double(n), d))); };
    }
    if (law == "exp") {
        const double b = arg("b", 2), c = arg("c", 1);
        if (!(b >= 1 && c > 0))
            bad(where, "exp law needs b >= 1 and c > 0");
        return [b, c](long n) { return std::max(1L, std::lround(c * std::pow(b, double(n)))); };
    }
    bad(where, "unknown size law \"" + law + "\"");
}

StretchedAntitreeSpec parse_stretched(const json& m, const std::string& where)
{
    StretchedAntitreeSpec s;
    s.disorder = parse_disorder(field(m, "disorder", where), where + "/disorder");
    if (m.contains("s"))
        s.s = parse_size_law(m.at("s"), where + "/s");
    return s;
}

PartialAntitreeSpec parse_partial(const json& m, const std::string& where)
{
    const DisorderSpec nu = parse_disorder(field(m, "disorder", where), where + "/disorder");
    PartialAntitreeSpec p;
    if (m.value("pattern", "") == "hat") {
        p = hat_pattern(nu, nullptr);
    } else {
        const auto k = as_longs(field(m, "k", where), where + "/k");
        if (k.size() != 3)
            bad(where + "/k", "expected [k1, k2, k3]");
        if (m.contains("coupling")) {
            p = partial_from_coupling(int(k[0]), int(k[1]), int(k[2]),
                                      as_rmat(m.at("coupling"), where + "/coupling"), nu, nullptr);
        } else {
            p.k1 = int(k[0]);
            p.k2 = int(k[1]);
            p.k3 = int(k[2]);
            p.O = as_rmat(field(m, "O", where), where + "/O");
            const auto a = as_doubles(field(m, "a", where), where + "/a");
            p.a_diag = Eigen::Map<const RVec>(a.data(), static_cast<Eigen::Index>(a.size()));
            p.disorder = nu;
        }
    }
    if (m.contains("k") && m.value("pattern", "") == "hat")
        bad(where + "/k", "the hat pattern fixes k");
    if (m.contains("r")) {
        p.r = parse_size_law(m.at("r"), where + "/r");
    } else {
        const long k1 = p.k1, k2 = p.k2, k3 = p.k3;
        p.r = [k1, k2, k3](long s) { return s % 3 == 1 ? k1 : s % 3 == 2 ? k2 : k3; };
    }
    try {
        p.validate(m.contains("N") ? as_positive(m.at("N"), where + "/N") : 1);
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        if (msg.rfind(where, 0) == 0)
            throw;
        bad(where, msg);
    }
    return p;
}

std::vector<double> parse_grid(const json& j, const std::string& where)
{
    std::vector<double> g;
    if (j.is_object()) {
        const double lo = as_double(field(j, "lo", where), where + "/lo");
        const double hi = as_double(field(j, "hi", where), where + "/hi");
        const long n = as_positive(field(j, "count", where), where + "/count");
        if (n == 1)
            return {lo};
        if (!(hi > lo))
            bad(where, "grid needs lo < hi");
        for (long i = 0; i < n; ++i)
            g.push_back(lo + (hi - lo) * double(i) / double(n - 1));
        return g;
    }
    g = as_doubles(j, where);
    check_increasing(g, where);
    return g;
}

OneChannelOperator build_operator(const json& m, std::uint64_t seed, const std::string& where)
{
    if (!m.is_object())
        bad(where, "expected a model object");
    const std::string kind = m.value("model", "");
    const Geometry g = as_geometry(m, where);
    try {
        if (kind == "jacobi") {
            long count = m.contains("N") ? as_positive(m.at("N"), where + "/N") : 0;
            for (const char* key : {"a", "v"})
                if (!count && m.contains(key) && m.at(key).is_array())
                    count = static_cast<long>(m.at(key).size());
            if (count < 1)
                bad(where + "/N", "shell count missing");
            const auto a = scalar_list(m, "a", count, -1.0, where);
            const auto v = scalar_list(m, "v", count, 0.0, where);
            const long first = g == Geometry::full
                                   ? (m.contains("first") ? as_long(m.at("first"), where + "/first") : -(count / 2))
                                   : 1;
            return jacobi(v, a, g, first);
        }
        if (kind == "custom") {
            const json& shells = field(m, "shells", where);
            if (!shells.is_array() || shells.empty())
                bad(where + "/shells", "expected a nonempty array");
            const auto a = scalar_list(m, "a", static_cast<long>(shells.size()), -1.0, where);
            const long first = g == Geometry::full && m.contains("first") ? as_long(m.at("first"), where + "/first") : 1;
            std::vector<Shell> list;
            for (size_t i = 0; i < shells.size(); ++i) {
                const std::string w = where + "/shells/" + std::to_string(i);
                const CMat V = as_cmat(field(shells[i], "V", w), w + "/V");
                const CVec phi = as_cvec(field(shells[i], "phi", w), w + "/phi");
                const CVec ups = as_cvec(field(shells[i], "upsilon", w), w + "/upsilon");
                if (phi.size() != V.rows() || ups.size() != V.rows())
                    bad(w, "mode vectors must match V");
                list.emplace_back(first + static_cast<long>(i), V, a[i], phi, ups);
            }
            return OneChannelOperator(std::move(list), g, first);
        }
        if (kind == "random") {
            RandomShellOptions o;
            const long N = as_positive(field(m, "N", where), where + "/N");
            if (m.contains("s_min"))
                o.s_min = int(as_positive(m.at("s_min"), where + "/s_min"));
            if (m.contains("s_max"))
                o.s_max = int(as_positive(m.at("s_max"), where + "/s_max"));
            if (o.s_max < o.s_min)
                bad(where + "/s_max", "must be >= s_min");
            if (m.contains("a"))
                o.a = as_double(m.at("a"), where + "/a");
            o.real = m.value("real", false);
            if (m.contains("v_scale"))
                o.v_scale = as_double(m.at("v_scale"), where + "/v_scale");
            const std::uint64_t s = m.contains("seed") ? m.at("seed").get<std::uint64_t>() : seed;
            return random_operator(s, N, o);
        }
        if (kind == "stretched_antitree") {
            const StretchedAntitreeSpec s = parse_stretched(m, where);
            if (!s.s)
                bad(where + "/s", "required field missing");
            const long N = as_positive(field(m, "N", where), where + "/N");
            long dim = 0;
            for (long n = 1; n <= N; ++n)
                dim += 2 * s.s(n);
            if (dim > 2000000)
                bad(where, "explicit shells too large; use counts sampling where supported");
            return stretched_operator(s, N, seed);
        }
        if (kind == "partial_antitree") {
            const PartialAntitreeSpec p = parse_partial(m, where);
            return partial_operator(p, as_positive(field(m, "N", where), where + "/N"), seed);
        }
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        if (msg.rfind(where, 0) == 0)
            throw;
        bad(where, msg);
    }
    bad(where + "/model", "expected custom, jacobi, random, stretched_antitree or partial_antitree");
}

namespace {

json registry_json(const char* text)
{
    return json::parse(text);
}

std::vector<ExperimentKind> make_registry()
{
    std::vector<ExperimentKind> r;
    r.push_back({"green_oracle",
                 "Resolvent blocks from transfer solutions against dense inversion; also writes "
                 "transfer-matrix traces.",
                 {"model", "params.z_list"},
                 {{"c", 0.0}, {"tol", 1e-8}, {"export_dense", false}},
                 registry_json(R"({"experiment":"green_oracle","master_seed":1,
                    "model":{"model":"random","N":5,"s_max":4,"real":true},
                    "params":{"z_list":[[0.3,0.5],[-1.0,1.5]]}})")});
    r.push_back({"m_sweep",
                 "Boundary m-function over z, truncation N, boundary parameter c and method.",
                 {"model", "params.z_list", "params.N_list"},
                 {{"c_list", json::array({0.0})}, {"methods", json::array({"transfer"})}},
                 registry_json(R"({"experiment":"m_sweep","master_seed":1,
                    "model":{"model":"jacobi","N":200},
                    "params":{"z_list":[[0,1]],"N_list":[50,100,200],"methods":["transfer","dense"],
                              "check":{"reference":[0,0.6180339887498949],"tol":1e-6}}})")});
    r.push_back({"weyl",
                 "Weyl circle radii and centers n = 1..n_max with a limit-point verdict.",
                 {"model"},
                 {{"z", json::array({0.0, 1.0})}},
                 registry_json(R"({"experiment":"weyl","master_seed":1,
                    "model":{"model":"jacobi","N":200},
                    "params":{"z":[0,1],"n_max":200,"expect_verdict":"limit-point-like"}})")});
    r.push_back({"density_halfline",
                 "Cesaro-averaged half-line spectral density with point masses.",
                 {"model", "params.grid"},
                 {{"window", json::array({0, 0})}, {"point_masses", true}},
                 registry_json(R"({"experiment":"density_halfline","master_seed":1,
                    "model":{"model":"jacobi","N":400},
                    "params":{"grid":{"lo":-2.5,"hi":2.5,"count":501},"window":[200,400],
                              "check":{"interval":[-1,1],"expected":0.6090,"rel_tol":0.02}}})")});
    r.push_back({"density_fullline",
                 "Full-line density of the two boundary measures from left and right windows.",
                 {"model", "params.grid", "params.m_window", "params.n_window"},
                 {{"theta_nodes", 64}},
                 registry_json(R"({"experiment":"density_fullline","master_seed":1,
                    "model":{"model":"jacobi","geometry":"full","N":401,"first":-200},
                    "params":{"grid":{"lo":-1.9,"hi":1.9,"count":77},"m_window":[100,200],"n_window":[100,200]}})")});
    r.push_back({"ac_criterion",
                 "Integrals of p-th powers of transfer-matrix norms over an energy interval.",
                 {"model", "params.interval", "params.n_list"},
                 {{"p", 4.0}, {"nodes", 400}, {"factor", 2.0}, {"sampling", "operator"}},
                 registry_json(R"({"experiment":"ac_criterion","master_seed":1,
                    "model":{"model":"jacobi","N":200},
                    "params":{"interval":[-1,1],"n_list":[10,20,50,100,200],"expect_verdict":"bounded-like"}})")});
    r.push_back({"interval_S",
                 "Energies where the stretched-antitree limit transfer matrix is elliptic.",
                 {"model", "params.grid"},
                 {{"tol", 1e-6}},
                 registry_json(R"({"experiment":"interval_S","master_seed":1,
                    "model":{"model":"stretched_antitree","disorder":{"kind":"delta"}},
                    "params":{"grid":{"lo":-2.5,"hi":2.5,"count":1000},
                              "expect_endpoints":[-2,-1,-1,0,0,1,1,2]}})")});
    r.push_back({"interval_A",
                 "Energies where the partial-antitree limit transfer matrix is elliptic.",
                 {"model", "params.grid"},
                 {{"tol", 1e-6}, {"interior", 100}, {"margin", 1e-6}},
                 registry_json(R"({"experiment":"interval_A","master_seed":1,
                    "model":{"model":"partial_antitree","pattern":"hat","disorder":{"kind":"delta"}},
                    "params":{"grid":{"lo":-2.5,"hi":2.5,"count":1000},
                              "expect_endpoints":[-2,-1.4142135623730951,-1.4142135623730951,-1,-1,0,0,1,1,
                                                  1.4142135623730951,1.4142135623730951,2]}})")});
    r.push_back({"moment_bound",
                 "Monte-Carlo fourth moments of random transfer products against the analytic bound.",
                 {"model", "params.lambda", "params.n_max", "params.trials"},
                 {{"sampling", "auto"}},
                 registry_json(R"({"experiment":"moment_bound","master_seed":1,
                    "model":{"model":"stretched_antitree","s":"poly:d=3","disorder":{"kind":"two_point","sigma":0.2}},
                    "params":{"lambda":0.5,"n_max":100,"trials":500,
                              "ac":{"interval":[0.45,0.55],"n_list":[10,20,50,100],"nodes":50}}})")});
    r.push_back({"well_balanced",
                 "Moment slopes of sampled shell data against the limit as the shell size grows.",
                 {"model", "params.lambdas", "params.sizes", "params.trials"},
                 {{"quantity", "beta"}, {"K", 2}, {"sampling", "explicit"}},
                 registry_json(R"({"experiment":"well_balanced","master_seed":1,
                    "model":{"model":"stretched_antitree","disorder":{"kind":"two_point","sigma":0.2}},
                    "params":{"lambdas":[0.5],"sizes":[100,300,1000],"trials":400,"K":1}})")});
    r.push_back({"finite_eigenfunctions",
                 "Compactly supported eigenfunctions between exceptional shells, checked against "
                 "a dense eigensolve.",
                 {"model"},
                 {{"dense_check", true}},
                 registry_json(R"({"experiment":"finite_eigenfunctions","master_seed":1,
                    "model":{"model":"custom","a":[-1,-1,-1,-1,-1],"shells":[
                      {"V":[[0.3]],"phi":[1],"upsilon":[1]},
                      {"V":[[1,0],[0,-1]],"phi":[0.7071067811865476,0.7071067811865476],
                       "upsilon":[0.7071067811865476,0.7071067811865476]},
                      {"V":[[0.16666666666666666]],"phi":[1],"upsilon":[1]},
                      {"V":[[1,0,0],[0,2,0],[0,0,-1]],"phi":[0.7071067811865476,0,0.7071067811865476],
                       "upsilon":[0.5773502691896258,0.5773502691896258,0.5773502691896258]},
                      {"V":[[-0.4]],"phi":[1],"upsilon":[1]}]},
                    "params":{"shells":[1,5],"expect_count":1}})")});
    return r;
}

// Allowed params per kind, with the kinds that need a built operator.
const std::map<std::string, std::set<std::string>>& param_keys()
{
    static const std::map<std::string, std::set<std::string>> k = {
        {"green_oracle", {"z_list", "c", "N", "tol", "export_dense"}},
        {"m_sweep", {"z_list", "N_list", "c_list", "methods", "check"}},
        {"weyl", {"z", "n_max", "expect_verdict"}},
        {"density_halfline", {"grid", "window", "point_masses", "check", "histogram"}},
        {"density_fullline", {"grid", "m_window", "n_window", "theta_nodes", "check"}},
        {"ac_criterion", {"interval", "p", "n_list", "nodes", "factor", "sampling", "expect_verdict"}},
        {"interval_S", {"grid", "tol", "expect_endpoints"}},
        {"interval_A", {"grid", "tol", "interior", "margin", "expect_endpoints"}},
        {"moment_bound", {"lambda", "n_max", "trials", "sampling", "ac"}},
        {"well_balanced", {"lambdas", "sizes", "trials", "K", "quantity", "sampling"}},
        {"finite_eigenfunctions", {"shells", "candidates", "dense_check", "expect_count"}},
    };
    return k;
}

std::string model_kind(const json& cfg)
{
    return cfg.at("model").value("model", "");
}

bool antitree_model(const json& cfg, const std::string& name, const std::string& kind)
{
    if (model_kind(cfg) != name)
        bad("/model/model", "experiment " + kind + " needs a " + name + " model");
    return true;
}

SampleMode sample_mode(const json& p, const StretchedAntitreeSpec& s, const std::string& where)
{
    const std::string m = p.value("sampling", "auto");
    if (m == "explicit")
        return SampleMode::explicit_draws;
    if (m == "counts") {
        if (!s.disorder.has_atoms())
            bad(where, "counts sampling needs an atomic disorder");
        return SampleMode::counts;
    }
    if (m == "auto")
        return s.disorder.has_atoms() ? SampleMode::counts : SampleMode::explicit_draws;
    bad(where, "expected explicit, counts or auto");
}

// Validates params of one kind by parsing everything it will read.
void check_params(const std::string& kind, const json& cfg)
{
    const json& p = cfg.at("params");
    const std::string w = "/params";
    auto has = [&](const char* k) { return p.contains(k); };
    auto need = [&](const char* k) -> const json& { return field(p, k, w); };
    const bool op_kind = kind == "green_oracle" || kind == "m_sweep" || kind == "weyl" ||
                         kind == "density_halfline" || kind == "density_fullline" ||
                         kind == "finite_eigenfunctions" ||
                         (kind == "ac_criterion" && p.value("sampling", "operator") == "operator");
    std::optional<OneChannelOperator> op;
    if (op_kind)
        op = build_operator(cfg.at("model"), model_seed(cfg));
    auto check_n = [&](long n, const std::string& where) {
        if (op && !op->has(n))
            bad(where, "shell " + std::to_string(n) + " outside the model");
    };
    if (kind == "green_oracle") {
        for (cplx z : as_cplxs(need("z_list"), w + "/z_list"))
            if (!(z.imag() > 0))
                bad(w + "/z_list", "energies must have positive imaginary part");
        as_double(need("c"), w + "/c");
        as_double(need("tol"), w + "/tol");
        if (has("N"))
            check_n(as_positive(p.at("N"), w + "/N"), w + "/N");
        if (op->geometry() != Geometry::half)
            bad("/model/geometry", "green_oracle needs a half-line model");
    } else if (kind == "m_sweep") {
        as_cplxs(need("z_list"), w + "/z_list");
        for (long N : as_longs(need("N_list"), w + "/N_list"))
            check_n(N, w + "/N_list");
        as_cplxs(need("c_list"), w + "/c_list");
        for (const auto& m : need("methods"))
            if (m != "transfer" && m != "dense")
                bad(w + "/methods", "expected transfer or dense");
        if (has("check")) {
            as_cplx(field(p.at("check"), "reference", w + "/check"), w + "/check/reference");
            as_double(field(p.at("check"), "tol", w + "/check"), w + "/check/tol");
        }
    } else if (kind == "weyl") {
        if (!(as_cplx(need("z"), w + "/z").imag() != 0))
            bad(w + "/z", "needs nonzero imaginary part");
        if (has("n_max"))
            check_n(as_positive(p.at("n_max"), w + "/n_max"), w + "/n_max");
    } else if (kind == "density_halfline" || kind == "density_fullline") {
        parse_grid(need("grid"), w + "/grid");
        if (kind == "density_halfline") {
            const auto win = as_window(need("window"), w + "/window");
            if (win.second > 0)
                check_n(win.second, w + "/window");
            if (has("histogram"))
                check_n(as_positive(field(p.at("histogram"), "N", w + "/histogram"), w + "/histogram/N"),
                        w + "/histogram/N");
        } else {
            if (op->geometry() != Geometry::full)
                bad("/model/geometry", "density_fullline needs a full-line model");
            const auto mw = as_window(need("m_window"), w + "/m_window");
            const auto nw = as_window(need("n_window"), w + "/n_window");
            check_n(-mw.second, w + "/m_window");
            check_n(nw.second, w + "/n_window");
            as_positive(need("theta_nodes"), w + "/theta_nodes");
        }
        if (has("check")) {
            const json& c = p.at("check");
            as_interval(field(c, "interval", w + "/check"), w + "/check/interval");
            as_double(field(c, "expected", w + "/check"), w + "/check/expected");
            as_double(field(c, "rel_tol", w + "/check"), w + "/check/rel_tol");
        }
    } else if (kind == "ac_criterion") {
        as_interval(need("interval"), w + "/interval");
        if (!(as_double(need("p"), w + "/p") > 2))
            bad(w + "/p", "must exceed 2");
        as_positive(need("nodes"), w + "/nodes");
        as_double(need("factor"), w + "/factor");
        const auto ns = as_longs(need("n_list"), w + "/n_list");
        const std::string s = p.at("sampling");
        if (s == "operator") {
            for (long n : ns)
                check_n(n, w + "/n_list");
        } else if (s == "counts") {
            antitree_model(cfg, "stretched_antitree", kind);
            const auto spec = parse_stretched(cfg.at("model"), "/model");
            if (!spec.s)
                bad("/model/s", "required field missing");
            if (!spec.disorder.has_atoms())
                bad(w + "/sampling", "counts sampling needs an atomic disorder");
        } else {
            bad(w + "/sampling", "expected operator or counts");
        }
    } else if (kind == "interval_S" || kind == "interval_A") {
        parse_grid(need("grid"), w + "/grid");
        as_double(need("tol"), w + "/tol");
        if (kind == "interval_S") {
            antitree_model(cfg, "stretched_antitree", kind);
            parse_stretched(cfg.at("model"), "/model");
        } else {
            antitree_model(cfg, "partial_antitree", kind);
            parse_partial(cfg.at("model"), "/model");
            as_long(need("interior"), w + "/interior");
            as_double(need("margin"), w + "/margin");
        }
        if (has("expect_endpoints"))
            as_doubles(p.at("expect_endpoints"), w + "/expect_endpoints");
    } else if (kind == "moment_bound") {
        as_double(need("lambda"), w + "/lambda");
        as_positive(need("n_max"), w + "/n_max");
        if (as_positive(need("trials"), w + "/trials") < 2)
            bad(w + "/trials", "needs at least two trials");
        const std::string mk = model_kind(cfg);
        if (mk == "stretched_antitree") {
            const auto s = parse_stretched(cfg.at("model"), "/model");
            if (!s.s)
                bad("/model/s", "required field missing");
            sample_mode(p, s, w + "/sampling");
        } else if (mk == "partial_antitree") {
            parse_partial(cfg.at("model"), "/model").validate(as_long(p.at("n_max"), w));
        } else {
            bad("/model/model", "moment_bound needs an antitree model");
        }
        if (has("ac")) {
            const json& a = p.at("ac");
            as_interval(field(a, "interval", w + "/ac"), w + "/ac/interval");
            const auto ns = as_longs(field(a, "n_list", w + "/ac"), w + "/ac/n_list");
            for (long n : ns)
                if (n > p.at("n_max").get<long>())
                    bad(w + "/ac/n_list", "entries must not exceed n_max");
            if (mk != "stretched_antitree")
                bad(w + "/ac", "the integral check runs on stretched antitrees");
        }
    } else if (kind == "well_balanced") {
        as_doubles(need("lambdas"), w + "/lambdas");
        const auto sizes = as_longs(need("sizes"), w + "/sizes");
        if (sizes.size() < 2)
            bad(w + "/sizes", "needs at least two sizes");
        if (as_positive(need("trials"), w + "/trials") < 2)
            bad(w + "/trials", "needs at least two trials");
        const long K = as_positive(need("K"), w + "/K");
        if (K > 4)
            bad(w + "/K", "must be at most 4");
        const std::string q = need("quantity");
        if (q != "alpha" && q != "beta" && q != "delta" && q != "trace")
            bad(w + "/quantity", "expected alpha, beta, delta or trace");
        const std::string mk = model_kind(cfg);
        if (mk == "stretched_antitree")
            sample_mode(p, parse_stretched(cfg.at("model"), "/model"), w + "/sampling");
        else if (mk == "partial_antitree")
            parse_partial(cfg.at("model"), "/model");
        else
            bad("/model/model", "well_balanced needs an antitree model");
    } else if (kind == "finite_eigenfunctions") {
        if (has("shells")) {
            const auto s = as_window(p.at("shells"), w + "/shells");
            check_n(s.first, w + "/shells");
            check_n(s.second, w + "/shells");
        }
        if (has("candidates"))
            as_doubles(p.at("candidates"), w + "/candidates");
        if (has("expect_count"))
            as_long(p.at("expect_count"), w + "/expect_count");
    }
}

}  // namespace

const std::vector<ExperimentKind>& experiment_registry()
{
    static const std::vector<ExperimentKind> r = make_registry();
    return r;
}

const ExperimentKind& experiment_kind(const std::string& name)
{
    for (const auto& k : experiment_registry())
        if (k.name == name)
            return k;
    bad("/experiment", "unknown experiment kind \"" + name + "\"");
}

json normalize_config(const json& cfg, const fs::path& base_dir)
{
    if (!cfg.is_object())
        bad("", "config must be a JSON object");
    for (const auto& [k, v] : cfg.items())
        if (k != "experiment" && k != "master_seed" && k != "model" && k != "model_file" && k != "params")
            bad("/" + k, "unknown field");
    const json& e = field(cfg, "experiment", "");
    if (!e.is_string())
        bad("/experiment", "expected a string");
    const ExperimentKind& kind = experiment_kind(e.get<std::string>());
    json out;
    out["experiment"] = kind.name;
    const json& seed = field(cfg, "master_seed", "");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0))
        bad("/master_seed", "expected a nonnegative integer");
    out["master_seed"] = seed.get<std::uint64_t>();
    if (cfg.contains("model") == cfg.contains("model_file"))
        bad("/model", "give exactly one of model and model_file");
    if (cfg.contains("model")) {
        out["model"] = cfg.at("model");
    } else {
        const json& mf = cfg.at("model_file");
        if (!mf.is_string())
            bad("/model_file", "expected a path");
        const fs::path path = base_dir / mf.get<std::string>();
        std::ifstream f(path);
        if (!f)
            bad("/model_file", "cannot open " + path.string());
        try {
            out["model"] = json::parse(f);
        } catch (const json::parse_error& err) {
            bad("/model_file", std::string("invalid JSON: ") + err.what());
        }
    }
    if (!out["model"].is_object())
        bad("/model", "expected an object");
    json params = kind.defaults;
    if (cfg.contains("params")) {
        if (!cfg.at("params").is_object())
            bad("/params", "expected an object");
        const auto& allowed = param_keys().at(kind.name);
        for (const auto& [k, v] : cfg.at("params").items()) {
            if (!allowed.count(k))
                bad("/params/" + k, "unknown parameter for " + kind.name);
            params[k] = v;
        }
    }
    out["params"] = params;
    check_params(kind.name, out);
    return out;
}

namespace {

struct Context {
    const json& cfg;
    const json& p;
    const RunOptions& o;
    Writer& w;
    RunResult& r;
    json& summary;
};

void log(const Context& c, const std::string& msg)
{
    if (c.o.verbose)
        std::cerr << msg << "\n";
}

void fail_check(Context& c, const std::string& msg)
{
    c.r.exit_code = 4;
    c.r.message += (c.r.message.empty() ? "" : "; ") + msg;
}

void run_green_oracle(Context& c, const OneChannelOperator& op)
{
    const auto zs = as_cplxs(c.p.at("z_list"), "");
    const double cc = c.p.at("c");
    const long N = c.p.contains("N") ? c.p.at("N").get<long>() : op.last();
    const double tol = c.p.at("tol");
    // traces of T_{z,0,n}
    Csv tr({"re_z", "im_z", "n", "t11_re", "t11_im", "t12_re", "t12_im", "t21_re", "t21_im", "t22_re",
            "t22_im", "log_scale", "det_re", "det_im"});
    for (cplx z : zs) {
        TransferMatrix P;
        for (long n = 1; n <= N; ++n) {
            P = compose(transfer_matrix(op.shell(n), z), P);
            const Mat2& E = P.entries;
            const cplx d = E.determinant();
            tr.row(z.real(), z.imag(), n, E(0, 0).real(), E(0, 0).imag(), E(0, 1).real(), E(0, 1).imag(),
                   E(1, 0).real(), E(1, 0).imag(), E(1, 1).real(), E(1, 1).imag(), P.log_scale, d.real(),
                   d.imag());
        }
    }
    c.w.csv("transfer_traces", tr.str(), {{"shells", N}});
    std::vector<double> err(zs.size() * static_cast<size_t>(N * N));
    parallel_for(static_cast<long>(zs.size()) * N, c.o.threads, [&](long cell) {
        const cplx z = zs[static_cast<size_t>(cell / N)];
        const long m = cell % N + 1;
        for (long n = 1; n <= N; ++n) {
            const CMat a = resolvent_block(op, N, cc, z, m, n);
            const CMat b = resolvent_block_dense(op, N, cc, z, m, n);
            const double nb = b.norm();
            err[static_cast<size_t>(cell * N + n - 1)] = (a - b).norm() / (nb > 1e-300 ? nb : 1.0);
        }
    });
    Csv g({"re_z", "im_z", "m", "n", "rel_error"});
    double worst = 0;
    for (size_t zi = 0; zi < zs.size(); ++zi)
        for (long m = 1; m <= N; ++m)
            for (long n = 1; n <= N; ++n) {
                const double e = err[zi * static_cast<size_t>(N * N) + static_cast<size_t>((m - 1) * N + n - 1)];
                worst = std::max(worst, e);
                g.row(zs[zi].real(), zs[zi].imag(), m, n, e);
            }
    const bool pass = worst <= tol;
    c.summary["max_rel_error"] = worst;
    c.summary["tol"] = tol;
    c.summary["pass"] = pass;
    c.w.csv("green_oracle", g.str(), {{"max_rel_error", worst}, {"tol", tol}, {"pass", pass}});
    if (c.p.at("export_dense").get<bool>()) {
        const DenseTruncation t = assemble_dense(op, N, cc);
        std::ostringstream s;
        for (Eigen::Index i = 0; i < t.dim(); ++i) {
            for (Eigen::Index j = 0; j < t.dim(); ++j)
                s << (j ? "," : "") << num(t.H(i, j).real()) << "," << num(t.H(i, j).imag());
            s << "\n";
        }
        c.w.csv("dense", s.str(), {{"dim", t.dim()}});
    }
    if (!pass)
        fail_check(c, "green oracle error " + num(worst) + " above " + num(tol));
}

void run_m_sweep(Context& c, const OneChannelOperator& op)
{
    const auto zs = as_cplxs(c.p.at("z_list"), "");
    const auto Ns = as_longs(c.p.at("N_list"), "");
    const auto cs = as_cplxs(c.p.at("c_list"), "");
    std::vector<MMethod> ms;
    for (const auto& m : c.p.at("methods"))
        ms.push_back(m == "dense" ? MMethod::dense : MMethod::transfer);
    const long cells = static_cast<long>(zs.size() * Ns.size() * cs.size() * ms.size());
    std::vector<MFunctionSample> out(static_cast<size_t>(cells));
    parallel_for(cells, c.o.threads, [&](long i) {
        size_t k = static_cast<size_t>(i);
        const size_t mi = k % ms.size();
        k /= ms.size();
        const size_t ci = k % cs.size();
        k /= cs.size();
        const size_t ni = k % Ns.size();
        const size_t zi = k / Ns.size();
        out[static_cast<size_t>(i)] = m_function(op, Ns[ni], cs[ci], zs[zi], ms[mi]);
    });
    Csv csv({"re_z", "im_z", "N", "c_re", "c_im", "m_re", "m_im", "method"});
    for (const auto& s : out)
        csv.row(s.z.real(), s.z.imag(), s.N, s.c.real(), s.c.imag(), s.value.real(), s.value.imag(),
                to_string(s.method));
    json sm = {{"cells", cells}};
    if (c.p.contains("check")) {
        const cplx ref = as_cplx(c.p.at("check").at("reference"), "");
        const double tol = c.p.at("check").at("tol");
        const long Nmax = *std::max_element(Ns.begin(), Ns.end());
        double worst = 0;
        for (const auto& s : out)
            if (s.N == Nmax && s.method == MMethod::transfer)
                worst = std::max(worst, std::abs(s.value - ref));
        sm["check_error"] = worst;
        sm["pass"] = worst <= tol;
        if (worst > tol)
            fail_check(c, "m-function off the reference by " + num(worst));
    }
    c.summary.update(sm);
    c.w.csv("m_sweep", csv.str(), sm);
}

void run_weyl(Context& c, const OneChannelOperator& op)
{
    const cplx z = as_cplx(c.p.at("z"), "");
    const long n_max = c.p.contains("n_max") ? c.p.at("n_max").get<long>() : op.last();
    const LimitPointDiagnostic d = limit_point_diagnostic(op, z, n_max);
    Csv csv({"n", "radius", "center_re", "center_im"});
    for (const auto& w : d.circles)
        csv.row(w.n, w.radius, w.center.real(), w.center.imag());
    json sm = {{"verdict", d.verdict}, {"final_radius", d.circles.empty() ? 0.0 : d.circles.back().radius}};
    if (c.p.contains("expect_verdict")) {
        sm["pass"] = d.verdict == c.p.at("expect_verdict");
        if (!sm["pass"].get<bool>())
            fail_check(c, "verdict " + d.verdict);
    }
    c.summary.update(sm);
    c.w.csv("weyl", csv.str(), sm);
}

void write_estimate(Context& c, const SpectralEstimate& e, const std::string& name, json sm)
{
    Csv d({"lambda", "density", "is_masked", "window_lo", "window_hi"});
    for (size_t i = 0; i < e.grid.size(); ++i)
        d.row(e.grid[i], e.density[i], bool(e.masked[i]), e.window_lo, e.window_hi);
    Csv pm({"lambda", "weight", "shell_l", "shell_m", "case_tag"});
    for (const auto& m : e.point_masses)
        pm.row(m.lambda, m.weight, m.shell_l, m.shell_m, m.case_tag);
    if (c.p.contains("check")) {
        const auto iv = as_interval(c.p.at("check").at("interval"), "");
        const double want = c.p.at("check").at("expected"), tol = c.p.at("check").at("rel_tol");
        const double got = interval_mass(e, iv.first, iv.second);
        const bool pass = std::abs(got - want) <= tol * std::abs(want);
        sm["interval_mass"] = got;
        sm["expected"] = want;
        sm["pass"] = pass;
        if (!pass)
            fail_check(c, "interval mass " + num(got) + " vs " + num(want));
    }
    sm["total_mass"] = interval_mass(e, -std::numeric_limits<double>::infinity(),
                                     std::numeric_limits<double>::infinity());
    sm["point_masses"] = e.point_masses.size();
    c.summary.update(sm);
    c.w.csv(name, d.str(), sm);
    c.w.csv(name + "_point_masses", pm.str(), sm);
}

void run_density_halfline(Context& c, const OneChannelOperator& op)
{
    HalflineOptions ho;
    const auto win = as_window(c.p.at("window"), "");
    ho.n_lo = win.first;
    ho.n_hi = win.second > 0 ? win.second : op.last();
    ho.point_masses = c.p.at("point_masses");
    ho.threads = c.o.threads;
    const SpectralEstimate e = halfline_density(op, parse_grid(c.p.at("grid"), ""), ho);
    write_estimate(c, e, "density", {{"provenance", e.provenance}});
    if (c.p.contains("histogram")) {
        const long N = c.p.at("histogram").at("N");
        const double cc = c.p.at("histogram").value("c", 0.0);
        const DenseTruncation t = assemble_dense(op, N, cc);
        const SpectralEstimate h = eigen_histogram(t, {shell_vector(t, 1, op.shell(1).upsilon())});
        Csv pm({"lambda", "weight", "shell_l", "shell_m", "case_tag"});
        for (const auto& m : h.point_masses)
            pm.row(m.lambda, m.weight, m.shell_l, m.shell_m, m.case_tag);
        c.w.csv("histogram", pm.str(), {{"N", N}});
    }
}

void run_density_fullline(Context& c, const OneChannelOperator& op)
{
    FulllineOptions fo;
    const auto mw = as_window(c.p.at("m_window"), ""), nw = as_window(c.p.at("n_window"), "");
    fo.m_lo = mw.first;
    fo.m_hi = mw.second;
    fo.n_lo = nw.first;
    fo.n_hi = nw.second;
    fo.theta_nodes = c.p.at("theta_nodes");
    fo.threads = c.o.threads;
    const SpectralEstimate e = fullline_density(op, parse_grid(c.p.at("grid"), ""), fo);
    write_estimate(c, e, "density", {{"provenance", e.provenance}});
}

ShellTransfer counts_realization(const StretchedAntitreeSpec& s, long n_max, std::uint64_t seed)
{
    auto counts = std::make_shared<std::vector<StretchedCounts>>();
    for (long n = 1; n <= n_max; ++n) {
        CounterRng rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
        counts->push_back(draw_stretched_counts(s.disorder, s.s(n), rng));
    }
    return [counts](long n, double lambda) {
        TransferMatrix t;
        t.entries = stretched_sample(counts->at(static_cast<size_t>(n - 1)), lambda).T.cast<cplx>();
        t.z = lambda;
        t.from = n - 1;
        t.to = n;
        return t;
    };
}

json write_ac(Context& c, const AcCriterion& a, const std::string& name)
{
    Csv csv({"n", "integral", "log_integral"});
    for (size_t i = 0; i < a.n_list.size(); ++i)
        csv.row(a.n_list[i], a.integrals[i], a.log_integrals[i]);
    json sm = {{"verdict", a.verdict}, {"liminf_proxy", a.liminf_proxy}, {"masked_nodes", a.masked}};
    c.w.csv(name, csv.str(), sm);
    return sm;
}

void run_ac(Context& c, const std::optional<OneChannelOperator>& op)
{
    const auto iv = as_interval(c.p.at("interval"), "");
    const auto ns = as_longs(c.p.at("n_list"), "");
    const double pw = c.p.at("p"), factor = c.p.at("factor");
    const int nodes = c.p.at("nodes");
    AcCriterion a;
    if (op) {
        a = ac_criterion(*op, pw, iv.first, iv.second, ns, nodes, factor);
    } else {
        const auto s = parse_stretched(c.cfg.at("model"), "/model");
        const long n_max = *std::max_element(ns.begin(), ns.end());
        a = ac_criterion(counts_realization(s, n_max, model_seed(c.cfg)), pw, iv.first, iv.second, ns,
                         nodes, factor);
    }
    json sm = write_ac(c, a, "ac");
    if (c.p.contains("expect_verdict")) {
        sm["pass"] = a.verdict == c.p.at("expect_verdict");
        if (!sm["pass"].get<bool>())
            fail_check(c, "ac verdict " + a.verdict);
    }
    c.summary.update(sm);
}

void run_interval(Context& c, bool stretched)
{
    const auto grid = parse_grid(c.p.at("grid"), "");
    IntervalSet I;
    std::function<double(double)> trace;
    if (stretched) {
        const auto s = parse_stretched(c.cfg.at("model"), "/model");
        I = interval_S(s.disorder, grid);
        trace = [nu = s.disorder](double l) { return limit_transfer_stretched(nu, l).trace; };
    } else {
        const auto pa = parse_partial(c.cfg.at("model"), "/model");
        I0Options io;
        io.interior = c.p.at("interior");
        io.margin = c.p.at("margin");
        io.seed = model_seed(c.cfg);
        I = interval_A(pa, grid, io);
        trace = [pa, io](double l) { return limit_transfer_partial(pa, l, io).trace; };
    }
    Csv m({"lambda", "in_set", "trace"});
    for (size_t i = 0; i < grid.size(); ++i) {
        double t = std::numeric_limits<double>::quiet_NaN();
        try {
            t = trace(grid[i]);
        } catch (const NumericalError&) {
        }
        m.row(grid[i], bool(I.mask[i]), t);
    }
    Csv iv({"kind", "lo", "hi"});
    json ends = json::array();
    for (const auto& [a, b] : I.intervals) {
        iv.row("interval", a, b);
        ends.push_back(a);
        ends.push_back(b);
    }
    for (double x : I.excluded_points)
        iv.row("excluded_point", x, x);
    json sm = {{"intervals", I.intervals.size()}, {"endpoints", ends}};
    if (c.p.contains("expect_endpoints")) {
        const auto want = as_doubles(c.p.at("expect_endpoints"), "");
        const double tol = c.p.at("tol");
        bool pass = want.size() == ends.size();
        double worst = 0;
        for (size_t i = 0; pass && i < want.size(); ++i)
            worst = std::max(worst, std::abs(ends[i].get<double>() - want[i]));
        pass = pass && worst <= tol;
        sm["max_endpoint_error"] = worst;
        sm["pass"] = pass;
        if (!pass)
            fail_check(c, "interval endpoints differ from the expected set");
    }
    c.summary.update(sm);
    c.w.csv("interval_mask", m.str(), sm);
    c.w.csv("intervals", iv.str(), sm);
}

void run_moment_bound(Context& c)
{
    const double lambda = c.p.at("lambda");
    const long n_max = c.p.at("n_max"), trials = c.p.at("trials");
    const std::uint64_t seed = run_seed(c.cfg);
    MomentBoundReport rep;
    std::optional<StretchedAntitreeSpec> st;
    if (model_kind(c.cfg) == "stretched_antitree") {
        st = parse_stretched(c.cfg.at("model"), "/model");
        const SampleMode mode = sample_mode(c.p, *st, "");
        const LimitTransfer L = limit_transfer_stretched(st->disorder, lambda);
        auto noise = [&](long n, CounterRng& rng) {
            return (sample_shell_stretched(*st, n, lambda, rng, mode).T - L.T).eval();
        };
        rep = moment_bound_check(L.T, noise,
                                 std::string("stretched antitree shells, ") +
                                     (mode == SampleMode::counts ? "pair counts" : "explicit pairs"),
                                 n_max, trials, seed, c.o.threads);
    } else {
        const auto pa = parse_partial(c.cfg.at("model"), "/model");
        const LimitTransfer L = limit_transfer_partial(pa, lambda);
        auto noise = [&](long n, CounterRng& rng) {
            return (sample_shell_partial(pa, n, lambda, rng).T - L.T).eval();
        };
        rep = moment_bound_check(L.T, noise, "partial antitree shells", n_max, trials, seed, c.o.threads);
    }
    Csv csv({"n", "estimate", "stderr", "bound"});
    for (size_t i = 0; i < rep.n_eval.size(); ++i)
        csv.row(rep.n_eval[i], rep.estimates[i], rep.stderrs[i], rep.bound);
    json sm = {{"bound", rep.bound}, {"max_estimate", rep.max_estimate}, {"pass", rep.pass},
               {"C", rep.C}, {"f", rep.f}, {"noise", rep.noise}};
    c.w.csv("moment_bound", csv.str(), sm);
    if (!rep.pass)
        fail_check(c, "moment estimate reached the bound");
    if (c.p.contains("ac")) {
        const json& a = c.p.at("ac");
        const auto iv = as_interval(a.at("interval"), "");
        const auto ns = as_longs(a.at("n_list"), "");
        const long top = *std::max_element(ns.begin(), ns.end());
        const ShellTransfer t = st->disorder.has_atoms()
                                    ? counts_realization(*st, top, model_seed(c.cfg))
                                    : ShellTransfer([&](long n, double l) {
                                          CounterRng rng(derive_seed(model_seed(c.cfg), {static_cast<std::uint64_t>(n)}));
                                          TransferMatrix m;
                                          m.entries = stretched_sample(draw_stretched(st->disorder, st->s(n), rng), l)
                                                          .T.cast<cplx>();
                                          return m;
                                      });
        const AcCriterion ac = ac_criterion(t, a.value("p", 4.0), iv.first, iv.second, ns, a.value("nodes", 200),
                                            a.value("factor", 2.0));
        write_ac(c, ac, "ac");
        sm["ac_verdict"] = ac.verdict;
        if (ac.verdict != "bounded-like") {
            sm["pass"] = false;
            fail_check(c, "ac integrals " + ac.verdict);
        }
    }
    c.summary.update(sm);
}

void run_well_balanced(Context& c)
{
    const auto lambdas = as_doubles(c.p.at("lambdas"), "");
    const auto sizes = as_longs(c.p.at("sizes"), "");
    const long trials = c.p.at("trials");
    const int K = c.p.at("K");
    const std::string q = c.p.at("quantity");
    auto pick = [&q](double a, double b, double d, const Eigen::Matrix2d& T) {
        return q == "alpha" ? a : q == "beta" ? b : q == "delta" ? d : T.trace();
    };
    Csv mom({"lambda", "size", "k", "moment", "stderr"});
    Csv sl({"lambda", "k", "slope", "target"});
    json per = json::array();
    bool pass = true;
    for (size_t li = 0; li < lambdas.size(); ++li) {
        const double l = lambdas[li];
        std::function<double(long, CounterRng&)> sampler;
        double X = 0;
        if (model_kind(c.cfg) == "stretched_antitree") {
            StretchedAntitreeSpec s = parse_stretched(c.cfg.at("model"), "/model");
            const SampleMode mode = sample_mode(c.p, s, "");
            const LimitTransfer L = limit_transfer_stretched(s.disorder, l);
            X = pick(L.alpha, L.beta, L.delta, L.T);
            sampler = [s, mode, l, pick](long size, CounterRng& rng) {
                const ShellSample x = mode == SampleMode::counts
                                          ? stretched_sample(draw_stretched_counts(s.disorder, size, rng), l)
                                          : stretched_sample(draw_stretched(s.disorder, size, rng), l);
                return pick(x.alpha, x.beta, x.delta, x.T);
            };
        } else {
            PartialAntitreeSpec pa = parse_partial(c.cfg.at("model"), "/model");
            const LimitTransfer L = limit_transfer_partial(pa, l);
            X = pick(L.alpha, L.beta, L.delta, L.T);
            sampler = [pa, l, pick](long size, CounterRng& rng) mutable {
                PartialAntitreeSpec q2 = pa;
                const long k1 = pa.k1, k2 = pa.k2, k3 = pa.k3;
                q2.r = [=](long m) { return size * (m % 3 == 1 ? k1 : m % 3 == 2 ? k2 : k3); };
                const ShellSample x = sample_shell_partial(q2, 1, l, rng);
                return pick(x.alpha, x.beta, x.delta, x.T);
            };
        }
        const WellBalancedReport rep = well_balanced_check(
            sampler, X, sizes, K, trials, derive_seed(run_seed(c.cfg), {li}), c.o.threads);
        for (size_t i = 0; i < sizes.size(); ++i) {
            mom.row(l, sizes[i], 0, rep.mean_dev[i], rep.mean_dev_err[i]);
            for (int k = 1; k <= 2 * K; ++k)
                mom.row(l, sizes[i], k, rep.moments[static_cast<size_t>(k - 1)][i],
                        rep.stderrs[static_cast<size_t>(k - 1)][i]);
        }
        for (int k = 1; k <= 2 * K; ++k)
            sl.row(l, k, rep.slopes[static_cast<size_t>(k - 1)], -0.5 * k);
        sl.row(l, 0, rep.mean_slope, -1.0);
        per.push_back({{"lambda", l}, {"pass", rep.pass}, {"slopes", rep.slopes},
                       {"mean_statistically_zero", rep.mean_statistically_zero}});
        pass = pass && rep.pass;
    }
    json sm = {{"pass", pass}, {"energies", per}};
    c.w.csv("well_balanced", mom.str(), sm);
    c.w.csv("well_balanced_slopes", sl.str(), sm);
    if (!pass)
        fail_check(c, "moment slopes outside tolerance");
    c.summary.update(sm);
}

void run_finite_eigenfunctions(Context& c, const OneChannelOperator& op)
{
    long lo = op.first(), hi = op.last();
    if (c.p.contains("shells")) {
        const auto s = as_window(c.p.at("shells"), "");
        lo = s.first;
        hi = s.second;
    }
    std::optional<std::vector<double>> cand;
    if (c.p.contains("candidates"))
        cand = as_doubles(c.p.at("candidates"), "");
    const auto efs = finite_eigenfunctions(op, lo, hi, cand);
    std::optional<Eigen::VectorXd> ev;
    if (c.p.at("dense_check").get<bool>()) {
        const DenseTruncation t = op.geometry() == Geometry::half ? assemble_dense(op, op.last())
                                                                 : assemble_window(op, op.first(), op.last());
        ev = Eigen::SelfAdjointEigenSolver<CMat>(t.H, Eigen::EigenvaluesOnly).eigenvalues();
    }
    Csv csv({"lambda", "shell_l", "shell_m", "case_left", "case_right", "cross", "residual",
             "dense_multiplicity"});
    for (const auto& f : efs) {
        long mult = -1;
        if (ev)
            mult = (ev->array() - f.lambda).abs().cast<double>().unaryExpr([](double x) { return x < 1e-8 ? 1.0 : 0.0; }).sum();
        csv.row(f.lambda, f.l, f.m + 1, f.case_left, f.case_right, f.cross, f.residual, mult);
    }
    json sm = {{"count", efs.size()}};
    if (c.p.contains("expect_count")) {
        sm["pass"] = static_cast<long>(efs.size()) == c.p.at("expect_count").get<long>();
        if (!sm["pass"].get<bool>())
            fail_check(c, "found " + std::to_string(efs.size()) + " eigenfunctions");
    }
    c.summary.update(sm);
    c.w.csv("eigenfunctions", csv.str(), sm);
}

}  // namespace

RunResult run_experiment(const json& cfg, const RunOptions& o)
{
    RunResult r;
    const std::string kind = cfg.at("experiment");
    json summary = {{"experiment", kind}, {"master_seed", cfg.at("master_seed")}};
    Writer w(cfg, o, r);
    Context c{cfg, cfg.at("params"), o, w, r, summary};
    // Model construction is validated ahead of any output.
    std::optional<OneChannelOperator> op;
    const json& p = cfg.at("params");
    const bool op_kind = kind == "green_oracle" || kind == "m_sweep" || kind == "weyl" ||
                         kind == "density_halfline" || kind == "density_fullline" ||
                         kind == "finite_eigenfunctions" ||
                         (kind == "ac_criterion" && p.value("sampling", "operator") == "operator");
    if (op_kind)
        op = build_operator(cfg.at("model"), model_seed(cfg));
    log(c, "running " + kind);
    try {
        if (kind == "green_oracle")
            run_green_oracle(c, *op);
        else if (kind == "m_sweep")
            run_m_sweep(c, *op);
        else if (kind == "weyl")
            run_weyl(c, *op);
        else if (kind == "density_halfline")
            run_density_halfline(c, *op);
        else if (kind == "density_fullline")
            run_density_fullline(c, *op);
        else if (kind == "ac_criterion")
            run_ac(c, op);
        else if (kind == "interval_S")
            run_interval(c, true);
        else if (kind == "interval_A")
            run_interval(c, false);
        else if (kind == "moment_bound")
            run_moment_bound(c);
        else if (kind == "well_balanced")
            run_well_balanced(c);
        else if (kind == "finite_eigenfunctions")
            run_finite_eigenfunctions(c, *op);
    } catch (const NumericalError& e) {
        r.exit_code = 3;
        r.message = e.what();
        summary["error"] = r.message;
    }
    summary["exit_code"] = r.exit_code;
    if (!r.message.empty())
        summary["message"] = r.message;
    r.summary = summary;
    w.summary(summary);
    return r;
}

}  // namespace ocs
