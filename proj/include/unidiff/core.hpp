#pragma once

// Shared plumbing: deterministic RNG, thread gating, flat key=value config,
// run manifests, small helpers. Everything else in unidiff/ builds on this.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace unidiff {

inline constexpr const char* kVersion = "0.1.0";

// 64-byte aligned allocator. Every numeric buffer that SIMD reductions read
// must have a reproducible alignment, otherwise summation order (and thus the
// low bits) would depend on heap addresses.
template <typename T, std::size_t Align = 64>
struct AlignedAlloc {
    using value_type = T;
    AlignedAlloc() noexcept = default;
    template <typename U>
    AlignedAlloc(const AlignedAlloc<U, Align>&) noexcept {}
    template <typename U>
    struct rebind {
        using other = AlignedAlloc<U, Align>;
    };
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align}));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }
    template <typename U>
    bool operator==(const AlignedAlloc<U, Align>&) const noexcept {
        return true;
    }
};

template <typename T>
using AVec = std::vector<T, AlignedAlloc<T>>;

// ---- errors ----------------------------------------------------------------

// Usage / configuration problems. CLI maps these to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Runtime numeric failures (NaN in a forward pass, divergence). Exit code 2.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- rng -------------------------------------------------------------------

// mt19937_64 engine with a stateless Box-Muller gaussian on top. The engine is
// the only state, so serializing it captures the full RNG; resuming from a
// checkpoint replays the exact stream.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() {
        return (eng_() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) {
        // modulo bias is negligible for the small n used here, but reject anyway
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do { x = eng_(); } while (x >= limit);
        return x % n;
    }

    // standard normal; consumes exactly two uniforms, no cached state
    double gaussian() {
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // derive an independent child seed (used to hand substreams to workers)
    uint64_t fork_seed() { return eng_(); }

    std::string save() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }
    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (is.fail()) throw ConfigError("bad rng state string");
    }

private:
    std::mt19937_64 eng_;
};

// ---- threads ---------------------------------------------------------------

// UNIDIFF_THREADS gates intra-command parallelism (default 1). Work is always
// split at the sample level with a fixed-order reduction, so results for a
// given thread count are bit-identical across runs.
inline int thread_count() {
    if (const char* env = std::getenv("UNIDIFF_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// Runs fn(i) for i in [0, n). With W workers, worker w handles i ≡ w (mod W).
template <typename Fn>
inline void parallel_for(int n, const Fn& fn, int workers = -1) {
    if (workers <= 0) workers = thread_count();
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    std::exception_ptr first_error;
    std::mutex err_mu;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---- flat key=value config ---------------------------------------------------

// '#' starts a comment; blank lines ignored; values are raw strings.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        KvConfig c;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto strip = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r\n");
                if (a == std::string::npos) return std::string();
                const auto b = s.find_last_not_of(" \t\r\n");
                return s.substr(a, b - a + 1);
            };
            line = strip(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + line);
            c.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
        }
        return c;
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    const std::string& get(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    }
    std::string get_or(const std::string& key, const std::string& dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : it->second;
    }
    long get_int(const std::string& key) const { return parse_int(key, get(key)); }
    long get_int_or(const std::string& key, long dflt) const {
        return has(key) ? get_int(key) : dflt;
    }
    double get_real(const std::string& key) const { return parse_real(key, get(key)); }
    double get_real_or(const std::string& key, double dflt) const {
        return has(key) ? get_real(key) : dflt;
    }

    // deterministic (sorted) snapshot
    std::string dump() const {
        std::ostringstream os;
        for (const auto& [k, v] : kv_) os << k << "=" << v << "\n";
        return os.str();
    }
    const std::map<std::string, std::string>& items() const { return kv_; }

private:
    static long parse_int(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            const long x = std::stol(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (...) {
            throw ConfigError("config key '" + key + "' is not an integer: " + v);
        }
    }
    static double parse_real(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            const double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (...) {
            throw ConfigError("config key '" + key + "' is not a number: " + v);
        }
    }
    std::map<std::string, std::string> kv_;
};

// ---- run manifest ------------------------------------------------------------

// One manifest file per command, written under <out>/manifests/, never rewritten.
// The config snapshot inside is enough to replay the command byte-identically.
struct RunManifest {
    std::string command;
    std::string config_snapshot;  // key=value lines
    uint64_t seed = 0;
    std::string started_utc;
    std::string finished_utc;
    std::vector<std::string> outputs;
    std::vector<std::string> warnings;

    static std::string now_utc() {
        const std::time_t t = std::time(nullptr);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        return buf;
    }

    std::string write(const std::filesystem::path& out_root) const {
        namespace fs = std::filesystem;
        fs::create_directories(out_root / "manifests");
        // unique, append-only: pick the first free sequence number
        int n = 0;
        fs::path p;
        do {
            std::ostringstream name;
            name << "manifest_" << command << "_" << std::setw(4) << std::setfill('0') << n << ".txt";
            p = out_root / "manifests" / name.str();
            ++n;
        } while (fs::exists(p));
        std::ofstream f(p);
        if (!f) throw ConfigError("cannot write manifest: " + p.string());
        f << "command=" << command << "\n";
        f << "version=" << kVersion << "\n";
        f << "seed=" << seed << "\n";
        f << "started=" << started_utc << "\n";
        f << "finished=" << finished_utc << "\n";
        for (const auto& o : outputs) f << "output=" << o << "\n";
        for (const auto& w : warnings) f << "warning=" << w << "\n";
        f << "--- config ---\n" << config_snapshot;
        return p.string();
    }
};

// ---- misc ------------------------------------------------------------------

inline bool almost_equal(double a, double b, double rel, double abs_floor = 0.0) {
    const double diff = std::abs(a - b);
    if (diff <= abs_floor) return true;
    return diff <= rel * std::max(std::abs(a), std::abs(b));
}

}  // namespace unidiff
