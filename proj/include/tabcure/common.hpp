#pragma once

// Shared low-level utilities: deterministic RNG, 128-bit content hashing,
// a static-partition parallel_for, and a few numeric helpers. Everything
// here is platform-independent given IEEE-754 doubles; no std::random
// distributions are used because their output is not pinned by the standard.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tabcure {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from a master seed and a stream index.
// Used everywhere a batch of work items needs per-item determinism that is
// independent of evaluation order (tasks, folds, trials, epochs).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t s = seed ^ (0xA0761D6478BD642FULL + stream * 0xE7037ED1A0B428DBULL);
    return splitmix64(s);
}

// xoshiro256++ with explicit uniform/normal generation.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    static Rng stream(uint64_t seed, uint64_t index) { return Rng(mix_seed(seed, index)); }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double log_uniform(double lo, double hi) {
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    // Unbiased integer in [0, n) via rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) throw Error("Rng::below: n must be positive");
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Inclusive integer range.
    int64_t range(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Standard normal, Marsaglia polar method (no libm trig).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    // k distinct indices from [0, n), ascending order.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
        if (k > n) throw Error("sample_without_replacement: k > n");
        std::vector<size_t> idx(n);
        std::iota(idx.begin(), idx.end(), size_t{0});
        for (size_t i = 0; i < k; ++i) {
            std::swap(idx[i], idx[i + below(n - i)]);
        }
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        return idx;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// 128-bit digest (MurmurHash3 x64/128, incremental)
// ---------------------------------------------------------------------------

struct Digest128 {
    uint64_t hi = 0;
    uint64_t lo = 0;

    bool operator==(const Digest128&) const = default;
    bool operator<(const Digest128& o) const { return hi != o.hi ? hi < o.hi : lo < o.lo; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(32, '0');
        for (int i = 0; i < 16; ++i) out[15 - i] = digits[(hi >> (4 * i)) & 0xF];
        for (int i = 0; i < 16; ++i) out[31 - i] = digits[(lo >> (4 * i)) & 0xF];
        return out;
    }

    std::string hex8() const { return hex().substr(0, 8); }
};

class Hasher {
public:
    explicit Hasher(uint64_t seed = 0) : h1_(seed), h2_(seed) {}

    Hasher& update(const void* data, size_t len) {
        const auto* p = static_cast<const uint8_t*>(data);
        total_ += len;
        if (tail_len_ > 0) {
            const size_t need = 16 - tail_len_;
            const size_t take = std::min(need, len);
            std::memcpy(tail_.data() + tail_len_, p, take);
            tail_len_ += take;
            p += take;
            len -= take;
            if (tail_len_ == 16) {
                process_block(tail_.data());
                tail_len_ = 0;
            }
        }
        while (len >= 16) {
            process_block(p);
            p += 16;
            len -= 16;
        }
        if (len > 0) {
            std::memcpy(tail_.data(), p, len);
            tail_len_ = len;
        }
        return *this;
    }

    template <typename T>
    Hasher& update_value(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        return update(&v, sizeof(T));
    }

    Hasher& update_string(const std::string& s) {
        update_value<uint64_t>(s.size());
        return update(s.data(), s.size());
    }

    Digest128 digest() const {
        uint64_t h1 = h1_, h2 = h2_;
        uint64_t k1 = 0, k2 = 0;
        const uint8_t* t = tail_.data();
        switch (tail_len_) {
            case 15: k2 ^= uint64_t(t[14]) << 48; [[fallthrough]];
            case 14: k2 ^= uint64_t(t[13]) << 40; [[fallthrough]];
            case 13: k2 ^= uint64_t(t[12]) << 32; [[fallthrough]];
            case 12: k2 ^= uint64_t(t[11]) << 24; [[fallthrough]];
            case 11: k2 ^= uint64_t(t[10]) << 16; [[fallthrough]];
            case 10: k2 ^= uint64_t(t[9]) << 8; [[fallthrough]];
            case 9:
                k2 ^= uint64_t(t[8]);
                k2 *= kC2; k2 = rotl(k2, 33); k2 *= kC1; h2 ^= k2;
                [[fallthrough]];
            case 8: k1 ^= uint64_t(t[7]) << 56; [[fallthrough]];
            case 7: k1 ^= uint64_t(t[6]) << 48; [[fallthrough]];
            case 6: k1 ^= uint64_t(t[5]) << 40; [[fallthrough]];
            case 5: k1 ^= uint64_t(t[4]) << 32; [[fallthrough]];
            case 4: k1 ^= uint64_t(t[3]) << 24; [[fallthrough]];
            case 3: k1 ^= uint64_t(t[2]) << 16; [[fallthrough]];
            case 2: k1 ^= uint64_t(t[1]) << 8; [[fallthrough]];
            case 1:
                k1 ^= uint64_t(t[0]);
                k1 *= kC1; k1 = rotl(k1, 31); k1 *= kC2; h1 ^= k1;
                break;
            default: break;
        }
        h1 ^= total_;
        h2 ^= total_;
        h1 += h2;
        h2 += h1;
        h1 = fmix(h1);
        h2 = fmix(h2);
        h1 += h2;
        h2 += h1;
        return Digest128{h1, h2};
    }

private:
    static constexpr uint64_t kC1 = 0x87C37B91114253D5ULL;
    static constexpr uint64_t kC2 = 0x4CF5AD432745937FULL;

    static uint64_t rotl(uint64_t x, int r) { return (x << r) | (x >> (64 - r)); }

    static uint64_t fmix(uint64_t k) {
        k ^= k >> 33;
        k *= 0xFF51AFD7ED558CCDULL;
        k ^= k >> 33;
        k *= 0xC4CEB9FE1A85EC53ULL;
        k ^= k >> 33;
        return k;
    }

    void process_block(const uint8_t* p) {
        uint64_t k1, k2;
        std::memcpy(&k1, p, 8);
        std::memcpy(&k2, p + 8, 8);
        k1 *= kC1; k1 = rotl(k1, 31); k1 *= kC2;
        h1_ ^= k1;
        h1_ = rotl(h1_, 27); h1_ += h2_; h1_ = h1_ * 5 + 0x52DCE729;
        k2 *= kC2; k2 = rotl(k2, 33); k2 *= kC1;
        h2_ ^= k2;
        h2_ = rotl(h2_, 31); h2_ += h1_; h2_ = h2_ * 5 + 0x38495AB5;
    }

    uint64_t h1_ = 0;
    uint64_t h2_ = 0;
    uint64_t total_ = 0;
    std::array<uint8_t, 16> tail_{};
    size_t tail_len_ = 0;
};

inline Digest128 hash_bytes(const void* data, size_t len, uint64_t seed = 0) {
    Hasher h(seed);
    h.update(data, len);
    return h.digest();
}

// ---------------------------------------------------------------------------
// Parallel loop with deterministic work partition
// ---------------------------------------------------------------------------

inline int resolve_jobs(int jobs) {
    if (jobs > 0) return jobs;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(i) for i in [0, n). Work is striped statically across threads, so
// results written to index-addressed slots are identical for any job count.
// The first exception thrown (lowest index) is rethrown on the caller.
template <typename Fn>
void parallel_for(size_t n, int jobs, Fn&& fn) {
    jobs = resolve_jobs(jobs);
    const size_t threads = std::min<size_t>(static_cast<size_t>(jobs), n);
    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<size_t> error_index(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (size_t i = t; i < n; i += threads) {
                try {
                    fn(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                    error_index[t] = i;
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    size_t first = n;
    std::exception_ptr eptr;
    for (size_t t = 0; t < threads; ++t) {
        if (errors[t] && error_index[t] < first) {
            first = error_index[t];
            eptr = errors[t];
        }
    }
    if (eptr) std::rethrow_exception(eptr);
}

// ---------------------------------------------------------------------------
// Numeric helpers
// ---------------------------------------------------------------------------

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Inverse standard normal CDF (Acklam's rational approximation).
inline double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error("inverse_normal_cdf: p outside (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double q, r;
    if (p < plow) {
        q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - plow) {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace tabcure
