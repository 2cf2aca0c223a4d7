/*
Copyright 2026 The AdaAtlas Authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace adaatlas {

// All randomness in the project goes through this wrapper. The std
// distributions are implementation-defined, so uniform/normal/int draws are
// spelled out explicitly to keep runs reproducible across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed), seed_echo_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// uniform in [0,1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// standard normal via Box-Muller (pairs cached)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// uniform integer in [0, n), n >= 1; rejection sampling, no modulo bias
    int uniform_int(int n) {
        const uint64_t bound = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return static_cast<int>(x % bound);
    }

    /// derive an independent child stream, stable across platforms
    Rng fork(std::string_view tag, uint64_t index = 0) const {
        uint64_t h = 1469598103934665603ull;
        auto mix = [&h](uint64_t x) {
            for (int i = 0; i < 8; ++i) {
                h ^= (x >> (8 * i)) & 0xff;
                h *= 1099511628211ull;
            }
        };
        mix(seed_echo_);
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        mix(index);
        // splitmix64 finalizer
        h += 0x9e3779b97f4a7c15ull;
        h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
        h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
        h = h ^ (h >> 31);
        return Rng(h);
    }

    template <class T>
    void shuffle(std::vector<T>& items) {
        // Fisher-Yates; std::shuffle is implementation-defined
        for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(items[static_cast<size_t>(i)], items[static_cast<size_t>(j)]);
        }
    }

private:
    std::mt19937_64 gen_;
    uint64_t seed_echo_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace adaatlas
