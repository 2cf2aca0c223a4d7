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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaatlas {

/// Dense double-precision tensor, row-major (last dimension contiguous).
/// Volumes use shape {C,H,W,D}; conv kernels {Cout,Cin,k,k,k}; vectors {N}.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0)
        : shape(std::move(s)), v(static_cast<size_t>(count(shape)), fill) {}

    static Tensor scalar(double x) {
        Tensor t({1});
        t.v[0] = x;
        return t;
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    double& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    // rank-4 accessors for {C,H,W,D} data
    int64_t idx4(int c, int h, int w, int d) const {
        return ((static_cast<int64_t>(c) * shape[1] + h) * shape[2] + w) * shape[3] + d;
    }
    double& at4(int c, int h, int w, int d) { return v[static_cast<size_t>(idx4(c, h, w, d))]; }
    double at4(int c, int h, int w, int d) const { return v[static_cast<size_t>(idx4(c, h, w, d))]; }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline void require_shape(const Tensor& t, const std::vector<int>& s, const char* what) {
    if (t.shape != s)
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(s) +
                                    ", got " + shape_str(t.shape));
}

/// FNV-1a over the raw little-endian bytes; used for parameter-isolation checks.
uint64_t checksum(const Tensor& t);
uint64_t checksum_bytes(const void* data, size_t n, uint64_t h = 1469598103934665603ull);

bool all_finite(const Tensor& t);

}  // namespace adaatlas
