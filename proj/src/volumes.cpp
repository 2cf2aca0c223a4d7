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

#include "adaatlas/volumes.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace adaatlas {

ProbMap one_hot(const LabelMap& labels, int num_classes) {
    if (num_classes < 2) throw std::invalid_argument("one_hot: need at least 2 classes");
    const auto [H, W, D] = labels.shape;
    ProbMap p{Tensor({num_classes, H, W, D})};
    const int64_t vol = labels.numel();
    for (int64_t v = 0; v < vol; ++v) {
        const int32_t l = labels.labels[static_cast<size_t>(v)];
        if (l < 0 || l >= num_classes)
            throw std::invalid_argument("one_hot: invalid label " + std::to_string(l) +
                                        " for C=" + std::to_string(num_classes));
        p.probs[static_cast<int64_t>(l) * vol + v] = 1.0;
    }
    return p;
}

LabelMap argmax_labels(const ProbMap& p) {
    const int C = p.c();
    const int H = p.probs.dim(1), W = p.probs.dim(2), D = p.probs.dim(3);
    LabelMap m;
    m.shape = {H, W, D};
    m.num_classes = C;
    const int64_t vol = m.numel();
    m.labels.resize(static_cast<size_t>(vol));
    for (int64_t v = 0; v < vol; ++v) {
        int best = 0;
        double bv = p.probs[v];
        for (int c = 1; c < C; ++c) {
            const double x = p.probs[c * vol + v];
            if (x > bv) {  // strict: ties keep the lowest class index
                bv = x;
                best = c;
            }
        }
        m.labels[static_cast<size_t>(v)] = best;
    }
    return m;
}

DiceReport dice(const LabelMap& pred, const LabelMap& gt, int num_classes) {
    if (pred.shape != gt.shape)
        throw std::invalid_argument("dice: shape mismatch");
    DiceReport r;
    const int64_t vol = pred.numel();
    std::vector<int64_t> np(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> ng(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> ni(static_cast<size_t>(num_classes), 0);
    for (int64_t v = 0; v < vol; ++v) {
        const int32_t a = pred.labels[static_cast<size_t>(v)];
        const int32_t b = gt.labels[static_cast<size_t>(v)];
        if (a < 0 || a >= num_classes || b < 0 || b >= num_classes)
            throw std::invalid_argument("dice: label out of range");
        ++np[static_cast<size_t>(a)];
        ++ng[static_cast<size_t>(b)];
        if (a == b) ++ni[static_cast<size_t>(a)];
    }
    double fg_sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        const int64_t denom = np[static_cast<size_t>(c)] + ng[static_cast<size_t>(c)];
        const double d = denom == 0 ? 1.0 : 2.0 * static_cast<double>(ni[static_cast<size_t>(c)]) /
                                                static_cast<double>(denom);
        r.per_class[c] = d;
        if (c > 0) fg_sum += d;
    }
    r.mean_fg = num_classes > 1 ? fg_sum / (num_classes - 1) : 1.0;
    return r;
}

void validate_probmap(const ProbMap& p, double tol) {
    if (p.probs.rank() != 4) throw std::invalid_argument("ProbMap: expected rank-4 tensor");
    const int C = p.c();
    const int64_t vol = p.probs.numel() / C;
    for (int64_t v = 0; v < vol; ++v) {
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            const double x = p.probs[c * vol + v];
            if (!(x >= -1e-9 && x <= 1.0 + 1e-9))
                throw std::runtime_error("ProbMap: entry out of [0,1]: " + std::to_string(x));
            sum += x;
        }
        if (std::fabs(sum - 1.0) > tol)
            throw std::runtime_error("ProbMap: channel sum " + std::to_string(sum) +
                                     " deviates from 1 beyond " + std::to_string(tol));
    }
}

Volume standardize(const Volume& v) {
    const int64_t n = v.data.numel();
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += v.data[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = v.data[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    Volume out{Tensor(v.data.shape)};
    if (var < 1e-20) return out;
    const double inv = 1.0 / std::sqrt(var);
    for (int64_t i = 0; i < n; ++i) out.data[i] = (v.data[i] - mean) * inv;
    return out;
}

// ---------------------------------------------------------------------------
// AAVOL1 container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'A', 'A', 'V', 'O', 'L', '1'};
constexpr uint8_t kDtypeF64 = 1;
constexpr uint8_t kDtypeI32 = 2;

void append_u32(std::string& out, uint32_t x) {
    char b[4];
    std::memcpy(b, &x, 4);
    out.append(b, 4);
}

uint32_t read_u32(const std::string& buf, size_t& off) {
    if (off + 4 > buf.size()) throw std::runtime_error("AAVOL1: truncated header");
    uint32_t x;
    std::memcpy(&x, buf.data() + off, 4);
    off += 4;
    return x;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

void encode_header(std::string& out, uint8_t dtype, uint32_t C, uint32_t H, uint32_t W,
                   uint32_t D) {
    out.append(kMagic, 6);
    out.push_back(static_cast<char>(dtype));
    out.push_back('\0');  // reserved
    append_u32(out, C);
    append_u32(out, H);
    append_u32(out, W);
    append_u32(out, D);
}

uint8_t decode_header(const std::string& buf, size_t& off, uint32_t dims[4]) {
    if (off + 8 > buf.size() || std::memcmp(buf.data() + off, kMagic, 6) != 0)
        throw std::runtime_error("AAVOL1: bad magic bytes");
    const uint8_t dtype = static_cast<uint8_t>(buf[off + 6]);
    off += 8;
    for (int i = 0; i < 4; ++i) dims[i] = read_u32(buf, off);
    return dtype;
}

}  // namespace

void encode_tensor(std::string& out, const Tensor& t) {
    if (t.rank() != 4) throw std::invalid_argument("encode_tensor: expected rank-4");
    encode_header(out, kDtypeF64, static_cast<uint32_t>(t.dim(0)), static_cast<uint32_t>(t.dim(1)),
                  static_cast<uint32_t>(t.dim(2)), static_cast<uint32_t>(t.dim(3)));
    const size_t bytes = t.v.size() * sizeof(double);
    const size_t base = out.size();
    out.resize(base + bytes);
    std::memcpy(out.data() + base, t.v.data(), bytes);
}

Tensor decode_tensor(const std::string& buf, size_t& offset) {
    uint32_t dims[4];
    const uint8_t dtype = decode_header(buf, offset, dims);
    if (dtype != kDtypeF64) throw std::runtime_error("AAVOL1: expected float64 payload");
    Tensor t({static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
              static_cast<int>(dims[3])});
    const size_t bytes = t.v.size() * sizeof(double);
    if (offset + bytes > buf.size()) throw std::runtime_error("AAVOL1: truncated payload");
    std::memcpy(t.v.data(), buf.data() + offset, bytes);
    offset += bytes;
    return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::string bytes;
    encode_tensor(bytes, t);
    write_file(path, bytes);
}

Tensor load_tensor(const std::string& path) {
    const std::string bytes = read_file(path);
    size_t off = 0;
    Tensor t = decode_tensor(bytes, off);
    return t;
}

void save_volume(const std::string& path, const Volume& v) { save_tensor(path, v.data); }

Volume load_volume(const std::string& path) {
    Tensor t = load_tensor(path);
    if (t.dim(0) != 1) throw std::runtime_error("volume file has more than one channel: " + path);
    return Volume{std::move(t)};
}

void save_labels(const std::string& path, const LabelMap& m) {
    std::string bytes;
    // the C header field carries the class count; payload is one int32 grid
    encode_header(bytes, kDtypeI32, static_cast<uint32_t>(m.num_classes),
                  static_cast<uint32_t>(m.shape[0]), static_cast<uint32_t>(m.shape[1]),
                  static_cast<uint32_t>(m.shape[2]));
    const size_t nbytes = m.labels.size() * sizeof(int32_t);
    const size_t base = bytes.size();
    bytes.resize(base + nbytes);
    std::memcpy(bytes.data() + base, m.labels.data(), nbytes);
    write_file(path, bytes);
}

LabelMap load_labels(const std::string& path) {
    const std::string bytes = read_file(path);
    size_t off = 0;
    uint32_t dims[4];
    const uint8_t dtype = decode_header(bytes, off, dims);
    if (dtype != kDtypeI32) throw std::runtime_error("label file is not int32: " + path);
    LabelMap m;
    m.num_classes = static_cast<int>(dims[0]);
    m.shape = {static_cast<int>(dims[1]), static_cast<int>(dims[2]), static_cast<int>(dims[3])};
    m.labels.resize(static_cast<size_t>(m.numel()));
    const size_t nbytes = m.labels.size() * sizeof(int32_t);
    if (off + nbytes > bytes.size()) throw std::runtime_error("label file truncated: " + path);
    std::memcpy(m.labels.data(), bytes.data() + off, nbytes);
    return m;
}

}  // namespace adaatlas
