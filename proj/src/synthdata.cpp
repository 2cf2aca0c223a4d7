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

#include "adaatlas/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace adaatlas {

namespace fs = std::filesystem;
using nlohmann::json;

void ShapeSpec::validate() const {
    if (grid < 8 || grid % 8 != 0)
        throw std::invalid_argument("ShapeSpec: grid must be a multiple of 8 and at least 8");
    if (num_classes != 2 && num_classes != 3)
        throw std::invalid_argument("ShapeSpec: num_classes must be 2 or 3");
    if (!(fg_min > 0.0 && fg_max <= 0.5 && fg_min < fg_max))
        throw std::invalid_argument("ShapeSpec: bad foreground bounds");
    if (!(radius_min > 0.0 && radius_max < 0.5 && radius_min <= radius_max))
        throw std::invalid_argument("ShapeSpec: bad radius bounds");
}

void ShiftSpec::validate() const {
    if (gamma < 0.4 || gamma > 2.5) throw std::invalid_argument("ShiftSpec: gamma outside [0.4,2.5]");
    if (bias_amp < 0.0 || bias_amp > 0.5)
        throw std::invalid_argument("ShiftSpec: bias amplitude outside [0,0.5]");
    if (noise_sigma < 0.0 || noise_sigma > 0.3)
        throw std::invalid_argument("ShiftSpec: noise sigma outside [0,0.3]");
    if (contrast < 0.5 || contrast > 2.0)
        throw std::invalid_argument("ShiftSpec: contrast outside [0.5,2.0]");
}

namespace {

inline double ncoord(int i, int n) { return n > 1 ? -1.0 + 2.0 * i / (n - 1) : 0.0; }

struct Rot {
    double m[3][3];
};

Rot random_rotation(Rng& rng, double max_angle) {
    // random axis, bounded angle: anatomies arrive roughly aligned
    double axis[3];
    double n2 = 0.0;
    for (double& x : axis) {
        x = rng.normal();
        n2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(n2, 1e-12));
    for (double& x : axis) x *= inv;
    const double angle = rng.uniform(-max_angle, max_angle);
    const double w = std::cos(0.5 * angle), s = std::sin(0.5 * angle);
    const double x = s * axis[0], y = s * axis[1], z = s * axis[2];
    Rot r;
    r.m[0][0] = 1 - 2 * (y * y + z * z);
    r.m[0][1] = 2 * (x * y - z * w);
    r.m[0][2] = 2 * (x * z + y * w);
    r.m[1][0] = 2 * (x * y + z * w);
    r.m[1][1] = 1 - 2 * (x * x + z * z);
    r.m[1][2] = 2 * (y * z - x * w);
    r.m[2][0] = 2 * (x * z - y * w);
    r.m[2][1] = 2 * (y * z + x * w);
    r.m[2][2] = 1 - 2 * (x * x + y * y);
    return r;
}

}  // namespace

Tensor smooth_poly_field(int grid, Rng& rng) {
    double c[9];
    for (double& x : c) x = rng.normal();
    Tensor f({1, grid, grid, grid});
    double max_abs = 0.0;
    for (int h = 0; h < grid; ++h)
        for (int w = 0; w < grid; ++w)
            for (int d = 0; d < grid; ++d) {
                const double a = ncoord(h, grid), b = ncoord(w, grid), e = ncoord(d, grid);
                const double v = c[0] * a + c[1] * b + c[2] * e + c[3] * a * a + c[4] * b * b +
                                 c[5] * e * e + c[6] * a * b + c[7] * a * e + c[8] * b * e;
                f.at4(0, h, w, d) = v;
                max_abs = std::max(max_abs, std::fabs(v));
            }
    if (max_abs > 0.0)
        for (int64_t i = 0; i < f.numel(); ++i) f[i] /= max_abs;
    return f;
}

std::pair<Volume, LabelMap> generate_subject(const ShapeSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const int g = spec.grid;
    const int64_t nvox = static_cast<int64_t>(g) * g * g;

    LabelMap labels;
    labels.shape = {g, g, g};
    labels.num_classes = spec.num_classes;
    labels.labels.assign(static_cast<size_t>(nvox), 0);

    bool ok = false;
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
        std::fill(labels.labels.begin(), labels.labels.end(), 0);
        double center[3], radii[3];
        for (int a = 0; a < 3; ++a) {
            center[a] = rng.uniform(-2.0 * spec.center_jitter, 2.0 * spec.center_jitter);
            radii[a] = 2.0 * rng.uniform(spec.radius_min, spec.radius_max);
        }
        const Rot rot = random_rotation(rng, spec.max_rotation);
        Rng prng = rng.fork("boundary", static_cast<uint64_t>(attempt));
        const Tensor pert = smooth_poly_field(g, prng);
        Rng prng2 = rng.fork("boundary2", static_cast<uint64_t>(attempt));
        const Tensor pert2 = smooth_poly_field(g, prng2);

        const double inner_scale = rng.uniform(spec.inner_scale_min, spec.inner_scale_max);
        double inner_off[3];
        for (int a = 0; a < 3; ++a)
            inner_off[a] = rng.uniform(-0.2, 0.2) * radii[a] * (1.0 - inner_scale);

        int64_t n_fg = 0, n_core = 0;
        int64_t v = 0;
        for (int h = 0; h < g; ++h)
            for (int w = 0; w < g; ++w)
                for (int d = 0; d < g; ++d, ++v) {
                    const double q[3] = {ncoord(h, g) - center[0], ncoord(w, g) - center[1],
                                         ncoord(d, g) - center[2]};
                    double r[3];
                    for (int a = 0; a < 3; ++a)
                        r[a] = rot.m[a][0] * q[0] + rot.m[a][1] * q[1] + rot.m[a][2] * q[2];
                    double f_out = -1.0 + spec.boundary_amp * pert[v];
                    for (int a = 0; a < 3; ++a) f_out += (r[a] / radii[a]) * (r[a] / radii[a]);
                    if (f_out >= 0.0) continue;
                    labels.labels[static_cast<size_t>(v)] = 1;
                    ++n_fg;
                    if (spec.num_classes == 3) {
                        double ri[3];
                        const double qi[3] = {q[0] - inner_off[0], q[1] - inner_off[1],
                                              q[2] - inner_off[2]};
                        for (int a = 0; a < 3; ++a)
                            ri[a] = rot.m[a][0] * qi[0] + rot.m[a][1] * qi[1] + rot.m[a][2] * qi[2];
                        double f_in = -1.0 + 0.5 * spec.boundary_amp * pert2[v];
                        for (int a = 0; a < 3; ++a) {
                            const double s = radii[a] * inner_scale;
                            f_in += (ri[a] / s) * (ri[a] / s);
                        }
                        if (f_in < 0.0) {
                            labels.labels[static_cast<size_t>(v)] = 2;
                            ++n_core;
                        }
                    }
                }
        const double frac = static_cast<double>(n_fg) / static_cast<double>(nvox);
        ok = frac >= spec.fg_min && frac <= spec.fg_max &&
             (spec.num_classes == 2 || n_core >= 4);
    }
    if (!ok) throw std::runtime_error("generate_subject: could not satisfy the shape constraints");

    // appearance: class levels + smooth texture + mild noise, then standardize
    double level[3] = {0.35, 0.58, 0.80};
    for (double& l : level) l += rng.uniform(-0.04, 0.04);
    Rng trng = rng.fork("texture");
    const Tensor tex = smooth_poly_field(g, trng);
    Volume vol{Tensor({1, g, g, g})};
    for (int64_t v = 0; v < nvox; ++v) {
        double x = level[labels.labels[static_cast<size_t>(v)]] + spec.texture_amp * tex[v] +
                   spec.noise_sigma * rng.normal();
        vol.data[v] = std::min(1.0, std::max(0.0, x));
    }
    return {standardize(vol), std::move(labels)};
}

Volume apply_shift(const Volume& x, const ShiftSpec& shift, uint64_t seed) {
    shift.validate();
    const int64_t n = x.data.numel();
    double lo = x.data[0], hi = x.data[0];
    for (int64_t i = 0; i < n; ++i) {
        lo = std::min(lo, x.data[i]);
        hi = std::max(hi, x.data[i]);
    }
    Volume y{Tensor(x.data.shape)};
    if (hi - lo < 1e-12) {
        for (int64_t i = 0; i < n; ++i) y.data[i] = 0.5;  // constant input maps to mid-gray
    } else {
        const double inv = 1.0 / (hi - lo);
        for (int64_t i = 0; i < n; ++i) y.data[i] = (x.data[i] - lo) * inv;
    }
    for (int64_t i = 0; i < n; ++i) y.data[i] = std::pow(y.data[i], shift.gamma);
    Rng rng(seed);
    if (shift.bias_amp > 0.0) {
        Rng brng = rng.fork("bias");
        const Tensor field = smooth_poly_field(x.data.dim(1), brng);
        for (int64_t i = 0; i < n; ++i) y.data[i] *= 1.0 + shift.bias_amp * field[i];
    }
    if (shift.contrast != 1.0)
        for (int64_t i = 0; i < n; ++i) y.data[i] = 0.5 + (y.data[i] - 0.5) * shift.contrast;
    for (int64_t i = 0; i < n; ++i) y.data[i] = std::min(1.0, std::max(0.0, y.data[i]));
    if (shift.noise_sigma > 0.0) {
        Rng nrng = rng.fork("noise");
        for (int64_t i = 0; i < n; ++i) y.data[i] += shift.noise_sigma * nrng.normal();
    }
    return standardize(y);
}

// ---------------------------------------------------------------------------
// dataset assembly
// ---------------------------------------------------------------------------

DatasetManifest make_domains(int n_source, int n_targets_per_domain,
                             const std::vector<std::pair<std::string, ShiftSpec>>& domain_shifts,
                             const ShapeSpec& shape, uint64_t seed) {
    if (domain_shifts.empty())
        throw std::invalid_argument("make_domains: need at least one target domain");
    if (n_source < 1 || n_targets_per_domain < 1)
        throw std::invalid_argument("make_domains: subject counts must be positive");
    shape.validate();
    for (const auto& [name, s] : domain_shifts) s.validate();

    DatasetManifest m;
    m.shape = shape;
    m.seed = seed;
    Rng root(seed);

    DomainRecord src;
    src.name = "source";
    src.is_source = true;
    for (int i = 0; i < n_source; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "subj_%03d", i);
        src.subjects.push_back(
            {id, root.fork("anat/source", static_cast<uint64_t>(i)).next_u64(), 0});
    }
    m.domains.push_back(std::move(src));

    for (const auto& [name, shift] : domain_shifts) {
        DomainRecord dom;
        dom.name = name;
        dom.shift = shift;
        for (int i = 0; i < n_targets_per_domain; ++i) {
            char id[32];
            std::snprintf(id, sizeof(id), "subj_%03d", i);
            dom.subjects.push_back(
                {id, root.fork("anat/" + name, static_cast<uint64_t>(i)).next_u64(),
                 root.fork("shift/" + name, static_cast<uint64_t>(i)).next_u64()});
        }
        m.domains.push_back(std::move(dom));
    }
    return m;
}

std::pair<Volume, LabelMap> realize_subject(const DatasetManifest& manifest,
                                            const DomainRecord& domain,
                                            const SubjectRecord& subject) {
    auto [vol, labels] = generate_subject(manifest.shape, subject.anat_seed);
    if (!domain.is_source) vol = apply_shift(vol, domain.shift, subject.shift_seed);
    return {std::move(vol), std::move(labels)};
}

namespace {

json shift_to_json(const ShiftSpec& s) {
    return {{"gamma", s.gamma},
            {"bias_amp", s.bias_amp},
            {"noise_sigma", s.noise_sigma},
            {"contrast", s.contrast}};
}

ShiftSpec shift_from_json(const json& j) {
    ShiftSpec s;
    s.gamma = j.at("gamma");
    s.bias_amp = j.at("bias_amp");
    s.noise_sigma = j.at("noise_sigma");
    s.contrast = j.at("contrast");
    return s;
}

json shape_to_json(const ShapeSpec& s) {
    return {{"grid", s.grid},
            {"num_classes", s.num_classes},
            {"fg_min", s.fg_min},
            {"fg_max", s.fg_max},
            {"radius_min", s.radius_min},
            {"radius_max", s.radius_max},
            {"center_jitter", s.center_jitter},
            {"boundary_amp", s.boundary_amp},
            {"inner_scale_min", s.inner_scale_min},
            {"inner_scale_max", s.inner_scale_max},
            {"texture_amp", s.texture_amp},
            {"noise_sigma", s.noise_sigma}};
}

ShapeSpec shape_from_json(const json& j) {
    ShapeSpec s;
    s.grid = j.at("grid");
    s.num_classes = j.at("num_classes");
    s.fg_min = j.at("fg_min");
    s.fg_max = j.at("fg_max");
    s.radius_min = j.at("radius_min");
    s.radius_max = j.at("radius_max");
    s.center_jitter = j.at("center_jitter");
    s.boundary_amp = j.at("boundary_amp");
    s.inner_scale_min = j.at("inner_scale_min");
    s.inner_scale_max = j.at("inner_scale_max");
    s.texture_amp = j.at("texture_amp");
    s.noise_sigma = j.at("noise_sigma");
    return s;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    json j;
    j["format"] = "AADATA1";
    j["seed"] = manifest.seed;
    j["shape"] = shape_to_json(manifest.shape);
    json domains = json::array();
    for (const auto& d : manifest.domains) {
        json subjects = json::array();
        for (const auto& s : d.subjects)
            subjects.push_back(
                {{"id", s.id}, {"anat_seed", s.anat_seed}, {"shift_seed", s.shift_seed}});
        domains.push_back({{"name", d.name},
                           {"is_source", d.is_source},
                           {"shift", shift_to_json(d.shift)},
                           {"subjects", subjects}});
    }
    j["domains"] = domains;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
    f << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_manifest: cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("read_manifest: parse error in " + path + ": " + e.what());
    }
    if (j.value("format", "") != std::string("AADATA1"))
        throw std::runtime_error("read_manifest: not an AADATA1 manifest: " + path);
    DatasetManifest m;
    m.seed = j.at("seed");
    m.shape = shape_from_json(j.at("shape"));
    for (const auto& d : j.at("domains")) {
        DomainRecord dom;
        dom.name = d.at("name");
        dom.is_source = d.at("is_source");
        dom.shift = shift_from_json(d.at("shift"));
        for (const auto& s : d.at("subjects"))
            dom.subjects.push_back({s.at("id"), s.at("anat_seed"), s.at("shift_seed")});
        m.domains.push_back(std::move(dom));
    }
    return m;
}

void write_dataset(const DatasetManifest& manifest, const std::string& dir, bool force) {
    const fs::path root(dir);
    if (fs::exists(root / "manifest.json") && !force)
        throw std::runtime_error("write_dataset: " + dir +
                                 " already holds a dataset (use --force to overwrite)");
    fs::create_directories(root);
    for (const auto& dom : manifest.domains) {
        fs::create_directories(root / dom.name);
        for (const auto& subj : dom.subjects) {
            auto [vol, labels] = realize_subject(manifest, dom, subj);
            save_volume((root / dom.name / (subj.id + ".img.aavol")).string(), vol);
            save_labels((root / dom.name / (subj.id + ".lbl.aavol")).string(), labels);
        }
    }
    save_manifest(manifest, (root / "manifest.json").string());
}

std::vector<LoadedDomain> load_dataset(const std::string& dir) {
    const fs::path root(dir);
    const DatasetManifest m = read_manifest((root / "manifest.json").string());
    std::vector<LoadedDomain> out;
    for (const auto& dom : m.domains) {
        LoadedDomain ld;
        ld.name = dom.name;
        ld.is_source = dom.is_source;
        for (const auto& subj : dom.subjects) {
            ld.images.push_back(load_volume((root / dom.name / (subj.id + ".img.aavol")).string()));
            ld.labels.push_back(load_labels((root / dom.name / (subj.id + ".lbl.aavol")).string()));
        }
        out.push_back(std::move(ld));
    }
    return out;
}

}  // namespace adaatlas
