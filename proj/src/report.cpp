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

#include "adaatlas/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

namespace adaatlas {

namespace fs = std::filesystem;

EvalRun run_adapt_eval(const Checkpoint& ckpt, const std::vector<LoadedDomain>& domains,
                       const ExperimentConfig& cfg, bool verbose) {
    EvalRun run;
    run.num_classes = ckpt.seg_cfg.num_classes;
    for (const auto& d : domains) run.domain_names.push_back(d.name);
    for (const auto& m : cfg.report.methods) run.method_names.push_back(m.name);

    for (const auto& method : cfg.report.methods) {
        for (const auto& dom : domains) {
            MethodDomainResult cell;
            cell.method = method.name;
            cell.domain = dom.name;
            try {
                if (method.is_baseline) {
                    cell.eval = evaluate_baseline(ckpt, dom.images, dom.labels);
                } else {
                    cell.eval = evaluate_domain(ckpt, dom.images, dom.labels,
                                                cfg.tta_config(method));
                }
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.error = e.what();
            }
            if (verbose) {
                std::fprintf(stderr, "[adapt-eval] %-20s %-10s %s\n", method.name.c_str(),
                             dom.name.c_str(),
                             cell.failed ? ("FAILED: " + cell.error).c_str()
                                         : std::to_string(cell.eval.mean_fg).c_str());
            }
            run.cells.push_back(std::move(cell));
        }
    }
    return run;
}

const MethodDomainResult& find_cell(const EvalRun& run, const std::string& method,
                                    const std::string& domain) {
    for (const auto& c : run.cells)
        if (c.method == method && c.domain == domain) return c;
    throw std::invalid_argument("no result cell for " + method + " / " + domain);
}

double target_mean(const EvalRun& run, const std::string& method) {
    double acc = 0.0;
    int n = 0;
    for (const auto& c : run.cells) {
        if (c.method != method || c.domain == "source" || c.failed) continue;
        acc += c.eval.mean_fg;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("target_mean: no target cells for " + method);
    return acc / n;
}

namespace {

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    return buf;
}

std::string csv_preamble(const ExperimentConfig& cfg) {
    nlohmann::json j = nlohmann::json::parse(config_to_json_text(cfg));
    std::string out;
    out += "# version: " + std::string(version_string()) + "\n";
    out += "# config: " + j.dump() + "\n";
    return out;
}

}  // namespace

void write_reports(const EvalRun& run, const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const std::string preamble = csv_preamble(cfg);
    const int C = run.num_classes;

    {
        std::ofstream f(fs::path(out_dir) / "per_subject.csv");
        if (!f) throw std::runtime_error("write_reports: cannot open per_subject.csv");
        f << preamble << "method,domain,subject,dice_fg";
        for (int c = 1; c < C; ++c) f << ",dice_c" << c;
        f << ",diverged\n";
        for (const auto& cell : run.cells) {
            if (cell.failed) continue;
            for (size_t i = 0; i < cell.eval.rows.size(); ++i) {
                const auto& row = cell.eval.rows[i];
                f << cell.method << "," << cell.domain << "," << i << ","
                  << fmt(row.adapted.mean_fg);
                for (int c = 1; c < C; ++c) f << "," << fmt(row.adapted.per_class.at(c));
                f << "," << (row.diverged ? 1 : 0) << "\n";
            }
        }
    }
    {
        std::ofstream f(fs::path(out_dir) / "aggregate.csv");
        if (!f) throw std::runtime_error("write_reports: cannot open aggregate.csv");
        f << preamble
          << "method,domain,mean_fg_dice,baseline_mean_fg_dice,abs_improvement,rel_improvement_"
             "pct,failed\n";
        for (const auto& cell : run.cells) {
            if (cell.failed) {
                f << cell.method << "," << cell.domain << ",,,,,1\n";
                continue;
            }
            const double base = cell.eval.baseline_mean_fg;
            const double mean = cell.eval.mean_fg;
            f << cell.method << "," << cell.domain << "," << fmt(mean) << "," << fmt(base) << ","
              << fmt(mean - base) << "," << fmt(100.0 * cell.eval.rel_improvement) << ",0\n";
        }
    }
    {
        std::ofstream f(fs::path(out_dir) / "table.txt");
        f << "version: " << version_string() << "\n" << render_table(run);
    }
    {
        std::ofstream f(fs::path(out_dir) / "resolved_config.json");
        f << config_to_json_text(cfg) << "\n";
    }
}

std::string render_table(const EvalRun& run) {
    std::string out;
    char line[512];
    std::snprintf(line, sizeof(line), "%-20s", "Method");
    out += line;
    for (const auto& d : run.domain_names) {
        std::snprintf(line, sizeof(line), " %16s", d.c_str());
        out += line;
    }
    out += "   Mean(targets)\n";
    out += std::string(20 + 17 * run.domain_names.size() + 16, '-') + "\n";

    // baseline row values per domain, for the (+N%) annotations
    std::vector<double> base_per_domain(run.domain_names.size(), -1.0);
    for (size_t di = 0; di < run.domain_names.size(); ++di) {
        for (const auto& c : run.cells)
            if (c.domain == run.domain_names[di] && !c.failed) {
                base_per_domain[di] = c.eval.baseline_mean_fg;
                break;
            }
    }

    for (const auto& m : run.method_names) {
        std::snprintf(line, sizeof(line), "%-20s", m.c_str());
        out += line;
        double tsum = 0.0;
        double bsum = 0.0;
        int tn = 0;
        for (size_t di = 0; di < run.domain_names.size(); ++di) {
            const auto& cell = find_cell(run, m, run.domain_names[di]);
            if (cell.failed) {
                std::snprintf(line, sizeof(line), " %16s", "FAILED");
                out += line;
                continue;
            }
            const double v = cell.eval.mean_fg;
            const double b = base_per_domain[di];
            char val[64];
            if (b > 0.0) {
                std::snprintf(val, sizeof(val), "%.4f (%+.0f%%)", v, 100.0 * (v - b) / b);
            } else {
                std::snprintf(val, sizeof(val), "%.4f", v);
            }
            std::snprintf(line, sizeof(line), " %16s", val);
            out += line;
            if (run.domain_names[di] != "source") {
                tsum += v;
                bsum += b;
                ++tn;
            }
        }
        if (tn > 0) {
            char val[64];
            const double tm = tsum / tn;
            const double bm = bsum / tn;
            std::snprintf(val, sizeof(val), "%.4f (%+.0f%%)", tm,
                          bm > 0 ? 100.0 * (tm - bm) / bm : 0.0);
            std::snprintf(line, sizeof(line), "   %13s", val);
            out += line;
        }
        out += "\n";
    }
    return out;
}

}  // namespace adaatlas
