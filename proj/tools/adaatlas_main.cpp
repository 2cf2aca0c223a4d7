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

// Command-line driver: gen-data -> train -> adapt-eval -> report.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "adaatlas/report.hpp"

namespace fs = std::filesystem;
using namespace adaatlas;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

ExperimentConfig resolve_config(const std::string& config_path, int64_t seed_override) {
    ExperimentConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
    if (seed_override >= 0) {
        cfg.data.seed = static_cast<uint64_t>(seed_override);
        cfg.train.train.seed = static_cast<uint64_t>(seed_override);
    }
    return cfg;
}

int cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir, bool force,
                 const std::string& replay) {
    DatasetManifest manifest;
    if (!replay.empty()) {
        manifest = read_manifest(replay);
    } else {
        manifest = make_domains(cfg.data.n_source, cfg.data.n_targets_per_domain,
                                cfg.data.domains, cfg.data.shape, cfg.data.seed);
    }
    write_dataset(manifest, out_dir, force);
    int total = 0;
    std::cout << "dataset written to " << out_dir << "\n";
    for (const auto& d : manifest.domains) {
        std::cout << "  domain " << d.name << (d.is_source ? " (source)" : "") << ": "
                  << d.subjects.size() << " subjects";
        if (!d.is_source)
            std::cout << "  [gamma=" << d.shift.gamma << " bias=" << d.shift.bias_amp
                      << " noise=" << d.shift.noise_sigma << " contrast=" << d.shift.contrast
                      << "]";
        std::cout << "\n";
        total += static_cast<int>(d.subjects.size());
    }
    std::cout << "  total: " << total << " subjects, manifest " << out_dir << "/manifest.json\n";
    return kExitOk;
}

std::vector<Subject> source_subjects(const std::vector<LoadedDomain>& domains) {
    for (const auto& d : domains) {
        if (!d.is_source) continue;
        std::vector<Subject> subjects;
        for (size_t i = 0; i < d.images.size(); ++i)
            subjects.push_back({d.images[i], d.labels[i]});
        return subjects;
    }
    throw std::runtime_error("dataset has no source domain");
}

int cmd_train(const ExperimentConfig& cfg, const std::string& data_dir,
              const std::string& out_ckpt) {
    const auto domains = load_dataset(data_dir);
    const auto subjects = source_subjects(domains);
    std::cout << "training on " << subjects.size() << " source subjects, "
              << cfg.train.train.epochs << " epochs\n";
    Checkpoint ckpt =
        train_joint(subjects, cfg.train.seg, cfg.train.reg, cfg.train.train);
    save_checkpoint(ckpt, out_ckpt);

    const fs::path curve_path = fs::path(out_ckpt).parent_path() / "loss_curve.csv";
    std::ofstream f(curve_path);
    f << "epoch,lr,total,supervised,bireg,smooth\n";
    for (const auto& r : ckpt.curve)
        f << r.epoch << "," << r.lr << "," << r.total << "," << r.supervised << "," << r.bireg
          << "," << r.smooth << "\n";
    std::cout << "checkpoint written to " << out_ckpt << "\nloss curve written to "
              << curve_path.string() << "\n";
    return kExitOk;
}

int cmd_adapt_eval(const ExperimentConfig& cfg, const std::string& ckpt_path,
                   const std::string& data_dir, const std::string& out_dir) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto domains = load_dataset(data_dir);
    EvalRun run = run_adapt_eval(ckpt, domains, cfg, true);
    write_reports(run, cfg, out_dir);
    std::cout << render_table(run);
    std::cout << "reports written to " << out_dir << "\n";
    return kExitOk;
}

int cmd_report(const std::string& aggregate_csv) {
    std::ifstream f(aggregate_csv);
    if (!f) throw std::runtime_error("report: cannot open " + aggregate_csv);
    std::string line;
    std::cout << "rows from " << aggregate_csv << ":\n";
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::cout << "  " << line << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Atlas-guided test-time adaptation for 3D segmentation"};
    app.set_version_flag("--version", std::string(version_string()));
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, ckpt_path, replay, aggregate_csv;
    int64_t seed_override = -1;
    bool force = false;
    app.add_option("--config", config_path, "experiment config (JSON)");
    app.add_option("--seed", seed_override, "override data and training seeds");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic multi-domain dataset");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_flag("--force", force, "overwrite an existing dataset");
    gen->add_option("--replay", replay, "regenerate from an existing manifest.json");

    auto* train = app.add_subcommand("train", "joint source training of segnet+regnet+atlas");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", ckpt_path, "output checkpoint path")->required();

    auto* ae = app.add_subcommand("adapt-eval", "run the TTA method grid and write reports");
    ae->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    ae->add_option("--data", data_dir, "dataset directory")->required();
    ae->add_option("--out", out_dir, "report output directory")->required();

    auto* rep = app.add_subcommand("report", "re-render a table from an aggregate CSV");
    rep->add_option("--aggregate", aggregate_csv, "aggregate.csv path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg = resolve_config(config_path, seed_override);
        if (gen->parsed()) return cmd_gen_data(cfg, out_dir, force, replay);
        if (train->parsed()) return cmd_train(cfg, data_dir, ckpt_path);
        if (ae->parsed()) return cmd_adapt_eval(cfg, ckpt_path, data_dir, out_dir);
        if (rep->parsed()) return cmd_report(aggregate_csv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
