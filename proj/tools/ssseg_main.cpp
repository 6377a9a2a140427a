// Command line front end: dataset generation, scribble simulation, training,
// evaluation and the three-preset ablation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "ssseg/harness.hpp"
#include "ssseg/image_io.hpp"
#include "ssseg/scribblesim.hpp"

namespace fs = std::filesystem;
using namespace ssseg;

namespace {

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
    SyntheticSpec spec;
    if (!spec_path.empty()) spec = SyntheticSpec::from_config(KvConfig::parse_file(spec_path));
    const auto cases = generate_dataset(spec);
    write_dataset(cases, out_dir);
    int64_t slices = 0;
    for (const auto& c : cases) slices += static_cast<int64_t>(c.images.size());
    std::printf("wrote %zu cases (%lld slices) to %s\n", cases.size(),
                static_cast<long long>(slices), out_dir.c_str());
    return 0;
}

int cmd_scribblesim(const std::string& in_path, const std::string& out_path, int hull_expand,
                    uint64_t seed) {
    const GrayImage8 in = read_pgm8(in_path);
    LabelMap dense(in.h, in.w);
    int32_t max_class = 0;
    for (size_t i = 0; i < in.v.size(); ++i) {
        dense.v[i] = in.v[i];
        max_class = std::max<int32_t>(max_class, in.v[i]);
    }
    if (max_class >= 255) {
        std::fprintf(stderr, "input uses 255 which is reserved for unknown\n");
        return 1;
    }
    ScribbleSimConfig cfg;
    cfg.hull_expand_px = hull_expand;
    cfg.seed = seed;
    const ScribbleMask scrib = simulate_scribbles(dense, max_class + 1, cfg);
    GrayImage8 out;
    out.h = in.h;
    out.w = in.w;
    out.v.resize(scrib.labels.size());
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = static_cast<uint8_t>(scrib.labels[i]);
    write_pgm8(out_path, out);
    std::printf("wrote scribbles (%lld labeled px of %zu) to %s\n",
                static_cast<long long>(scrib.labeled_count()), scrib.labels.size(),
                out_path.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& data_override) {
    TrainConfig cfg = TrainConfig::from_config(KvConfig::parse_file(config_path));
    if (!data_override.empty()) cfg.data_dir = data_override;
    if (cfg.data_dir.empty()) {
        std::fprintf(stderr, "no dataset: set data= in the config or pass --data\n");
        return 1;
    }
    const auto dataset = load_dataset(cfg.data_dir);
    fs::create_directories(out_dir);
    if (cfg.diagnostics_dir.empty()) cfg.diagnostics_dir = out_dir + "/nan_dump";
    TrainResult result = train(cfg, dataset);
    std::ofstream(out_dir + "/train_log.txt") << result.log;
    save_model(out_dir + "/checkpoint.ssck", result.model, cfg.to_config());
    std::printf("trained %lld steps in %.1fs; checkpoint and log in %s\n",
                static_cast<long long>(result.steps), result.seconds, out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& report_path, const std::string& overlay_dir) {
    const Model model = load_model(checkpoint);
    const auto dataset = load_dataset(data_dir);
    const MetricsReport report = evaluate(model, dataset, overlay_dir);
    if (report_path.empty() || report_path == "-") {
        std::cout << report.to_text();
    } else {
        std::ofstream(report_path) << report.to_text();
        std::printf("report written to %s\n", report_path.c_str());
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, std::string train_dir, std::string eval_dir,
               int seeds, int jobs, const std::string& out_dir,
               const std::string& lambda_sweep) {
    TrainConfig base;
    if (!config_path.empty()) base = TrainConfig::from_config(KvConfig::parse_file(config_path));
    if (train_dir.empty() || eval_dir.empty()) {
        // self-contained mode: generate the desk-scale study datasets
        SyntheticSpec train_spec;
        train_spec.cases = 40;
        train_spec.min_organs = 3;
        train_spec.max_organs = 3;
        train_spec.noise_sigma = 0.08;
        train_spec.seed = 101;
        SyntheticSpec eval_spec = train_spec;
        eval_spec.cases = 10;
        eval_spec.seed = 202;
        train_dir = out_dir + "/data/train";
        eval_dir = out_dir + "/data/eval";
        write_dataset(generate_dataset(train_spec), train_dir);
        write_dataset(generate_dataset(eval_spec), eval_dir);
        std::printf("generated study datasets under %s/data\n", out_dir.c_str());
    }
    const auto train_set = load_dataset(train_dir);
    const auto eval_set = load_dataset(eval_dir);

    if (!lambda_sweep.empty()) {
        // sensitivity sweep over the shared lambda value, full preset, seed 1
        std::istringstream is(lambda_sweep);
        std::string item;
        fs::create_directories(out_dir);
        std::ofstream sweep_out(out_dir + "/lambda_sweep.txt");
        while (std::getline(is, item, ',')) {
            const double lam = std::stod(item);
            TrainConfig cfg = base;
            cfg.preset = Preset::full;
            cfg.lambda_mcrf = lam;
            cfg.lambda_atn = lam;
            cfg.seed = 1;
            TrainResult tr = train(cfg, train_set);
            const MetricsReport rep = evaluate(tr.model, eval_set);
            std::vector<double> dices, hds;
            for (const auto& e : rep.entries) {
                dices.push_back(e.dice);
                hds.push_back(e.hd95_mm ? *e.hd95_mm
                                        : std::numeric_limits<double>::infinity());
            }
            char buf[128];
            std::snprintf(buf, sizeof buf, "lambda=%g median_dice=%.6f median_hd95=%.6f\n", lam,
                          median(dices), median(hds));
            sweep_out << buf;
            std::printf("%s", buf);
        }
        return 0;
    }

    const AblationSummary summary = run_ablation(base, train_set, eval_set, seeds, jobs, out_dir);
    std::cout << summary.to_text();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scribble-supervised segmentation workbench"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_spec, gen_out;
    gen->add_option("--spec", gen_spec, "synthetic spec file (key=value)");
    gen->add_option("--out", gen_out, "output dataset directory")->required();

    auto* sim = app.add_subcommand("scribblesim", "simulate scribbles from a dense mask");
    std::string sim_in, sim_out;
    int sim_hull = 5;
    uint64_t sim_seed = 0;
    sim->add_option("--in", sim_in, "dense class mask (8-bit PGM)")->required();
    sim->add_option("--out", sim_out, "output scribble PGM")->required();
    sim->add_option("--hull-expand", sim_hull, "background hull expansion in px");
    sim->add_option("--seed", sim_seed, "rng seed");

    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_config, tr_out, tr_data;
    tr->add_option("--config", tr_config, "training config (key=value)")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--data", tr_data, "dataset directory (overrides config)");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_report, ev_overlays;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--report", ev_report, "report file ('-' for stdout)");
    ev->add_option("--overlays", ev_overlays, "directory for overlay images");

    auto* ab = app.add_subcommand("ablate", "run the three presets across seeds");
    std::string ab_config, ab_train, ab_eval, ab_out, ab_sweep;
    int ab_seeds = 5;
    int ab_jobs = static_cast<int>(std::thread::hardware_concurrency());
    ab->add_option("--config", ab_config, "base training config");
    ab->add_option("--train-data", ab_train,
                   "training dataset directory (default: generate under --out)");
    ab->add_option("--eval-data", ab_eval,
                   "evaluation dataset directory (default: generate under --out)");
    ab->add_option("--seeds", ab_seeds, "number of seeds");
    ab->add_option("--jobs", ab_jobs, "parallel runs");
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--lambda-sweep", ab_sweep,
                   "comma-separated lambda values; runs a sensitivity sweep instead");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_spec, gen_out);
        if (sim->parsed()) return cmd_scribblesim(sim_in, sim_out, sim_hull, sim_seed);
        if (tr->parsed()) return cmd_train(tr_config, tr_out, tr_data);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_report, ev_overlays);
        if (ab->parsed())
            return cmd_ablate(ab_config, ab_train, ab_eval, ab_seeds, ab_jobs, ab_out, ab_sweep);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
