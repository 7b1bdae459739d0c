// flowstage command line: simulate traces, ingest flow CSVs, train and run
// the multi-stage detectors, build/evaluate the AE predictor, export
// timelines. One verb per pipeline phase.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flowstage/bundle.hpp"
#include "flowstage/config.hpp"
#include "flowstage/pipeline.hpp"

namespace fs = std::filesystem;
using namespace flowstage;

namespace {

PipelineConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
    PipelineConfig cfg = path.empty() ? PipelineConfig{} : PipelineConfig::load_file(path);
    if (seed_override) cfg.master_seed = *seed_override;
    return cfg;
}

LabeledDataset parse_with_config(const PipelineConfig& cfg, const std::string& data_path) {
    return parse_flows(data_path, cfg.make_schema_spec(), cfg.make_stage_mapping());
}

FeatureSchemaSpec spec_from_bundle_schema(const FeatureSchema& schema) {
    FeatureSchemaSpec spec;
    spec.numeric_names = schema.numeric_names;
    spec.categorical_names = schema.categorical_names;
    spec.dropped_names = schema.dropped_names;
    return spec;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowstage: kill-chain stage detection and attack prediction on network flows"};
    app.require_subcommand(1);

    std::string config_path, data_path, bundle_path, out_path, ae_data_path, dump_dir;
    std::optional<std::uint64_t> seed_override;
    bool quiet = false;
    app.add_flag("--quiet,-q", quiet, "suppress progress output");

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed_override, "override the master seed");
    };

    auto* c_simulate = app.add_subcommand("simulate", "generate a synthetic labeled flow trace");
    c_simulate->add_option("--config", config_path, "pipeline config file");
    c_simulate->add_option("--out", out_path, "output CSV path")->required();
    add_seed(c_simulate);

    auto* c_ingest = app.add_subcommand("ingest", "parse and validate a flow CSV");
    c_ingest->add_option("--config", config_path, "pipeline config file");
    c_ingest->add_option("--data", data_path, "flow CSV path")->required();

    auto* c_train = app.add_subcommand("train", "train stage detectors on a flow CSV");
    c_train->add_option("--config", config_path, "pipeline config file");
    c_train->add_option("--data", data_path, "training flow CSV")->required();
    c_train->add_option("--out", out_path, "output bundle path")->required();
    add_seed(c_train);

    auto* c_detect = app.add_subcommand("detect", "run detection, emit the alert stream");
    c_detect->add_option("--bundle", bundle_path, "model bundle path")->required();
    c_detect->add_option("--data", data_path, "flow CSV to score")->required();
    c_detect->add_option("--out", out_path, "alert stream path (default: stdout)");
    c_detect->add_option("--dump-graphs", dump_dir, "directory for per-window graph dumps");

    auto* c_predict = app.add_subcommand("predict-ae", "score per-target AE risk");
    c_predict->add_option("--bundle", bundle_path, "model bundle path")->required();
    c_predict->add_option("--ae-data", ae_data_path, "AE dataset (jsonl)")->required();
    c_predict->add_option("--out", out_path, "predictions path (default: stdout)");

    auto* c_eval = app.add_subcommand("eval", "evaluate a bundle against labeled flows");
    c_eval->add_option("--bundle", bundle_path, "model bundle path")->required();
    c_eval->add_option("--data", data_path, "labeled flow CSV")->required();
    c_eval->add_option("--config", config_path, "pipeline config file");
    c_eval->add_option("--out", out_path, "metrics report path")->required();

    auto* c_benchmark = app.add_subcommand("benchmark", "stage detectors vs standalone forests");
    c_benchmark->add_option("--config", config_path, "pipeline config file");
    c_benchmark->add_option("--data", data_path, "flow CSV (default: simulate per config)");
    c_benchmark->add_option("--out", out_path, "output directory")->required();
    add_seed(c_benchmark);

    auto* c_timeline = app.add_subcommand("timeline", "per-attacker/per-target stage timelines");
    c_timeline->add_option("--config", config_path, "pipeline config file");
    c_timeline->add_option("--data", data_path, "labeled flow CSV")->required();
    c_timeline->add_option("--out", out_path, "output directory")->required();

    auto* c_run = app.add_subcommand("run", "full pipeline: data, split, train, detect, predict");
    c_run->add_option("--config", config_path, "pipeline config file")->required();
    c_run->add_option("--out", out_path, "output directory (overrides config out_dir)");
    add_seed(c_run);

    CLI11_PARSE(app, argc, argv);

    if (c_simulate->parsed())
        return run_guarded([&] {
            const auto cfg = load_config(config_path, seed_override);
            const auto trace = generate_trace(cfg.make_scenario_config());
            serialize_flows(trace, out_path);
            if (!quiet)
                std::cerr << "[flowstage] wrote " << trace.size() << " flows to " << out_path << "\n";
            return 0;
        });

    if (c_ingest->parsed())
        return run_guarded([&] {
            const auto cfg = load_config(config_path, std::nullopt);
            const auto ds = parse_with_config(cfg, data_path);
            std::size_t per_stage[4] = {0, 0, 0, 0};
            for (auto s : ds.stage_labels) ++per_stage[stage_index(s)];
            std::set<std::string> srcs, dsts;
            for (const auto& f : ds.flows) {
                srcs.insert(f.src_ip);
                dsts.insert(f.dst_ip);
            }
            std::cout << "flows: " << ds.size() << "\n"
                      << "malformed_rows_dropped: " << ds.malformed_rows << "\n"
                      << "normal: " << per_stage[0] << "\nstage1: " << per_stage[1]
                      << "\nstage2: " << per_stage[2] << "\nstage3: " << per_stage[3] << "\n"
                      << "src_ips: " << srcs.size() << "\ndst_ips: " << dsts.size() << "\n"
                      << "time_range: [" << format_double(ds.flows.front().timestamp) << ", "
                      << format_double(ds.flows.back().timestamp) << "]\n";
            std::cout << "numeric_columns:";
            for (const auto& n : ds.schema.numeric_names) std::cout << ' ' << n;
            std::cout << "\ncategorical_columns:";
            for (const auto& n : ds.schema.categorical_names) std::cout << ' ' << n;
            std::cout << "\ndropped_columns:";
            for (const auto& n : ds.schema.dropped_names) std::cout << ' ' << n;
            std::cout << "\n";
            return 0;
        });

    if (c_train->parsed())
        return run_guarded([&] {
            const auto cfg = load_config(config_path, seed_override);
            auto ds = parse_with_config(cfg, data_path);
            if (!quiet) std::cerr << "[flowstage] training on " << ds.size() << " flows\n";
            ModelBundle bundle;
            bundle.detectors = train_all_stages(ds, cfg.make_detector_config());
            bundle.fingerprint = cfg.fingerprint();
            bundle.ae_sequence_length = cfg.ae_sequence_length;
            bundle.ae_threshold = cfg.ae_threshold;
            save_bundle(out_path, bundle);
            for (int s = 0; s < 3; ++s)
                if (!bundle.detectors.errors[static_cast<std::size_t>(s)].empty())
                    std::cerr << "[flowstage] stage " << s + 1 << ": "
                              << bundle.detectors.errors[static_cast<std::size_t>(s)] << "\n";
            if (!quiet) std::cerr << "[flowstage] bundle written to " << out_path << "\n";
            return 0;
        });

    if (c_detect->parsed())
        return run_guarded([&] {
            const auto bundle = load_bundle(bundle_path);
            const auto spec = spec_from_bundle_schema(bundle.detectors.schema);
            const auto mapping = StageMapping::default_mapping();
            const auto ds = parse_flows(data_path, spec, mapping);
            const auto result = detect_all(bundle.detectors, ds);
            if (!dump_dir.empty()) {
                fs::create_directories(dump_dir);
                const Matrix features = encode_features(ds, bundle.detectors.schema);
                const auto windows = window_flows(ds, bundle.detectors.config.window_size,
                                                  bundle.detectors.config.effective_stride());
                for (std::size_t w = 0; w < windows.size(); ++w) {
                    Matrix rows =
                        features.middleRows(static_cast<Eigen::Index>(windows[w].begin),
                                            static_cast<Eigen::Index>(windows[w].size()));
                    const auto g = build_flow_graph(ds, windows[w], rows,
                                                    bundle.detectors.config.self_loops, w);
                    auto e = open_output((fs::path(dump_dir) /
                                          ("window_" + std::to_string(w) + "_edges.txt")).string());
                    auto f = open_output((fs::path(dump_dir) /
                                          ("window_" + std::to_string(w) + "_features.csv")).string());
                    dump_graph(g, e, f);
                }
            }
            if (out_path.empty()) {
                write_alerts(std::cout, result.alerts);
            } else {
                auto out = open_output(out_path);
                write_alerts(out, result.alerts);
                if (!quiet)
                    std::cerr << "[flowstage] " << result.alerts.size() << " alerts -> " << out_path
                              << "\n";
            }
            return 0;
        });

    if (c_predict->parsed())
        return run_guarded([&] {
            const auto bundle = load_bundle(bundle_path);
            if (!bundle.rnn) throw InvalidConfig("bundle has no trained AE predictor");
            auto in = open_input(ae_data_path);
            const auto samples = import_ae_dataset(in, bundle.ae_sequence_length);
            std::vector<AePrediction> preds;
            for (const auto& s : samples) {
                const auto p = predict_target_risk(*bundle.rnn, s, bundle.ae_threshold);
                preds.push_back(AePrediction{s.target_ip, p.probability, p.will_be_attacked});
            }
            if (out_path.empty()) {
                write_ae_predictions(std::cout, preds);
            } else {
                auto out = open_output(out_path);
                write_ae_predictions(out, preds);
            }
            return 0;
        });

    if (c_eval->parsed())
        return run_guarded([&] {
            const auto cfg = load_config(config_path, std::nullopt);
            const auto bundle = load_bundle(bundle_path);
            const auto spec = spec_from_bundle_schema(bundle.detectors.schema);
            const auto ds = parse_flows(data_path, spec, cfg.make_stage_mapping());
            const auto detection = detect_all(bundle.detectors, ds);
            MetricsReport report;
            report.fingerprint = bundle.fingerprint;
            for (int stage = 1; stage <= 3; ++stage) {
                const auto s = static_cast<std::size_t>(stage - 1);
                if (!bundle.detectors.stages[s]) continue;
                const auto y = binarize_for_stage(ds, stage);
                const double thr = bundle.detectors.config.thresholds[s];
                std::vector<std::uint8_t> pred(ds.size());
                for (std::size_t i = 0; i < ds.size(); ++i)
                    pred[i] = detection.scores[s].stacked[i] >= thr ? 1 : 0;
                report.rows.emplace_back("stage" + std::to_string(stage) + ".detector",
                                         compute_metrics(pred, y));
            }
            auto out = open_output(out_path);
            report.write(out);
            if (!quiet) std::cerr << "[flowstage] metrics -> " << out_path << "\n";
            return 0;
        });

    if (c_benchmark->parsed())
        return run_guarded([&] {
            const auto cfg = load_config(config_path, seed_override);
            LabeledDataset ds;
            if (data_path.empty()) {
                const auto trace = generate_trace(cfg.make_scenario_config());
                const fs::path dir(out_path);
                fs::create_directories(dir);
                serialize_flows(trace, (dir / "trace.csv").string());
                ds = parse_flows((dir / "trace.csv").string(), cfg.make_schema_spec(),
                                 cfg.make_stage_mapping());
            } else {
                ds = parse_with_config(cfg, data_path);
            }
            auto split = ip_split(ds, cfg.make_split_config());
            for (const auto& w : split.warnings) std::cerr << "[flowstage] warning: " << w << "\n";
            auto bench = run_benchmark(split.train, split.test, cfg.make_detector_config(),
                                       cfg.fingerprint());
            fs::create_directories(out_path);
            auto out = open_output((fs::path(out_path) / "benchmark.txt").string());
            bench.report.write(out);
            if (!quiet) std::cerr << "[flowstage] benchmark report -> " << out_path << "\n";
            return 0;
        });

    if (c_timeline->parsed())
        return run_guarded([&] {
            const auto cfg = load_config(config_path, std::nullopt);
            const auto ds = parse_with_config(cfg, data_path);
            fs::create_directories(out_path);
            auto attackers = open_output((fs::path(out_path) / "timeline_attackers.csv").string());
            auto targets = open_output((fs::path(out_path) / "timeline_targets.csv").string());
            export_timeline(ds, attackers, targets);
            if (!quiet) std::cerr << "[flowstage] timelines -> " << out_path << "\n";
            return 0;
        });

    if (c_run->parsed())
        return run_guarded([&] {
            auto cfg = load_config(config_path, seed_override);
            if (!out_path.empty()) cfg.out_dir = out_path;
            const auto result = run_experiment(cfg, quiet);
            for (const auto& [name, entry] : result.report.rows)
                std::cout << name << ": f1=" << format_double(entry.f1)
                          << " precision=" << format_double(entry.precision)
                          << " recall=" << format_double(entry.recall)
                          << " fpr=" << format_double(entry.fpr) << "\n";
            return 0;
        });

    return 0;
}
