#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aptd/asdc.hpp"
#include "aptd/config.hpp"
#include "aptd/error.hpp"
#include "aptd/features.hpp"
#include "aptd/ingest.hpp"
#include "aptd/ml.hpp"
#include "aptd/scenario.hpp"
#include "aptd/stages.hpp"
#include "aptd/util.hpp"
#include "aptd/version.hpp"

namespace fs = std::filesystem;
using namespace aptd;

namespace {

struct Manifest {
    std::string command;
    std::vector<std::string> args;
    std::string config;
    std::vector<std::string> inputs;
    std::vector<std::string> models;
    std::optional<std::uint64_t> seed;
    std::string out;

    void write(const fs::path& path) const {
        nlohmann::json j;
        j["engine_version"] = kEngineVersion;
        j["command"] = command;
        j["args"] = args;
        j["config"] = config;
        j["inputs"] = inputs;
        j["models"] = models;
        j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
        j["out"] = out;
        write_text_file(path, j.dump(2) + "\n");
    }
};

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, dir.string() + ": " + ec.message());
}

struct GenOptions {
    std::optional<int> campaign;
    bool benign = false;
    std::string dataset;
    std::uint64_t seed = 42;
    std::string out;
    double span = 1800.0;
    std::size_t windows = 1000;
    std::string truncate_after;
};

int cmd_gen(const GenOptions& o, const Manifest& base) {
    const fs::path out(o.out);
    ensure_dir(out);
    Manifest m = base;
    m.seed = o.seed;
    m.out = out.string();
    const Layout layout;
    if (!o.dataset.empty()) {
        const auto kind = parse_dataset_kind(o.dataset);
        if (!kind) throw Error(ErrorCode::InvalidArgument, "unknown dataset " + o.dataset);
        const auto rows = gen_feature_dataset(*kind, o.windows, o.seed, layout);
        write_text_file(out / "features.csv", render_feature_csv(stage_of(*kind), rows));
        std::cout << "wrote " << rows.size() << " " << to_string(stage_of(*kind)) << " windows to "
                  << (out / "features.csv").string() << "\n";
    } else if (o.benign) {
        write_bundle(out, gen_benign_bundle(layout, o.span, o.seed));
        std::cout << "wrote benign bundle to " << out.string() << "\n";
    } else {
        CampaignOptions opt;
        if (!o.truncate_after.empty()) {
            opt.last_stage = parse_stage_kind(o.truncate_after);
            if (!opt.last_stage) throw Error(ErrorCode::InvalidArgument, "unknown stage " + o.truncate_after);
        }
        write_bundle(out, gen_campaign(*o.campaign, layout, o.seed, opt));
        std::cout << "wrote campaign " << *o.campaign << " bundle to " << out.string() << "\n";
    }
    m.write(out / "manifest.json");
    return kExitClean;
}

struct TrainOptions {
    std::string stage = "discovery";
    std::string model = "rforest";
    std::vector<std::string> data;
    std::string out;
    std::string metrics;
    std::uint64_t seed = 1;
    std::size_t folds = 10;
};

int cmd_train(const TrainOptions& o, const Manifest& base) {
    const auto stage = *parse_feature_stage(o.stage);
    const auto kind = o.model == "svm" ? ModelKind::LINEAR_SVM : ModelKind::RANDOM_FOREST;
    std::vector<FeatureVector> rows;
    for (const auto& path : o.data) {
        try {
            auto part = parse_feature_csv(stage, read_text_file(path));
            rows.insert(rows.end(), part.begin(), part.end());
        } catch (const Error& e) {
            throw Error(e.code(), path + ": " + e.detail());
        }
    }
    const auto report = run_training_pipeline(dataset_from_features(rows), kind, default_grid(kind, o.seed), o.seed,
                                              o.folds);
    save_model(o.out, report.model);

    const std::string header = "stage,model,rows,selected_features,cv_accuracy,precision,recall,tp,fp,fn,tn\n";
    const std::string row = o.stage + "," + o.model + "," + std::to_string(rows.size()) + "," +
                            std::to_string(report.model.selected.size()) + "," + fmt_double(report.cv.mean_score) +
                            "," + fmt_double(report.precision) + "," + fmt_double(report.recall) + "," +
                            std::to_string(report.test_cm.tp) + "," + std::to_string(report.test_cm.fp) + "," +
                            std::to_string(report.test_cm.fn) + "," + std::to_string(report.test_cm.tn) + "\n";
    std::cout << header << row;
    if (!o.metrics.empty()) {
        const bool fresh = !fs::exists(o.metrics);
        std::string text = fresh ? header : read_text_file(o.metrics);
        write_text_file(o.metrics, text + row);
    }
    Manifest m = base;
    m.inputs = o.data;
    m.seed = o.seed;
    m.out = o.out;
    m.write(fs::path(o.out).string() + ".manifest.json");
    return kExitClean;
}

struct DetectOptions {
    std::string bundle;
    std::string config;
    std::vector<std::string> captures;  // host=path
    std::string auth;
    std::string alerts;
    std::string discovery_model;
    std::string fieldbus_model;
    std::string out;
    std::string format = "both";
};

int cmd_detect(const DetectOptions& o, const Manifest& base) {
    // models first so a missing file fails before any parsing
    for (const auto& p : {o.discovery_model, o.fieldbus_model})
        if (!fs::exists(p)) throw Error(ErrorCode::IoError, p + ": model file not found");
    const auto dmodel = load_model(o.discovery_model);
    const auto fmodel = load_model(o.fieldbus_model);
    if (dmodel.stage != FeatureStage::DISCOVERY)
        throw Error(ErrorCode::ModelFormat, o.discovery_model + ": not a discovery model");
    if (fmodel.stage != FeatureStage::FIELDBUS)
        throw Error(ErrorCode::ModelFormat, o.fieldbus_model + ": not a fieldbus model");

    Manifest m = base;
    m.models = {o.discovery_model, o.fieldbus_model};
    m.out = o.out;
    EngineConfig cfg;
    std::map<Ipv4, std::vector<PacketRecord>> captures;
    std::vector<AuthLoginEvent> auth;
    std::vector<IdsAlert> alerts;
    std::vector<Reject> rejects;
    if (!o.bundle.empty()) {
        auto lb = load_bundle(o.bundle);
        cfg = lb.config;
        captures = std::move(lb.captures);
        auth = std::move(lb.auth);
        alerts = std::move(lb.alerts);
        rejects = std::move(lb.rejects);
        m.inputs.push_back(o.bundle);
        m.config = (fs::path(o.bundle) / "engine.conf").string();
    } else {
        if (o.config.empty()) throw Error(ErrorCode::InvalidArgument, "--config is required without --bundle");
        cfg = load_config(o.config);
        m.config = o.config;
        for (const auto& spec : o.captures) {
            const auto eq = spec.find('=');
            if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--capture expects HOST=PATH");
            captures[Ipv4::from(spec.substr(0, eq))] = read_capture(spec.substr(eq + 1)).packets;
            m.inputs.push_back(spec);
        }
        if (!o.auth.empty()) {
            auto p = parse_auth_log(o.auth);
            auth = std::move(p.items);
            rejects.insert(rejects.end(), p.rejects.begin(), p.rejects.end());
            m.inputs.push_back(o.auth);
        }
        if (!o.alerts.empty()) {
            auto p = parse_ids_alerts(o.alerts, cfg.signatures);
            alerts = std::move(p.items);
            rejects.insert(rejects.end(), p.rejects.begin(), p.rejects.end());
            m.inputs.push_back(o.alerts);
        }
    }
    for (const auto& r : rejects) std::cerr << "warning: line " << r.line << ": " << r.reason << "\n";

    const auto result = run_asdc(make_asdc_inputs(cfg, captures, auth, alerts, dmodel, fmodel));
    const fs::path out(o.out);
    ensure_dir(out);
    if (o.format != "structured") write_text_file(out / "graph.dot", export_graph(result.graph, GraphFormat::DOT));
    if (o.format != "dot") write_text_file(out / "graph.json", export_graph(result.graph, GraphFormat::STRUCTURED));
    std::string audit;
    for (const auto& s : result.stages) audit += stage_to_json_line(s) + "\n";
    write_text_file(out / "stages.jsonl", audit);
    std::string rejected;
    for (const auto& r : result.rejected) {
        nlohmann::json j{{"stage", to_string(r.kind)}, {"src_ip", r.src_ip.str()}, {"reason", r.reason}};
        if (r.dst_ip) j["dst_ip"] = r.dst_ip->str();
        rejected += j.dump() + "\n";
    }
    write_text_file(out / "rejected.jsonl", rejected);
    m.write(out / "manifest.json");

    std::cout << to_string(result.status) << " stages=" << result.stages.size()
              << " nodes=" << result.graph.nodes.size() << " edges=" << result.graph.edges.size() << "\n";
    if (result.status == DetStatus::APT_DET_STOP) return kExitFullChain;
    return result.stages.empty() ? kExitClean : kExitPartialChain;
}

struct FeaturizeOptions {
    std::string stage = "discovery";
    std::string capture;
    std::string host;
    std::string label;
    double window = 60.0;
    std::string out;
};

int cmd_featurize(const FeaturizeOptions& o, const Manifest& base) {
    const auto stage = *parse_feature_stage(o.stage);
    const auto host = Ipv4::from(o.host);
    std::vector<FeatureVector> rows;
    for (const auto& w : split_windows(read_capture(o.capture).packets, host, o.window)) {
        auto fv = extract_features(stage, w);
        if (o.label == "normal") fv.label = WindowLabel::NORMAL;
        if (o.label == "scanning") fv.label = WindowLabel::SCANNING;
        rows.push_back(std::move(fv));
    }
    write_text_file(o.out, render_feature_csv(stage, rows));
    Manifest m = base;
    m.inputs = {o.capture};
    m.out = o.out;
    m.write(o.out + ".manifest.json");
    std::cout << "wrote " << rows.size() << " windows to " << o.out << "\n";
    return kExitClean;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-stage intrusion campaign detection for industrial networks"};
    app.require_subcommand(1);
    Manifest base;
    for (int i = 1; i < argc; ++i) base.args.emplace_back(argv[i]);

    GenOptions gen;
    auto* g = app.add_subcommand("gen", "Generate a scenario bundle or a labelled feature dataset");
    auto* g_campaign = g->add_option("--campaign", gen.campaign, "Campaign id")->check(CLI::Range(1, 3));
    auto* g_benign = g->add_flag("--benign", gen.benign, "Benign-only bundle");
    auto* g_dataset = g->add_option("--dataset", gen.dataset, "Feature dataset kind")
                          ->check(CLI::IsMember({"discovery-normal", "discovery-slow", "fieldbus-aggressive",
                                                 "fieldbus-nonaggressive", "fieldbus-s7"}));
    g_campaign->excludes(g_benign)->excludes(g_dataset);
    g_benign->excludes(g_dataset);
    g->add_option("--seed", gen.seed, "Seed");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--span", gen.span, "Benign bundle length in seconds")->check(CLI::PositiveNumber);
    g->add_option("--windows", gen.windows, "Windows per class for datasets")->check(CLI::PositiveNumber);
    g->add_option("--truncate-after", gen.truncate_after, "Stop the campaign after this stage");

    TrainOptions train;
    auto* t = app.add_subcommand("train", "Train a window classifier from feature CSV files");
    t->add_option("--stage", train.stage)->check(CLI::IsMember({"discovery", "fieldbus"}));
    t->add_option("--model", train.model)->check(CLI::IsMember({"rforest", "svm"}));
    t->add_option("--data", train.data, "Labelled feature CSV (repeatable)")->required();
    t->add_option("--out", train.out, "Model file")->required();
    t->add_option("--metrics", train.metrics, "Append the metrics row to this CSV");
    t->add_option("--seed", train.seed);
    t->add_option("--folds", train.folds)->check(CLI::Range(2, 100));

    DetectOptions det;
    auto* d = app.add_subcommand("detect", "Detect and correlate campaign stages");
    d->add_option("--bundle", det.bundle, "Scenario bundle directory");
    d->add_option("--config", det.config, "Engine configuration");
    d->add_option("--capture", det.captures, "HOST=PATH capture taken at HOST (repeatable)");
    d->add_option("--auth", det.auth, "Authentication log");
    d->add_option("--alerts", det.alerts, "IDS alert CSV");
    d->add_option("--discovery-model", det.discovery_model)->required();
    d->add_option("--fieldbus-model", det.fieldbus_model)->required();
    d->add_option("--out", det.out, "Output directory")->required();
    d->add_option("--format", det.format, "Graph output")->check(CLI::IsMember({"dot", "structured", "both"}));

    FeaturizeOptions fz;
    auto* f = app.add_subcommand("featurize", "Extract per-window features from a capture");
    f->add_option("--stage", fz.stage)->check(CLI::IsMember({"discovery", "fieldbus"}));
    f->add_option("--capture", fz.capture)->required();
    f->add_option("--host", fz.host, "Address the capture was taken at")->required();
    f->add_option("--label", fz.label)->check(CLI::IsMember({"", "normal", "scanning"}));
    f->add_option("--window", fz.window)->check(CLI::PositiveNumber);
    f->add_option("--out", fz.out)->required();

    try {
        app.parse(argc, argv);
        if (g->parsed() && !gen.campaign && !gen.benign && gen.dataset.empty())
            throw CLI::ValidationError("gen", "one of --campaign, --benign or --dataset is required");
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (g->parsed()) {
            base.command = "gen";
            return cmd_gen(gen, base);
        }
        if (t->parsed()) {
            base.command = "train";
            return cmd_train(train, base);
        }
        if (d->parsed()) {
            base.command = "detect";
            return cmd_detect(det, base);
        }
        base.command = "featurize";
        return cmd_featurize(fz, base);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}
