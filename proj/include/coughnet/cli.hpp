#pragma once

// Command-line front end: featurize, train, evaluate and screen.
//
// Exit codes: 0 success, 1 data errors, 2 usage errors.
//
// The --config file uses CLI11's TOML/INI reader. Global keys sit at the top
// and each subcommand's keys go under its own section:
//
//     seed = 7
//     profile = "desk"
//     [train]
//     epochs = 40
//     batch-size = 32
//
// Flags given on the command line override the file.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "coughnet/coughnet.hpp"

namespace coughnet::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitData = 1;
inline constexpr int kExitUsage = 2;

struct GlobalOptions {
    std::string profile = "paper";
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    bool verbose = false;
};

/// "paper", "desk", or a path to a key=value profile file.
inline FeatureProfile resolve_profile(const std::string& name) {
    if (name == "paper") return FeatureProfile::paper();
    if (name == "desk") return FeatureProfile::desk();
    if (!fs::exists(name)) {
        fail(ErrorCode::InvalidProfile, "profile '" + name + "' is neither paper, desk nor an existing file");
    }
    const auto data = bytes::read_file(name);
    auto p = FeatureProfile::from_text(std::string(data.begin(), data.end()));
    p.validate(kPipelineRate);
    return p;
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    bytes::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------- featurize

struct FeaturizeOptions {
    std::string manifest;
    std::string task = "detection";
    std::string out_dir;
    std::string png_dir;
};

inline int cmd_featurize(const GlobalOptions& g, const FeaturizeOptions& o, std::ostream& out, std::ostream& err) {
    const Task task = parse_task(o.task);
    const auto profile = resolve_profile(g.profile);
    const auto manifest = load_manifest(o.manifest, task);
    const auto fb = mel_filterbank(profile, kPipelineRate);
    FeatureCache cache{true, o.out_dir.empty() ? std::nullopt : std::optional<fs::path>(o.out_dir)};
    if (!o.png_dir.empty()) fs::create_directories(o.png_dir);

    struct Outcome {
        bool ok = false;
        bool hit = false;
        std::string error;
    };
    std::vector<Outcome> outcomes(manifest.size());
    parallel_for(manifest.size(), g.threads, [&](std::size_t i) {
        const auto& e = manifest.entries[i];
        try {
            const auto f = featurize_file(e.path, task, profile, fb, cache);
            if (!o.png_dir.empty()) {
                write_png(fs::path(o.png_dir) / (e.path.stem().string() + ".png"), f.image);
            }
            outcomes[i] = {true, f.cache_hit, {}};
        } catch (const Error& ex) {
            outcomes[i] = {false, false, ex.what()};
        }
    });

    std::map<std::string, std::size_t> per_label;
    std::size_t computed = 0, cached = 0, failed = 0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (!outcomes[i].ok) {
            ++failed;
            err << "error: " << outcomes[i].error << '\n';
            continue;
        }
        ++per_label[manifest.label_names[static_cast<std::size_t>(manifest.entries[i].label)]];
        ++(outcomes[i].hit ? cached : computed);
    }
    std::string summary;
    for (const auto& [label, n] : per_label) {
        summary += (summary.empty() ? "" : ", ") + label + ": " + std::to_string(n);
    }
    out << summary << '\n';
    out << "computed " << computed << ", cached " << cached << ", failed " << failed << '\n';
    return failed == 0 ? kExitOk : kExitData;
}

// -------------------------------------------------------------------- train

struct TrainOptions {
    std::string manifest;
    std::string task = "detection";
    std::string model_path;
    std::string history_path;
    std::string cache_dir;
    std::size_t epochs = 100;
    std::size_t patience = 10;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double min_delta = 1e-4;
    std::size_t filters = 32;
    std::size_t dense_units = 128;
};

inline int cmd_train(const GlobalOptions& g, const TrainOptions& o, std::ostream& out, std::ostream& err) {
    const Task task = parse_task(o.task);
    const auto profile = resolve_profile(g.profile);
    const auto manifest = load_manifest(o.manifest, task);
    const auto split = stratified_split(manifest, {}, g.seed);
    FeatureCache cache;
    if (!o.cache_dir.empty()) cache = {true, fs::path(o.cache_dir)};

    const auto train_idx = split.indices(Split::Train), val_idx = split.indices(Split::Val),
               test_idx = split.indices(Split::Test);
    out << "split: train " << train_idx.size() << ", val " << val_idx.size() << ", test " << test_idx.size() << '\n';
    const auto train_set = load_samples(manifest, train_idx, profile, cache, g.threads);
    const auto val_set = load_samples(manifest, val_idx, profile, cache, g.threads);

    TrainConfig config;
    config.max_epochs = o.epochs;
    config.patience = o.patience;
    config.batch_size = o.batch_size;
    config.seed = g.seed;
    config.adam.lr = o.lr;
    config.min_delta = o.min_delta;
    config.threads = g.threads;
    const auto spec = build_spec(task, {1, static_cast<std::size_t>(profile.image_h), static_cast<std::size_t>(profile.image_w)},
                                 ArchitectureWidth{o.filters, o.dense_units});
    auto result = train<float>(spec, profile, train_set, val_set, config, [&](const EpochRecord& r) {
        if (g.verbose) {
            err << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss << " val_acc "
                << r.val_acc << '\n';
        }
    });

    save_model(result.model, o.model_path);
    const auto history_path = o.history_path.empty() ? o.model_path + ".history.csv" : o.history_path;
    write_text(history_path, result.history.to_csv());

    char line[160];
    std::snprintf(line, sizeof line, "best epoch %zu of %zu (%s), validation loss %.6f\n", result.history.best_epoch,
                  result.history.epochs.size(), std::string(to_string(result.history.stop_reason)).c_str(),
                  result.model.meta.best_val_loss);
    out << line;
    if (!test_idx.empty()) {
        const auto test_set = load_samples(manifest, test_idx, profile, cache, g.threads);
        std::snprintf(line, sizeof line, "test accuracy %.2f%%\n",
                      100.0 * evaluate(result.model, test_set, g.threads).report.accuracy);
        out << line;
    }
    out << "model written to " << o.model_path << "\nhistory written to " << history_path << '\n';
    return kExitOk;
}

// ----------------------------------------------------------------- evaluate

struct EvaluateOptions {
    std::string model_path;
    std::string manifest;
    std::string predictions;
    std::string task;
    std::string split = "test";
    std::string out_prefix;
};

/// Rows of `actual,predicted[,count]` using class names; a header row is
/// optional.
inline ConfusionMatrix read_predictions(const fs::path& path, Task task) {
    const auto data = bytes::read_file(path);
    const auto& names = class_names(task);
    auto index_of = [&](const std::string& name, std::size_t row) {
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) {
            fail(ErrorCode::UnknownLabel, "row " + std::to_string(row) + ": '" + name + "' is not a " +
                                              std::string(to_string(task)) + " class");
        }
        return static_cast<std::size_t>(it - names.begin());
    };
    auto cm = confusion_matrix({}, names.size(), names);
    std::istringstream is(std::string(data.begin(), data.end()));
    std::string line;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fields = detail::split_csv_line(line, row);
        if (row == 1 && fields[0] == "actual") continue;
        if (fields.size() < 2 || fields.size() > 3) {
            fail(ErrorCode::ParseError, "row " + std::to_string(row) + ": expected actual,predicted[,count]");
        }
        std::uint64_t count = 1;
        if (fields.size() == 3) {
            try {
                std::size_t used = 0;
                count = std::stoull(fields[2], &used);
                if (used != fields[2].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                fail(ErrorCode::ParseError, "row " + std::to_string(row) + ": bad count '" + fields[2] + "'");
            }
        }
        cm(index_of(fields[0], row), index_of(fields[1], row)) += count;
    }
    return cm;
}

inline void emit_report(const ConfusionMatrix& cm, const std::string& prefix, std::ostream& out) {
    const auto report = derive_metrics(cm);
    out << render_report(cm, report);
    write_text(prefix + ".metrics.csv", report_csv(report));
    write_text(prefix + ".confusion.csv", confusion_csv(cm));
    out << "\nCSV written to " << prefix << ".metrics.csv and " << prefix << ".confusion.csv\n";
}

/// Parses the manifest for the model's task; if its labels belong to the other
/// task instead, reports TaskMismatch.
inline DatasetManifest load_manifest_for(const fs::path& path, Task task) {
    try {
        return load_manifest(path, task);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::UnknownLabel) throw;
        const Task other = task == Task::Detection ? Task::Diagnosis : Task::Detection;
        try {
            load_manifest(path, other);
        } catch (const Error&) {
            throw e;
        }
        fail(ErrorCode::TaskMismatch, "model is a " + std::string(to_string(task)) + " model but " + path.string() +
                                          " is a " + std::string(to_string(other)) + " manifest");
    }
}

inline int cmd_evaluate(const GlobalOptions& g, const EvaluateOptions& o, std::ostream& out, std::ostream&) {
    if (!o.predictions.empty()) {
        const Task task = parse_task(o.task.empty() ? "detection" : o.task);
        const auto cm = read_predictions(o.predictions, task);
        emit_report(cm, o.out_prefix.empty() ? o.predictions : o.out_prefix, out);
        return kExitOk;
    }
    const auto model = load_model(o.model_path);
    const auto task = task_of(model.spec);
    if (!task) fail(ErrorCode::TaskMismatch, "model classes match neither task");
    if (!o.task.empty() && parse_task(o.task) != *task) {
        fail(ErrorCode::TaskMismatch, "--task " + o.task + " but the model is a " + std::string(to_string(*task)) + " model");
    }
    const auto manifest = load_manifest_for(o.manifest, *task);
    std::vector<std::size_t> indices;
    if (o.split == "all") {
        for (std::size_t i = 0; i < manifest.size(); ++i) indices.push_back(i);
    } else {
        const auto which = parse_split(o.split);
        if (!which) fail(ErrorCode::InvalidArgument, "unknown split '" + o.split + "'");
        // The split is recomputed from the seed the model was trained with.
        indices = stratified_split(manifest, {}, model.meta.seed).indices(*which);
    }
    if (indices.empty()) fail(ErrorCode::EmptySplit, "no entries in split '" + o.split + "'");
    const auto samples = load_samples(manifest, indices, model.profile, {}, g.threads);
    const auto ev = evaluate(model, samples, g.threads);
    out << o.split << " split: " << samples.size() << " samples, mean loss " << ev.mean_loss << "\n\n";
    emit_report(ev.confusion, o.out_prefix.empty() ? o.model_path : o.out_prefix, out);
    return kExitOk;
}

// ------------------------------------------------------------------- screen

struct ScreenOptions {
    std::vector<std::string> paths;
    std::string detector;
    std::string diagnoser;
    double threshold = 0.5;
    std::string window = "peak";
    std::string csv_path = "screen.csv";
};

/// Start sample of the diagnosis window inside a detection-length clip:
/// centered on the loudest short-time frame, or 0 for "leading".
inline std::size_t diagnosis_window_start(const AudioClip& clip, bool peak) {
    const auto len = static_cast<std::size_t>(std::llround(kDiagnosisWindowSeconds * clip.sample_rate));
    if (!peak || clip.size() <= len) return 0;
    const std::size_t frame = 1024, hop = 512;
    double best = -1.0;
    std::size_t best_center = 0;
    for (std::size_t start = 0; start + frame <= clip.size(); start += hop) {
        double energy = 0.0;
        for (std::size_t i = start; i < start + frame; ++i) energy += clip.samples[i] * clip.samples[i];
        if (energy > best) {
            best = energy;
            best_center = start + frame / 2;
        }
    }
    const std::size_t half = len / 2;
    const std::size_t start = best_center > half ? best_center - half : 0;
    return std::min(start, clip.size() - len);
}

struct ScreenRow {
    std::string path;
    double p_cough = 0.0;
    bool gate = false;
    std::vector<double> diagnosis; // empty when gated out
    std::string label;
    std::string error;
};

inline ScreenRow screen_file(const fs::path& path, const Model<float>& detector, const Model<float>& diagnoser,
                             const Matrix& det_fb, const Matrix& dia_fb, double threshold, bool peak) {
    ScreenRow row{path.string(), 0.0, false, {}, {}, {}};
    const auto clip = fit_detection_window(read_wav(path));
    const auto det = predict(detector, featurize(clip, detector.profile, det_fb));
    row.p_cough = det.probs.probs[1];
    row.gate = row.p_cough >= threshold;
    if (!row.gate) {
        row.label = detector.spec.class_names[0];
        return row;
    }
    const auto start = diagnosis_window_start(clip, peak);
    const auto len = static_cast<std::size_t>(std::llround(kDiagnosisWindowSeconds * clip.sample_rate));
    AudioClip cut{std::vector<double>(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                                      clip.samples.begin() + static_cast<std::ptrdiff_t>(start + len)),
                  clip.sample_rate, clip.source_id};
    const auto dia = predict(diagnoser, featurize(cut, diagnoser.profile, dia_fb));
    row.diagnosis = dia.probs.probs;
    row.label = diagnoser.spec.class_names[static_cast<std::size_t>(dia.label)];
    return row;
}

inline std::string screen_csv(const std::vector<ScreenRow>& rows) {
    std::ostringstream os;
    os << "path,p_cough,gate,p_bronchiolitis,p_bronchitis,p_pertussis,label\n";
    char buf[32];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        std::string path = r.path;
        if (path.find_first_of(",\"") != std::string::npos) {
            std::string q = "\"";
            for (char c : path) q += c == '"' ? std::string("\"\"") : std::string(1, c);
            path = q + "\"";
        }
        os << path << ',';
        if (!r.error.empty()) {
            os << ",,,,,error\n";
            continue;
        }
        os << num(r.p_cough) << ',' << (r.gate ? "pass" : "fail");
        for (std::size_t c = 0; c < 3; ++c) os << ',' << (r.diagnosis.empty() ? std::string{} : num(r.diagnosis[c]));
        os << ',' << r.label << '\n';
    }
    return os.str();
}

inline int cmd_screen(const GlobalOptions& g, const ScreenOptions& o, std::ostream& out, std::ostream& err) {
    const auto detector = load_model(o.detector);
    const auto diagnoser = load_model(o.diagnoser);
    if (task_of(detector.spec) != Task::Detection) {
        fail(ErrorCode::TaskMismatch, o.detector + " is not a detection model");
    }
    if (task_of(diagnoser.spec) != Task::Diagnosis) {
        fail(ErrorCode::TaskMismatch, o.diagnoser + " is not a diagnosis model");
    }
    const auto det_fb = mel_filterbank(detector.profile, kPipelineRate);
    const auto dia_fb = mel_filterbank(diagnoser.profile, kPipelineRate);
    const bool peak = o.window == "peak";

    std::vector<ScreenRow> rows(o.paths.size());
    parallel_for(o.paths.size(), g.threads, [&](std::size_t i) {
        try {
            rows[i] = screen_file(o.paths[i], detector, diagnoser, det_fb, dia_fb, o.threshold, peak);
        } catch (const Error& e) {
            rows[i] = ScreenRow{o.paths[i], 0.0, false, {}, {}, e.what()};
        }
    });

    std::size_t failures = 0;
    out << std::left << std::setw(40) << "file" << std::right << std::setw(9) << "P(cough)" << "  diagnosis\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(40) << r.path << std::right;
        if (!r.error.empty()) {
            ++failures;
            out << "  error\n";
            err << "error: " << r.error << '\n';
            continue;
        }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%9.3f", r.p_cough);
        out << buf << "  ";
        if (!r.gate) {
            out << "(no cough detected)\n";
            continue;
        }
        out << r.label << " (";
        for (std::size_t c = 0; c < r.diagnosis.size(); ++c) {
            std::snprintf(buf, sizeof buf, "%s%s %.3f", c ? ", " : "", diagnoser.spec.class_names[c].c_str(),
                          r.diagnosis[c]);
            out << buf;
        }
        out << ")\n";
    }
    write_text(o.csv_path, screen_csv(rows));
    out << "CSV written to " << o.csv_path << '\n';
    return failures == 0 ? kExitOk : kExitData;
}

// --------------------------------------------------------------------- main

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Cough detection and diagnosis from audio"};
    app.name("coughnet");
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "Read options from a TOML/INI key=value file");

    GlobalOptions g;
    app.add_option("--profile", g.profile, "Feature profile: paper, desk or a profile file")->capture_default_str();
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->capture_default_str();
    app.add_flag("-v,--verbose", g.verbose, "Print per-epoch progress");

    FeaturizeOptions fo;
    auto* featurize_cmd = app.add_subcommand("featurize", "Featurize every manifest entry into the feature cache");
    featurize_cmd->add_option("--manifest", fo.manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
    featurize_cmd->add_option("--task", fo.task, "detection or diagnosis")
        ->check(CLI::IsMember({"detection", "diagnosis"}))->capture_default_str();
    featurize_cmd->add_option("--out", fo.out_dir, "Cache directory (default: next to each audio file)");
    featurize_cmd->add_option("--png", fo.png_dir, "Also write PNG images here");

    TrainOptions to;
    auto* train_cmd = app.add_subcommand("train", "Train a model on the manifest's training split");
    train_cmd->add_option("--manifest", to.manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--task", to.task, "detection or diagnosis")
        ->check(CLI::IsMember({"detection", "diagnosis"}))->capture_default_str();
    train_cmd->add_option("--model", to.model_path, "Output model file")->required();
    train_cmd->add_option("--history", to.history_path, "History CSV (default: <model>.history.csv)");
    train_cmd->add_option("--cache", to.cache_dir, "Feature cache directory");
    train_cmd->add_option("--epochs", to.epochs, "Maximum epochs")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--patience", to.patience, "Early-stopping patience")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch-size", to.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", to.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--min-delta", to.min_delta, "Improvement that resets patience")->capture_default_str()->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--filters", to.filters, "Filters per conv layer")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--dense-units", to.dense_units, "Units per hidden dense layer")->capture_default_str()->check(CLI::PositiveNumber);

    EvaluateOptions eo;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Print metric tables for a model or a predictions file");
    auto* model_opt = evaluate_cmd->add_option("--model", eo.model_path, "Model file")->check(CLI::ExistingFile);
    auto* manifest_opt = evaluate_cmd->add_option("--manifest", eo.manifest, "Manifest CSV")->check(CLI::ExistingFile);
    auto* pred_opt = evaluate_cmd->add_option("--predictions", eo.predictions, "CSV of actual,predicted[,count]")
                         ->check(CLI::ExistingFile);
    model_opt->needs(manifest_opt);
    manifest_opt->needs(model_opt);
    pred_opt->excludes(model_opt);
    evaluate_cmd->add_option("--task", eo.task, "detection or diagnosis")->check(CLI::IsMember({"detection", "diagnosis"}));
    evaluate_cmd->add_option("--split", eo.split, "train, val, test or all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();
    evaluate_cmd->add_option("--out", eo.out_prefix, "Prefix for the CSV outputs");

    ScreenOptions so;
    auto* screen_cmd = app.add_subcommand("screen", "Detect coughs and diagnose the ones found");
    screen_cmd->add_option("files", so.paths, "Audio files")->required();
    screen_cmd->add_option("--detector", so.detector, "Detection model")->required()->check(CLI::ExistingFile);
    screen_cmd->add_option("--diagnoser", so.diagnoser, "Diagnosis model")->required()->check(CLI::ExistingFile);
    screen_cmd->add_option("--threshold", so.threshold, "P(cough) needed to diagnose")
        ->capture_default_str()->check(CLI::Range(0.0, 1.0));
    screen_cmd->add_option("--window", so.window, "Diagnosis window: peak or leading")
        ->check(CLI::IsMember({"peak", "leading"}))->capture_default_str();
    screen_cmd->add_option("--csv", so.csv_path, "CSV output path")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    if (*evaluate_cmd && eo.model_path.empty() && eo.predictions.empty()) {
        err << "evaluate needs --model with --manifest, or --predictions\n";
        return kExitUsage;
    }
    g.threads = resolve_threads(g.threads);

    try {
        if (*featurize_cmd) return cmd_featurize(g, fo, out, err);
        if (*train_cmd) return cmd_train(g, to, out, err);
        if (*evaluate_cmd) return cmd_evaluate(g, eo, out, err);
        if (*screen_cmd) return cmd_screen(g, so, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

} // namespace coughnet::cli
