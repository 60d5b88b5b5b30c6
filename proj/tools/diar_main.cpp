// diar: speaker diarization toolkit CLI.
// Subcommands: features, train, diarize, score, synth, inspect.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "diar/audio.hpp"
#include "diar/error.hpp"
#include "diar/features.hpp"
#include "diar/manifest.hpp"
#include "diar/metrics.hpp"
#include "diar/model.hpp"
#include "diar/parallel.hpp"
#include "diar/pipeline.hpp"
#include "diar/rttm.hpp"
#include "diar/synth.hpp"
#include "diar/wav.hpp"

namespace fs = std::filesystem;
using namespace diar;

namespace {

int exit_code_for(const Error& e) {
    return e.code() == errc::io_error ? 2 : 3;
}

AudioBuffer load_mono_16k(const std::string& path, int target_rate = kModelSampleRate) {
    int clipped = 0;
    AudioBuffer buf = load_wav(path, &clipped);
    if (clipped > 0)
        std::fprintf(stderr, "warning: %d clipped samples in %s\n", clipped, path.c_str());
    return resample(to_mono(buf), target_rate);
}

std::string resolve_model_path(const std::string& path) {
    if (fs::exists(path)) return path;
    if (const char* dir = std::getenv("DIAR_MODEL_DIR")) {
        const fs::path alt = fs::path(dir) / path;
        if (fs::exists(alt)) return alt.string();
    }
    raise(errc::io_error, "model checkpoint not found: " + path);
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

struct FeaturesArgs {
    std::string wav_path;
    std::string kind = "cqt";
    std::string out_path;
    bool csv = false;
    int segment = -1;
    int sample_rate = kModelSampleRate;
};

int run_features(const FeaturesArgs& args) {
    const FeatureKind kind = feature_kind_from_name(args.kind);
    AudioBuffer audio = load_mono_16k(args.wav_path, args.sample_rate);

    FeatureMatrix feat;
    if (args.segment >= 0) {
        if (audio.sample_rate != kModelSampleRate)
            raise(errc::validation, "segment extraction requires 16 kHz");
        auto windows = segment_stream(audio);
        if (args.segment >= static_cast<int>(windows.size()))
            raise(errc::validation,
                  "segment index " + std::to_string(args.segment) + " out of range (" +
                      std::to_string(windows.size()) + " windows)");
        feat = normalize(extract_features(windows[args.segment].samples, kind));
    } else {
        feat = extract_features(audio.samples, kind);
    }

    if (args.csv) {
        if (args.out_path.empty())
            write_feature_csv(feat, "/dev/stdout");
        else
            write_feature_csv(feat, args.out_path);
    } else {
        if (args.out_path.empty())
            raise(errc::validation, "binary feature dump requires --out");
        write_feature_bin(feat, args.out_path);
    }
    std::fprintf(stderr, "features: kind=%s rows=%d cols=%d\n", feature_kind_name(feat.kind),
                 feat.rows, feat.cols);
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string manifest_path;
    std::string features = "cqt";
    std::string head = "sigmoid";
    std::string out_path = "model.ckpt";
    std::string report_path;
    int epochs = 20;
    int batch = 128;
    uint64_t seed = 1;
    double split = 0.7;
    double lr = 1e-3;
    double target_accuracy = -1.0;
    int threads = default_threads();
    bool verbose = false;
};

int run_train(const TrainArgs& args) {
    const FeatureKind kind = feature_kind_from_name(args.features);
    const Manifest manifest = load_manifest(args.manifest_path);
    if (manifest.class_labels.size() < 2)
        raise(errc::validation, "train: need >= 2 classes, manifest has " +
                                    std::to_string(manifest.class_labels.size()));

    std::vector<Sample> tagged_train, tagged_test, untagged;
    for (const auto& rec : manifest.records) {
        if (rec.label.empty())
            raise(errc::validation, args.manifest_path + ":" + std::to_string(rec.line_no) +
                                        ": training needs label records, found rttm");
        AudioBuffer audio = load_mono_16k(rec.wav_path);
        const int label = manifest.label_index(rec.label);
        for (const SegmentWindow& w : segment_stream(audio)) {
            Sample s;
            s.features = normalize(extract_features(w.samples, kind));
            s.label = label;
            if (rec.split == "train")
                tagged_train.push_back(std::move(s));
            else if (rec.split == "test")
                tagged_test.push_back(std::move(s));
            else
                untagged.push_back(std::move(s));
        }
    }

    std::vector<Sample> train_set, holdout;
    if (manifest.has_split_tags) {
        train_set = std::move(tagged_train);
        holdout = std::move(tagged_test);
    } else {
        std::tie(train_set, holdout) = split_dataset(std::move(untagged), args.split, args.seed);
    }
    if (train_set.empty()) raise(errc::validation, "train: no training segments");
    std::fprintf(stderr, "train: %zu train segments, %zu held-out, %zu classes\n",
                 train_set.size(), holdout.size(), manifest.class_labels.size());

    RcnnConfig config;
    config.n_classes = static_cast<int>(manifest.class_labels.size());
    config.head = args.head == "softmax" ? Head::softmax : Head::sigmoid;
    config.feature_kind = kind;
    RcnnModel model(config, args.seed);

    TrainOptions options;
    options.epochs = args.epochs;
    options.batch_size = args.batch;
    options.seed = args.seed;
    options.lr = args.lr;
    options.target_holdout_accuracy = args.target_accuracy;
    options.threads = args.threads;
    options.verbose = args.verbose;

    const TrainReport report = train(model, train_set, holdout, options);
    save_model(model, args.out_path);

    std::ostringstream text;
    text << "# epoch mean_loss train_acc holdout_acc\n";
    for (size_t i = 0; i < report.epochs.size(); ++i) {
        const auto& e = report.epochs[i];
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%zu %.6f %.4f %.4f\n", i, e.mean_loss,
                      e.train_accuracy, e.holdout_accuracy);
        text << buf;
    }
    if (!args.report_path.empty()) {
        std::ofstream rf(args.report_path, std::ios::trunc);
        if (!rf) raise(errc::io_error, "cannot write report: " + args.report_path);
        rf << text.str();
    }
    std::cout << text.str();
    std::printf(
        "RESULT checkpoint=%s classes=%zu epochs_run=%zu steps=%lld final_train_acc=%.4f "
        "final_holdout_acc=%.4f wall_seconds=%.1f\n",
        args.out_path.c_str(), manifest.class_labels.size(), report.epochs.size(),
        static_cast<long long>(report.steps),
        report.epochs.empty() ? 0.0 : report.epochs.back().train_accuracy,
        report.final_holdout_accuracy, report.wall_seconds);
    return 0;
}

// ---------------------------------------------------------------------------
// diarize
// ---------------------------------------------------------------------------

struct DiarizeArgs {
    std::string wav_path;
    std::string model_path;
    std::string features; // empty = take from checkpoint
    std::string out_path;
    std::string file_id;
    std::string threshold_mode = "distance";
    double threshold = 0.4;
    int smooth = 2;
    double min_turn = 0.5;
    bool vad = false;
    double vad_threshold_db = -40.0;
    int threads = default_threads();
};

int run_diarize(const DiarizeArgs& args) {
    RcnnModel model = load_model(resolve_model_path(args.model_path));

    PipelineConfig config;
    config.features =
        args.features.empty() ? model.config().feature_kind : feature_kind_from_name(args.features);
    config.threshold = args.threshold;
    config.threshold_mode = threshold_mode_from_name(args.threshold_mode);
    config.smoothing_halfwidth = args.smooth;
    config.min_turn_duration = args.min_turn;
    config.vad_enabled = args.vad;
    config.vad_threshold_db = args.vad_threshold_db;
    config.threads = args.threads;
    config.file_id =
        args.file_id.empty() ? fs::path(args.wav_path).stem().string() : args.file_id;

    int clipped = 0;
    AudioBuffer audio = load_wav(args.wav_path, &clipped);
    if (clipped > 0)
        std::fprintf(stderr, "warning: %d clipped samples in %s\n", clipped,
                     args.wav_path.c_str());

    const Timeline timeline = diarize(audio, model, config);

    std::fprintf(stderr, "# %6s %8s %8s  speaker\n", "turn", "start", "end");
    for (size_t i = 0; i < timeline.turns.size(); ++i)
        std::fprintf(stderr, "  %6zu %8.2f %8.2f  %s\n", i, timeline.turns[i].start,
                     timeline.turns[i].end, timeline.turns[i].speaker.c_str());

    if (args.out_path.empty())
        write_rttm_stream(timeline, std::cout);
    else
        write_rttm(timeline, args.out_path);
    return 0;
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreArgs {
    std::string ref_path;
    std::string hyp_path;
    double collar = 0.25;
};

int run_score(const ScoreArgs& args) {
    const Timeline ref = parse_rttm(args.ref_path);
    const Timeline hyp = parse_rttm(args.hyp_path);
    const DerReport report = der(ref, hyp, args.collar);

    std::printf("scored reference speech: %.3f s (collar %.3f s)\n", report.scored_time,
                args.collar);
    std::printf("speaker mapping (hyp -> ref):");
    if (report.mapping.empty()) std::printf(" none");
    for (const auto& [h, r] : report.mapping) std::printf(" %s->%s", h.c_str(), r.c_str());
    std::printf("\n");
    std::printf("  E_Spk  %6.2f%%\n", 100.0 * report.e_spk);
    std::printf("  E_FA   %6.2f%%\n", 100.0 * report.e_fa);
    std::printf("  E_Miss %6.2f%%\n", 100.0 * report.e_miss);
    std::printf("  DER    %6.2f%%\n", 100.0 * report.der);
    std::printf("RESULT der=%.6f e_spk=%.6f e_fa=%.6f e_miss=%.6f scored_time=%.6f\n",
                report.der, report.e_spk, report.e_fa, report.e_miss, report.scored_time);
    return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    int speakers = 8;
    uint64_t seed = 7;
    double duration = 90.0;
    std::string out_dir;
    std::string dialogue; // "0:15,1:15,..." speaker:duration turns
};

std::vector<TurnPlan> parse_dialogue(const std::string& text) {
    std::vector<TurnPlan> plan;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const size_t colon = item.find(':');
        if (colon == std::string::npos)
            raise(errc::validation, "bad --dialogue entry '" + item + "', expected spk:seconds");
        try {
            plan.push_back({std::stoi(item.substr(0, colon)),
                            std::stod(item.substr(colon + 1))});
        } catch (const std::exception&) {
            raise(errc::validation, "bad --dialogue entry '" + item + "'");
        }
    }
    if (plan.empty()) raise(errc::validation, "--dialogue has no turns");
    return plan;
}

int run_synth(const SynthArgs& args) {
    fs::create_directories(args.out_dir);
    const auto speakers = make_speakers(args.speakers, args.seed);

    if (!args.dialogue.empty()) {
        const auto plan = parse_dialogue(args.dialogue);
        auto [audio, timeline] = make_dialogue(speakers, plan, "dialogue");
        save_wav(audio, (fs::path(args.out_dir) / "dialogue.wav").string());
        write_rttm(timeline, (fs::path(args.out_dir) / "dialogue.rttm").string());
        std::printf("RESULT dialogue=%s turns=%zu duration=%.3f\n",
                    (fs::path(args.out_dir) / "dialogue.wav").c_str(), timeline.turns.size(),
                    audio.duration());
        return 0;
    }

    std::ofstream manifest(fs::path(args.out_dir) / "manifest.tsv", std::ios::trunc);
    manifest << "# wav\tlabel\n";
    for (const auto& s : speakers) {
        const std::string stem = "spk" + std::to_string(s.id);
        AudioBuffer audio = render(s, args.duration, /*seed=*/0);
        save_wav(audio, (fs::path(args.out_dir) / (stem + ".wav")).string());
        Timeline ref;
        ref.file_id = stem;
        ref.turns.push_back({0.0, audio.duration(), stem});
        write_rttm(ref, (fs::path(args.out_dir) / (stem + ".rttm")).string());
        manifest << stem << ".wav\t" << stem << "\n";
    }
    std::printf("RESULT corpus=%s speakers=%d duration=%.1f manifest=%s\n",
                args.out_dir.c_str(), args.speakers, args.duration,
                (fs::path(args.out_dir) / "manifest.tsv").c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

int run_inspect(const std::string& path) {
    RcnnModel model = load_model(resolve_model_path(path));
    const RcnnConfig& c = model.config();
    std::printf("checkpoint: %s\n", path.c_str());
    std::printf("  input: %d x %d, feature kind %s\n", c.input_bins, c.input_frames,
                feature_kind_name(c.feature_kind));
    std::printf("  conv channels: %d %d %d %d\n", c.conv_channels[0], c.conv_channels[1],
                c.conv_channels[2], c.conv_channels[3]);
    std::printf("  pool sizes: (%d,%d) (%d,%d) (%d,%d) (%d,%d)\n", c.pool_sizes[0][0],
                c.pool_sizes[0][1], c.pool_sizes[1][0], c.pool_sizes[1][1], c.pool_sizes[2][0],
                c.pool_sizes[2][1], c.pool_sizes[3][0], c.pool_sizes[3][1]);
    std::printf("  gru: %d layers, hidden %d; head %s; classes %d\n", c.gru_layers,
                c.gru_hidden, c.head == Head::sigmoid ? "sigmoid" : "softmax", c.n_classes);
    std::printf("  dropout: conv %.2f, recurrent %.2f\n", c.dropout_conv, c.dropout_rnn);
    std::printf("  learnable layers: %d\n", model.learnable_layer_count());
    std::printf("  training steps: %lld\n", static_cast<long long>(model.step_counter));

    size_t total = 0;
    for (const auto& p : model.params()) {
        std::printf("  %-14s [", p.name.c_str());
        for (size_t i = 0; i < p.value->shape.size(); ++i)
            std::printf("%s%d", i ? ", " : "", p.value->shape[i]);
        std::printf("] %zu\n", p.value->numel());
        total += p.value->numel();
    }
    std::printf("  total parameters: %zu\n", total);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"diar: speaker diarization with R-CNN speaker embeddings"};
    app.require_subcommand(1);

    FeaturesArgs feat_args;
    auto* feat_cmd = app.add_subcommand("features", "dump a feature matrix from a WAV file");
    feat_cmd->add_option("wav", feat_args.wav_path, "input WAV file")->required();
    feat_cmd->add_option("--kind", feat_args.kind, "sftf|logmel|gammatone|cqt");
    feat_cmd->add_option("--out", feat_args.out_path, "output path");
    feat_cmd->add_flag("--csv", feat_args.csv, "CSV debug output instead of binary");
    feat_cmd->add_option("--segment", feat_args.segment,
                         "dump normalized network input for segment index");
    feat_cmd->add_option("--sample-rate", feat_args.sample_rate,
                         "resample target override (diagnostics only)");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train the speaker classifier");
    train_cmd->add_option("--manifest", train_args.manifest_path, "dataset manifest")->required();
    train_cmd->add_option("--features", train_args.features, "sftf|logmel|gammatone|cqt");
    train_cmd->add_option("--epochs", train_args.epochs, "max epochs");
    train_cmd->add_option("--batch", train_args.batch, "mini-batch size");
    train_cmd->add_option("--seed", train_args.seed, "rng seed");
    train_cmd->add_option("--head", train_args.head, "sigmoid|softmax");
    train_cmd->add_option("--split", train_args.split, "train fraction for auto split");
    train_cmd->add_option("--lr", train_args.lr, "Adam learning rate");
    train_cmd->add_option("--target-accuracy", train_args.target_accuracy,
                          "stop early at this held-out accuracy");
    train_cmd->add_option("--threads", train_args.threads, "worker threads");
    train_cmd->add_option("--out", train_args.out_path, "checkpoint path");
    train_cmd->add_option("--report", train_args.report_path, "write text report here");
    train_cmd->add_flag("--verbose", train_args.verbose, "per-epoch progress on stderr");

    DiarizeArgs diar_args;
    auto* diar_cmd = app.add_subcommand("diarize", "diarize a WAV file");
    diar_cmd->add_option("wav", diar_args.wav_path, "input WAV file")->required();
    diar_cmd->add_option("--model", diar_args.model_path, "checkpoint path")->required();
    diar_cmd->add_option("--features", diar_args.features,
                         "feature kind (must match the checkpoint)");
    diar_cmd->add_option("--out", diar_args.out_path, "output RTTM (stdout if omitted)");
    diar_cmd->add_option("--file-id", diar_args.file_id, "RTTM file id (default: wav stem)");
    diar_cmd->add_option("--threshold", diar_args.threshold, "enrollment threshold");
    diar_cmd->add_option("--threshold-mode", diar_args.threshold_mode, "distance|literal");
    diar_cmd->add_option("--smooth", diar_args.smooth, "majority smoothing half-width");
    diar_cmd->add_option("--min-turn", diar_args.min_turn, "minimum turn duration (s)");
    diar_cmd->add_flag("--vad", diar_args.vad, "enable energy VAD");
    diar_cmd->add_option("--vad-threshold-db", diar_args.vad_threshold_db,
                         "VAD threshold in dB below stream RMS");
    diar_cmd->add_option("--threads", diar_args.threads, "worker threads");

    ScoreArgs score_args;
    auto* score_cmd = app.add_subcommand("score", "score hypothesis RTTM against reference");
    score_cmd->add_option("--ref", score_args.ref_path, "reference RTTM")->required();
    score_cmd->add_option("--hyp", score_args.hyp_path, "hypothesis RTTM")->required();
    score_cmd->add_option("--collar", score_args.collar, "acceptance margin (s)");

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic speaker corpus");
    synth_cmd->add_option("--speakers", synth_args.speakers, "number of speakers");
    synth_cmd->add_option("--seed", synth_args.seed, "rng seed");
    synth_cmd->add_option("--duration", synth_args.duration, "seconds per speaker");
    synth_cmd->add_option("--out", synth_args.out_dir, "output directory")->required();
    synth_cmd->add_option("--dialogue", synth_args.dialogue,
                          "emit one dialogue instead: spk:sec,spk:sec,...");

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "print checkpoint details");
    inspect_cmd->add_option("checkpoint", inspect_path, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1; // usage errors -> 1, --help -> 0
    }

    try {
        if (feat_cmd->parsed()) return run_features(feat_args);
        if (train_cmd->parsed()) return run_train(train_args);
        if (diar_cmd->parsed()) return run_diarize(diar_args);
        if (score_cmd->parsed()) return run_score(score_args);
        if (synth_cmd->parsed()) return run_synth(synth_args);
        if (inspect_cmd->parsed()) return run_inspect(inspect_path);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 1;
}
