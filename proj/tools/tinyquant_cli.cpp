// tinyquant: construct data -> train float32 -> quantize to int8 -> evaluate
// both flavors -> bench/budget-check, as one pipeline binary.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tinyquant/datakit.hpp"
#include "tinyquant/evalkit.hpp"
#include "tinyquant/int8_engine.hpp"
#include "tinyquant/model_io.hpp"
#include "tinyquant/netgraph.hpp"
#include "tinyquant/quantizer.hpp"
#include "tinyquant/rng.hpp"
#include "tinyquant/trainer.hpp"

namespace fs = std::filesystem;
using namespace tinyquant;

namespace {

std::string fixed(double v, int places) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(places) << v;
    return out.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::DataError, "cannot write '" + path + "'");
    out << text;
}

NetworkConfig resolve_arch(const std::string& arch) {
    try {
        return zoo(arch);
    } catch (const Error&) {
        if (fs::exists(arch)) return load_network_config(arch);
        throw Error(ErrorKind::NotFound, "unknown architecture or config path '" + arch + "'");
    }
}

// Predictions of one container (either flavor) over a sample set.
EvalRun run_model(const std::string& model_path, const std::vector<Sample>& samples,
                  ModelFlavor* flavor_out) {
    const std::vector<std::uint8_t> bytes = read_file(model_path);
    const ModelFlavor flavor = peek_flavor(bytes);
    if (flavor_out) *flavor_out = flavor;
    EvalRun run;
    run.preds.reserve(samples.size());
    run.truth.reserve(samples.size());
    if (flavor == ModelFlavor::Float32) {
        FloatModel fm = deserialize_float(bytes);
        Network net = lower(fm.cfg);
        for (const Sample& s : samples) {
            const auto rec = forward<float>(net, fm.params, s.image, RunMode::Infer);
            run.preds.push_back(rec.output >= 0.5f ? 1 : 0);
            run.truth.push_back(s.label);
        }
    } else {
        QuantizedModel qm = deserialize_int8(bytes);
        Int8Engine engine(qm);
        for (const Sample& s : samples) {
            run.preds.push_back(engine.infer(s.image).label);
            run.truth.push_back(s.label);
        }
    }
    return run;
}

struct Options {
    std::string dataset, test_set, out, format = "text", arch = "tinymask-ref";
    std::vector<std::string> models;
    std::uint64_t seed = 1;
    int count = 2000, epochs = 50, batch = 32, rep_samples = 100, budget_kb = 230, trials = 10,
        ops_per_image = 1;
    double val_frac = 0.1, clock_hz = 480e6, macs_per_cycle = 1.0;
};

int cmd_synth(const Options& opt) {
    DatasetManifest manifest = synth_dataset(opt.count, opt.seed);
    const char* dirs[2] = {"no_mask", "mask"};
    int ordinal[2] = {0, 0};
    for (int cls = 0; cls < 2; ++cls) fs::create_directories(fs::path(opt.out) / dirs[cls]);
    for (ManifestEntry& e : manifest.entries) {
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%05d.png", ordinal[e.label]++);
        e.path = (fs::path(opt.out) / dirs[e.label] / name).string();
        save_png(e.path, e.image);
    }
    write_text_file((fs::path(opt.out) / "index.csv").string(), manifest_index_csv(manifest));
    if (opt.format == "csv") {
        std::cout << "class,count\nmask," << manifest.count(1) << "\nno_mask," << manifest.count(0)
                  << '\n';
    } else {
        std::cout << "wrote " << manifest.entries.size() << " images under " << opt.out
                  << " (mask " << manifest.count(1) << ", no_mask " << manifest.count(0) << ")\n";
    }
    return 0;
}

int cmd_augment(const Options& opt) {
    const LoadReport loaded = load_dataset(opt.dataset);
    DatasetManifest out_manifest;
    for (std::size_t i = 0; i < loaded.manifest.entries.size(); ++i) {
        const ManifestEntry& e = loaded.manifest.entries[i];
        fs::create_directories(fs::path(opt.out) / e.tag);
        const std::string stem = fs::path(e.path).stem().string();
        const auto variants =
            augment_standard(e.image, mix_seed(opt.seed, static_cast<std::uint64_t>(i)),
                             opt.ops_per_image);
        for (std::size_t k = 0; k < variants.size(); ++k) {
            const auto resized = augment_interpolation(variants[k]);
            for (std::size_t m = 0; m < resized.size(); ++m) {
                ManifestEntry out_e;
                out_e.label = e.label;
                out_e.tag = e.tag;
                out_e.path = (fs::path(opt.out) / e.tag /
                              (stem + "_s" + std::to_string(k) + "_" +
                               resize_method_name(kAllResizeMethods[m]) + ".png"))
                                 .string();
                save_png(out_e.path, resized[m]);
                out_e.image = resized[m];
                out_manifest.entries.push_back(std::move(out_e));
            }
        }
    }
    write_text_file((fs::path(opt.out) / "index.csv").string(), manifest_index_csv(out_manifest));
    if (opt.format == "csv") {
        std::cout << "class,in,out\nmask," << loaded.manifest.count(1) << ','
                  << out_manifest.count(1) << "\nno_mask," << loaded.manifest.count(0) << ','
                  << out_manifest.count(0) << '\n';
    } else {
        std::cout << "augmented " << loaded.manifest.entries.size() << " -> "
                  << out_manifest.entries.size() << " images (mask " << out_manifest.count(1)
                  << ", no_mask " << out_manifest.count(0) << ", skipped "
                  << loaded.skipped.size() << ")\n";
    }
    return 0;
}

int cmd_train(const Options& opt) {
    const NetworkConfig net_cfg = resolve_arch(opt.arch);
    const LoadReport loaded = load_dataset(opt.dataset);
    auto [train_manifest, val_manifest] = split(loaded.manifest, opt.val_frac, opt.seed);

    TrainConfig cfg;
    cfg.max_epochs = opt.epochs;
    cfg.batch_size = opt.batch;
    cfg.seed = opt.seed;
    const TrainResult result =
        train(cfg, net_cfg, to_samples(train_manifest), to_samples(val_manifest));

    write_file(opt.out, serialize(net_cfg, result.best_params));
    const std::string history_path = opt.out + ".history.csv";
    write_text_file(history_path, history_to_csv(result.history));

    if (opt.format == "csv") {
        std::cout << "metric,value\nbest_epoch," << result.best_epoch << "\nval_accuracy,"
                  << fixed(result.best_val_accuracy, 4) << '\n';
    } else {
        std::cout << "trained " << net_cfg.name << " on " << train_manifest.entries.size()
                  << " samples (" << val_manifest.entries.size() << " validation)\n"
                  << "best epoch: " << result.best_epoch << "\n"
                  << "val accuracy: " << fixed(result.best_val_accuracy * 100.0, 2) << "%\n"
                  << "model: " << opt.out << "\nhistory: " << history_path << '\n';
    }
    return 0;
}

int cmd_quantize(const Options& opt) {
    const std::vector<std::uint8_t> float_bytes = read_file(opt.models.at(0));
    FloatModel fm = deserialize_float(float_bytes);
    Network net = lower(fm.cfg);

    const LoadReport loaded = load_dataset(opt.dataset);
    const std::vector<Sample> pool = to_samples(loaded.manifest);
    const std::vector<TensorF> reps = representative_sample(pool, opt.rep_samples, opt.seed);
    const CalibrationStats stats = calibrate(net, fm.params, reps);
    const QuantizedModel qm = quantize_model(net, fm.params, stats);

    const std::vector<std::uint8_t> int8_bytes = serialize(qm);
    write_file(opt.out, int8_bytes);

    const SizeReport sr = size_report(static_cast<std::int64_t>(float_bytes.size()),
                                      static_cast<std::int64_t>(int8_bytes.size()));
    const BudgetCheck bc = budget_check(static_cast<std::int64_t>(int8_bytes.size()),
                                        static_cast<std::int64_t>(opt.budget_kb) * 1024);
    if (opt.format == "csv") {
        std::cout << "metric,value\nfloat_bytes," << sr.float_bytes << "\nint8_bytes,"
                  << sr.int8_bytes << "\nreduction_pct," << fixed(sr.reduction_pct, 4)
                  << "\nbudget_bytes," << bc.budget_bytes << "\nbudget_pass," << (bc.pass ? 1 : 0)
                  << '\n';
    } else {
        std::cout << "float container: " << sr.float_bytes << " bytes\n"
                  << "int8 container:  " << sr.int8_bytes << " bytes\n"
                  << "size reduction:  " << fixed(sr.reduction_pct, 2) << "%\n"
                  << "budget: " << (bc.pass ? "pass" : "WARNING: over budget") << " ("
                  << bc.model_bytes << " / " << bc.budget_bytes << " bytes, margin " << bc.margin
                  << ")\n"
                  << "model: " << opt.out << '\n';
    }
    return 0;
}

int cmd_eval(const Options& opt) {
    const LoadReport loaded = load_dataset(opt.test_set);
    const std::vector<Sample> samples = to_samples(loaded.manifest);

    std::vector<std::pair<ModelFlavor, EvalRun>> runs;
    for (const std::string& path : opt.models) {
        ModelFlavor flavor;
        EvalRun run = run_model(path, samples, &flavor);
        const ClassificationReport rep = report(confusion(run.preds, run.truth));
        if (opt.format == "csv") {
            std::cout << "model," << path << ",flavor,"
                      << (flavor == ModelFlavor::Float32 ? "float32" : "int8") << '\n'
                      << report_csv(rep);
        } else {
            std::cout << "== " << path << " ("
                      << (flavor == ModelFlavor::Float32 ? "float32" : "int8") << ") ==\n"
                      << confusion_text(confusion(run.preds, run.truth)) << report_text(rep);
        }
        runs.emplace_back(flavor, std::move(run));
    }

    if (runs.size() == 2) {
        const bool first_float = runs[0].first == ModelFlavor::Float32;
        if (runs[0].first == runs[1].first) {
            throw Error(ErrorKind::FormatError,
                        "comparison needs one float32 and one int8 container");
        }
        const EvalRun& float_run = first_float ? runs[0].second : runs[1].second;
        const EvalRun& int8_run = first_float ? runs[1].second : runs[0].second;
        const CompareReport cmp = compare(float_run, int8_run);
        std::cout << (opt.format == "csv" ? compare_csv(cmp) : compare_text(cmp));
    }
    return 0;
}

int cmd_bench(const Options& opt) {
    const std::vector<std::uint8_t> bytes = read_file(opt.models.at(0));
    if (peek_flavor(bytes) != ModelFlavor::Int8) {
        throw Error(ErrorKind::FormatError, "bench requires an int8 container");
    }
    QuantizedModel qm = deserialize_int8(bytes);
    const BenchReport rep = bench(qm, opt.trials, opt.clock_hz, opt.macs_per_cycle);
    std::cout << (opt.format == "csv" ? bench_report_csv(rep) : bench_report_text(rep));
    return 0;
}

int cmd_info(const Options& opt) {
    const ContainerInfo info = inspect(read_file(opt.models.at(0)));
    const BudgetCheck bc =
        budget_check(info.container_bytes, static_cast<std::int64_t>(opt.budget_kb) * 1024);
    if (opt.format == "csv") {
        std::cout << "field,value\nversion," << info.version << "\nflavor,"
                  << (info.flavor == ModelFlavor::Float32 ? "float32" : "int8")
                  << "\npayload_bytes," << info.payload_bytes << "\ncrc32," << std::hex
                  << info.crc32 << std::dec << "\nnetwork," << info.network_name
                  << "\nparam_layers," << info.param_layers << "\nparam_count,"
                  << info.param_count << "\ncontainer_bytes," << info.container_bytes
                  << "\nbudget_pass," << (bc.pass ? 1 : 0) << '\n';
    } else {
        std::cout << "version:         " << info.version << '\n'
                  << "flavor:          "
                  << (info.flavor == ModelFlavor::Float32 ? "float32" : "int8") << '\n'
                  << "payload bytes:   " << info.payload_bytes << '\n'
                  << "crc32:           0x" << std::hex << info.crc32 << std::dec << '\n'
                  << "network:         " << info.network_name << '\n'
                  << "param layers:    " << info.param_layers << '\n'
                  << "param count:     " << info.param_count << '\n'
                  << "container bytes: " << info.container_bytes << '\n'
                  << "budget:          " << (bc.pass ? "pass" : "over") << " ("
                  << info.container_bytes << " / " << bc.budget_bytes << " bytes)\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tinyquant: train, quantize, and evaluate tiny mask-detection CNNs"};
    app.require_subcommand(1);
    Options opt;

    auto add_format = [&](CLI::App* sub) {
        sub->add_option("--format", opt.format, "output format")
            ->check(CLI::IsMember({"text", "csv"}));
    };
    auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", opt.seed, "random seed"); };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic two-class dataset");
    synth->add_option("--out", opt.out, "output dataset root")->required();
    synth->add_option("--count", opt.count, "total images (even)");
    add_seed(synth);
    add_format(synth);

    CLI::App* augment =
        app.add_subcommand("augment", "standard + interpolation augmentation of a dataset");
    augment->add_option("--dataset", opt.dataset, "input dataset root")->required();
    augment->add_option("--out", opt.out, "output dataset root")->required();
    augment->add_option("--ops-per-image", opt.ops_per_image, "standard variants per image");
    add_seed(augment);
    add_format(augment);

    CLI::App* train_cmd = app.add_subcommand("train", "train a float32 model");
    train_cmd->add_option("--dataset", opt.dataset, "dataset root")->required();
    train_cmd->add_option("--out", opt.out, "output model file")->required();
    train_cmd->add_option("--arch", opt.arch, "architecture name or config file");
    train_cmd->add_option("--epochs", opt.epochs, "max epochs");
    train_cmd->add_option("--batch", opt.batch, "batch size");
    train_cmd->add_option("--val-frac", opt.val_frac, "validation fraction");
    add_seed(train_cmd);
    add_format(train_cmd);

    CLI::App* quantize_cmd = app.add_subcommand("quantize", "convert a float32 model to int8");
    quantize_cmd->add_option("--model", opt.models, "input float32 model")
        ->required()
        ->expected(1);
    quantize_cmd->add_option("--dataset", opt.dataset, "calibration dataset root")->required();
    quantize_cmd->add_option("--out", opt.out, "output model file")->required();
    quantize_cmd->add_option("--rep-samples", opt.rep_samples, "representative sample count");
    quantize_cmd->add_option("--budget-kb", opt.budget_kb, "flash budget in KB");
    add_seed(quantize_cmd);
    add_format(quantize_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate model(s) on a held-out test set");
    eval_cmd->add_option("--model", opt.models, "model file (repeat for float32 + int8 compare)")
        ->required()
        ->expected(1, 2);
    eval_cmd->add_option("--test-set", opt.test_set, "test dataset root")->required();
    add_format(eval_cmd);

    CLI::App* bench_cmd = app.add_subcommand("bench", "MAC counts, arena peak, latency, FPS");
    bench_cmd->add_option("--model", opt.models, "int8 model file")->required()->expected(1);
    bench_cmd->add_option("--trials", opt.trials, "host timing trials");
    bench_cmd->add_option("--clock-hz", opt.clock_hz, "device clock in Hz");
    bench_cmd->add_option("--macs-per-cycle", opt.macs_per_cycle, "device MACs per cycle");
    add_format(bench_cmd);

    CLI::App* info_cmd = app.add_subcommand("info", "inspect a model container");
    info_cmd->add_option("--model", opt.models, "model file")->required()->expected(1);
    info_cmd->add_option("--budget-kb", opt.budget_kb, "flash budget in KB");
    add_format(info_cmd);

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(opt);
        if (augment->parsed()) return cmd_augment(opt);
        if (train_cmd->parsed()) return cmd_train(opt);
        if (quantize_cmd->parsed()) return cmd_quantize(opt);
        if (eval_cmd->parsed()) return cmd_eval(opt);
        if (bench_cmd->parsed()) return cmd_bench(opt);
        if (info_cmd->parsed()) return cmd_info(opt);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        switch (e.kind()) {
            case ErrorKind::UsageError:
            case ErrorKind::DataError:
            case ErrorKind::NotFound:
            case ErrorKind::ConfigError:
            case ErrorKind::FormatError:
            case ErrorKind::CorruptionError:
            case ErrorKind::VersionError:
                return 2;
            default:
                return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
