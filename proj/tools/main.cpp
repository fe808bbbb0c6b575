#include "commands.hpp"

#include "rfa/run_config.hpp"
#include "rfa/tensor.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>
#include <string>

namespace {

// Flags land in the same key space as the config file; flags win.
struct FlagSet {
    std::map<std::string, std::string> values;

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { values[key] = v; }, help);
    }
};

rfa::RunConfig assemble(const std::string& config_path, const FlagSet& flags) {
    rfa::RunConfig config;
    if (!config_path.empty()) config = rfa::RunConfig::from_file(config_path);
    for (const auto& [key, value] : flags.values) config.set(key, value);
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"receptive-field attention convolutions: verification and desk-scale training"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "key=value config file ('#' comments)");

    FlagSet flags;
    const auto add_common = [&](CLI::App* sub) {
        flags.add(sub, "--seed", "seed", "deterministic seed");
        flags.add(sub, "--factory", "factory", "convolution factory: standard|rfa|rfcbam|rfca|naive_sa");
        flags.add(sub, "--k", "k", "window size");
        flags.add(sub, "--out", "out", "output directory for artifacts");
    };

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks for every primitive and layer");
    add_common(gradcheck);
    flags.add(gradcheck, "--tol", "tol", "override both tolerance tiers");
    flags.add(gradcheck, "--mutate", "mutate", "deliberately corrupt a backward (conv_backward)");

    CLI::App* equivalence = app.add_subcommand("equivalence", "unfold/group-conv, reduction and weight-sharing checks");
    add_common(equivalence);

    CLI::App* bench = app.add_subcommand("bench-extract", "time unfold vs grouped-conv extraction paths");
    add_common(bench);
    flags.add(bench, "--bench-n", "bench_n", "batch size of the benchmark input");
    flags.add(bench, "--bench-channels", "bench_channels", "comma list of channel counts");
    flags.add(bench, "--bench-sizes", "bench_sizes", "comma list of square extents");
    flags.add(bench, "--bench-warm", "bench_warm", "warmup iterations (min 20)");
    flags.add(bench, "--bench-iters", "bench_iters", "timed iterations (min 100)");

    CLI::App* train = app.add_subcommand("train", "desk-scale training on IDX or synthetic oriented bars");
    add_common(train);
    flags.add(train, "--model", "model", "tinynet|resnet18|resnet34");
    flags.add(train, "--classes", "classes", "class count");
    flags.add(train, "--epochs", "epochs", "training epochs");
    flags.add(train, "--batch", "batch", "batch size");
    flags.add(train, "--lr0", "lr0", "initial learning rate");
    flags.add(train, "--hw", "hw", "synthetic image extent");
    flags.add(train, "--train-count", "train_count", "synthetic training set size");
    flags.add(train, "--test-count", "test_count", "synthetic test set size");
    flags.add(train, "--images", "images", "IDX image file");
    flags.add(train, "--labels", "labels", "IDX label file");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval);
    flags.add(eval, "--model", "model", "tinynet|resnet18|resnet34");
    flags.add(eval, "--classes", "classes", "class count");
    flags.add(eval, "--checkpoint", "checkpoint", "checkpoint file");
    flags.add(eval, "--hw", "hw", "synthetic image extent");
    flags.add(eval, "--test-count", "test_count", "synthetic test set size");
    flags.add(eval, "--images", "images", "IDX image file");
    flags.add(eval, "--labels", "labels", "IDX label file");

    CLI::App* count = app.add_subcommand("count", "parameter and multiply-accumulate accounting");
    add_common(count);
    flags.add(count, "--model", "model", "tinynet|resnet18|resnet34");
    flags.add(count, "--classes", "classes", "class count");
    flags.add(count, "--hw", "hw", "input extent for the MAC count");

    CLI::App* gradcam = app.add_subcommand("gradcam", "emit a class-activation heatmap as PGM");
    add_common(gradcam);
    flags.add(gradcam, "--model", "model", "tinynet|resnet18|resnet34");
    flags.add(gradcam, "--classes", "classes", "class count");
    flags.add(gradcam, "--checkpoint", "checkpoint", "checkpoint file");
    flags.add(gradcam, "--images", "images", "IDX image file");
    flags.add(gradcam, "--labels", "labels", "IDX label file");
    flags.add(gradcam, "--index", "index", "image index");
    flags.add(gradcam, "--class", "class", "target class (defaults to the image label)");
    flags.add(gradcam, "--hw", "hw", "synthetic image extent");
    flags.add(gradcam, "--test-count", "test_count", "synthetic test set size");

    CLI11_PARSE(app, argc, argv);

    try {
        const rfa::RunConfig config = assemble(config_path, flags);
        if (gradcheck->parsed()) return rfa::cmd::cmd_gradcheck(config, std::cout);
        if (equivalence->parsed()) return rfa::cmd::cmd_equivalence(config, std::cout);
        if (bench->parsed()) return rfa::cmd::cmd_bench_extract(config, std::cout);
        if (train->parsed()) return rfa::cmd::cmd_train(config, std::cout);
        if (eval->parsed()) return rfa::cmd::cmd_eval(config, std::cout);
        if (count->parsed()) return rfa::cmd::cmd_count(config, std::cout);
        if (gradcam->parsed()) return rfa::cmd::cmd_gradcam(config, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
