#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcnn.hpp"

namespace dcnn::cli {

namespace detail {

// Shortest decimal representation that round-trips the exact value.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    const int n = std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return std::string(buf, buf + n);
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    return file;
}

inline int env_threads() {
    const char* env = std::getenv("DIGIT_CNN_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    int n = 0;
    const std::string s(env);
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec != std::errc() || p != s.data() + s.size() || n < 1) {
        throw CLI::ValidationError("DIGIT_CNN_THREADS", "must be a positive integer");
    }
    return n;
}

} // namespace detail

// Per-epoch metrics CSV; losses at full round-trip precision, accuracies at
// six decimals.
inline void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
    auto file = detail::open_output(path);
    file << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    for (const EpochMetrics& m : rows) {
        file << m.epoch << ',' << detail::format_double(m.train_loss) << ','
             << detail::format_fixed(m.train_accuracy, 6) << ','
             << detail::format_double(m.val_loss) << ','
             << detail::format_fixed(m.val_accuracy, 6) << '\n';
    }
    if (!file) throw IoError("failed writing '" + path + "'");
}

// 10x10 confusion table; rows are predicted digits, columns true digits.
inline void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
    auto file = detail::open_output(path);
    file << "predicted";
    for (int t = 0; t < 10; ++t) file << ",true_" << t;
    file << '\n';
    for (int p = 0; p < 10; ++p) {
        file << p;
        for (int t = 0; t < 10; ++t) file << ',' << cm.counts[p][t];
        file << '\n';
    }
    if (!file) throw IoError("failed writing '" + path + "'");
}

// Kaggle submission format: ImageId starting at 1.
inline void write_predictions_csv(const std::string& path, const std::vector<int>& labels) {
    auto file = detail::open_output(path);
    file << "ImageId,Label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        file << i + 1 << ',' << labels[i] << '\n';
    }
    if (!file) throw IoError("failed writing '" + path + "'");
}

// The layer/shape table plus the trainable parameter count.
inline void print_summary(const NetworkModel<float>& model, std::ostream& out) {
    out << "Layers          Output Shape\n";
    for (const LayerInfo& info : layer_summary(model)) {
        std::string name = info.name;
        name.resize(16, ' ');
        out << name << dcnn::detail::shape_str(info.output_shape) << '\n';
    }
    out << "Total parameters: " << model.parameter_count() << '\n';
}

namespace detail {

struct TrainOptions {
    std::string data_path;
    std::string out_path;
    std::string metrics_path;
    TrainConfig cfg;
    int kernel_size = 3;
    int threads = 0; // 0: fall back to DIGIT_CNN_THREADS or 1
};

inline int run_train(const TrainOptions& opt, std::ostream& out) {
    TrainConfig cfg = opt.cfg;
    cfg.threads = opt.threads > 0 ? opt.threads : env_threads();
    cfg.validate();

    const LabeledDataset ds = normalize(load_csv(opt.data_path, /*labeled=*/true));
    NetworkModel<float> model =
        build_digit_model<float>(cfg.seed, opt.kernel_size, cfg.dropout_rate);

    auto t0 = std::chrono::steady_clock::now();
    const auto metrics = fit(model, ds, cfg, [&](const EpochMetrics& m) {
        const auto now = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(now - t0).count();
        out << "epoch " << m.epoch << '/' << cfg.epochs
            << " train_loss=" << format_double(m.train_loss)
            << " train_accuracy=" << format_fixed(m.train_accuracy, 6)
            << " val_loss=" << format_double(m.val_loss)
            << " val_accuracy=" << format_fixed(m.val_accuracy, 6)
            << " (" << format_fixed(secs, 1) << "s)\n";
        out.flush();
        t0 = now;
    });

    save_model(model, opt.out_path);
    if (!opt.metrics_path.empty()) {
        write_metrics_csv(opt.metrics_path, metrics);
    }
    if (!metrics.empty()) {
        out << "Final validation accuracy: "
            << format_fixed(metrics.back().val_accuracy, 6) << '\n';
    }
    return 0;
}

struct EvalOptions {
    std::string model_path;
    std::string data_path;
    std::string confusion_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::size_t train_count = 33600;
    std::size_t val_count = 8400;
    int threads = 0;
};

inline int run_eval(const EvalOptions& opt, std::ostream& out) {
    const int threads = opt.threads > 0 ? opt.threads : env_threads();
    const NetworkModel<float> model = load_model(opt.model_path);
    const LabeledDataset ds = normalize(load_csv(opt.data_path, /*labeled=*/true));

    TrainConfig cfg;
    cfg.seed = opt.seed_given ? opt.seed : model.seed;
    cfg.train_count = opt.train_count;
    cfg.val_count = opt.val_count;
    const SplitDataset parts = split_for_config(ds, cfg);

    const std::vector<int> predicted = predict(model, parts.val.images, threads);
    out << "Validation accuracy: "
        << format_fixed(accuracy(predicted, parts.val.labels), 6) << '\n';

    if (!opt.confusion_path.empty()) {
        write_confusion_csv(opt.confusion_path, confusion_matrix(predicted, parts.val.labels));
    }
    return 0;
}

struct PredictOptions {
    std::string model_path;
    std::string data_path;
    std::string out_path;
    int threads = 0;
};

inline int run_predict(const PredictOptions& opt, std::ostream& out) {
    const int threads = opt.threads > 0 ? opt.threads : env_threads();
    const NetworkModel<float> model = load_model(opt.model_path);
    const LabeledDataset ds = normalize(load_csv(opt.data_path, /*labeled=*/false));
    const std::vector<int> labels = predict(model, ds.images, threads);
    write_predictions_csv(opt.out_path, labels);
    out << "Wrote " << labels.size() << " predictions to " << opt.out_path << '\n';
    return 0;
}

} // namespace detail

// Entry point shared by the digit_cnn binary and the test suite. `args`
// excludes the program name. Exit codes: 0 success, 1 usage error, 2 data
// error, 3 model-format or numeric error.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"From-scratch convolutional network for handwritten digit recognition"};
    app.require_subcommand(1);

    detail::TrainOptions train_opt;
    CLI::App* train = app.add_subcommand("train", "Train a model on a labeled pixel CSV");
    train->add_option("--data", train_opt.data_path, "labeled CSV (label,pixel0..pixel783)")
        ->required();
    train->add_option("--epochs", train_opt.cfg.epochs, "training epochs")
        ->check(CLI::Range(0, 1000000));
    train->add_option("--batch-size", train_opt.cfg.batch_size, "samples per batch")
        ->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
    train->add_option("--lr", train_opt.cfg.learning_rate, "Adam learning rate")
        ->check(CLI::PositiveNumber);
    train->add_option("--dropout", train_opt.cfg.dropout_rate, "dropout rate in [0,1)")
        ->check(CLI::Range(0.0, 0.999999));
    train->add_option("--kernel", train_opt.kernel_size, "odd convolution kernel size")
        ->check(CLI::Range(1, 27));
    train->add_option("--seed", train_opt.cfg.seed, "root seed for init/split/shuffle/dropout");
    train->add_option("--train-count", train_opt.cfg.train_count, "training split size");
    train->add_option("--val-count", train_opt.cfg.val_count, "validation split size");
    train->add_option("--threads", train_opt.threads, "intra-op worker threads")
        ->check(CLI::Range(1, 4096));
    train->add_option("--out", train_opt.out_path, "output model file")->required();
    train->add_option("--metrics", train_opt.metrics_path, "per-epoch metrics CSV");

    detail::EvalOptions eval_opt;
    CLI::App* eval = app.add_subcommand("eval", "Evaluate the validation slice of a CSV");
    eval->add_option("--model", eval_opt.model_path, "model file")->required();
    eval->add_option("--data", eval_opt.data_path, "labeled CSV")->required();
    CLI::Option* eval_seed =
        eval->add_option("--seed", eval_opt.seed, "split seed (default: the model's seed)");
    eval->add_option("--train-count", eval_opt.train_count, "training split size");
    eval->add_option("--val-count", eval_opt.val_count, "validation split size");
    eval->add_option("--threads", eval_opt.threads, "intra-op worker threads")
        ->check(CLI::Range(1, 4096));
    eval->add_option("--confusion", eval_opt.confusion_path, "confusion matrix CSV");

    detail::PredictOptions predict_opt;
    CLI::App* predict = app.add_subcommand("predict", "Label an unlabeled pixel CSV");
    predict->add_option("--model", predict_opt.model_path, "model file")->required();
    predict->add_option("--data", predict_opt.data_path, "unlabeled CSV (pixel0..pixel783)")
        ->required();
    predict->add_option("--out", predict_opt.out_path, "ImageId,Label output CSV")->required();
    predict->add_option("--threads", predict_opt.threads, "intra-op worker threads")
        ->check(CLI::Range(1, 4096));

    std::string inspect_model_path;
    CLI::App* inspect = app.add_subcommand("inspect", "Print the layer table of a model");
    inspect->add_option("--model", inspect_model_path, "model file")->required();

    try {
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) return detail::run_train(train_opt, out);
        if (eval->parsed()) {
            eval_opt.seed_given = eval_seed->count() > 0;
            return detail::run_eval(eval_opt, out);
        }
        if (predict->parsed()) return detail::run_predict(predict_opt, out);
        if (inspect->parsed()) {
            print_summary(load_model(inspect_model_path), out);
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        const bool data_error = dynamic_cast<const IoError*>(&e) != nullptr ||
                                dynamic_cast<const HeaderError*>(&e) != nullptr ||
                                dynamic_cast<const ValueError*>(&e) != nullptr ||
                                dynamic_cast<const LabelError*>(&e) != nullptr ||
                                dynamic_cast<const InvalidSplit*>(&e) != nullptr ||
                                dynamic_cast<const EmptyInput*>(&e) != nullptr;
        return data_error ? 2 : 3;
    } catch (const CLI::ParseError& e) {
        // late validation (e.g. DIGIT_CNN_THREADS) is still a usage error
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}

} // namespace dcnn::cli
