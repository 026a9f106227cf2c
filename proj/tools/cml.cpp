// cml command line: training, embedding extraction, retrieval evaluation,
// probe queries, parameter counting, and figure-data export.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cml/evaluation.hpp"
#include "cml/image.hpp"
#include "cml/losses.hpp"
#include "cml/synthetic.hpp"
#include "cml/trainer.hpp"

namespace fs = std::filesystem;
using namespace cml;

namespace {

struct SyntheticFlag {
    bool set = false;
    std::size_t identities = 20;
    std::size_t samples = 30;
};

SyntheticFlag parse_synthetic(const std::string& s) {
    SyntheticFlag f;
    const auto x = s.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= s.size())
        throw ConfigError("--synthetic wants <identities>x<samples>, e.g. 25x40");
    try {
        f.identities = std::stoul(s.substr(0, x));
        f.samples = std::stoul(s.substr(x + 1));
    } catch (const std::exception&) {
        throw ConfigError("--synthetic wants <identities>x<samples>, e.g. 25x40");
    }
    if (f.identities == 0 || f.samples == 0)
        throw ConfigError("--synthetic needs positive counts");
    f.set = true;
    return f;
}

std::vector<std::size_t> parse_widths(const std::string& s) {
    std::vector<std::size_t> widths;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        widths.push_back(std::stoul(tok));
    }
    if (widths.empty()) throw ConfigError("--hidden wants a comma list of widths, e.g. 64,64");
    return widths;
}

struct TrainArgs {
    std::string data_dir;
    std::string synthetic;
    std::string out_dir;
    std::string loss;
    std::string arch = "toy";
    std::string final_l2 = "auto";
    std::string hidden = "64,64";
    TrainConfig cfg;
    std::size_t embedding_dim = 0;
    std::size_t input_dim = 32;
    double spread = 0.15;
    std::size_t heldout = 0;
    bool no_flip = false;
};

int run_train(const TrainArgs& args) {
    if (args.loss.empty())
        throw ConfigError("--loss is required (one of: cosine-softmax, softmax, triplet-soft, "
                          "triplet-hard, magnet)");
    if (args.data_dir.empty() == args.synthetic.empty())
        throw ConfigError("exactly one of --data and --synthetic is required");

    TrainConfig cfg = args.cfg;
    cfg.loss = parse_loss(args.loss);
    cfg.flip_augment = !args.no_flip;

    EncoderSpec spec;
    if (args.arch == "paper") spec.arch = EncoderSpec::Arch::paper;
    else if (args.arch == "toy") spec.arch = EncoderSpec::Arch::toy;
    else throw ConfigError("--arch must be paper or toy");
    spec.embedding_dim = args.embedding_dim;
    spec.hidden = parse_widths(args.hidden);
    if (args.final_l2 == "on") spec.final_l2 = 1;
    else if (args.final_l2 == "off") spec.final_l2 = 0;
    else if (args.final_l2 == "auto") spec.final_l2 = -1;
    else throw ConfigError("--final-l2 must be auto, on, or off");

    TrainResult result;
    if (!args.synthetic.empty()) {
        const SyntheticFlag flag = parse_synthetic(args.synthetic);
        SyntheticSpec sspec;
        sspec.num_identities = flag.identities;
        sspec.samples_per_identity = flag.samples;
        sspec.input_dim = args.input_dim;
        sspec.cluster_spread = args.spread;
        sspec.heldout_identities = args.heldout;
        sspec.seed = cfg.seed;
        SyntheticDataset data = generate_synthetic(sspec);
        MemorySource source(&data.samples);
        spec.input_dim = args.input_dim;
        result = train(cfg, spec, data.train_index, source, fs::path(args.out_dir));
    } else {
        DatasetIndex index = scan_directory(args.data_dir);
        DirectorySource source;
        result = train(cfg, spec, index, source, fs::path(args.out_dir));
    }

    std::cout << "trained " << loss_name(cfg.loss) << " for " << cfg.iterations
              << " iterations; best validation rank-1 ";
    if (result.best_val_rank1) std::cout << *result.best_val_rank1;
    else std::cout << "n/a";
    std::cout << " at iteration " << result.best_iteration << "\n";
    std::cout << "wrote " << (fs::path(args.out_dir) / "best.cmck").string() << "\n";
    return 0;
}

struct EmbedArgs {
    std::string checkpoint;
    std::string data_dir;
    std::string synthetic;
    std::string split = "all";
    std::string out_file;
    std::size_t batch = 32;
    std::size_t threads = 1;
    std::uint64_t seed = 0;
    std::size_t input_dim = 32;
    double spread = 0.15;
    std::size_t heldout = 0;
};

int run_embed(const EmbedArgs& args) {
    if (args.data_dir.empty() == args.synthetic.empty())
        throw ConfigError("exactly one of --data and --synthetic is required");
    Checkpoint ckpt = load_checkpoint(args.checkpoint);
    std::unique_ptr<Encoder> encoder = encoder_from_checkpoint(ckpt);

    std::vector<EmbeddingRecord> records;
    if (!args.synthetic.empty()) {
        const SyntheticFlag flag = parse_synthetic(args.synthetic);
        SyntheticSpec sspec;
        sspec.num_identities = flag.identities;
        sspec.samples_per_identity = flag.samples;
        sspec.input_dim = args.input_dim;
        sspec.cluster_spread = args.spread;
        sspec.heldout_identities = args.heldout;
        sspec.seed = args.seed;
        SyntheticDataset data = generate_synthetic(sspec);
        MemorySource source(&data.samples);
        DatasetIndex index;
        if (args.split == "train") index = data.train_index;
        else if (args.split == "heldout") index = data.heldout_index;
        else if (args.split == "all") {
            index = data.train_index;
            index.entries.insert(index.entries.end(), data.heldout_index.entries.begin(),
                                 data.heldout_index.entries.end());
        } else throw ConfigError("--split must be all, train, or heldout");
        records = extract_embeddings(*encoder, index, source, args.batch, args.threads);
    } else {
        DatasetIndex index = scan_directory(args.data_dir);
        DirectorySource source;
        records = extract_embeddings(*encoder, index, source, args.batch, args.threads);
    }
    save_embeddings(args.out_file, records);
    std::cout << "wrote " << records.size() << " embeddings to " << args.out_file << "\n";
    return 0;
}

struct EvalArgs {
    std::string query_file;
    std::string gallery_file;
    std::string metric = "cosine";
    std::size_t max_rank = 50;
};

int run_eval(const EvalArgs& args) {
    const auto queries = load_embeddings(args.query_file);
    const auto gallery = load_embeddings(args.gallery_file);
    if (!queries.empty() && !gallery.empty() &&
        queries.front().vector.size() != gallery.front().vector.size())
        throw Error("embedding dim mismatch: queries have " +
                    std::to_string(queries.front().vector.size()) + ", gallery has " +
                    std::to_string(gallery.front().vector.size()));
    EvalReport report =
        evaluate_single_shot(queries, gallery, parse_metric(args.metric), args.max_rank);
    std::cout << report_to_json(report) << "\n";
    return 0;
}

struct QueryArgs {
    std::string checkpoint;
    std::string probe;
    std::string gallery_file;
    std::string metric = "cosine";
    std::size_t topk = 5;
};

int run_query(const QueryArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.checkpoint);
    std::unique_ptr<Encoder> encoder = encoder_from_checkpoint(ckpt);
    Tensor pixels = resize_bilinear(decode_netpbm_file(args.probe), kInputHeight, kInputWidth);
    Tensor batch = stack_batch({pixels}, encoder->input_shape());
    Tensor emb = forward_embed(*encoder, batch, Mode::inference);
    std::vector<double> probe_vec(emb.data(), emb.data() + emb.numel());

    const auto gallery = load_embeddings(args.gallery_file);
    if (!gallery.empty() && gallery.front().vector.size() != probe_vec.size())
        throw Error("embedding dim mismatch: probe has " + std::to_string(probe_vec.size()) +
                    ", gallery has " + std::to_string(gallery.front().vector.size()));
    TopkResult result = topk_query(probe_vec, gallery, parse_metric(args.metric), args.topk);
    for (std::size_t i = 0; i < result.most_similar.size(); ++i) {
        const auto& e = result.most_similar[i];
        std::printf("similar %zu: identity=%lld camera=%d distance=%.6f\n", i + 1,
                    static_cast<long long>(gallery[e.gallery_index].identity),
                    gallery[e.gallery_index].camera, e.distance);
    }
    for (std::size_t i = 0; i < result.most_dissimilar.size(); ++i) {
        const auto& e = result.most_dissimilar[i];
        std::printf("dissimilar %zu: identity=%lld camera=%d distance=%.6f\n", i + 1,
                    static_cast<long long>(gallery[e.gallery_index].identity),
                    gallery[e.gallery_index].camera, e.distance);
    }
    return 0;
}

struct ParamcountArgs {
    std::string arch = "paper";
    std::string hidden = "64,64";
    std::size_t embedding_dim = 0;
    std::size_t input_dim = 32;
};

int run_paramcount(const ParamcountArgs& args) {
    Rng rng(0);
    std::unique_ptr<Encoder> encoder;
    if (args.arch == "paper") {
        encoder = build_paper_encoder(rng, args.embedding_dim ? args.embedding_dim : 128);
    } else if (args.arch == "toy") {
        encoder = std::make_unique<ToyMlpEncoder>(args.input_dim, parse_widths(args.hidden),
                                                  args.embedding_dim ? args.embedding_dim : 32,
                                                  true, rng);
    } else {
        throw ConfigError("--arch must be paper or toy");
    }
    const ParamCountReport report = count_parameters(*encoder);
    std::printf("%-24s %-16s %s\n", "tensor", "shape", "count");
    for (const auto& e : report.entries)
        std::printf("%-24s %-16s %zu\n", e.name.c_str(), shape_str(e.shape).c_str(), e.count);

    std::printf("\n%-24s %s\n", "layer", "count");
    std::map<std::string, std::size_t> layers;
    std::vector<std::string> order;
    for (const auto& e : report.entries) {
        const std::string layer = e.name.substr(0, e.name.find('/'));
        if (layers.find(layer) == layers.end()) order.push_back(layer);
        layers[layer] += e.count;
    }
    for (const auto& layer : order)
        std::printf("%-24s %zu\n", layer.c_str(), layers[layer]);

    std::printf("\ntotal %zu\n", report.total);
    if (args.arch == "paper") {
        const long long ref = static_cast<long long>(PaperEncoder::kReferenceParamCount);
        const long long delta = static_cast<long long>(report.total) - ref;
        std::printf("reference %lld, delta %+lld (%+.3f%%)\n", ref, delta,
                    100.0 * static_cast<double>(delta) / static_cast<double>(ref));
    }
    return 0;
}

struct PlotgridArgs {
    std::string checkpoint;
    std::size_t grid = 41;
    std::string out_file;
};

int run_plotgrid(const PlotgridArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const Tensor* dim = ckpt.find("meta/embedding_dim");
    if (dim && static_cast<std::size_t>((*dim)[0]) != 2)
        throw Error("plotgrid needs a 2-D embedding model, checkpoint has dim " +
                    std::to_string(static_cast<std::size_t>((*dim)[0])));
    const Tensor* weights = ckpt.find("head/weights");
    const Tensor* log_kappa = ckpt.find("head/log_kappa");
    if (!weights || !log_kappa)
        throw Error("plotgrid needs a cosine-softmax checkpoint with head/weights and "
                    "head/log_kappa");
    if (weights->dim(1) != 2) throw Error("plotgrid needs 2-D classifier weights");

    CosineSoftmaxHead head;
    head.weights = make_leaf(*weights, false);
    head.log_kappa = make_leaf(*log_kappa, false);
    const std::size_t k = head.num_classes();

    std::ostringstream csv;
    csv << "x,y";
    for (std::size_t c = 1; c <= k; ++c) csv << ",p" << c;
    csv << ",argmax\n";
    csv.precision(10);
    for (std::size_t iy = 0; iy < args.grid; ++iy) {
        for (std::size_t ix = 0; ix < args.grid; ++ix) {
            const double x = args.grid == 1 ? 0.0
                                            : -1.0 + 2.0 * static_cast<double>(ix) /
                                                         static_cast<double>(args.grid - 1);
            const double y = args.grid == 1 ? 0.0
                                            : -1.0 + 2.0 * static_cast<double>(iy) /
                                                         static_cast<double>(args.grid - 1);
            const double nrm = std::sqrt(x * x + y * y);
            Tensor p = Tensor::full({k}, 1.0 / static_cast<double>(k)); // origin: no direction
            if (nrm > 1e-9) {
                Tensor f({1, 2}, {x / nrm, y / nrm});
                p = cosine_softmax_probs(f, head);
            }
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (p[c] > p[best]) best = c;
            csv << x << "," << y;
            for (std::size_t c = 0; c < k; ++c) csv << "," << p[c];
            csv << "," << (best + 1) << "\n";
        }
    }
    if (args.out_file.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(args.out_file);
        out << csv.str();
        std::cout << "wrote " << args.out_file << "\n";
    }
    return 0;
}

struct KappasweepArgs {
    std::string kappas = "1,10";
    std::string out_dir = ".";
    std::size_t classes = 3;
    std::size_t samples_per_class = 16;
    std::uint64_t iterations = 400;
    double learning_rate = 5e-2;
    std::uint64_t seed = 0;
};

/// Fixed-kappa toy problem on the unit circle: free 2-D sample positions and
/// class directions trained with cross-entropy, then class-probability curves
/// over the angle axis and the optimized sample angles.
int run_kappasweep(const KappasweepArgs& args) {
    std::vector<double> kappas;
    {
        std::stringstream ss(args.kappas);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) kappas.push_back(std::stod(tok));
    }
    if (kappas.empty()) throw ConfigError("--kappa wants a comma list, e.g. 1,10");
    fs::create_directories(args.out_dir);

    for (const double kappa : kappas) {
        if (kappa <= 0.0) throw ConfigError("kappa values must be positive");
        Rng rng = Rng(args.seed).substream(streams::weights);
        const std::size_t n = args.classes * args.samples_per_class;

        // Samples start near their class direction; classifier starts random.
        Tensor points({n, 2});
        Labels labels;
        for (std::size_t c = 0; c < args.classes; ++c) {
            const double center = 2.0 * 3.141592653589793 * static_cast<double>(c) /
                                  static_cast<double>(args.classes);
            for (std::size_t s = 0; s < args.samples_per_class; ++s) {
                const double theta = center + 0.5 * rng.normal();
                const std::size_t i = c * args.samples_per_class + s;
                points[i * 2] = std::cos(theta);
                points[i * 2 + 1] = std::sin(theta);
                labels.push_back(static_cast<std::int64_t>(c));
            }
        }
        NodePtr point_leaf = make_leaf(points, true);
        CosineSoftmaxHead head = CosineSoftmaxHead::init(args.classes, 2, rng, kappa, 0.0);
        head.log_kappa->requires_grad = false; // swept, not trained

        AdamConfig adam_cfg;
        adam_cfg.learning_rate = args.learning_rate;
        AdamOptimizer opt({{point_leaf, 0.0}, {head.weights, 0.0}}, adam_cfg);
        for (std::uint64_t it = 0; it < args.iterations; ++it) {
            NodePtr loss = head.loss(ops::l2_normalize(point_leaf), labels);
            opt.zero_grad();
            backward(loss);
            opt.step();
        }

        std::ostringstream csv;
        csv << "type,theta,class";
        for (std::size_t c = 1; c <= args.classes; ++c) csv << ",p" << c;
        csv << "\n";
        csv.precision(10);
        const auto probs_at = [&](double theta) {
            Tensor f({1, 2}, {std::cos(theta), std::sin(theta)});
            return cosine_softmax_probs(f, head);
        };
        for (int t = 0; t <= 360; ++t) {
            const double theta = -3.141592653589793 + 2.0 * 3.141592653589793 * t / 360.0;
            Tensor p = probs_at(theta);
            std::size_t best = 0;
            for (std::size_t c = 1; c < args.classes; ++c)
                if (p[c] > p[best]) best = c;
            csv << "curve," << theta << "," << (best + 1);
            for (std::size_t c = 0; c < args.classes; ++c) csv << "," << p[c];
            csv << "\n";
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double x = point_leaf->value[i * 2], y = point_leaf->value[i * 2 + 1];
            const double theta = std::atan2(y, x);
            Tensor p = probs_at(theta);
            csv << "sample," << theta << "," << (labels[i] + 1);
            for (std::size_t c = 0; c < args.classes; ++c) csv << "," << p[c];
            csv << "\n";
        }

        char name[64];
        std::snprintf(name, sizeof(name), "kappa_%g.csv", kappa);
        std::ofstream out(fs::path(args.out_dir) / name);
        out << csv.str();
        std::cout << "wrote " << (fs::path(args.out_dir) / name).string() << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"metric learning toolkit: cosine-softmax / triplet / magnet encoders with "
                 "nearest-neighbor retrieval evaluation"};
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "train an encoder");
    train_cmd->add_option("--data", train_args.data_dir, "dataset directory (<id>_c<cam>_*.ppm)");
    train_cmd->add_option("--synthetic", train_args.synthetic, "synthetic spec <ids>x<samples>");
    train_cmd->add_option("--loss", train_args.loss,
                          "cosine-softmax | softmax | triplet-soft | triplet-hard | magnet");
    train_cmd->add_option("--arch", train_args.arch, "paper | toy (default toy)");
    train_cmd->add_option("--out", train_args.out_dir, "output directory")->required();
    train_cmd->add_option("--iters", train_args.cfg.iterations, "training iterations");
    train_cmd->add_option("--lr", train_args.cfg.learning_rate, "learning rate");
    train_cmd->add_option("--batch", train_args.cfg.batch_size, "batch size");
    train_cmd->add_option("--images-per-id", train_args.cfg.images_per_identity,
                          "images per identity per batch (K)");
    train_cmd->add_option("--wd", train_args.cfg.weight_decay_network, "network weight decay");
    train_cmd->add_option("--wd-kappa", train_args.cfg.weight_decay_kappa, "kappa weight decay");
    train_cmd->add_option("--dropout", train_args.cfg.dropout_p, "residual dropout probability");
    train_cmd->add_flag("--no-flip", train_args.no_flip, "disable horizontal flip augmentation");
    train_cmd->add_option("--seed", train_args.cfg.seed, "random seed");
    train_cmd->add_option("--val-fraction", train_args.cfg.val_fraction, "validation split");
    train_cmd->add_option("--log-interval", train_args.cfg.log_interval, "log every N iterations");
    train_cmd->add_option("--eval-interval", train_args.cfg.eval_interval,
                          "validate every N iterations");
    train_cmd->add_option("--ckpt-interval", train_args.cfg.checkpoint_interval,
                          "periodic checkpoint interval (default: eval interval)");
    train_cmd->add_option("--margin", train_args.cfg.triplet_margin, "hard triplet margin");
    train_cmd->add_option("--magnet-margin", train_args.cfg.magnet_margin, "magnet margin");
    train_cmd->add_option("--kappa-init", train_args.cfg.kappa_init, "initial kappa");
    train_cmd->add_option("--embedding-dim", train_args.embedding_dim, "embedding dimension");
    train_cmd->add_option("--hidden", train_args.hidden, "toy MLP widths, e.g. 64,64");
    train_cmd->add_option("--input-dim", train_args.input_dim, "synthetic input dimension");
    train_cmd->add_option("--spread", train_args.spread, "synthetic cluster spread");
    train_cmd->add_option("--heldout", train_args.heldout, "synthetic held-out identities");
    train_cmd->add_option("--final-l2", train_args.final_l2, "auto | on | off");

    EmbedArgs embed_args;
    CLI::App* embed_cmd = app.add_subcommand("embed", "extract embeddings to a CMLE file");
    embed_cmd->add_option("--checkpoint", embed_args.checkpoint, "checkpoint file")->required();
    embed_cmd->add_option("--data", embed_args.data_dir, "dataset directory");
    embed_cmd->add_option("--synthetic", embed_args.synthetic, "synthetic spec <ids>x<samples>");
    embed_cmd->add_option("--split", embed_args.split, "all | train | heldout (synthetic)");
    embed_cmd->add_option("--out", embed_args.out_file, "output embedding file")->required();
    embed_cmd->add_option("--batch", embed_args.batch, "extraction batch size");
    embed_cmd->add_option("--threads", embed_args.threads, "extraction threads");
    embed_cmd->add_option("--seed", embed_args.seed, "synthetic seed");
    embed_cmd->add_option("--input-dim", embed_args.input_dim, "synthetic input dimension");
    embed_cmd->add_option("--spread", embed_args.spread, "synthetic cluster spread");
    embed_cmd->add_option("--heldout", embed_args.heldout, "synthetic held-out identities");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "single-shot cross-view CMC/mAP evaluation");
    eval_cmd->add_option("--query-embeddings", eval_args.query_file, "query CMLE file")->required();
    eval_cmd->add_option("--gallery-embeddings", eval_args.gallery_file, "gallery CMLE file")
        ->required();
    eval_cmd->add_option("--metric", eval_args.metric, "cosine | euclidean");
    eval_cmd->add_option("--max-rank", eval_args.max_rank, "CMC curve length");

    QueryArgs query_args;
    CLI::App* query_cmd = app.add_subcommand("query", "rank a gallery against one probe image");
    query_cmd->add_option("--checkpoint", query_args.checkpoint, "checkpoint file")->required();
    query_cmd->add_option("--probe", query_args.probe, "probe image (PPM/PGM)")->required();
    query_cmd->add_option("--gallery-embeddings", query_args.gallery_file, "gallery CMLE file")
        ->required();
    query_cmd->add_option("--topk", query_args.topk, "results per direction");
    query_cmd->add_option("--metric", query_args.metric, "cosine | euclidean");

    ParamcountArgs param_args;
    CLI::App* param_cmd = app.add_subcommand("paramcount", "per-layer parameter table");
    param_cmd->add_option("--arch", param_args.arch, "paper | toy");
    param_cmd->add_option("--hidden", param_args.hidden, "toy MLP widths");
    param_cmd->add_option("--embedding-dim", param_args.embedding_dim, "embedding dimension");
    param_cmd->add_option("--input-dim", param_args.input_dim, "toy input dimension");

    PlotgridArgs grid_args;
    CLI::App* grid_cmd = app.add_subcommand("plotgrid", "posterior grid CSV for a 2-D model");
    grid_cmd->add_option("--checkpoint", grid_args.checkpoint, "checkpoint file")->required();
    grid_cmd->add_option("--grid", grid_args.grid, "grid resolution N (NxN rows)");
    grid_cmd->add_option("--out", grid_args.out_file, "output CSV (default stdout)");

    KappasweepArgs sweep_args;
    CLI::App* sweep_cmd =
        app.add_subcommand("kappasweep", "fixed-kappa toy optimization curves (CSV per kappa)");
    sweep_cmd->add_option("--kappa", sweep_args.kappas, "comma list of kappa values");
    sweep_cmd->add_option("--out", sweep_args.out_dir, "output directory");
    sweep_cmd->add_option("--classes", sweep_args.classes, "number of classes");
    sweep_cmd->add_option("--samples-per-class", sweep_args.samples_per_class, "samples per class");
    sweep_cmd->add_option("--iters", sweep_args.iterations, "optimization iterations");
    sweep_cmd->add_option("--lr", sweep_args.learning_rate, "optimization learning rate");
    sweep_cmd->add_option("--seed", sweep_args.seed, "random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train_cmd->parsed()) return run_train(train_args);
        if (embed_cmd->parsed()) return run_embed(embed_args);
        if (eval_cmd->parsed()) return run_eval(eval_args);
        if (query_cmd->parsed()) return run_query(query_args);
        if (param_cmd->parsed()) return run_paramcount(param_args);
        if (grid_cmd->parsed()) return run_plotgrid(grid_args);
        if (sweep_cmd->parsed()) return run_kappasweep(sweep_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
