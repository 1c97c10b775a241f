#include "fgraph/cli.hpp"

#include "fgraph/evalbench.hpp"
#include "fgraph/explain.hpp"
#include "fgraph/geoverify.hpp"
#include "fgraph/gradsuite.hpp"
#include "fgraph/hashing.hpp"
#include "fgraph/index.hpp"
#include "fgraph/parallel.hpp"
#include "fgraph/pipeline.hpp"
#include "fgraph/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fgraph::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
    std::uint64_t seed = 0;
    unsigned threads = 0;
    std::string out;
};

struct ModelArgs {
    std::string checkpoint;
    std::string model_config;  // defaults to encoder.json beside the checkpoint
    std::string classical;     // ahash | dhash | phash instead of a model

    enc::EncoderConfig config() const {
        std::string path = model_config;
        if (path.empty() && !checkpoint.empty()) {
            const auto beside = fs::path(checkpoint).parent_path() / "encoder.json";
            if (fs::exists(beside)) path = beside.string();
        }
        return path.empty() ? enc::EncoderConfig{} : enc::load_config(path);
    }
};

void add_model_flags(CLI::App* sub, ModelArgs& m, bool allow_classical) {
    sub->add_option("--checkpoint", m.checkpoint, "Model checkpoint (.fgpt)");
    sub->add_option("--model-config", m.model_config,
                    "Encoder config JSON (default: encoder.json next to the checkpoint)");
    if (allow_classical)
        sub->add_option("--classical", m.classical, "Use a classical hash instead of a model")
            ->check(CLI::IsMember({"ahash", "dhash", "phash"}));
}

void write_run_manifest(const CLI::App& app, const CLI::App* sub, const std::string& dir) {
    if (dir.empty()) return;
    fs::create_directories(dir);
    std::ofstream os(fs::path(dir) / "run_manifest.toml");
    os << "# effective settings\nsubcommand = \"" << sub->get_name() << "\"\n";
    os << app.config_to_str(true, false);
}

std::string out_dir_of(const std::string& file) {
    const auto p = fs::path(file).parent_path();
    return p.empty() ? "." : p.string();
}

std::string hex(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
    if (path.empty() || !fs::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

// Model or classical hasher plus the storage for the model.
struct Hasher {
    std::unique_ptr<enc::Encoder> model;
    pipe::BatchHasher fn;
    std::string label;
};

Hasher make_hasher(const ModelArgs& m) {
    Hasher h;
    if (!m.classical.empty()) {
        h.fn = pipe::classical_hasher(eval::classical_from_name(m.classical));
        h.label = m.classical;
        return h;
    }
    require_file(m.checkpoint, "checkpoint");
    h.model = std::make_unique<enc::Encoder>(train::load_model(m.checkpoint, m.config()));
    h.fn = pipe::model_hasher(*h.model);
    h.label = "model";
    return h;
}

synth::LoadedVariant load_query(const std::string& image, const std::string& manifest) {
    require_file(image, "image");
    synth::LoadedVariant v;
    v.image = read_png(image);
    if (!manifest.empty()) {
        require_file(manifest, "manifest");
        auto m = sg::load_manifest(manifest);
        if (m.width != v.image.width || m.height != v.image.height)
            throw DataError("manifest size does not match the image");
        v.detections = std::move(m.detections);
    }
    return v;
}

}  // namespace

int run(int argc, char** argv) {
    auto logger = spdlog::get("fgraph");
    if (!logger) logger = spdlog::stderr_color_mt("fgraph");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");

    CLI::App app{"Object-centric scene-graph image hashing: data generation, training, retrieval benchmarks"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML/INI file with option values (flags take precedence)");
    Common c;
    app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
    app.add_option("--threads", c.threads, "Worker threads (default: FGRAPH_THREADS or 1)");
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    synth::DatasetConfig dcfg;
    std::string data_out = "data";
    gen->add_option("--identities", dcfg.identities, "Number of originals")->capture_default_str();
    gen->add_option("--manips", dcfg.manips_per_identity, "Manipulated variants per original")->capture_default_str();
    gen->add_option("--benigns", dcfg.benigns_per_identity, "Benign variants per original")->capture_default_str();
    gen->add_option("--out", data_out, "Dataset root")->capture_default_str();

    // pretrain / train
    train::TrainConfig tcfg;
    std::string data_root = "data", train_out = "run", train_config, model_config_in, init, resume;
    bool skip_pretrain = false;
    int stop_after = -1;
    auto add_train_flags = [&](CLI::App* sub) {
        sub->add_option("--data", data_root, "Dataset root")->capture_default_str();
        sub->add_option("--out", train_out, "Output directory")->capture_default_str();
        sub->add_option("--train-config", train_config, "Training config JSON");
        sub->add_option("--model-config", model_config_in, "Encoder config JSON");
        sub->add_option("--batch-identities", tcfg.batch_identities, "Identities per batch")->capture_default_str();
        sub->add_option("--benign-views", tcfg.benign_views, "Augmented views per original")->capture_default_str();
        sub->add_option("--epochs-pretrain", tcfg.epochs_pretrain, "Pretraining epochs")->capture_default_str();
        sub->add_option("--lr-pretrain", tcfg.lr_pretrain, "Pretraining learning rate")->capture_default_str();
        sub->add_option("--tau", tcfg.tau, "Contrastive temperature")->capture_default_str();
    };
    auto* pre = app.add_subcommand("pretrain", "Pretrain the visual CNN on whole images");
    add_train_flags(pre);
    auto* trn = app.add_subcommand("train", "Pretrain (optional) and train the encoder end to end");
    add_train_flags(trn);
    trn->add_option("--epochs-main", tcfg.epochs_main, "End-to-end epochs")->capture_default_str();
    trn->add_option("--lr-main", tcfg.lr_main, "End-to-end learning rate")->capture_default_str();
    trn->add_option("--decay-period", tcfg.decay_period, "Epochs between learning-rate halvings")->capture_default_str();
    trn->add_option("--alpha", tcfg.alpha, "Quantization loss weight")->capture_default_str();
    trn->add_option("--val-distractors", tcfg.val_distractors, "Distractors in the validation database")
        ->capture_default_str();
    trn->add_option("--init", init, "Initialize both CNN streams from a pretrained checkpoint");
    trn->add_flag("--skip-pretrain", skip_pretrain, "Start the end-to-end phase from random weights");
    trn->add_option("--resume", resume, "Continue from an epoch checkpoint");
    trn->add_option("--stop-after", stop_after, "Stop after this epoch (-1 = run all)")->capture_default_str();

    // hash
    auto* hsh = app.add_subcommand("hash", "Hash one image");
    ModelArgs hm;
    std::string image, manifest;
    add_model_flags(hsh, hm, true);
    hsh->add_option("--image", image, "PNG image")->required();
    hsh->add_option("--manifest", manifest, "Detection manifest JSON");

    // index-build
    auto* ib = app.add_subcommand("index-build", "Hash a dataset split plus distractors into a database");
    ModelArgs im;
    std::string split = "test", db_out = "index.fghd";
    std::size_t n_distractors = 10000;
    add_model_flags(ib, im, true);
    ib->add_option("--data", data_root, "Dataset root")->capture_default_str();
    ib->add_option("--split", split, "Dataset split")->capture_default_str();
    ib->add_option("--distractors", n_distractors, "Generated distractors")->capture_default_str();
    ib->add_option("--out", db_out, "Database file")->capture_default_str();

    // query
    auto* qry = app.add_subcommand("query", "k nearest codes in a database");
    ModelArgs qm;
    std::string db_path, code_hex;
    std::size_t k = 10;
    add_model_flags(qry, qm, true);
    qry->add_option("--db", db_path, "Database file")->required();
    qry->add_option("--code", code_hex, "Query code (hex)");
    qry->add_option("--image", image, "Query image (hashed with the model flags)");
    qry->add_option("--manifest", manifest, "Query detection manifest");
    qry->add_option("-k,--k", k, "Number of results")->capture_default_str();

    // benchmarks
    ModelArgs bm;
    std::string report = "report.csv";
    auto add_bench_flags = [&](CLI::App* sub) {
        add_model_flags(sub, bm, true);
        sub->add_option("--data", data_root, "Dataset root")->capture_default_str();
        sub->add_option("--split", split, "Dataset split")->capture_default_str();
        sub->add_option("--distractors", n_distractors, "Generated distractors")->capture_default_str();
        sub->add_option("--out", report, "CSV report")->capture_default_str();
    };
    auto* b1 = app.add_subcommand("bench1", "Benchmark I: originals query benign/manipulated/distractors (mmAP)");
    add_bench_flags(b1);
    auto* b2 = app.add_subcommand("bench2", "Benchmark II: variants query originals + distractors (F_R1)");
    add_bench_flags(b2);

    // geometric verification
    auto* gv = app.add_subcommand("gv-eval", "Attribution FPR/FNR with and without geometric verification");
    add_bench_flags(gv);
    gv::AttributionOptions gvo;
    gv->add_option("--shortlist", gvo.shortlist, "Candidates verified per query")->capture_default_str();
    gv->add_option("--iters", gvo.mlesac.iterations, "MLESAC iterations")->capture_default_str();
    gv->add_option("--sigma", gvo.mlesac.sigma, "Inlier noise scale (px)")->capture_default_str();
    gv->add_option("--keypoints", gvo.keypoints, "Correspondences per pair")->capture_default_str();
    gv->add_option("--min-inlier-fraction", gvo.mlesac.min_fraction, "Pass needs at least this inlier fraction")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();

    // explain
    auto* ex = app.add_subcommand("explain", "Triplet saliency map on the global CNN");
    ModelArgs em;
    std::string x_img, x_man, p_img, p_man, n_img, n_man, ex_out = "saliency";
    bool overlay = false;
    add_model_flags(ex, em, false);
    ex->add_option("--x", x_img, "Query image")->required();
    ex->add_option("--x-manifest", x_man, "Query manifest");
    ex->add_option("--plus", p_img, "Positive (benign) image")->required();
    ex->add_option("--plus-manifest", p_man, "Positive manifest");
    ex->add_option("--minus", n_img, "Negative (manipulated) image")->required();
    ex->add_option("--minus-manifest", n_man, "Negative manifest");
    ex->add_option("--out", ex_out, "Output prefix")->capture_default_str();
    ex->add_flag("--overlay", overlay, "Also write a PNG overlay");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of all graph ops and the composed model");
    int points = 10;
    double gc_eps = 1e-5, gc_tol = 1e-4;
    gc->add_option("--points", points, "Random points per check")->capture_default_str();
    gc->add_option("--eps", gc_eps, "Central-difference step")->capture_default_str();
    gc->add_option("--tol", gc_tol, "Failure threshold on relative error")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (verbose) spdlog::set_level(spdlog::level::debug);
    if (c.threads > 0) set_threads(c.threads);
    const CLI::App* sub = app.get_subcommands().front();

    try {
        if (sub == gen) {
            dcfg.seed = c.seed;
            write_run_manifest(app, sub, data_out);
            const auto idx = synth::emit_dataset(dcfg, data_out);
            std::size_t nb = 0, nm = 0;
            for (const auto& e : idx.identities) {
                nb += e.benign.size();
                nm += e.manipulated.size();
            }
            spdlog::info("wrote {} originals, {} manipulated, {} benign to {}", idx.identities.size(), nm, nb, data_out);
        } else if (sub == pre || sub == trn) {
            if (!train_config.empty()) {
                require_file(train_config, "train config");
                std::ifstream is(train_config);
                std::stringstream ss;
                ss << is.rdbuf();
                auto file_cfg = train::train_config_from_json(ss.str());
                // Flags given explicitly win over the file.
                auto pick = [&](const char* flag, auto& field, const auto& from_file) {
                    if (sub->count(flag) == 0) field = from_file;
                };
                pick("--batch-identities", tcfg.batch_identities, file_cfg.batch_identities);
                pick("--benign-views", tcfg.benign_views, file_cfg.benign_views);
                pick("--epochs-pretrain", tcfg.epochs_pretrain, file_cfg.epochs_pretrain);
                pick("--lr-pretrain", tcfg.lr_pretrain, file_cfg.lr_pretrain);
                pick("--tau", tcfg.tau, file_cfg.tau);
                if (sub == trn) {
                    pick("--epochs-main", tcfg.epochs_main, file_cfg.epochs_main);
                    pick("--lr-main", tcfg.lr_main, file_cfg.lr_main);
                    pick("--alpha", tcfg.alpha, file_cfg.alpha);
                    pick("--val-distractors", tcfg.val_distractors, file_cfg.val_distractors);
                    pick("--decay-period", tcfg.decay_period, file_cfg.decay_period);
                } else {
                    tcfg.decay_period = file_cfg.decay_period;
                }
                tcfg.decay_factor = file_cfg.decay_factor;
                tcfg.augment = file_cfg.augment;
            }
            tcfg.seed = c.seed;
            tcfg.validate();
            enc::EncoderConfig ecfg;
            if (!model_config_in.empty()) {
                require_file(model_config_in, "model config");
                ecfg = enc::load_config(model_config_in);
            }
            require_file((fs::path(data_root) / synth::kDatasetIndexFile).string(), "dataset index");
            const auto index = synth::load_dataset(data_root);
            write_run_manifest(app, sub, train_out);
            fs::create_directories(train_out);
            enc::save_config((fs::path(train_out) / "encoder.json").string(), ecfg);
            {
                std::ofstream os(fs::path(train_out) / "train_config.json");
                os << train::train_config_to_json(tcfg) << '\n';
            }
            const auto set = train::load_identities(data_root, index, "train");
            spdlog::info("{} training identities", set.size());
            if (sub == pre) {
                train::pretrain_visual(set, ecfg, tcfg, train_out);
            } else {
                enc::Encoder model(ecfg, c.seed);
                if (resume.empty()) {
                    if (!init.empty()) {
                        require_file(init, "pretrained checkpoint");
                        train::Pretrainer p(ecfg, c.seed);
                        std::vector<nc::NamedTensor> state = nc::load_checkpoint(init);
                        for (auto& [name, t] : p.params()) {
                            bool found = false;
                            for (const auto& nt : state)
                                if (nt.name == name) {
                                    if (nt.tensor.shape != t->shape)
                                        throw nc::CheckpointError("shape mismatch for " + name);
                                    t->data = nt.tensor.data;
                                    found = true;
                                }
                            if (!found) throw nc::CheckpointError("pretrained checkpoint missing " + name);
                        }
                        train::init_from_pretrained(model, p.cnn);
                    } else if (!skip_pretrain && tcfg.epochs_pretrain > 0) {
                        train::init_from_pretrained(model, train::pretrain_visual(set, ecfg, tcfg, train_out));
                    }
                }
                train::Validator val(data_root, index, ecfg, tcfg.val_distractors);
                train::MainOptions mo;
                mo.out_dir = train_out;
                if (!resume.empty()) {
                    require_file(resume, "resume checkpoint");
                    mo.resume = resume;
                }
                mo.stop_after_epoch = stop_after;
                const auto res = train::train_end_to_end(set, val, model, tcfg, mo);
                spdlog::info("best val F_R1 {:.4f} at epoch {} -> {}", res.best_val, res.best_epoch,
                             (fs::path(train_out) / "best.fgpt").string());
            }
        } else if (sub == hsh) {
            auto h = make_hasher(hm);
            const auto q = load_query(image, manifest);
            std::cout << hex(h.fn(std::span(&q, 1)).front()) << '\n';
        } else if (sub == ib) {
            require_file((fs::path(data_root) / synth::kDatasetIndexFile).string(), "dataset index");
            const auto index = synth::load_dataset(data_root);
            auto h = make_hasher(im);
            pipe::BenchOptions bo;
            bo.split = split;
            bo.distractors = n_distractors;
            const auto in = pipe::hash_bench_inputs(data_root, index, h.fn, bo);
            std::vector<idx::HashRecord> recs;
            std::ofstream ids(db_out + ".ids.csv");
            ids << "id,name,identity,role\n";
            for (const auto* group : {&in.originals, &in.benign, &in.manipulated, &in.distractors})
                for (const auto& it : *group) {
                    ids << recs.size() << ',' << it.name << ',' << it.identity << ',' << idx::role_name(it.role) << '\n';
                    recs.push_back({recs.size(), it.code, it.role});
                }
            idx::save(idx::HashDatabase::build(std::move(recs)), db_out);
            write_run_manifest(app, sub, out_dir_of(db_out));
            spdlog::info("wrote {} records to {}", in.originals.size() + in.benign.size() + in.manipulated.size() +
                                                       in.distractors.size(), db_out);
        } else if (sub == qry) {
            require_file(db_path, "database");
            const auto db = idx::load(db_path);
            std::uint64_t code = 0;
            if (!code_hex.empty()) {
                code = std::stoull(code_hex, nullptr, 16);
            } else if (!image.empty()) {
                auto h = make_hasher(qm);
                const auto q = load_query(image, manifest);
                code = h.fn(std::span(&q, 1)).front();
            } else {
                throw CLI::ValidationError("query needs --code or --image");
            }
            std::cout << "rank,id,distance,role\n";
            std::size_t r = 0;
            for (const auto& hit : db.query(code, k, thread_count()))
                std::cout << ++r << ',' << hit.id << ',' << hit.distance << ',' << idx::role_name(db.at(hit.position).role)
                          << '\n';
        } else if (sub == b1 || sub == b2 || sub == gv) {
            require_file((fs::path(data_root) / synth::kDatasetIndexFile).string(), "dataset index");
            const auto index = synth::load_dataset(data_root);
            auto h = make_hasher(bm);
            pipe::BenchOptions bo;
            bo.split = split;
            bo.distractors = n_distractors;
            const auto in = pipe::hash_bench_inputs(data_root, index, h.fn, bo);
            write_run_manifest(app, sub, out_dir_of(report));
            if (sub == gv) {
                gvo.seed = c.seed;
                const auto r = gv::evaluate_attribution(data_root, index, in, gvo);
                gv::write_attribution_report(report, r);
                std::printf("FPR %.4f FNR %.4f (top-1 without verification: FPR %.4f FNR %.4f)\n", r.fpr, r.fnr,
                            r.fpr_top1, r.fnr_top1);
            } else {
                const auto rep = sub == b1 ? eval::benchmark_one(in, c.seed) : eval::benchmark_two(in, c.seed);
                eval::write_report(report, rep);
                for (const auto& [key, v] : rep.aggregates) std::printf("%s %.6f\n", key.c_str(), v);
            }
        } else if (sub == ex) {
            require_file(em.checkpoint, "checkpoint");
            auto model = train::load_model(em.checkpoint, em.config());
            const auto x = load_query(x_img, x_man), xp = load_query(p_img, p_man), xn = load_query(n_img, n_man);
            const auto s = xai::triplet_saliency(model, x, xp, xn);
            fs::create_directories(out_dir_of(ex_out + ".pgm"));
            xai::write_outputs(ex_out, s, overlay ? &x.image : nullptr);
            std::printf("triplet loss %.6f\n", s.loss);
        } else if (sub == gc) {
            double worst = 0;
            for (const auto& r : diag::op_suite(c.seed, points, gc_eps)) {
                std::printf("%-28s %.3e\n", r.name.c_str(), r.max_error);
                worst = std::max(worst, r.max_error);
            }
            const auto comp = diag::composed_check(c.seed, points, gc_eps);
            std::printf("%-28s %.3e\n", comp.name.c_str(), comp.max_error);
            worst = std::max(worst, comp.max_error);
            std::printf("max relative error %.3e (threshold %.1e)\n", worst, gc_tol);
            if (worst > gc_tol) return 2;
        }
    } catch (const CLI::Error& e) {
        spdlog::error("{}", e.what());
        return 1;
    } catch (const train::TrainingError& e) {
        spdlog::error("{}", e.what());
        return 3;
    } catch (const DataError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const sg::SceneError& e) {
        spdlog::error("invalid scene data: {}", e.what());
        return 2;
    } catch (const ImageError& e) {
        spdlog::error("image error: {}", e.what());
        return 2;
    } catch (const nc::CheckpointError& e) {
        spdlog::error("checkpoint error: {}", e.what());
        return 2;
    } catch (const idx::IndexError& e) {
        spdlog::error("index error: {}", e.what());
        return 2;
    } catch (const nlohmann::json::exception& e) {
        spdlog::error("malformed JSON: {}", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        spdlog::error("invalid input: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        return 3;
    }
    return 0;
}

}  // namespace fgraph::cli
