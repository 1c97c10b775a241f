#include "fgraph/trainer.hpp"

#include "fgraph/evalbench.hpp"
#include "fgraph/hashing.hpp"
#include "fgraph/parallel.hpp"
#include "fgraph/pipeline.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace fgraph::train {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (batch_identities < 2) throw std::invalid_argument("train config: batch_identities must be >= 2");
    if (benign_views < 1) throw std::invalid_argument("train config: benign_views must be >= 1");
    if (lr_pretrain <= 0 || lr_main <= 0) throw std::invalid_argument("train config: learning rates must be positive");
    if (decay_period < 1 || decay_factor <= 0 || decay_factor > 1)
        throw std::invalid_argument("train config: bad step decay");
    if (epochs_pretrain < 0 || epochs_main < 0) throw std::invalid_argument("train config: negative epochs");
    if (alpha < 0) throw std::invalid_argument("train config: alpha must be >= 0");
    if (tau <= 0) throw std::invalid_argument("train config: tau must be positive");
}

double TrainConfig::lr_at(double base, int epoch) const {
    return base * std::pow(decay_factor, static_cast<double>(epoch / decay_period));
}

std::string train_config_to_json(const TrainConfig& c) {
    const auto& a = c.augment;
    json j{{"batch_identities", c.batch_identities}, {"benign_views", c.benign_views},
           {"lr_pretrain", c.lr_pretrain},           {"lr_main", c.lr_main},
           {"decay_period", c.decay_period},         {"decay_factor", c.decay_factor},
           {"epochs_pretrain", c.epochs_pretrain},   {"epochs_main", c.epochs_main},
           {"alpha", c.alpha},                       {"tau", c.tau},
           {"seed", c.seed},                         {"val_distractors", c.val_distractors}};
    j["augment"] = {{"jpeg_min", a.jpeg_min},         {"jpeg_max", a.jpeg_max},
                    {"scale_min", a.scale_min},       {"scale_max", a.scale_max},
                    {"rotate_max_deg", a.rotate_max_deg}, {"pad_max", a.pad_max},
                    {"noise_max", a.noise_max},       {"enhance_min", a.enhance_min},
                    {"enhance_max", a.enhance_max},   {"min_secondary", a.min_secondary},
                    {"max_secondary", a.max_secondary}, {"output_size", a.output_size}};
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    TrainConfig c;
    const auto j = json::parse(text);
    auto get = [](const json& o, const char* key, auto& field) {
        if (o.contains(key)) field = o.at(key).get<std::decay_t<decltype(field)>>();
    };
    get(j, "batch_identities", c.batch_identities);
    get(j, "benign_views", c.benign_views);
    get(j, "lr_pretrain", c.lr_pretrain);
    get(j, "lr_main", c.lr_main);
    get(j, "decay_period", c.decay_period);
    get(j, "decay_factor", c.decay_factor);
    get(j, "epochs_pretrain", c.epochs_pretrain);
    get(j, "epochs_main", c.epochs_main);
    get(j, "alpha", c.alpha);
    get(j, "tau", c.tau);
    get(j, "seed", c.seed);
    get(j, "val_distractors", c.val_distractors);
    if (j.contains("augment")) {
        const auto& ja = j.at("augment");
        auto& a = c.augment;
        get(ja, "jpeg_min", a.jpeg_min);
        get(ja, "jpeg_max", a.jpeg_max);
        get(ja, "scale_min", a.scale_min);
        get(ja, "scale_max", a.scale_max);
        get(ja, "rotate_max_deg", a.rotate_max_deg);
        get(ja, "pad_max", a.pad_max);
        get(ja, "noise_max", a.noise_max);
        get(ja, "enhance_min", a.enhance_min);
        get(ja, "enhance_max", a.enhance_max);
        get(ja, "min_secondary", a.min_secondary);
        get(ja, "max_secondary", a.max_secondary);
        get(ja, "output_size", a.output_size);
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Optimizer

void Adam::step(const ParamList& params, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& [name, p] : params) {
        auto& s = state_[name];
        if (s.m.size() != p->data.size()) {
            s.m.assign(p->data.size(), 0.0);
            s.v.assign(p->data.size(), 0.0);
        }
        if (!p->grad) continue;
        const auto& g = *p->grad;
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            s.m[i] = beta1 * s.m[i] + (1 - beta1) * g[i];
            s.v[i] = beta2 * s.v[i] + (1 - beta2) * g[i] * g[i];
            p->data[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
        }
        p->grad.reset();
    }
}

void Adam::save(std::vector<nc::NamedTensor>& out, const std::string& prefix) const {
    for (const auto& [name, s] : state_) {
        out.push_back({prefix + ".m." + name, nc::Tensor({s.m.size()}, s.m)});
        out.push_back({prefix + ".v." + name, nc::Tensor({s.v.size()}, s.v)});
    }
}

void Adam::load(const std::vector<nc::NamedTensor>& in, const std::string& prefix) {
    state_.clear();
    const auto pm = prefix + ".m.", pv = prefix + ".v.";
    for (const auto& nt : in) {
        if (nt.name.rfind(pm, 0) == 0) state_[nt.name.substr(pm.size())].m = nt.tensor.data;
        else if (nt.name.rfind(pv, 0) == 0) state_[nt.name.substr(pv.size())].v = nt.tensor.data;
    }
}

double grad_norm(const ParamList& params) {
    double s = 0;
    for (const auto& [name, p] : params)
        if (p->grad)
            for (double g : *p->grad) s += g * g;
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Data

std::vector<TrainIdentity> load_identities(const std::string& root, const synth::DatasetIndex& index,
                                           const std::string& split) {
    const auto entries = index.split(split);
    std::vector<TrainIdentity> out(entries.size());
    parallel_for(entries.size(), [&](std::size_t i) {
        out[i].id = entries[i]->id;
        out[i].original = synth::load_variant(root, entries[i]->original);
        for (const auto& m : entries[i]->manipulated) out[i].manipulated.push_back(synth::load_variant(root, m));
    });
    return out;
}

std::vector<BatchEntry> make_batch(std::span<const TrainIdentity> set, std::span<const std::size_t> members,
                                   const TrainConfig& cfg, nn::Rng& rng) {
    if (members.size() < 2) throw TrainingError("make_batch: need at least 2 identities per batch");
    std::vector<BatchEntry> out;
    for (auto m : members) {
        const auto& id = set[m];
        if (id.manipulated.empty()) throw TrainingError("make_batch: identity without a manipulated variant");
        out.push_back({id.original.image, id.original.detections, {id.id, con::Variant::original}});
        for (std::size_t v = 0; v < cfg.benign_views; ++v) {
            auto a = aug::benign_augment(id.original.image, id.original.detections, cfg.augment, rng);
            out.push_back({std::move(a.image), std::move(a.detections), {id.id, con::Variant::benign}});
        }
        const auto pick = std::uniform_int_distribution<std::size_t>(0, id.manipulated.size() - 1)(rng);
        const auto& mv = id.manipulated[pick];
        auto a = aug::benign_augment(mv.image, mv.detections, cfg.augment, rng);
        out.push_back({std::move(a.image), std::move(a.detections), {id.id, con::Variant::manipulated}});
    }
    return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_identities, const TrainConfig& cfg, int phase,
                                                    int epoch) {
    std::vector<std::size_t> order(n_identities);
    std::iota(order.begin(), order.end(), 0);
    nn::Rng rng(nn::derive_seed(cfg.seed, {0xE90C4ULL, static_cast<std::uint64_t>(phase), static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_identities) {
        std::vector<std::size_t> g(order.begin() + static_cast<std::ptrdiff_t>(b),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_identities)));
        if (g.size() >= 2) out.push_back(std::move(g));
    }
    return out;
}

nn::Rng batch_rng(const TrainConfig& cfg, int phase, int epoch, std::size_t batch) {
    return nn::Rng(nn::derive_seed(cfg.seed, {0xBA7C4ULL, static_cast<std::uint64_t>(phase),
                                              static_cast<std::uint64_t>(epoch), batch}));
}

namespace {

constexpr int kPhasePretrain = 1;
constexpr int kPhaseMain = 2;

std::vector<con::BatchItem> batch_items(const std::vector<BatchEntry>& batch) {
    std::vector<con::BatchItem> items;
    for (const auto& b : batch) items.push_back(b.item);
    return items;
}

void check_finite(double v, const char* what, std::int64_t step) {
    if (!std::isfinite(v))
        throw TrainingError(std::string("training diverged: non-finite ") + what + " at step " + std::to_string(step));
}

ParamList collect(const std::function<void(const nn::ParamVisitor&)>& visit) {
    ParamList out;
    visit([&](const std::string& name, nc::Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

class CsvLog {
public:
    CsvLog(const std::string& path, bool append) {
        if (path.empty()) return;
        const bool fresh = !append || !fs::exists(path);
        os_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!os_) throw std::runtime_error("cannot open log " + path);
        if (fresh) os_ << "step,phase,loss_C,loss_B,lr,val_F_R1\n";
    }
    void step(const StepStats& s) {
        if (!os_.is_open()) return;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%lld,%s,%.9g,%.9g,%.6g,\n", static_cast<long long>(s.step), s.phase.c_str(),
                      s.loss_c, s.loss_b, s.lr);
        os_ << buf;
        os_.flush();
    }
    void val(std::int64_t step, const std::string& phase, double f) {
        if (!os_.is_open()) return;
        char buf[96];
        std::snprintf(buf, sizeof buf, "%lld,%s,,,,%.6f\n", static_cast<long long>(step), phase.c_str(), f);
        os_ << buf;
        os_.flush();
    }

private:
    std::ofstream os_;
};

std::vector<Image> global_inputs(const std::vector<BatchEntry>& batch, int size) {
    std::vector<Image> out(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) { out[i] = resize(batch[i].image, size, size); });
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pretraining

Pretrainer::Pretrainer(const enc::EncoderConfig& cfg, std::uint64_t seed) {
    nn::Rng rng(nn::derive_seed(seed, {0x97E7ULL}));
    cnn = enc::ConvNet(cfg.cnn_channels, cfg.visual_dim, cfg.global_size, rng);
    head = nn::Linear(cfg.visual_dim, cfg.embed_dim, rng);
    proj = nn::Linear(cfg.embed_dim, cfg.embed_dim, rng);
}

ParamList Pretrainer::params() {
    return collect([this](const nn::ParamVisitor& fn) {
        cnn.visit("pre.cnn", fn);
        head.visit("pre.head", fn);
        proj.visit("pre.E_b", fn);
    });
}

enc::ConvNet pretrain_visual(std::span<const TrainIdentity> set, const enc::EncoderConfig& ecfg,
                             const TrainConfig& cfg, const std::string& out_dir, TrainResult* result) {
    cfg.validate();
    if (set.size() < 2) throw TrainingError("pretraining needs at least 2 identities");
    Pretrainer pre(ecfg, cfg.seed);
    auto params = pre.params();
    Adam adam;
    if (!out_dir.empty()) fs::create_directories(out_dir);
    CsvLog log(out_dir.empty() ? "" : (fs::path(out_dir) / "pretrain_log.csv").string(), false);
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
        const double lr = cfg.lr_at(cfg.lr_pretrain, epoch);
        const auto groups = epoch_batches(set.size(), cfg, kPhasePretrain, epoch);
        double epoch_loss = 0;
        for (std::size_t b = 0; b < groups.size(); ++b) {
            auto rng = batch_rng(cfg, kPhasePretrain, epoch, b);
            const auto batch = make_batch(set, groups[b], cfg, rng);
            const auto items = batch_items(batch);
            const auto inputs = global_inputs(batch, ecfg.global_size);
            nc::Graph g;
            auto z = pre.head(g, pre.cnn.forward(g, inputs).features);
            auto loss = con::simclr_plus_loss(g, z, items, &pre.proj, cfg.tau);
            StepStats s;
            s.step = ++step;
            s.epoch = epoch + 1;
            s.phase = "pretrain";
            s.loss_c = s.total = g.value(loss).data[0];
            s.lr = lr;
            check_finite(s.total, "pretraining loss", step);
            g.backward(loss);
            s.grad_norm = grad_norm(params);
            check_finite(s.grad_norm, "gradient norm", step);
            adam.step(params, lr);
            log.step(s);
            epoch_loss += s.total;
            if (result) result->steps.push_back(s);
        }
        spdlog::info("pretrain epoch {}/{}: mean loss {:.4f}", epoch + 1, cfg.epochs_pretrain,
                     epoch_loss / std::max<std::size_t>(1, groups.size()));
    }
    if (!out_dir.empty()) {
        std::vector<nc::NamedTensor> state;
        for (const auto& [name, t] : params) state.push_back({name, nc::Tensor(t->shape, t->data)});
        nc::save_checkpoint((fs::path(out_dir) / "pretrained.fgpt").string(), state);
    }
    return pre.cnn;
}

void init_from_pretrained(enc::Encoder& model, const enc::ConvNet& cnn) {
    model.global_cnn() = cnn;
    model.visual_cnn() = cnn;
    model.visual_cnn().input_size = model.config().crop_size;
    model.global_cnn().input_size = model.config().global_size;
}

// ---------------------------------------------------------------------------
// Validation

Validator::Validator(const std::string& root, const synth::DatasetIndex& index, const enc::EncoderConfig& ecfg,
                     std::size_t n_distractors) {
    const auto opt = ecfg.featurize_options();
    std::vector<synth::LoadedVariant> o, b, m;
    for (const auto* e : index.split("val")) {
        o.push_back(synth::load_variant(root, e->original));
        original_ids.push_back(e->id);
        for (const auto& v : e->benign) {
            b.push_back(synth::load_variant(root, v));
            benign_ids.push_back(e->id);
        }
        for (const auto& v : e->manipulated) {
            m.push_back(synth::load_variant(root, v));
            manipulated_ids.push_back(e->id);
        }
    }
    originals = pipe::featurize_all(o, opt);
    benign = pipe::featurize_all(b, opt);
    manipulated = pipe::featurize_all(m, opt);
    // Validation distractors come from an index range disjoint from the benchmark ones.
    constexpr std::uint64_t kOffset = 1ULL << 40;
    std::vector<synth::LoadedVariant> d(n_distractors);
    parallel_for(n_distractors, [&](std::size_t i) { d[i] = pipe::distractor(index.config, kOffset + i); });
    distractors = pipe::featurize_all(d, opt);
}

double Validator::f_r1(enc::Encoder& model) const {
    auto codes = [&](const std::vector<sg::SceneFeatures>& feats) {
        std::vector<std::uint64_t> out;
        for (std::size_t b = 0; b < feats.size(); b += 64) {
            std::vector<const sg::SceneFeatures*> ptrs;
            for (std::size_t i = b; i < std::min(feats.size(), b + 64); ++i) ptrs.push_back(&feats[i]);
            for (const auto& e : model.embed_batch(ptrs)) out.push_back(hash::quantize(e.z).bits);
        }
        return out;
    };
    eval::BenchInputs in;
    auto fill = [&](const std::vector<sg::SceneFeatures>& feats, const std::vector<int>* ids, idx::Role role,
                    std::vector<eval::CodedItem>& out) {
        const auto c = codes(feats);
        for (std::size_t i = 0; i < c.size(); ++i)
            out.push_back({std::to_string(i), ids ? (*ids)[i] : -1, role, c[i]});
    };
    fill(originals, &original_ids, idx::Role::original, in.originals);
    fill(benign, &benign_ids, idx::Role::benign, in.benign);
    fill(manipulated, &manipulated_ids, idx::Role::manipulated, in.manipulated);
    fill(distractors, nullptr, idx::Role::distractor, in.distractors);
    return eval::benchmark_two(in, 0).get("F_R1");
}

// ---------------------------------------------------------------------------
// End-to-end training

std::vector<nc::NamedTensor> model_state(const enc::Encoder& model, const nn::Linear* proj) {
    auto s = model.state();
    if (proj) {
        s.push_back({"E_b.weight", nc::Tensor(proj->weight.shape, proj->weight.data)});
        s.push_back({"E_b.bias", nc::Tensor(proj->bias.shape, proj->bias.data)});
    }
    return s;
}

enc::Encoder load_model(const std::string& checkpoint, const enc::EncoderConfig& cfg) {
    enc::Encoder m(cfg, 0);
    m.load_state(nc::load_checkpoint(checkpoint));
    return m;
}

namespace {

struct Meta {
    double adam_t = 0, epoch = 0, best_epoch = 0, best_val = 0, step = 0;
};

const nc::Tensor* find(const std::vector<nc::NamedTensor>& s, const std::string& name) {
    for (const auto& nt : s)
        if (nt.name == name) return &nt.tensor;
    return nullptr;
}

std::string epoch_file(const std::string& dir, int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%03d.fgpt", epoch);
    return (fs::path(dir) / buf).string();
}

}  // namespace

TrainResult train_end_to_end(std::span<const TrainIdentity> set, const Validator& val, enc::Encoder& model,
                             const TrainConfig& cfg, const MainOptions& opt) {
    cfg.validate();
    if (opt.out_dir.empty()) throw std::invalid_argument("train: output directory required");
    if (set.size() < 2) throw TrainingError("training needs at least 2 identities");
    fs::create_directories(opt.out_dir);
    const auto best_path = (fs::path(opt.out_dir) / "best.fgpt").string();

    nn::Rng prng(nn::derive_seed(cfg.seed, {0xEB0ULL}));
    nn::Linear proj(model.config().embed_dim, model.config().embed_dim, prng);
    auto params = collect([&](const nn::ParamVisitor& fn) {
        model.visit(fn);
        proj.visit("E_b", fn);
    });
    Adam adam;
    TrainResult res;
    Meta meta;
    int start_epoch = 0;

    if (opt.resume) {
        const auto state = nc::load_checkpoint(*opt.resume);
        model.load_state(state);
        const auto* w = find(state, "E_b.weight");
        const auto* b = find(state, "E_b.bias");
        const auto* m = find(state, "train.meta");
        if (!w || !b || !m || m->data.size() != 5) throw nc::CheckpointError("not a training checkpoint: " + *opt.resume);
        proj.weight.data = w->data;
        proj.bias.data = b->data;
        adam.load(state, "adam");
        meta = {m->data[0], m->data[1], m->data[2], m->data[3], m->data[4]};
        adam.t = static_cast<std::int64_t>(meta.adam_t);
        start_epoch = static_cast<int>(meta.epoch);
        res.best_epoch = static_cast<int>(meta.best_epoch);
        res.best_val = meta.best_val;
        spdlog::info("resuming after epoch {} (best val F_R1 {:.4f} at epoch {})", start_epoch, res.best_val,
                     res.best_epoch);
    }
    CsvLog log((fs::path(opt.out_dir) / "train_log.csv").string(), opt.resume.has_value());
    std::int64_t step = static_cast<std::int64_t>(meta.step);

    auto save_epoch = [&](int epoch) {
        auto state = model_state(model, &proj);
        adam.save(state, "adam");
        state.push_back({"train.meta", nc::Tensor({5}, {static_cast<double>(adam.t), static_cast<double>(epoch),
                                                         static_cast<double>(res.best_epoch), res.best_val,
                                                         static_cast<double>(step)})});
        nc::save_checkpoint(epoch_file(opt.out_dir, epoch), state);
    };

    if (start_epoch == 0) {
        res.best_val = val.empty() ? 0.0 : val.f_r1(model);
        res.best_epoch = 0;
        res.epochs.push_back({0, res.best_val});
        log.val(0, "val", res.best_val);
        nc::save_checkpoint(best_path, model_state(model, &proj));
        spdlog::info("initial val F_R1 {:.4f}", res.best_val);
    }

    const int last = opt.stop_after_epoch >= 0 ? std::min(opt.stop_after_epoch, cfg.epochs_main) : cfg.epochs_main;
    for (int epoch = start_epoch; epoch < last; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = cfg.lr_at(cfg.lr_main, epoch);
        const auto groups = epoch_batches(set.size(), cfg, kPhaseMain, epoch);
        double sum_c = 0, sum_b = 0;
        for (std::size_t b = 0; b < groups.size(); ++b) {
            auto rng = batch_rng(cfg, kPhaseMain, epoch, b);
            const auto batch = make_batch(set, groups[b], cfg, rng);
            const auto items = batch_items(batch);
            std::vector<sg::SceneFeatures> feats(batch.size());
            const auto fopt = model.config().featurize_options();
            parallel_for(batch.size(), [&](std::size_t i) { feats[i] = sg::featurize(batch[i].image, batch[i].detections, fopt); });
            std::vector<const sg::SceneFeatures*> ptrs;
            for (const auto& f : feats) ptrs.push_back(&f);

            nc::Graph g;
            const auto out = model.forward(g, ptrs);
            const auto loss = con::total_loss(g, out.z, items, &proj, cfg.tau, cfg.alpha);
            StepStats s;
            s.step = ++step;
            s.epoch = epoch + 1;
            s.phase = "main";
            s.loss_c = g.value(loss.contrastive).data[0];
            s.loss_b = g.value(loss.quantization).data[0];
            s.total = g.value(loss.total).data[0];
            s.lr = lr;
            check_finite(s.total, "loss", step);
            g.backward(loss.total);
            s.grad_norm = grad_norm(params);
            check_finite(s.grad_norm, "gradient norm", step);
            adam.step(params, lr);
            log.step(s);
            sum_c += s.loss_c;
            sum_b += s.loss_b;
            res.steps.push_back(s);
        }
        const double f = val.empty() ? 0.0 : val.f_r1(model);
        res.epochs.push_back({epoch + 1, f});
        log.val(step, "val", f);
        if (f > res.best_val) {
            res.best_val = f;
            res.best_epoch = epoch + 1;
            nc::save_checkpoint(best_path, model_state(model, &proj));
        }
        save_epoch(epoch + 1);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto nb = static_cast<double>(std::max<std::size_t>(1, groups.size()));
        spdlog::info("epoch {}/{}: L_C {:.4f} L_B {:.3f} lr {:.2e} val F_R1 {:.4f} (best {:.4f} @ {}) {:.1f}s",
                     epoch + 1, cfg.epochs_main, sum_c / nb, sum_b / nb, lr, f, res.best_val, res.best_epoch, secs);
    }
    model.load_state(nc::load_checkpoint(best_path));
    return res;
}

}  // namespace fgraph::train
