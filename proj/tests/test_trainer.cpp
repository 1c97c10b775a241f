#include "fgraph/trainer.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

using namespace fgraph;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

train::TrainConfig tiny_train() {
    train::TrainConfig c;
    c.batch_identities = 3;
    c.benign_views = 1;
    c.epochs_pretrain = 1;
    c.epochs_main = 2;
    c.val_distractors = 4;
    c.augment.output_size = 48;
    return c;
}

struct TinyData {
    std::string root;
    synth::DatasetIndex index;
    std::vector<train::TrainIdentity> set;
};

const TinyData& tiny_data() {
    static const TinyData d = [] {
        TinyData t;
        synth::DatasetConfig cfg;
        cfg.identities = 12;
        cfg.manips_per_identity = 1;
        cfg.benigns_per_identity = 1;
        cfg.scene = testing::small_spec(48);
        cfg.val_fraction = 0.2;
        t.root = (fs::temp_directory_path() / "fgraph_trainer_data").string();
        fs::remove_all(t.root);
        t.index = synth::emit_dataset(cfg, t.root);
        t.set = train::load_identities(t.root, t.index, "train");
        return t;
    }();
    return d;
}

}  // namespace

TEST_CASE("Adam matches the textbook update") {
    nc::Tensor p({3}, {1.0, -2.0, 0.5}, true);
    train::ParamList params{{"p", &p}};
    train::Adam adam;
    std::vector<double> m(3, 0), v(3, 0), x = p.data;
    const std::vector<std::vector<double>> grads{{0.1, -0.3, 2.0}, {0.2, 0.0, -1.0}, {-0.5, 0.4, 0.3}};
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        p.grad = grads[t - 1];
        adam.step(params, 0.01);
        for (int i = 0; i < 3; ++i) {
            const double g = grads[t - 1][i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            x[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
            CHECK(p.data[i] == doctest::Approx(x[i]).epsilon(1e-14));
        }
        CHECK_FALSE(p.grad.has_value());
    }
    // State round trip continues identically.
    std::vector<nc::NamedTensor> saved;
    adam.save(saved, "adam");
    train::Adam resumed;
    resumed.load(saved, "adam");
    resumed.t = adam.t;
    nc::Tensor q = p;
    train::ParamList qparams{{"p", &q}};
    p.grad = std::vector<double>{1, 1, 1};
    q.grad = std::vector<double>{1, 1, 1};
    adam.step(params, 0.01);
    resumed.step(qparams, 0.01);
    CHECK(p.data == q.data);
}

TEST_CASE("step decay and config validation") {
    train::TrainConfig c;
    CHECK(c.lr_at(1e-4, 0) == 1e-4);
    CHECK(c.lr_at(1e-4, 9) == 1e-4);
    CHECK(c.lr_at(1e-4, 10) == 5e-5);
    CHECK(c.lr_at(1e-4, 25) == 2.5e-5);
    auto bad = c;
    bad.batch_identities = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.tau = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.alpha = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    const auto back = train::train_config_from_json(train::train_config_to_json(c));
    CHECK(train::train_config_to_json(back) == train::train_config_to_json(c));
    CHECK(train::train_config_from_json(R"({"alpha": 0.5})").alpha == 0.5);
    CHECK_THROWS(train::train_config_from_json(R"({"tau": -1})"));
}

TEST_CASE("epoch batches partition the identities deterministically") {
    train::TrainConfig c;
    const auto b = train::epoch_batches(45, c, 1, 0);
    CHECK(b.size() == 3);  // 20 + 20 + 5
    std::set<std::size_t> seen;
    for (const auto& g : b)
        for (auto i : g) CHECK(seen.insert(i).second);
    CHECK(seen.size() == 45);
    CHECK(train::epoch_batches(45, c, 1, 0) == b);
    CHECK(train::epoch_batches(45, c, 1, 1) != b);
    // A trailing singleton cannot form a batch.
    CHECK(train::epoch_batches(21, c, 1, 0).size() == 1);
}

TEST_CASE("batch composition") {
    const auto& d = tiny_data();
    auto c = tiny_train();
    c.benign_views = 2;
    REQUIRE(d.set.size() >= 3);
    const std::vector<std::size_t> members{0, 1, 2};
    auto rng = train::batch_rng(c, 1, 0, 0);
    const auto batch = train::make_batch(d.set, members, c, rng);
    CHECK(batch.size() == 3 * (1 + 2 + 1));
    for (std::size_t m = 0; m < 3; ++m) {
        int orig = 0, ben = 0, man = 0;
        for (const auto& e : batch) {
            if (e.item.identity != d.set[members[m]].id) continue;
            orig += e.item.variant == con::Variant::original;
            ben += e.item.variant == con::Variant::benign;
            man += e.item.variant == con::Variant::manipulated;
        }
        CHECK(orig == 1);
        CHECK(ben == 2);
        CHECK(man == 1);
    }
    auto rng2 = train::batch_rng(c, 1, 0, 0);
    const auto again = train::make_batch(d.set, members, c, rng2);
    for (std::size_t i = 0; i < batch.size(); ++i) CHECK(again[i].image.pixels == batch[i].image.pixels);
    const std::vector<std::size_t> one{0};
    CHECK_THROWS_AS(train::make_batch(d.set, one, c, rng), train::TrainingError);
}

TEST_CASE("pretraining initializes both CNN streams") {
    const auto& d = tiny_data();
    const auto ecfg = testing::tiny_config();
    train::TrainResult res;
    const auto cnn = train::pretrain_visual(d.set, ecfg, tiny_train(), "", &res);
    CHECK(!res.steps.empty());
    for (const auto& s : res.steps) CHECK(std::isfinite(s.total));
    enc::Encoder model(ecfg, 0);
    train::init_from_pretrained(model, cnn);
    std::vector<std::vector<double>> g, v;
    model.global_cnn().visit("x", [&](const std::string&, nc::Tensor& t) { g.push_back(t.data); });
    model.visual_cnn().visit("x", [&](const std::string&, nc::Tensor& t) { v.push_back(t.data); });
    CHECK(g == v);
}

TEST_CASE("end-to-end training is deterministic and resumable") {
    const auto& d = tiny_data();
    const auto ecfg = testing::tiny_config();
    const auto tcfg = tiny_train();
    const train::Validator val(d.root, d.index, ecfg, tcfg.val_distractors);
    const auto base = fs::temp_directory_path() / "fgraph_trainer_runs";
    fs::remove_all(base);

    auto run = [&](const std::string& name, int stop, std::optional<std::string> resume) {
        enc::Encoder model(ecfg, 0);
        train::MainOptions opt;
        opt.out_dir = (base / name).string();
        opt.stop_after_epoch = stop;
        opt.resume = std::move(resume);
        return train::train_end_to_end(d.set, val, model, tcfg, opt);
    };
    const auto a = run("a", -1, std::nullopt);
    run("b", -1, std::nullopt);
    CHECK(slurp((base / "a" / "epoch_002.fgpt").string()) == slurp((base / "b" / "epoch_002.fgpt").string()));
    CHECK(slurp((base / "a" / "best.fgpt").string()) == slurp((base / "b" / "best.fgpt").string()));
    CHECK(a.epochs.size() == 3);
    CHECK(a.epochs[static_cast<std::size_t>(a.best_epoch)].val_f_r1 >= a.epochs[0].val_f_r1);

    for (const auto& s : a.steps) {
        CHECK(std::isfinite(s.grad_norm));
        CHECK(s.total == doctest::Approx(s.loss_c + tcfg.alpha * s.loss_b).epsilon(1e-12));
    }

    run("c", 1, std::nullopt);
    CHECK_FALSE(fs::exists(base / "c" / "epoch_002.fgpt"));
    run("c", -1, (base / "c" / "epoch_001.fgpt").string());
    CHECK(slurp((base / "a" / "epoch_002.fgpt").string()) == slurp((base / "c" / "epoch_002.fgpt").string()));

    CHECK_THROWS_AS(run("d", -1, (base / "a" / "best.fgpt").string()), nc::CheckpointError);
    fs::remove_all(base);
}
