#pragma once

// Two training phases: a whole-image CNN trained with the contrastive loss and
// copied into both CNN streams, then end-to-end training of the encoder on
// hash codes. Batches mix each identity's original, augmented views and a
// manipulated variant.

#include "fgraph/augment.hpp"
#include "fgraph/contrastive.hpp"
#include "fgraph/encoder.hpp"
#include "fgraph/synthdata.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fgraph::train {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t batch_identities = 20;
    std::size_t benign_views = 2;
    double lr_pretrain = 1e-3;
    double lr_main = 1e-4;
    int decay_period = 10;
    double decay_factor = 0.5;
    int epochs_pretrain = 30;
    int epochs_main = 50;
    double alpha = 1e-2;
    double tau = 0.5;
    std::uint64_t seed = 0;
    std::size_t val_distractors = 500;
    aug::AugmentConfig augment;

    void validate() const;
    double lr_at(double base, int epoch) const;  // epoch is 0-based
};

std::string train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const std::string& text);

using ParamList = std::vector<std::pair<std::string, nc::Tensor*>>;

class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t t = 0;

    // Consumes and clears every gradient; parameters without one are left as is.
    void step(const ParamList& params, double lr);
    void save(std::vector<nc::NamedTensor>& out, const std::string& prefix) const;
    void load(const std::vector<nc::NamedTensor>& in, const std::string& prefix);

private:
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> state_;
};

double grad_norm(const ParamList& params);

// In-memory training identities: original and manipulated variants.
struct TrainIdentity {
    int id = 0;
    synth::LoadedVariant original;
    std::vector<synth::LoadedVariant> manipulated;
};
std::vector<TrainIdentity> load_identities(const std::string& root, const synth::DatasetIndex& index,
                                           const std::string& split);

struct BatchEntry {
    Image image;
    std::vector<sg::Detection> detections;
    con::BatchItem item;
};

// Per identity: the original, `benign_views` augmented views and one
// augmented manipulated variant. Throws if fewer than 2 identities.
std::vector<BatchEntry> make_batch(std::span<const TrainIdentity> set, std::span<const std::size_t> members,
                                   const TrainConfig& cfg, nn::Rng& rng);

// Identity groups of one epoch: a seeded shuffle cut into batch_identities
// groups; a trailing group smaller than 2 is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_identities, const TrainConfig& cfg, int phase,
                                                    int epoch);
nn::Rng batch_rng(const TrainConfig& cfg, int phase, int epoch, std::size_t batch);

struct StepStats {
    std::int64_t step = 0;
    int epoch = 0;
    std::string phase;
    double loss_c = 0, loss_b = 0, total = 0, lr = 0, grad_norm = 0;
};

struct EpochStats {
    int epoch = 0;
    double val_f_r1 = 0;
};

struct TrainResult {
    std::vector<StepStats> steps;
    std::vector<EpochStats> epochs;  // epoch 0 is the initialization
    int best_epoch = 0;
    double best_val = 0;
};

// Pretraining model: CNN + projection head to D (no quantization) + E_b.
struct Pretrainer {
    enc::ConvNet cnn;
    nn::Linear head;
    nn::Linear proj;
    Pretrainer() = default;
    Pretrainer(const enc::EncoderConfig& cfg, std::uint64_t seed);
    ParamList params();
};

// Trains on whole images; returns the CNN. Writes pretrain_log.csv and
// pretrained.fgpt to out_dir when it is non-empty.
enc::ConvNet pretrain_visual(std::span<const TrainIdentity> set, const enc::EncoderConfig& ecfg,
                             const TrainConfig& cfg, const std::string& out_dir, TrainResult* result = nullptr);

// Copies the pretrained CNN into both CNN streams.
void init_from_pretrained(enc::Encoder& model, const enc::ConvNet& cnn);

// Cached validation data for F_R1 (val split + generated distractors).
struct Validator {
    std::vector<sg::SceneFeatures> originals, benign, manipulated, distractors;
    std::vector<int> original_ids, benign_ids, manipulated_ids;
    Validator() = default;
    Validator(const std::string& root, const synth::DatasetIndex& index, const enc::EncoderConfig& ecfg,
              std::size_t n_distractors);
    double f_r1(enc::Encoder& model) const;
    bool empty() const { return originals.empty(); }
};

struct MainOptions {
    std::string out_dir;               // checkpoints and log; required
    std::optional<std::string> resume;  // epoch checkpoint to continue from
    int stop_after_epoch = -1;          // for tests: stop early, -1 = run all
};

// Runs the end-to-end phase from `model`'s current weights. On return
// `model` holds the best-by-validation weights (initialization included).
TrainResult train_end_to_end(std::span<const TrainIdentity> set, const Validator& val, enc::Encoder& model,
                             const TrainConfig& cfg, const MainOptions& opt);

// Checkpoint helpers: model weights plus E_b under "E_b.*".
std::vector<nc::NamedTensor> model_state(const enc::Encoder& model, const nn::Linear* proj);
enc::Encoder load_model(const std::string& checkpoint, const enc::EncoderConfig& cfg);

}  // namespace fgraph::train
