#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rff/datastore.hpp"
#include "rff/encoders.hpp"

namespace rff::fusion {

enum class LocationPolicy { SameLocation, DifferentLocation };
std::string to_string(LocationPolicy policy);
LocationPolicy policy_from_string(const std::string& name);

// k measurements of one device, grouped under a location policy.
struct SampleBundle {
    std::vector<uint32_t> record_idx;
    uint16_t device_id = 0;
    LocationPolicy policy = LocationPolicy::SameLocation;
};

struct BundleSet {
    std::vector<SampleBundle> bundles;
    int skipped = 0;  // devices (Dl) or cells (Sl) with fewer than k records
};

// Seeded grouping of the pooled records into disjoint k-sample bundles.
// SameLocation keeps each bundle inside one (device, location) cell;
// DifferentLocation spreads a bundle over distinct locations when possible.
BundleSet bundle_builder(const data::Records& records, const std::vector<uint32_t>& pool, int k,
                         LocationPolicy policy, uint64_t seed);

// Mean of the per-sample class probability vectors.
std::vector<double> vote_predict(const enc::Encoder& model, const data::Records& records,
                                 const SampleBundle& bundle, const sig::StftConfig& stft);

// argmax with ties broken toward the lower index
int argmax_tie_low(const std::vector<double>& probs);

// ViT over raw concatenated traces: each sample is amplitude-normalized and
// peak-centered (no STFT), the k complex traces are concatenated, zero-padded
// to a patch multiple and cut into 1-D patches of [re x patch_len, im x
// patch_len] values.
struct ConcatVitConfig {
    int k = 3;
    int signal_len = 250;
    int patch_len = 8;
    int token_dim = 192;
    int layers = 1;
    int heads = 6;
    int head_dim = 32;
    int mlp_hidden = 32;
    int latent_dim = 192;
    double arcface_margin = 0.1;
    double arcface_scale = 64.0;
    int num_classes = 13;

    void validate() const;
    int seq_len() const { return k * signal_len; }
    int padded_len() const { return (seq_len() + patch_len - 1) / patch_len * patch_len; }
    int tokens() const { return padded_len() / patch_len; }

    nlohmann::json to_json() const;
    static ConcatVitConfig from_json(const nlohmann::json& j);
};

class ConcatVitEncoder : public enc::Encoder {
  public:
    ConcatVitEncoder(const ConcatVitConfig& cfg, uint64_t seed);

    std::string kind() const override { return "concat_vit"; }
    nn::ParamSet& params() override { return params_; }
    const nn::ParamSet& params() const override { return params_; }
    int num_classes() const override { return cfg_.num_classes; }
    int latent_dim() const override { return cfg_.latent_dim; }
    int input_width() const override { return 2 * cfg_.padded_len(); }
    nlohmann::json config_json() const override;
    const ConcatVitConfig& config() const { return cfg_; }

    nn::Tape::Var build_loss(nn::Tape& tape, const nn::Tensor& X,
                             const std::vector<int>& labels) override;
    nn::Tensor embed(const nn::Tensor& X) const override;
    nn::Tensor predict_proba(const nn::Tensor& X) const override;

  private:
    nn::Tensor to_patches(const nn::Tensor& X) const;
    nn::Tape::Var forward(nn::Tape& tape, const nn::Tensor& X, bool bind) const;

    ConcatVitConfig cfg_;
    nn::ParamSet params_;
    enc::TransformerStage stage_;
    nn::Parameter* arcface_w_ = nullptr;
};

// Builds the [B, 2*padded_len] input rows for a set of bundles: per sample
// normalize_amplitude + center_peak, concatenate, pad; row layout is
// [re_0..re_{P-1}, im_0..im_{P-1}].
nn::Tensor bundle_matrix(const data::Records& records, const std::vector<SampleBundle>& bundles,
                         const ConcatVitConfig& cfg);

struct FusionRow {
    int k = 1;
    LocationPolicy policy = LocationPolicy::SameLocation;
    std::string method;  // "V" or "CI"
    double cf1 = 0.0;
};

// Probability voting over test-side bundles with a trained single-sample model.
FusionRow run_voting(const enc::Encoder& model, const data::Dataset& ds,
                     const data::ScenarioSplit& split, int k, LocationPolicy policy,
                     const sig::StftConfig& stft, uint64_t seed);

// Trains a concatenated-input ViT on train-side bundles and scores test-side
// bundles. Returns the row plus the trained model.
struct ConcatOutcome {
    FusionRow row;
    std::unique_ptr<ConcatVitEncoder> model;
    enc::TrainResult history;
};
ConcatOutcome run_concat(const ConcatVitConfig& base_cfg, const data::Dataset& ds,
                         const data::ScenarioSplit& split, int k, LocationPolicy policy,
                         const enc::TrainHyper& hyper, uint64_t bundle_seed);

// Loads any checkpoint (vit / cnn / concat_vit) from its JSON sidecar.
std::unique_ptr<enc::Encoder> load_any_model(const std::string& ckpt_path);

}  // namespace rff::fusion
