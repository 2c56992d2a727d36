#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "rff/optim.hpp"
#include "rff/rng.hpp"
#include "rff/signal_prep.hpp"
#include "rff/tape.hpp"

namespace rff::enc {

// Contiguous class index <-> original device id bijection. Training remaps
// device ids to 0..K-1; the model artifact records the mapping.
class LabelMap {
  public:
    LabelMap() = default;
    static LabelMap from_device_ids(const std::vector<uint16_t>& ids);  // dedups + sorts

    int to_class(uint16_t device_id) const;   // throws InvalidArgument when absent
    uint16_t to_device(int cls) const;
    bool contains(uint16_t device_id) const;
    int size() const { return static_cast<int>(devices_.size()); }
    const std::vector<uint16_t>& devices() const { return devices_; }

  private:
    std::vector<uint16_t> devices_;  // class index -> device id, strictly increasing
};

// Additive angular margin loss over unit-norm embeddings [B,D] and a class
// weight matrix [K,D] (rows are class directions; normalized internally).
// The margin shifts only the target angle; cosines are clamped before acos
// and the shifted angle is clamped to [0, pi].
nn::Tape::Var arcface_loss(nn::Tape& tape, nn::Tape::Var embeddings,
                           const std::vector<int>& labels, nn::Tape::Var class_weights,
                           double margin, double scale);

// Shared transformer stage: patch projection + learned positional embeddings,
// pre-norm encoder blocks, final layer norm, mean pooling, L2 normalization.
struct TransformerStage {
    int tokens = 16;
    int patch_dim = 64;
    int token_dim = 192;
    int layers = 1;
    int heads = 6;
    int head_dim = 32;
    int mlp_hidden = 32;

    void validate() const;
    // registers parameters (prefix-qualified names) and keeps pointers to them
    void init_params(nn::ParamSet& ps, RngStream& rng, const std::string& prefix);

    using Stager = std::function<nn::Tape::Var(nn::Parameter&)>;
    // patches: [batch*tokens, patch_dim] -> unit-norm [batch, token_dim]
    nn::Tape::Var run(nn::Tape& tape, nn::Tape::Var patches, int batch, const Stager& stage) const;

  private:
    nn::Parameter* patch_w_ = nullptr;
    nn::Parameter* patch_b_ = nullptr;
    nn::Parameter* pos_ = nullptr;
    struct Block {
        nn::Parameter *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
        nn::Parameter *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
    };
    std::vector<Block> blocks_;
    nn::Parameter* lnf_g_ = nullptr;
    nn::Parameter* lnf_b_ = nullptr;
};

// Common surface of the trainable fingerprint encoders. embed/predict_proba
// only read parameter values and may run concurrently across inputs.
class Encoder {
  public:
    virtual ~Encoder() = default;
    virtual std::string kind() const = 0;
    virtual nn::ParamSet& params() = 0;
    virtual const nn::ParamSet& params() const = 0;
    virtual int num_classes() const = 0;
    virtual int latent_dim() const = 0;
    virtual int input_width() const = 0;  // expected columns of X
    virtual nlohmann::json config_json() const = 0;

    // X: [B, input_width]; returns the scalar training loss node
    virtual nn::Tape::Var build_loss(nn::Tape& tape, const nn::Tensor& X,
                                     const std::vector<int>& labels) = 0;
    virtual nn::Tensor embed(const nn::Tensor& X) const = 0;          // [B, latent]
    virtual nn::Tensor predict_proba(const nn::Tensor& X) const = 0;  // [B, K]

    LabelMap label_map;
};

struct VitConfig {
    int input_h = 32;
    int input_w = 32;
    int patch_kernel = 8;
    int patch_stride = 8;
    int token_dim = 192;  // heads * head_dim
    int layers = 1;
    int heads = 6;
    int head_dim = 32;
    int mlp_hidden = 32;
    int latent_dim = 192;
    double arcface_margin = 0.1;
    double arcface_scale = 64.0;
    int num_classes = 13;

    void validate() const;
    int tokens_per_side(int extent) const { return (extent - patch_kernel) / patch_stride + 1; }
    int tokens() const { return tokens_per_side(input_h) * tokens_per_side(input_w); }

    nlohmann::json to_json() const;
    static VitConfig from_json(const nlohmann::json& j);
};

class VitEncoder : public Encoder {
  public:
    VitEncoder(const VitConfig& cfg, uint64_t seed);

    std::string kind() const override { return "vit"; }
    nn::ParamSet& params() override { return params_; }
    const nn::ParamSet& params() const override { return params_; }
    int num_classes() const override { return cfg_.num_classes; }
    int latent_dim() const override { return cfg_.latent_dim; }
    int input_width() const override { return cfg_.input_h * cfg_.input_w; }
    nlohmann::json config_json() const override;
    const VitConfig& config() const { return cfg_; }

    nn::Tape::Var build_loss(nn::Tape& tape, const nn::Tensor& X,
                             const std::vector<int>& labels) override;
    nn::Tensor embed(const nn::Tensor& X) const override;
    nn::Tensor predict_proba(const nn::Tensor& X) const override;

  private:
    nn::Tensor to_patches(const nn::Tensor& X) const;
    nn::Tape::Var forward(nn::Tape& tape, const nn::Tensor& X, bool bind) const;

    VitConfig cfg_;
    nn::ParamSet params_;
    TransformerStage stage_;
    nn::Parameter* arcface_w_ = nullptr;
};

struct CnnConfig {
    int input_h = 32;
    int input_w = 32;
    std::vector<int> channels = {16, 32, 64};  // one 3x3 conv + ReLU + 2x2 pool per entry
    int latent_dim = 192;
    int num_classes = 13;

    void validate() const;
    nlohmann::json to_json() const;
    static CnnConfig from_json(const nlohmann::json& j);
};

class CnnEncoder : public Encoder {
  public:
    CnnEncoder(const CnnConfig& cfg, uint64_t seed);

    std::string kind() const override { return "cnn"; }
    nn::ParamSet& params() override { return params_; }
    const nn::ParamSet& params() const override { return params_; }
    int num_classes() const override { return cfg_.num_classes; }
    int latent_dim() const override { return cfg_.latent_dim; }
    int input_width() const override { return cfg_.input_h * cfg_.input_w; }
    nlohmann::json config_json() const override;
    const CnnConfig& config() const { return cfg_; }

    nn::Tape::Var build_loss(nn::Tape& tape, const nn::Tensor& X,
                             const std::vector<int>& labels) override;
    nn::Tensor embed(const nn::Tensor& X) const override;
    nn::Tensor predict_proba(const nn::Tensor& X) const override;

  private:
    nn::Tape::Var forward(nn::Tape& tape, const nn::Tensor& X, bool bind, bool with_head) const;

    CnnConfig cfg_;
    nn::ParamSet params_;
};

struct TrainHyper {
    double lr = 1e-4;
    int batch = 512;
    int epochs = 50;
    uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> epoch_loss;  // mean per-record loss per epoch
};

// Supervised loop: seeded shuffle per epoch, Adam updates per batch. labels
// must already be contiguous class indices (see LabelMap).
TrainResult train(Encoder& model, const nn::Tensor& X, const std::vector<int>& labels,
                  const TrainHyper& hyper);

// Stacks preprocessed grids of the chosen records into a [N, 1024] matrix.
nn::Tensor grid_matrix(const std::vector<sig::ModelInput>& grids);

// Embeds record grids, sharded across UWB_RFF_THREADS worker threads.
nn::Tensor embed_grids(const Encoder& model, const nn::Tensor& X);

// classification accuracy of argmax predict_proba against class labels
double accuracy(Encoder& model, const nn::Tensor& X, const std::vector<int>& labels);

// checkpoint + JSON sidecar (config, label map, train hyper)
void save_model(const Encoder& model, const TrainHyper& hyper, const std::string& ckpt_path);

}  // namespace rff::enc
