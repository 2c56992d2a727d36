#include "rff/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include "rff/checkpoint.hpp"
#include "rff/errors.hpp"

namespace rff::enc {

using nn::Parameter;
using nn::ParamSet;
using nn::Tape;
using nn::Tensor;
using nlohmann::json;

// ---------------------------------------------------------------------------
// label mapping

LabelMap LabelMap::from_device_ids(const std::vector<uint16_t>& ids) {
    if (ids.empty()) throw InvalidArgument("label map needs at least one device id");
    std::set<uint16_t> uniq(ids.begin(), ids.end());
    LabelMap map;
    map.devices_.assign(uniq.begin(), uniq.end());
    return map;
}

int LabelMap::to_class(uint16_t device_id) const {
    const auto it = std::lower_bound(devices_.begin(), devices_.end(), device_id);
    if (it == devices_.end() || *it != device_id) {
        throw InvalidArgument("device id " + std::to_string(device_id) + " not in label map");
    }
    return static_cast<int>(it - devices_.begin());
}

uint16_t LabelMap::to_device(int cls) const {
    if (cls < 0 || cls >= size()) {
        throw InvalidArgument("class index " + std::to_string(cls) + " out of range");
    }
    return devices_[static_cast<size_t>(cls)];
}

bool LabelMap::contains(uint16_t device_id) const {
    return std::binary_search(devices_.begin(), devices_.end(), device_id);
}

// ---------------------------------------------------------------------------
// initialization helpers

namespace {

Tensor xavier(std::vector<int> shape, int fan_in, int fan_out, RngStream& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

Tensor ones(std::vector<int> shape) {
    Tensor t(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), 1.0);
    return t;
}

int env_threads() {
    const char* raw = std::getenv("UWB_RFF_THREADS");
    if (!raw) return 1;
    const int n = std::atoi(raw);
    return n >= 1 ? n : 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// ArcFace

Tape::Var arcface_loss(Tape& tape, Tape::Var embeddings, const std::vector<int>& labels,
                       Tape::Var class_weights, double margin, double scale) {
    if (margin < 0.0 || margin >= M_PI) throw InvalidArgument("arcface margin must lie in [0, pi)");
    if (scale <= 0.0) throw InvalidArgument("arcface scale must be positive");
    const int batch = tape.val(embeddings).rows();
    const int num_classes = tape.val(class_weights).rows();
    if (tape.val(class_weights).cols() != tape.val(embeddings).cols()) {
        throw InvalidArgument("arcface class weights do not match embedding dimension");
    }
    if (labels.size() != static_cast<size_t>(batch)) {
        throw InvalidArgument("arcface label count does not match batch");
    }
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw InvalidArgument("arcface label " + std::to_string(y) + " out of range");
        }
    }

    const Tape::Var normed_w = tape.l2_normalize_rows(class_weights);
    const Tape::Var cosines = tape.matmul_nt(embeddings, normed_w);
    const Tape::Var clamped = tape.clamp(cosines, -1.0 + 1e-7, 1.0 - 1e-7);
    const Tape::Var theta = tape.acos_v(clamped);

    Tensor margin_mask({batch, num_classes});
    for (int i = 0; i < batch; ++i) {
        margin_mask.at(i, labels[static_cast<size_t>(i)]) = margin;
    }
    const Tape::Var shifted = tape.clamp(tape.add(theta, tape.input(std::move(margin_mask))), 0.0, M_PI);
    const Tape::Var logits = tape.scale(tape.cos_v(shifted), scale);
    return tape.softmax_cross_entropy(logits, labels);
}

// ---------------------------------------------------------------------------
// transformer stage

void TransformerStage::validate() const {
    if (tokens < 1 || patch_dim < 1) throw InvalidArgument("transformer needs tokens and patch_dim >= 1");
    if (token_dim != heads * head_dim) {
        throw InvalidArgument("token_dim must equal heads * head_dim (" + std::to_string(heads) +
                              " * " + std::to_string(head_dim) + ")");
    }
    if (layers < 1) throw InvalidArgument("transformer needs at least one layer");
    if (mlp_hidden < 1) throw InvalidArgument("mlp_hidden must be >= 1");
}

void TransformerStage::init_params(ParamSet& ps, RngStream& rng, const std::string& prefix) {
    validate();
    patch_w_ = &ps.add(prefix + "patch.w", xavier({patch_dim, token_dim}, patch_dim, token_dim, rng));
    patch_b_ = &ps.add(prefix + "patch.b", Tensor({token_dim}));
    pos_ = &ps.add(prefix + "pos", xavier({tokens, token_dim}, tokens, token_dim, rng));
    blocks_.clear();
    for (int l = 0; l < layers; ++l) {
        const std::string lp = prefix + "layer" + std::to_string(l) + ".";
        Block b{};
        b.ln1_g = &ps.add(lp + "ln1.g", ones({token_dim}));
        b.ln1_b = &ps.add(lp + "ln1.b", Tensor({token_dim}));
        b.wq = &ps.add(lp + "attn.wq", xavier({token_dim, token_dim}, token_dim, token_dim, rng));
        b.bq = &ps.add(lp + "attn.bq", Tensor({token_dim}));
        b.wk = &ps.add(lp + "attn.wk", xavier({token_dim, token_dim}, token_dim, token_dim, rng));
        b.bk = &ps.add(lp + "attn.bk", Tensor({token_dim}));
        b.wv = &ps.add(lp + "attn.wv", xavier({token_dim, token_dim}, token_dim, token_dim, rng));
        b.bv = &ps.add(lp + "attn.bv", Tensor({token_dim}));
        b.wo = &ps.add(lp + "attn.wo", xavier({token_dim, token_dim}, token_dim, token_dim, rng));
        b.bo = &ps.add(lp + "attn.bo", Tensor({token_dim}));
        b.ln2_g = &ps.add(lp + "ln2.g", ones({token_dim}));
        b.ln2_b = &ps.add(lp + "ln2.b", Tensor({token_dim}));
        b.w1 = &ps.add(lp + "mlp.w1", xavier({token_dim, mlp_hidden}, token_dim, mlp_hidden, rng));
        b.b1 = &ps.add(lp + "mlp.b1", Tensor({mlp_hidden}));
        b.w2 = &ps.add(lp + "mlp.w2", xavier({mlp_hidden, token_dim}, mlp_hidden, token_dim, rng));
        b.b2 = &ps.add(lp + "mlp.b2", Tensor({token_dim}));
        blocks_.push_back(b);
    }
    lnf_g_ = &ps.add(prefix + "lnf.g", ones({token_dim}));
    lnf_b_ = &ps.add(prefix + "lnf.b", Tensor({token_dim}));
}

Tape::Var TransformerStage::run(Tape& tape, Tape::Var patches, int batch,
                                const Stager& stage) const {
    if (!patch_w_) throw InvalidState("transformer stage used before init_params");
    Tape::Var x = tape.add_bias(tape.matmul(patches, stage(*patch_w_)), stage(*patch_b_));
    x = tape.add(x, tape.repeat_rows(stage(*pos_), batch));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (const Block& b : blocks_) {
        const Tape::Var xn = tape.layer_norm(x, stage(*b.ln1_g), stage(*b.ln1_b));
        const Tape::Var q = tape.add_bias(tape.matmul(xn, stage(*b.wq)), stage(*b.bq));
        const Tape::Var k = tape.add_bias(tape.matmul(xn, stage(*b.wk)), stage(*b.bk));
        const Tape::Var v = tape.add_bias(tape.matmul(xn, stage(*b.wv)), stage(*b.bv));
        std::vector<Tape::Var> head_out;
        head_out.reserve(static_cast<size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            const int off = h * head_dim;
            const Tape::Var qh = tape.slice_cols(q, off, head_dim);
            const Tape::Var kh = tape.slice_cols(k, off, head_dim);
            const Tape::Var vh = tape.slice_cols(v, off, head_dim);
            const Tape::Var scores = tape.scale(tape.block_matmul_nt(qh, kh, tokens), inv_sqrt_d);
            const Tape::Var attn = tape.softmax_rows(scores);
            head_out.push_back(tape.block_matmul_nn(attn, vh, tokens));
        }
        const Tape::Var merged =
            tape.add_bias(tape.matmul(tape.concat_cols(head_out), stage(*b.wo)), stage(*b.bo));
        x = tape.add(x, merged);
        const Tape::Var xn2 = tape.layer_norm(x, stage(*b.ln2_g), stage(*b.ln2_b));
        const Tape::Var hidden = tape.relu(tape.add_bias(tape.matmul(xn2, stage(*b.w1)), stage(*b.b1)));
        const Tape::Var expanded = tape.add_bias(tape.matmul(hidden, stage(*b.w2)), stage(*b.b2));
        x = tape.add(x, expanded);
    }
    const Tape::Var final_norm = tape.layer_norm(x, stage(*lnf_g_), stage(*lnf_b_));
    const Tape::Var pooled = tape.mean_rows_grouped(final_norm, tokens);
    return tape.l2_normalize_rows(pooled);
}

// ---------------------------------------------------------------------------
// ViT encoder

void VitConfig::validate() const {
    if (input_h < 1 || input_w < 1) throw InvalidArgument("vit input dimensions must be positive");
    if (patch_kernel < 1 || patch_stride < 1 || patch_kernel > input_h || patch_kernel > input_w) {
        throw InvalidArgument("vit patch kernel/stride invalid for input size");
    }
    if ((input_h - patch_kernel) % patch_stride != 0 || (input_w - patch_kernel) % patch_stride != 0) {
        throw InvalidArgument("vit patch grid does not tile the input");
    }
    if (token_dim != heads * head_dim) throw InvalidArgument("token_dim must equal heads * head_dim");
    if (latent_dim != token_dim) throw InvalidArgument("latent_dim must equal token_dim");
    if (arcface_margin < 0.0 || arcface_margin >= M_PI) throw InvalidArgument("arcface margin must lie in [0, pi)");
    if (arcface_scale <= 0.0) throw InvalidArgument("arcface scale must be positive");
    if (num_classes < 1) throw InvalidArgument("num_classes must be >= 1");
    if (layers < 1) throw InvalidArgument("layers must be >= 1");
}

json VitConfig::to_json() const {
    return json{{"input_h", input_h},
                {"input_w", input_w},
                {"patch_kernel", patch_kernel},
                {"patch_stride", patch_stride},
                {"token_dim", token_dim},
                {"layers", layers},
                {"heads", heads},
                {"head_dim", head_dim},
                {"mlp_hidden", mlp_hidden},
                {"latent_dim", latent_dim},
                {"arcface_margin", arcface_margin},
                {"arcface_scale", arcface_scale},
                {"num_classes", num_classes}};
}

VitConfig VitConfig::from_json(const json& j) {
    VitConfig cfg;
    static const std::set<std::string> known = {
        "input_h", "input_w", "patch_kernel", "patch_stride", "token_dim",
        "layers",  "heads",   "head_dim",     "mlp_hidden",   "latent_dim",
        "arcface_margin", "arcface_scale", "num_classes"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw InvalidArgument("unknown vit config key '" + key + "'");
    }
    cfg.input_h = j.value("input_h", cfg.input_h);
    cfg.input_w = j.value("input_w", cfg.input_w);
    cfg.patch_kernel = j.value("patch_kernel", cfg.patch_kernel);
    cfg.patch_stride = j.value("patch_stride", cfg.patch_stride);
    cfg.token_dim = j.value("token_dim", cfg.token_dim);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.head_dim = j.value("head_dim", cfg.head_dim);
    cfg.mlp_hidden = j.value("mlp_hidden", cfg.mlp_hidden);
    cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
    cfg.arcface_margin = j.value("arcface_margin", cfg.arcface_margin);
    cfg.arcface_scale = j.value("arcface_scale", cfg.arcface_scale);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.validate();
    return cfg;
}

VitEncoder::VitEncoder(const VitConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    stage_.tokens = cfg_.tokens();
    stage_.patch_dim = cfg_.patch_kernel * cfg_.patch_kernel;
    stage_.token_dim = cfg_.token_dim;
    stage_.layers = cfg_.layers;
    stage_.heads = cfg_.heads;
    stage_.head_dim = cfg_.head_dim;
    stage_.mlp_hidden = cfg_.mlp_hidden;

    RngStream rng(seed);
    stage_.init_params(params_, rng, "");
    arcface_w_ = &params_.add(
        "arcface.w", xavier({cfg_.num_classes, cfg_.latent_dim}, cfg_.latent_dim, cfg_.num_classes, rng));
}

json VitEncoder::config_json() const { return cfg_.to_json(); }

Tensor VitEncoder::to_patches(const Tensor& X) const {
    const int batch = X.rows();
    if (X.cols() != input_width()) {
        throw InvalidArgument("vit input must have " + std::to_string(input_width()) +
                              " columns, got " + std::to_string(X.cols()));
    }
    const int side_h = cfg_.tokens_per_side(cfg_.input_h);
    const int side_w = cfg_.tokens_per_side(cfg_.input_w);
    const int k = cfg_.patch_kernel;
    Tensor patches({batch * side_h * side_w, k * k});
    size_t row = 0;
    for (int b = 0; b < batch; ++b) {
        const double* img = &X.data[static_cast<size_t>(b) * input_width()];
        for (int py = 0; py < side_h; ++py) {
            for (int px = 0; px < side_w; ++px) {
                double* dst = &patches.data[row * static_cast<size_t>(k) * k];
                for (int ky = 0; ky < k; ++ky) {
                    const int y = py * cfg_.patch_stride + ky;
                    const int x0 = px * cfg_.patch_stride;
                    std::copy_n(img + static_cast<size_t>(y) * cfg_.input_w + x0, k,
                                dst + static_cast<size_t>(ky) * k);
                }
                ++row;
            }
        }
    }
    return patches;
}

Tape::Var VitEncoder::forward(Tape& tape, const Tensor& X, bool bind) const {
    const int batch = X.rows();
    const Tape::Var patches = tape.input(to_patches(X));
    TransformerStage::Stager stage = [&tape, bind](Parameter& p) {
        return bind ? tape.param(p) : tape.input(p.value);
    };
    return stage_.run(tape, patches, batch, stage);
}

Tape::Var VitEncoder::build_loss(Tape& tape, const Tensor& X, const std::vector<int>& labels) {
    const Tape::Var emb = forward(tape, X, true);
    return arcface_loss(tape, emb, labels, tape.param(*arcface_w_), cfg_.arcface_margin,
                        cfg_.arcface_scale);
}

Tensor VitEncoder::embed(const Tensor& X) const {
    Tape tape;
    return tape.val(forward(tape, X, false));
}

Tensor VitEncoder::predict_proba(const Tensor& X) const {
    Tape tape;
    const Tape::Var emb = forward(tape, X, false);
    const Tape::Var normed_w = tape.l2_normalize_rows(tape.input(arcface_w_->value));
    const Tape::Var logits = tape.scale(tape.matmul_nt(emb, normed_w), cfg_.arcface_scale);
    return tape.val(tape.softmax_rows(logits));
}

// ---------------------------------------------------------------------------
// CNN baseline

void CnnConfig::validate() const {
    if (channels.empty()) throw InvalidArgument("cnn needs at least one conv block");
    int h = input_h, w = input_w;
    for (size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] < 1) throw InvalidArgument("cnn channel counts must be positive");
        if (h % 2 != 0 || w % 2 != 0) {
            throw InvalidArgument("cnn input not divisible by 2 at block " + std::to_string(i));
        }
        h /= 2;
        w /= 2;
    }
    if (h < 1 || w < 1) throw InvalidArgument("cnn pools the input away");
    if (latent_dim < 1 || num_classes < 1) throw InvalidArgument("cnn latent/classes must be >= 1");
}

json CnnConfig::to_json() const {
    return json{{"input_h", input_h},
                {"input_w", input_w},
                {"channels", channels},
                {"latent_dim", latent_dim},
                {"num_classes", num_classes}};
}

CnnConfig CnnConfig::from_json(const json& j) {
    CnnConfig cfg;
    static const std::set<std::string> known = {"input_h", "input_w", "channels", "latent_dim",
                                                "num_classes"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw InvalidArgument("unknown cnn config key '" + key + "'");
    }
    cfg.input_h = j.value("input_h", cfg.input_h);
    cfg.input_w = j.value("input_w", cfg.input_w);
    if (j.contains("channels")) cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.validate();
    return cfg;
}

CnnEncoder::CnnEncoder(const CnnConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    RngStream rng(seed);
    int cin = 1;
    int h = cfg_.input_h, w = cfg_.input_w;
    for (size_t i = 0; i < cfg_.channels.size(); ++i) {
        const int cout = cfg_.channels[i];
        params_.add("conv" + std::to_string(i) + ".w", xavier({9 * cin, cout}, 9 * cin, cout, rng));
        params_.add("conv" + std::to_string(i) + ".b", Tensor({cout}));
        cin = cout;
        h /= 2;
        w /= 2;
    }
    const int flat = h * w * cin;
    params_.add("fc.w", xavier({flat, cfg_.latent_dim}, flat, cfg_.latent_dim, rng));
    params_.add("fc.b", Tensor({cfg_.latent_dim}));
    params_.add("head.w", xavier({cfg_.latent_dim, cfg_.num_classes}, cfg_.latent_dim,
                                 cfg_.num_classes, rng));
    params_.add("head.b", Tensor({cfg_.num_classes}));
}

json CnnEncoder::config_json() const { return cfg_.to_json(); }

Tape::Var CnnEncoder::forward(Tape& tape, const Tensor& X, bool bind, bool with_head) const {
    const int batch = X.rows();
    if (X.cols() != input_width()) {
        throw InvalidArgument("cnn input must have " + std::to_string(input_width()) +
                              " columns, got " + std::to_string(X.cols()));
    }
    auto stage = [&tape, bind](const Parameter& p) {
        return bind ? tape.param(const_cast<Parameter&>(p)) : tape.input(p.value);
    };
    // [B, H*W] rows are already pixel-major; view them as [B*H*W, 1]
    Tensor pixels({batch * cfg_.input_h * cfg_.input_w, 1}, X.data);
    Tape::Var x = tape.input(std::move(pixels));
    int h = cfg_.input_h, w = cfg_.input_w, cin = 1;
    for (size_t i = 0; i < cfg_.channels.size(); ++i) {
        const Parameter* cw = params_.find("conv" + std::to_string(i) + ".w");
        const Parameter* cb = params_.find("conv" + std::to_string(i) + ".b");
        const Tape::Var cols = tape.im2col3x3(x, batch, h, w, cin);
        x = tape.relu(tape.add_bias(tape.matmul(cols, stage(*cw)), stage(*cb)));
        x = tape.maxpool2x2(x, batch, h, w, cfg_.channels[i]);
        h /= 2;
        w /= 2;
        cin = cfg_.channels[i];
    }
    const Tape::Var flat = tape.reshape(x, {batch, h * w * cin});
    const Tape::Var emb = tape.l2_normalize_rows(
        tape.add_bias(tape.matmul(flat, stage(*params_.find("fc.w"))), stage(*params_.find("fc.b"))));
    if (!with_head) return emb;
    return tape.add_bias(tape.matmul(emb, stage(*params_.find("head.w"))),
                         stage(*params_.find("head.b")));
}

Tape::Var CnnEncoder::build_loss(Tape& tape, const Tensor& X, const std::vector<int>& labels) {
    const Tape::Var logits = forward(tape, X, true, true);
    return tape.softmax_cross_entropy(logits, labels);
}

Tensor CnnEncoder::embed(const Tensor& X) const {
    Tape tape;
    return tape.val(forward(tape, X, false, false));
}

Tensor CnnEncoder::predict_proba(const Tensor& X) const {
    Tape tape;
    return tape.val(tape.softmax_rows(forward(tape, X, false, true)));
}

// ---------------------------------------------------------------------------
// training loop

TrainResult train(Encoder& model, const Tensor& X, const std::vector<int>& labels,
                  const TrainHyper& hyper) {
    const int n = X.rows();
    if (n == 0) throw InvalidArgument("train: empty train split");
    if (labels.size() != static_cast<size_t>(n)) {
        throw InvalidArgument("train: label count does not match inputs");
    }
    if (hyper.batch < 1 || hyper.epochs < 1) throw InvalidArgument("train: batch and epochs must be >= 1");

    nn::AdamState adam(model.params(), hyper.lr);
    RngStream rng(hyper.seed);
    std::vector<uint32_t> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = static_cast<uint32_t>(i);

    const int width = X.cols();
    TrainResult result;
    result.epoch_loss.reserve(static_cast<size_t>(hyper.epochs));
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        int batch_index = 0;
        for (int start = 0; start < n; start += hyper.batch, ++batch_index) {
            const int bsz = std::min(hyper.batch, n - start);
            Tensor xb({bsz, width});
            std::vector<int> yb(static_cast<size_t>(bsz));
            for (int r = 0; r < bsz; ++r) {
                const uint32_t src = order[static_cast<size_t>(start + r)];
                std::copy_n(&X.data[static_cast<size_t>(src) * width], width,
                            &xb.data[static_cast<size_t>(r) * width]);
                yb[static_cast<size_t>(r)] = labels[src];
            }
            try {
                Tape tape;
                const Tape::Var loss = model.build_loss(tape, xb, yb);
                tape.backward(loss);
                loss_sum += tape.val(loss).data[0] * bsz;
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(batch_index) + ": " + e.what());
            }
            nn::adam_step(model.params(), adam);
        }
        result.epoch_loss.push_back(loss_sum / n);
    }
    return result;
}

// ---------------------------------------------------------------------------
// batched helpers

Tensor grid_matrix(const std::vector<sig::ModelInput>& grids) {
    if (grids.empty()) throw InvalidArgument("grid_matrix: no inputs");
    const int width = static_cast<int>(grids[0].grid.size());
    Tensor X({static_cast<int>(grids.size()), width});
    for (size_t i = 0; i < grids.size(); ++i) {
        if (static_cast<int>(grids[i].grid.size()) != width) {
            throw InvalidArgument("grid_matrix: inconsistent grid sizes");
        }
        std::copy_n(grids[i].grid.data(), width, &X.data[i * static_cast<size_t>(width)]);
    }
    return X;
}

Tensor embed_grids(const Encoder& model, const Tensor& X) {
    const int n = X.rows();
    const int width = X.cols();
    Tensor out({n, model.latent_dim()});
    const int threads = std::min(env_threads(), std::max(1, n));
    constexpr int kChunk = 256;

    auto work = [&](int shard) {
        for (int start = shard * kChunk; start < n; start += threads * kChunk) {
            const int bsz = std::min(kChunk, n - start);
            Tensor xb({bsz, width});
            std::copy_n(&X.data[static_cast<size_t>(start) * width],
                        static_cast<size_t>(bsz) * width, xb.data.begin());
            const Tensor emb = model.embed(xb);
            std::copy_n(emb.data.begin(), emb.data.size(),
                        &out.data[static_cast<size_t>(start) * model.latent_dim()]);
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
        for (auto& th : pool) th.join();
    }
    return out;
}

double accuracy(Encoder& model, const Tensor& X, const std::vector<int>& labels) {
    const int n = X.rows();
    if (labels.size() != static_cast<size_t>(n)) throw InvalidArgument("accuracy: label mismatch");
    int hits = 0;
    constexpr int kChunk = 256;
    for (int start = 0; start < n; start += kChunk) {
        const int bsz = std::min(kChunk, n - start);
        Tensor xb({bsz, X.cols()});
        std::copy_n(&X.data[static_cast<size_t>(start) * X.cols()],
                    static_cast<size_t>(bsz) * X.cols(), xb.data.begin());
        const Tensor probs = model.predict_proba(xb);
        for (int r = 0; r < bsz; ++r) {
            const double* row = &probs.data[static_cast<size_t>(r) * probs.cols()];
            const int pred = static_cast<int>(std::max_element(row, row + probs.cols()) - row);
            if (pred == labels[static_cast<size_t>(start + r)]) ++hits;
        }
    }
    return static_cast<double>(hits) / n;
}

void save_model(const Encoder& model, const TrainHyper& hyper, const std::string& ckpt_path) {
    nn::save_checkpoint(model.params(), ckpt_path);
    const json sidecar{{"kind", model.kind()},
                       {"config", model.config_json()},
                       {"label_map", model.label_map.devices()},
                       {"train", json{{"lr", hyper.lr},
                                      {"batch", hyper.batch},
                                      {"epochs", hyper.epochs},
                                      {"seed", hyper.seed}}}};
    std::ofstream out(ckpt_path + ".json", std::ios::trunc);
    if (!out) throw FormatError("cannot write " + ckpt_path + ".json", 0);
    out << sidecar.dump(2) << "\n";
}

}  // namespace rff::enc
