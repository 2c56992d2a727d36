#include "rff/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "rff/checkpoint.hpp"
#include "rff/errors.hpp"
#include "rff/reid_eval.hpp"
#include "rff/rng.hpp"

namespace rff::fusion {

using nn::Tape;
using nn::Tensor;
using nlohmann::json;

std::string to_string(LocationPolicy policy) {
    return policy == LocationPolicy::SameLocation ? "Sl" : "Dl";
}

LocationPolicy policy_from_string(const std::string& name) {
    if (name == "Sl" || name == "SameLocation") return LocationPolicy::SameLocation;
    if (name == "Dl" || name == "DifferentLocation") return LocationPolicy::DifferentLocation;
    throw InvalidArgument("unknown location policy '" + name + "', expected Sl or Dl");
}

// ---------------------------------------------------------------------------
// bundles

BundleSet bundle_builder(const data::Records& records, const std::vector<uint32_t>& pool, int k,
                         LocationPolicy policy, uint64_t seed) {
    if (k < 1) throw InvalidArgument("bundle_builder: k must be >= 1");
    if (pool.empty()) throw InvalidArgument("bundle_builder: empty record pool");

    RngStream rng(seed);
    BundleSet out;

    // device -> location -> pooled indices, in deterministic key order
    std::map<uint16_t, std::map<uint16_t, std::vector<uint32_t>>> by_device;
    for (uint32_t idx : pool) {
        const auto& r = records.at(idx);
        by_device[r.device_id][r.location_id].push_back(idx);
    }

    for (auto& [device, cells] : by_device) {
        if (policy == LocationPolicy::SameLocation) {
            for (auto& [location, members] : cells) {
                (void)location;
                if (static_cast<int>(members.size()) < k) {
                    ++out.skipped;
                    continue;
                }
                rng.shuffle(members);
                const size_t n_bundles = members.size() / static_cast<size_t>(k);
                for (size_t b = 0; b < n_bundles; ++b) {
                    SampleBundle bundle;
                    bundle.device_id = device;
                    bundle.policy = policy;
                    bundle.record_idx.assign(members.begin() + static_cast<long>(b) * k,
                                             members.begin() + static_cast<long>(b + 1) * k);
                    out.bundles.push_back(std::move(bundle));
                }
            }
        } else {
            size_t total = 0;
            for (auto& [_, members] : cells) total += members.size();
            if (static_cast<int>(total) < k || (k >= 2 && cells.size() < 2)) {
                ++out.skipped;
                continue;
            }
            // round-robin across shuffled per-location lists so consecutive
            // draws come from distinct locations while any remain
            std::vector<std::vector<uint32_t>> lists;
            for (auto& [_, members] : cells) {
                rng.shuffle(members);
                lists.push_back(members);
            }
            rng.shuffle(lists);
            std::vector<uint32_t> interleaved;
            interleaved.reserve(total);
            size_t cursor = 0;
            while (interleaved.size() < total) {
                bool progressed = false;
                for (auto& list : lists) {
                    if (cursor < list.size()) {
                        interleaved.push_back(list[cursor]);
                        progressed = true;
                    }
                }
                if (!progressed) break;
                ++cursor;
            }
            const size_t n_bundles = interleaved.size() / static_cast<size_t>(k);
            for (size_t b = 0; b < n_bundles; ++b) {
                SampleBundle bundle;
                bundle.device_id = device;
                bundle.policy = policy;
                bundle.record_idx.assign(interleaved.begin() + static_cast<long>(b) * k,
                                         interleaved.begin() + static_cast<long>(b + 1) * k);
                out.bundles.push_back(std::move(bundle));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// probability voting

int argmax_tie_low(const std::vector<double>& probs) {
    if (probs.empty()) throw InvalidArgument("argmax over empty vector");
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

std::vector<double> vote_predict(const enc::Encoder& model, const data::Records& records,
                                 const SampleBundle& bundle, const sig::StftConfig& stft) {
    if (bundle.record_idx.empty()) throw InvalidArgument("vote_predict: empty bundle");
    const eval::GridBatch grids = eval::preprocess_batch(records, bundle.record_idx, stft);
    const Tensor probs = model.predict_proba(grids.X);
    std::vector<double> mean(static_cast<size_t>(probs.cols()), 0.0);
    for (int r = 0; r < probs.rows(); ++r) {
        for (int c = 0; c < probs.cols(); ++c) {
            mean[static_cast<size_t>(c)] += probs.at(r, c) / probs.rows();
        }
    }
    return mean;
}

// ---------------------------------------------------------------------------
// concatenated-input ViT

void ConcatVitConfig::validate() const {
    if (k < 1) throw InvalidArgument("concat k must be >= 1");
    if (signal_len < 1) throw InvalidArgument("signal_len must be >= 1");
    if (patch_len < 1) throw InvalidArgument("patch_len must be >= 1");
    if (token_dim != heads * head_dim) throw InvalidArgument("token_dim must equal heads * head_dim");
    if (latent_dim != token_dim) throw InvalidArgument("latent_dim must equal token_dim");
    if (arcface_margin < 0.0 || arcface_margin >= M_PI) throw InvalidArgument("arcface margin must lie in [0, pi)");
    if (arcface_scale <= 0.0) throw InvalidArgument("arcface scale must be positive");
    if (num_classes < 1) throw InvalidArgument("num_classes must be >= 1");
    if (layers < 1) throw InvalidArgument("layers must be >= 1");
}

json ConcatVitConfig::to_json() const {
    return json{{"k", k},
                {"signal_len", signal_len},
                {"patch_len", patch_len},
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

ConcatVitConfig ConcatVitConfig::from_json(const json& j) {
    ConcatVitConfig cfg;
    static const std::set<std::string> known = {
        "k",      "signal_len", "patch_len",      "token_dim",     "layers",     "heads",
        "head_dim", "mlp_hidden", "latent_dim", "arcface_margin", "arcface_scale", "num_classes"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw InvalidArgument("unknown concat_vit config key '" + key + "'");
    }
    cfg.k = j.value("k", cfg.k);
    cfg.signal_len = j.value("signal_len", cfg.signal_len);
    cfg.patch_len = j.value("patch_len", cfg.patch_len);
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

ConcatVitEncoder::ConcatVitEncoder(const ConcatVitConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    stage_.tokens = cfg_.tokens();
    stage_.patch_dim = 2 * cfg_.patch_len;  // re and im channels per position
    stage_.token_dim = cfg_.token_dim;
    stage_.layers = cfg_.layers;
    stage_.heads = cfg_.heads;
    stage_.head_dim = cfg_.head_dim;
    stage_.mlp_hidden = cfg_.mlp_hidden;

    RngStream rng(seed);
    stage_.init_params(params_, rng, "");
    arcface_w_ = &params_.add(
        "arcface.w", [&] {
            nn::Tensor t({cfg_.num_classes, cfg_.latent_dim});
            const double bound = std::sqrt(6.0 / (cfg_.latent_dim + cfg_.num_classes));
            for (double& v : t.data) v = rng.uniform(-bound, bound);
            return t;
        }());
}

json ConcatVitEncoder::config_json() const { return cfg_.to_json(); }

Tensor ConcatVitEncoder::to_patches(const Tensor& X) const {
    const int batch = X.rows();
    if (X.cols() != input_width()) {
        throw InvalidArgument("concat_vit input must have " + std::to_string(input_width()) +
                              " columns, got " + std::to_string(X.cols()));
    }
    const int padded = cfg_.padded_len();
    const int tokens = cfg_.tokens();
    const int plen = cfg_.patch_len;
    Tensor patches({batch * tokens, 2 * plen});
    for (int b = 0; b < batch; ++b) {
        const double* re = &X.data[static_cast<size_t>(b) * input_width()];
        const double* im = re + padded;
        for (int p = 0; p < tokens; ++p) {
            double* dst = &patches.data[(static_cast<size_t>(b) * tokens + p) * 2 * plen];
            std::copy_n(re + static_cast<size_t>(p) * plen, plen, dst);
            std::copy_n(im + static_cast<size_t>(p) * plen, plen, dst + plen);
        }
    }
    return patches;
}

Tape::Var ConcatVitEncoder::forward(Tape& tape, const Tensor& X, bool bind) const {
    const int batch = X.rows();
    const Tape::Var patches = tape.input(to_patches(X));
    enc::TransformerStage::Stager stage = [&tape, bind](nn::Parameter& p) {
        return bind ? tape.param(p) : tape.input(p.value);
    };
    return stage_.run(tape, patches, batch, stage);
}

Tape::Var ConcatVitEncoder::build_loss(Tape& tape, const Tensor& X, const std::vector<int>& labels) {
    const Tape::Var emb = forward(tape, X, true);
    return enc::arcface_loss(tape, emb, labels, tape.param(*arcface_w_), cfg_.arcface_margin,
                             cfg_.arcface_scale);
}

Tensor ConcatVitEncoder::embed(const Tensor& X) const {
    Tape tape;
    return tape.val(forward(tape, X, false));
}

Tensor ConcatVitEncoder::predict_proba(const Tensor& X) const {
    Tape tape;
    const Tape::Var emb = forward(tape, X, false);
    const Tape::Var normed_w = tape.l2_normalize_rows(tape.input(arcface_w_->value));
    const Tape::Var logits = tape.scale(tape.matmul_nt(emb, normed_w), cfg_.arcface_scale);
    return tape.val(tape.softmax_rows(logits));
}

Tensor bundle_matrix(const data::Records& records, const std::vector<SampleBundle>& bundles,
                     const ConcatVitConfig& cfg) {
    if (bundles.empty()) throw InvalidArgument("bundle_matrix: no bundles");
    const int padded = cfg.padded_len();
    Tensor X({static_cast<int>(bundles.size()), 2 * padded});
    for (size_t b = 0; b < bundles.size(); ++b) {
        const auto& bundle = bundles[b];
        if (static_cast<int>(bundle.record_idx.size()) != cfg.k) {
            throw InvalidArgument("bundle has " + std::to_string(bundle.record_idx.size()) +
                                  " samples, model expects k = " + std::to_string(cfg.k));
        }
        double* re = &X.data[b * static_cast<size_t>(2 * padded)];
        double* im = re + padded;
        int offset = 0;
        for (uint32_t idx : bundle.record_idx) {
            const auto& rec = records.at(idx);
            if (static_cast<int>(rec.samples.size()) != cfg.signal_len) {
                throw InvalidArgument("record length does not match concat signal_len");
            }
            const sig::CirMeasurement prepped = sig::center_peak(sig::normalize_amplitude(rec));
            for (int n = 0; n < cfg.signal_len; ++n) {
                re[offset + n] = prepped.samples[static_cast<size_t>(n)].real();
                im[offset + n] = prepped.samples[static_cast<size_t>(n)].imag();
            }
            offset += cfg.signal_len;
        }
        // positions beyond offset stay zero (padding)
    }
    return X;
}

// ---------------------------------------------------------------------------
// experiment drivers

namespace {

std::vector<uint16_t> bundle_devices(const std::vector<SampleBundle>& bundles) {
    std::vector<uint16_t> out;
    out.reserve(bundles.size());
    for (const auto& b : bundles) out.push_back(b.device_id);
    return out;
}

}  // namespace

FusionRow run_voting(const enc::Encoder& model, const data::Dataset& ds,
                     const data::ScenarioSplit& split, int k, LocationPolicy policy,
                     const sig::StftConfig& stft, uint64_t seed) {
    const BundleSet bundles = bundle_builder(ds.records, split.test_idx, k, policy, seed);
    if (bundles.bundles.empty()) throw InvalidArgument("run_voting: no usable bundles");

    // score all bundle samples in one pass, then average per bundle
    std::vector<uint32_t> all_idx;
    for (const auto& b : bundles.bundles) {
        all_idx.insert(all_idx.end(), b.record_idx.begin(), b.record_idx.end());
    }
    const eval::GridBatch grids = eval::preprocess_batch(ds.records, all_idx, stft);
    const int total = grids.X.rows();
    const int classes = model.num_classes();
    Tensor probs({total, classes});
    constexpr int kChunk = 256;
    for (int start = 0; start < total; start += kChunk) {
        const int bsz = std::min(kChunk, total - start);
        Tensor xb({bsz, grids.X.cols()});
        std::copy_n(&grids.X.data[static_cast<size_t>(start) * grids.X.cols()],
                    static_cast<size_t>(bsz) * grids.X.cols(), xb.data.begin());
        const Tensor p = model.predict_proba(xb);
        std::copy_n(p.data.begin(), p.data.size(),
                    &probs.data[static_cast<size_t>(start) * classes]);
    }

    std::vector<uint16_t> truth = bundle_devices(bundles.bundles);
    std::vector<uint16_t> predicted(truth.size());
    size_t row = 0;
    for (size_t b = 0; b < bundles.bundles.size(); ++b) {
        std::vector<double> mean(static_cast<size_t>(classes), 0.0);
        for (uint32_t s = 0; s < bundles.bundles[b].record_idx.size(); ++s, ++row) {
            for (int c = 0; c < classes; ++c) {
                mean[static_cast<size_t>(c)] += probs.at(static_cast<int>(row), c);
            }
        }
        for (double& v : mean) v /= static_cast<double>(bundles.bundles[b].record_idx.size());
        predicted[b] = model.label_map.to_device(argmax_tie_low(mean));
    }

    FusionRow out;
    out.k = k;
    out.policy = policy;
    out.method = "V";
    out.cf1 = eval::macro_f1(truth, predicted);
    return out;
}

ConcatOutcome run_concat(const ConcatVitConfig& base_cfg, const data::Dataset& ds,
                         const data::ScenarioSplit& split, int k, LocationPolicy policy,
                         const enc::TrainHyper& hyper, uint64_t bundle_seed) {
    const BundleSet train_bundles = bundle_builder(ds.records, split.train_idx, k, policy, bundle_seed);
    const BundleSet test_bundles = bundle_builder(ds.records, split.test_idx, k, policy, bundle_seed + 1);
    if (train_bundles.bundles.empty() || test_bundles.bundles.empty()) {
        throw InvalidArgument("run_concat: no usable bundles on one side of the split");
    }

    ConcatVitConfig cfg = base_cfg;
    cfg.k = k;
    cfg.signal_len = ds.meta.signal_len;

    const std::vector<uint16_t> train_dev = bundle_devices(train_bundles.bundles);
    enc::LabelMap label_map = enc::LabelMap::from_device_ids(train_dev);
    cfg.num_classes = label_map.size();

    ConcatOutcome out;
    out.model = std::make_unique<ConcatVitEncoder>(cfg, hyper.seed);
    out.model->label_map = label_map;

    const Tensor X = bundle_matrix(ds.records, train_bundles.bundles, cfg);
    std::vector<int> y(train_dev.size());
    for (size_t i = 0; i < train_dev.size(); ++i) y[i] = label_map.to_class(train_dev[i]);
    out.history = enc::train(*out.model, X, y, hyper);

    const Tensor Xt = bundle_matrix(ds.records, test_bundles.bundles, cfg);
    std::vector<uint16_t> truth = bundle_devices(test_bundles.bundles);
    std::vector<uint16_t> predicted(truth.size());
    constexpr int kChunk = 128;
    for (int start = 0; start < Xt.rows(); start += kChunk) {
        const int bsz = std::min(kChunk, Xt.rows() - start);
        Tensor xb({bsz, Xt.cols()});
        std::copy_n(&Xt.data[static_cast<size_t>(start) * Xt.cols()],
                    static_cast<size_t>(bsz) * Xt.cols(), xb.data.begin());
        const Tensor p = out.model->predict_proba(xb);
        for (int r = 0; r < bsz; ++r) {
            std::vector<double> row(p.data.begin() + static_cast<long>(r) * p.cols(),
                                    p.data.begin() + static_cast<long>(r + 1) * p.cols());
            predicted[static_cast<size_t>(start + r)] = label_map.to_device(argmax_tie_low(row));
        }
    }

    out.row.k = k;
    out.row.policy = policy;
    out.row.method = "CI";
    out.row.cf1 = eval::macro_f1(truth, predicted);
    return out;
}

// ---------------------------------------------------------------------------
// model loading

std::unique_ptr<enc::Encoder> load_any_model(const std::string& ckpt_path) {
    std::ifstream in(ckpt_path + ".json");
    if (!in) throw FormatError("cannot open sidecar " + ckpt_path + ".json", 0);
    json sidecar;
    try {
        in >> sidecar;
    } catch (const json::exception& e) {
        throw FormatError(std::string("sidecar does not parse: ") + e.what(), 0);
    }

    std::unique_ptr<enc::Encoder> model;
    const std::string kind = sidecar.at("kind").get<std::string>();
    if (kind == "vit") {
        model = std::make_unique<enc::VitEncoder>(enc::VitConfig::from_json(sidecar.at("config")), 0);
    } else if (kind == "cnn") {
        model = std::make_unique<enc::CnnEncoder>(enc::CnnConfig::from_json(sidecar.at("config")), 0);
    } else if (kind == "concat_vit") {
        model = std::make_unique<ConcatVitEncoder>(ConcatVitConfig::from_json(sidecar.at("config")), 0);
    } else {
        throw FormatError("unknown model kind '" + kind + "' in sidecar", 0);
    }
    if (sidecar.contains("label_map")) {
        const auto ids = sidecar.at("label_map").get<std::vector<uint16_t>>();
        if (!ids.empty()) model->label_map = enc::LabelMap::from_device_ids(ids);
    }
    nn::load_checkpoint(model->params(), ckpt_path);
    return model;
}

}  // namespace rff::fusion
