#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rff/datastore.hpp"
#include "rff/encoders.hpp"
#include "rff/tensor.hpp"

namespace rff::eval {

// Per-identity reference points: mean embedding per device, re-normalized.
struct Gallery {
    std::vector<uint16_t> ids;  // ascending, unique
    nn::Tensor refs;            // [G, D], unit-norm rows aligned with ids
    std::string provenance;

    int size() const { return static_cast<int>(ids.size()); }
    int dim() const { return refs.cols(); }
};

// embeddings: [N, D] unit-norm rows; labels: device id per row. Throws
// DegenerateReference if a per-id mean collapses below 1e-9 norm.
Gallery build_gallery(const nn::Tensor& embeddings, const std::vector<uint16_t>& labels,
                      std::string provenance = "");

// Full ranking by cosine similarity, descending; ties broken by ascending id.
std::vector<std::pair<uint16_t, double>> identify(const Gallery& gallery,
                                                  const std::vector<double>& query);

// CMC(N) for N = 1..G over a closed gallery: every query's true id must be
// enrolled. Entry N-1 is the fraction of queries whose true id ranks in the
// top N.
std::vector<double> cmc_curve(const Gallery& gallery, const nn::Tensor& queries,
                              const std::vector<uint16_t>& truth);

struct RocCurve {
    std::vector<double> thresholds;  // cosine distances; leading sentinel -1 pins (0,0)
    std::vector<double> fpr;
    std::vector<double> tpr;
};

struct RocResult {
    RocCurve curve;
    double auroc = 0.0;
    size_t positives = 0;
    size_t negatives = 0;
};

// Same-id pairs are positives; a pair is predicted positive when its cosine
// distance falls below the threshold. The exported curve sweeps [0, 2]; the
// AUROC integrates the exact empirical curve (every distinct distance), which
// makes it invariant under monotone distance transforms. When the pair count
// exceeds max_pairs, a seeded balanced sample is drawn.
RocResult roc_and_auroc(const nn::Tensor& embeddings, const std::vector<uint16_t>& labels,
                        int num_thresholds = 200, size_t max_pairs = 200000, uint64_t seed = 0);

// Rank-based AUROC over explicit pair distances (exposed for the metric's
// invariance properties and the curve-free path).
double auroc_from_pairs(const std::vector<double>& distances, const std::vector<uint8_t>& is_positive);

// Macro-averaged F1 over the classes present in truth or predictions.
double macro_f1(const std::vector<uint16_t>& truth, const std::vector<uint16_t>& predicted);

struct ProbeConfig {
    int epochs = 500;
    double lr = 0.1;
    uint64_t seed = 0;
};

struct ProbeResult {
    double cf1 = 0.0;
    std::vector<uint16_t> predicted;  // device ids, aligned with test rows
    std::vector<uint16_t> classes;    // probe classes (sorted distinct train ids)
};

// Multinomial logistic regression on frozen embeddings (full-batch gradient
// descent). Every test label must occur in the probe train set.
ProbeResult linear_probe(const nn::Tensor& train_emb, const std::vector<uint16_t>& train_labels,
                         const nn::Tensor& test_emb, const std::vector<uint16_t>& test_labels,
                         const ProbeConfig& cfg = {});

double linear_probe_cf1(const nn::Tensor& train_emb, const std::vector<uint16_t>& train_labels,
                        const nn::Tensor& test_emb, const std::vector<uint16_t>& test_labels,
                        const ProbeConfig& cfg = {});

// Projection onto the top-2 principal components (power iteration, tol 1e-9),
// mean-centered. Returns [N, 2].
nn::Tensor pca2(const nn::Tensor& embeddings);

struct EvalReport {
    double cf1 = 0.0;
    std::vector<double> cmc;  // CMC(1..G)
    double auroc = 0.0;
    std::vector<uint16_t> class_ids;            // confusion axes
    std::vector<std::vector<int64_t>> confusion;  // [true][predicted]
    std::string scenario;
};

struct EvalArtifacts {
    EvalReport report;
    RocCurve roc;
    nn::Tensor coords2d;  // [Q, 2] query embeddings projected by pca2
    std::vector<uint16_t> query_devices;
    std::vector<uint16_t> query_locations;
};

// Preprocesses the selected records into a [N, 1024] grid matrix.
struct GridBatch {
    nn::Tensor X;
    std::vector<uint16_t> device_ids;
    std::vector<uint16_t> location_ids;
};
GridBatch preprocess_batch(const data::Records& records, const std::vector<uint32_t>& indices,
                           const sig::StftConfig& stft);

// Full scenario protocol. S1/S2/S4: gallery and probe train from the train
// side, queries are the whole test side. S3: held-out devices are enrolled
// from the lowest held-out location; queries are their records elsewhere.
EvalArtifacts run_scenario_eval(const enc::Encoder& model, const data::Dataset& ds,
                                const data::ScenarioSplit& split, const sig::StftConfig& stft,
                                const ProbeConfig& probe_cfg = {});

}  // namespace rff::eval
