#include "rff/reid_eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "rff/errors.hpp"
#include "rff/rng.hpp"

namespace rff::eval {

using nn::Tensor;

// ---------------------------------------------------------------------------
// gallery + matching

Gallery build_gallery(const Tensor& embeddings, const std::vector<uint16_t>& labels,
                      std::string provenance) {
    const int n = embeddings.rows();
    const int d = embeddings.cols();
    if (n == 0) throw InvalidArgument("build_gallery: no embeddings");
    if (labels.size() != static_cast<size_t>(n)) {
        throw InvalidArgument("build_gallery: label count mismatch");
    }

    std::map<uint16_t, std::vector<int>> groups;
    for (int i = 0; i < n; ++i) groups[labels[static_cast<size_t>(i)]].push_back(i);

    Gallery g;
    g.provenance = std::move(provenance);
    g.refs = Tensor({static_cast<int>(groups.size()), d});
    int row = 0;
    for (const auto& [id, members] : groups) {
        double* ref = &g.refs.data[static_cast<size_t>(row) * d];
        for (int m : members) {
            const double* e = &embeddings.data[static_cast<size_t>(m) * d];
            for (int j = 0; j < d; ++j) ref[j] += e[j];
        }
        double sq = 0.0;
        for (int j = 0; j < d; ++j) {
            ref[j] /= static_cast<double>(members.size());
            sq += ref[j] * ref[j];
        }
        const double nrm = std::sqrt(sq);
        if (nrm < 1e-9) {
            throw DegenerateReference("mean embedding of device " + std::to_string(id) +
                                      " has near-zero norm");
        }
        for (int j = 0; j < d; ++j) ref[j] /= nrm;
        g.ids.push_back(id);
        ++row;
    }
    return g;
}

std::vector<std::pair<uint16_t, double>> identify(const Gallery& gallery,
                                                  const std::vector<double>& query) {
    if (gallery.size() == 0) throw InvalidArgument("identify: empty gallery");
    if (static_cast<int>(query.size()) != gallery.dim()) {
        throw InvalidArgument("identify: query dimension mismatch");
    }
    std::vector<std::pair<uint16_t, double>> ranked(static_cast<size_t>(gallery.size()));
    for (int i = 0; i < gallery.size(); ++i) {
        const double* ref = &gallery.refs.data[static_cast<size_t>(i) * gallery.dim()];
        double dot = 0.0;
        for (int j = 0; j < gallery.dim(); ++j) dot += ref[j] * query[static_cast<size_t>(j)];
        ranked[static_cast<size_t>(i)] = {gallery.ids[static_cast<size_t>(i)], dot};
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return ranked;
}

std::vector<double> cmc_curve(const Gallery& gallery, const Tensor& queries,
                              const std::vector<uint16_t>& truth) {
    const int m = queries.rows();
    const int g = gallery.size();
    if (m == 0) throw InvalidArgument("cmc_curve: no queries");
    if (truth.size() != static_cast<size_t>(m)) throw InvalidArgument("cmc_curve: label mismatch");
    for (uint16_t id : truth) {
        if (!std::binary_search(gallery.ids.begin(), gallery.ids.end(), id)) {
            throw InvalidArgument("cmc_curve: query id " + std::to_string(id) +
                                  " not enrolled in the gallery");
        }
    }

    std::vector<int> rank_hits(static_cast<size_t>(g), 0);
    std::vector<double> query_vec(static_cast<size_t>(queries.cols()));
    for (int i = 0; i < m; ++i) {
        std::copy_n(&queries.data[static_cast<size_t>(i) * queries.cols()], queries.cols(),
                    query_vec.begin());
        const auto ranked = identify(gallery, query_vec);
        for (int r = 0; r < g; ++r) {
            if (ranked[static_cast<size_t>(r)].first == truth[static_cast<size_t>(i)]) {
                ++rank_hits[static_cast<size_t>(r)];
                break;
            }
        }
    }
    std::vector<double> cmc(static_cast<size_t>(g));
    int cum = 0;
    for (int r = 0; r < g; ++r) {
        cum += rank_hits[static_cast<size_t>(r)];
        cmc[static_cast<size_t>(r)] = static_cast<double>(cum) / m;
    }
    return cmc;
}

// ---------------------------------------------------------------------------
// ROC / AUROC

double auroc_from_pairs(const std::vector<double>& distances,
                        const std::vector<uint8_t>& is_positive) {
    if (distances.size() != is_positive.size() || distances.empty()) {
        throw InvalidArgument("auroc_from_pairs: bad pair arrays");
    }
    size_t pos = 0;
    for (uint8_t p : is_positive) pos += p ? 1 : 0;
    const size_t neg = distances.size() - pos;
    if (pos < 1 || neg < 1) {
        throw InvalidArgument("auroc needs at least one positive and one negative pair");
    }

    // Mann-Whitney with average ranks over descending distance (ascending
    // "same device" score); equals trapezoidal integration of the exact
    // empirical ROC and is invariant under monotone distance transforms.
    std::vector<size_t> order(distances.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return distances[a] > distances[b]; });
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && distances[order[j + 1]] == distances[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k) {
            if (is_positive[order[k]]) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double u = rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

RocResult roc_and_auroc(const Tensor& embeddings, const std::vector<uint16_t>& labels,
                        int num_thresholds, size_t max_pairs, uint64_t seed) {
    const int n = embeddings.rows();
    const int d = embeddings.cols();
    if (labels.size() != static_cast<size_t>(n)) throw InvalidArgument("roc: label mismatch");
    if (num_thresholds < 2) throw InvalidArgument("roc: need at least 2 thresholds");

    std::map<uint16_t, std::vector<int>> groups;
    for (int i = 0; i < n; ++i) groups[labels[static_cast<size_t>(i)]].push_back(i);
    if (groups.size() < 2) throw InvalidArgument("roc needs embeddings from at least 2 ids");

    auto distance = [&](int a, int b) {
        const double* ea = &embeddings.data[static_cast<size_t>(a) * d];
        const double* eb = &embeddings.data[static_cast<size_t>(b) * d];
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += ea[j] * eb[j];
        return std::min(2.0, std::max(0.0, 1.0 - dot));
    };

    size_t pos_total = 0;
    for (const auto& [_, members] : groups) {
        pos_total += members.size() * (members.size() - 1) / 2;
    }
    const size_t all_pairs = static_cast<size_t>(n) * (n - 1) / 2;
    const size_t neg_total = all_pairs - pos_total;
    if (pos_total < 1 || neg_total < 1) {
        throw InvalidArgument("roc needs at least one same-id and one cross-id pair");
    }

    std::vector<double> dist;
    std::vector<uint8_t> is_pos;
    if (all_pairs <= max_pairs) {
        dist.reserve(all_pairs);
        is_pos.reserve(all_pairs);
        for (int a = 0; a < n; ++a) {
            for (int b = a + 1; b < n; ++b) {
                dist.push_back(distance(a, b));
                is_pos.push_back(labels[static_cast<size_t>(a)] == labels[static_cast<size_t>(b)] ? 1 : 0);
            }
        }
    } else {
        // balanced seeded sample, with replacement
        RngStream rng(seed);
        const size_t half = max_pairs / 2;
        std::vector<std::pair<uint16_t, size_t>> pos_weight;  // id -> #pairs within id
        for (const auto& [id, members] : groups) {
            const size_t w = members.size() * (members.size() - 1) / 2;
            if (w > 0) pos_weight.emplace_back(id, w);
        }
        for (size_t s = 0; s < half; ++s) {
            size_t pick = rng.below(pos_total);
            uint16_t id = pos_weight[0].first;
            for (const auto& [cand, w] : pos_weight) {
                if (pick < w) {
                    id = cand;
                    break;
                }
                pick -= w;
            }
            const auto& members = groups[id];
            const size_t a = rng.below(members.size());
            size_t b = rng.below(members.size() - 1);
            if (b >= a) ++b;
            dist.push_back(distance(members[a], members[b]));
            is_pos.push_back(1);
        }
        for (size_t s = 0; s < half; ++s) {
            int a, b;
            do {
                a = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
                b = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
            } while (labels[static_cast<size_t>(a)] == labels[static_cast<size_t>(b)]);
            dist.push_back(distance(a, b));
            is_pos.push_back(0);
        }
    }

    RocResult out;
    out.auroc = auroc_from_pairs(dist, is_pos);
    for (uint8_t p : is_pos) (p ? out.positives : out.negatives) += 1;

    // exported curve: sentinel threshold -1 pins (0,0), then a sweep of [0,2]
    std::vector<double> pos_d, neg_d;
    for (size_t k = 0; k < dist.size(); ++k) (is_pos[k] ? pos_d : neg_d).push_back(dist[k]);
    std::sort(pos_d.begin(), pos_d.end());
    std::sort(neg_d.begin(), neg_d.end());
    auto frac_below = [](const std::vector<double>& v, double t) {
        return static_cast<double>(std::upper_bound(v.begin(), v.end(), t) - v.begin()) /
               static_cast<double>(v.size());
    };
    out.curve.thresholds.push_back(-1.0);
    out.curve.fpr.push_back(0.0);
    out.curve.tpr.push_back(0.0);
    for (int i = 0; i < num_thresholds; ++i) {
        const double t = 2.0 * i / (num_thresholds - 1);
        out.curve.thresholds.push_back(t);
        out.curve.fpr.push_back(frac_below(neg_d, t));
        out.curve.tpr.push_back(frac_below(pos_d, t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// macro F1 + linear probe

double macro_f1(const std::vector<uint16_t>& truth, const std::vector<uint16_t>& predicted) {
    if (truth.size() != predicted.size() || truth.empty()) {
        throw InvalidArgument("macro_f1: label arrays must be non-empty and aligned");
    }
    std::set<uint16_t> classes(truth.begin(), truth.end());
    classes.insert(predicted.begin(), predicted.end());

    double f1_sum = 0.0;
    for (uint16_t c : classes) {
        size_t tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < truth.size(); ++i) {
            const bool is_true = truth[i] == c;
            const bool is_pred = predicted[i] == c;
            if (is_true && is_pred) ++tp;
            else if (!is_true && is_pred) ++fp;
            else if (is_true && !is_pred) ++fn;
        }
        const double prec = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double rec = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
        f1_sum += (prec + rec > 0.0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    return f1_sum / static_cast<double>(classes.size());
}

ProbeResult linear_probe(const Tensor& train_emb, const std::vector<uint16_t>& train_labels,
                         const Tensor& test_emb, const std::vector<uint16_t>& test_labels,
                         const ProbeConfig& cfg) {
    const int n = train_emb.rows();
    const int d = train_emb.cols();
    const int m = test_emb.rows();
    if (n == 0 || m == 0) throw InvalidArgument("linear_probe: empty train or test set");
    if (train_labels.size() != static_cast<size_t>(n) || test_labels.size() != static_cast<size_t>(m)) {
        throw InvalidArgument("linear_probe: label count mismatch");
    }
    if (test_emb.cols() != d) throw InvalidArgument("linear_probe: dimension mismatch");

    std::set<uint16_t> class_set(train_labels.begin(), train_labels.end());
    std::vector<uint16_t> classes(class_set.begin(), class_set.end());
    const int k = static_cast<int>(classes.size());
    auto class_of = [&classes](uint16_t id) {
        const auto it = std::lower_bound(classes.begin(), classes.end(), id);
        return static_cast<int>(it - classes.begin());
    };
    for (uint16_t id : test_labels) {
        if (!class_set.count(id)) {
            throw InvalidArgument("linear_probe: test label " + std::to_string(id) +
                                  " absent from probe train set");
        }
    }

    // full-batch multinomial logistic regression, tiny seeded init
    RngStream rng(cfg.seed);
    Tensor w({d, k}), bias({k});
    for (double& v : w.data) v = 0.01 * rng.normal();

    std::vector<int> y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] = class_of(train_labels[static_cast<size_t>(i)]);

    Tensor logits({n, k}), grad_w({d, k});
    std::vector<double> grad_b(static_cast<size_t>(k));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        nn::gemm_nn(train_emb.data.data(), w.data.data(), logits.data.data(), n, d, k);
        for (int r = 0; r < n; ++r) {
            double* row = &logits.data[static_cast<size_t>(r) * k];
            for (int j = 0; j < k; ++j) row[j] += bias.data[static_cast<size_t>(j)];
            const double mx = *std::max_element(row, row + k);
            double sum = 0.0;
            for (int j = 0; j < k; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (int j = 0; j < k; ++j) row[j] /= sum;
            row[y[static_cast<size_t>(r)]] -= 1.0;  // now logits holds (P - Y)
        }
        nn::gemm_tn(train_emb.data.data(), logits.data.data(), grad_w.data.data(), d, n, k, 1.0 / n,
                    0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        for (int r = 0; r < n; ++r) {
            const double* row = &logits.data[static_cast<size_t>(r) * k];
            for (int j = 0; j < k; ++j) grad_b[static_cast<size_t>(j)] += row[j] / n;
        }
        for (size_t i = 0; i < w.data.size(); ++i) w.data[i] -= cfg.lr * grad_w.data[i];
        for (int j = 0; j < k; ++j) bias.data[static_cast<size_t>(j)] -= cfg.lr * grad_b[static_cast<size_t>(j)];
    }

    ProbeResult result;
    result.classes = classes;
    result.predicted.resize(static_cast<size_t>(m));
    Tensor test_logits({m, k});
    nn::gemm_nn(test_emb.data.data(), w.data.data(), test_logits.data.data(), m, d, k);
    for (int r = 0; r < m; ++r) {
        double* row = &test_logits.data[static_cast<size_t>(r) * k];
        for (int j = 0; j < k; ++j) row[j] += bias.data[static_cast<size_t>(j)];
        const int pred = static_cast<int>(std::max_element(row, row + k) - row);
        result.predicted[static_cast<size_t>(r)] = classes[static_cast<size_t>(pred)];
    }
    result.cf1 = macro_f1(test_labels, result.predicted);
    return result;
}

double linear_probe_cf1(const Tensor& train_emb, const std::vector<uint16_t>& train_labels,
                        const Tensor& test_emb, const std::vector<uint16_t>& test_labels,
                        const ProbeConfig& cfg) {
    return linear_probe(train_emb, train_labels, test_emb, test_labels, cfg).cf1;
}

// ---------------------------------------------------------------------------
// PCA export

nn::Tensor pca2(const Tensor& embeddings) {
    const int n = embeddings.rows();
    const int d = embeddings.cols();
    if (n < 2) throw InvalidArgument("pca2 needs at least 2 embeddings");

    Tensor centered = embeddings;
    std::vector<double> mean(static_cast<size_t>(d));
    for (int r = 0; r < n; ++r) {
        const double* row = &embeddings.data[static_cast<size_t>(r) * d];
        for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += row[j] / n;
    }
    for (int r = 0; r < n; ++r) {
        double* row = &centered.data[static_cast<size_t>(r) * d];
        for (int j = 0; j < d; ++j) row[j] -= mean[static_cast<size_t>(j)];
    }

    constexpr double kTol = 1e-9;
    constexpr int kMaxIter = 5000;
    RngStream rng(0xC0FFEE);
    Tensor coords({n, 2});
    std::vector<double> v(static_cast<size_t>(d)), xv(static_cast<size_t>(n)),
        next(static_cast<size_t>(d));
    for (int comp = 0; comp < 2; ++comp) {
        for (double& x : v) x = rng.normal();
        double vn = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        for (double& x : v) x /= vn;
        for (int it = 0; it < kMaxIter; ++it) {
            nn::gemm_nn(centered.data.data(), v.data(), xv.data(), n, d, 1);
            nn::gemm_tn(centered.data.data(), xv.data(), next.data(), d, n, 1);
            const double nn2 = std::sqrt(std::inner_product(next.begin(), next.end(), next.begin(), 0.0));
            if (nn2 < 1e-30) break;  // no variance left
            double delta = 0.0;
            for (int j = 0; j < d; ++j) {
                next[static_cast<size_t>(j)] /= nn2;
                delta = std::max(delta, std::abs(next[static_cast<size_t>(j)] - v[static_cast<size_t>(j)]));
            }
            // power iteration may flip sign between iterations on repeated use
            double delta_neg = 0.0;
            for (int j = 0; j < d; ++j) {
                delta_neg = std::max(delta_neg,
                                     std::abs(next[static_cast<size_t>(j)] + v[static_cast<size_t>(j)]));
            }
            v = next;
            if (std::min(delta, delta_neg) < kTol) break;
        }
        nn::gemm_nn(centered.data.data(), v.data(), xv.data(), n, d, 1);
        for (int r = 0; r < n; ++r) coords.data[static_cast<size_t>(r) * 2 + comp] = xv[static_cast<size_t>(r)];
        // deflate
        for (int r = 0; r < n; ++r) {
            double* row = &centered.data[static_cast<size_t>(r) * d];
            for (int j = 0; j < d; ++j) row[j] -= xv[static_cast<size_t>(r)] * v[static_cast<size_t>(j)];
        }
    }
    return coords;
}

// ---------------------------------------------------------------------------
// scenario protocol

GridBatch preprocess_batch(const data::Records& records, const std::vector<uint32_t>& indices,
                           const sig::StftConfig& stft) {
    if (indices.empty()) throw InvalidArgument("preprocess_batch: no records selected");
    GridBatch batch;
    batch.device_ids.reserve(indices.size());
    batch.location_ids.reserve(indices.size());
    bool first = true;
    int width = 0;
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto& rec = records.at(indices[i]);
        const sig::ModelInput grid = sig::preprocess(rec, stft);
        if (first) {
            width = static_cast<int>(grid.grid.size());
            batch.X = Tensor({static_cast<int>(indices.size()), width});
            first = false;
        }
        std::copy_n(grid.grid.data(), width, &batch.X.data[i * static_cast<size_t>(width)]);
        batch.device_ids.push_back(rec.device_id);
        batch.location_ids.push_back(rec.location_id);
    }
    return batch;
}

EvalArtifacts run_scenario_eval(const enc::Encoder& model, const data::Dataset& ds,
                                const data::ScenarioSplit& split, const sig::StftConfig& stft,
                                const ProbeConfig& probe_cfg) {
    if (split.train_idx.empty() || split.test_idx.empty()) {
        throw InvalidArgument("scenario eval needs non-empty train and test sides");
    }
    const GridBatch train = preprocess_batch(ds.records, split.train_idx, stft);
    const GridBatch test = preprocess_batch(ds.records, split.test_idx, stft);
    const Tensor train_emb = enc::embed_grids(model, train.X);
    const Tensor test_emb = enc::embed_grids(model, test.X);

    const int d = train_emb.cols();
    Gallery gallery;
    Tensor query_emb;
    std::vector<uint16_t> query_dev, query_loc;
    Tensor probe_train_emb;
    std::vector<uint16_t> probe_train_labels;

    if (split.kind == data::ScenarioKind::S3) {
        // enroll held-out devices from the lowest held-out location; train
        // devices keep their train-side references
        if (split.heldout_locations.empty()) {
            throw InvalidArgument("S3 split carries no held-out locations");
        }
        const uint16_t enroll_loc = split.heldout_locations.front();
        std::vector<int> enroll_rows, query_rows;
        for (int i = 0; i < test_emb.rows(); ++i) {
            if (test.location_ids[static_cast<size_t>(i)] == enroll_loc) enroll_rows.push_back(i);
            else query_rows.push_back(i);
        }
        if (enroll_rows.empty() || query_rows.empty()) {
            throw InvalidArgument("S3 enrollment location has no records or no queries remain");
        }

        auto gather = [&](const Tensor& src, const std::vector<int>& rows) {
            Tensor out({static_cast<int>(rows.size()), d});
            for (size_t r = 0; r < rows.size(); ++r) {
                std::copy_n(&src.data[static_cast<size_t>(rows[r]) * d], d,
                            &out.data[r * static_cast<size_t>(d)]);
            }
            return out;
        };
        const Tensor enroll_emb = gather(test_emb, enroll_rows);
        std::vector<uint16_t> enroll_dev;
        for (int r : enroll_rows) enroll_dev.push_back(test.device_ids[static_cast<size_t>(r)]);

        // union gallery over train-side references and enrollment references
        const Gallery train_gal = build_gallery(train_emb, train.device_ids, "train mean");
        const Gallery enroll_gal =
            build_gallery(enroll_emb, enroll_dev, "enrollment location " + std::to_string(enroll_loc));
        Tensor all_emb({train_gal.size() + enroll_gal.size(), d});
        std::vector<uint16_t> all_ids;
        std::copy_n(train_gal.refs.data.begin(), train_gal.refs.data.size(), all_emb.data.begin());
        std::copy_n(enroll_gal.refs.data.begin(), enroll_gal.refs.data.size(),
                    all_emb.data.begin() + static_cast<long>(train_gal.refs.data.size()));
        all_ids.insert(all_ids.end(), train_gal.ids.begin(), train_gal.ids.end());
        all_ids.insert(all_ids.end(), enroll_gal.ids.begin(), enroll_gal.ids.end());
        gallery = build_gallery(all_emb, all_ids,
                                "train mean + enrollment location " + std::to_string(enroll_loc));

        query_emb = gather(test_emb, query_rows);
        for (int r : query_rows) {
            query_dev.push_back(test.device_ids[static_cast<size_t>(r)]);
            query_loc.push_back(test.location_ids[static_cast<size_t>(r)]);
        }

        // probe sees train devices from train data and held-out devices from
        // the enrollment location only
        probe_train_emb = Tensor({train_emb.rows() + enroll_emb.rows(), d});
        std::copy_n(train_emb.data.begin(), train_emb.data.size(), probe_train_emb.data.begin());
        std::copy_n(enroll_emb.data.begin(), enroll_emb.data.size(),
                    probe_train_emb.data.begin() + static_cast<long>(train_emb.data.size()));
        probe_train_labels = train.device_ids;
        probe_train_labels.insert(probe_train_labels.end(), enroll_dev.begin(), enroll_dev.end());
    } else {
        gallery = build_gallery(train_emb, train.device_ids, "train mean");
        query_emb = test_emb;
        query_dev = test.device_ids;
        query_loc = test.location_ids;
        probe_train_emb = train_emb;
        probe_train_labels = train.device_ids;
    }

    EvalArtifacts art;
    art.report.scenario = data::to_string(split.kind);
    art.report.cmc = cmc_curve(gallery, query_emb, query_dev);

    const RocResult roc = roc_and_auroc(query_emb, query_dev);
    art.report.auroc = roc.auroc;
    art.roc = roc.curve;

    const ProbeResult probe =
        linear_probe(probe_train_emb, probe_train_labels, query_emb, query_dev, probe_cfg);
    art.report.cf1 = probe.cf1;
    art.report.class_ids = probe.classes;
    const size_t k = probe.classes.size();
    art.report.confusion.assign(k, std::vector<int64_t>(k, 0));
    auto class_index = [&probe](uint16_t id) {
        return static_cast<size_t>(std::lower_bound(probe.classes.begin(), probe.classes.end(), id) -
                                   probe.classes.begin());
    };
    for (size_t i = 0; i < query_dev.size(); ++i) {
        art.report.confusion[class_index(query_dev[i])][class_index(probe.predicted[i])] += 1;
    }

    art.coords2d = pca2(query_emb);
    art.query_devices = query_dev;
    art.query_locations = query_loc;
    return art;
}

}  // namespace rff::eval
