#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rhm/dataset.hpp"
#include "rhm/dsp.hpp"
#include "rhm/nn.hpp"
#include "rhm/rng.hpp"

namespace rhm {

// ---------------------------------------------------------------------------
// Backbone description
// ---------------------------------------------------------------------------

enum class LayerKind { conv, batchnorm, dropout, flatten, dense };

/// One row of the backbone recipe. Conv rows carry a fused ReLU.
struct LayerSpec {
    LayerKind kind = LayerKind::flatten;
    int kernel_h = 0;
    int kernel_w = 0;
    int stride = 1;
    int units = 0;  // conv: output channels; dense: output features
    double rate = 0.0;
    bool relu_after = false;

    static LayerSpec conv(int kh, int kw, int stride, int out_channels) {
        LayerSpec s;
        s.kind = LayerKind::conv;
        s.kernel_h = kh;
        s.kernel_w = kw;
        s.stride = stride;
        s.units = out_channels;
        s.relu_after = true;
        return s;
    }
    static LayerSpec batchnorm() {
        LayerSpec s;
        s.kind = LayerKind::batchnorm;
        return s;
    }
    static LayerSpec dropout(double rate) {
        LayerSpec s;
        s.kind = LayerKind::dropout;
        s.rate = rate;
        return s;
    }
    static LayerSpec flatten() { return LayerSpec{}; }
    static LayerSpec dense(int units) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.units = units;
        return s;
    }
};

/// The feature extractor shared by both twins and by the softmax baseline.
/// Inputs are spectrum matrices viewed as bins x frames x 1 images.
struct BackboneSpec {
    int input_h = 40;  // range bins
    int input_w = 30;  // frames
    int input_c = 1;
    std::vector<LayerSpec> layers;
};

inline BackboneSpec default_backbone_spec() {
    BackboneSpec s;
    s.layers = {
        LayerSpec::conv(2, 2, 1, 16),  LayerSpec::batchnorm(), LayerSpec::dropout(0.5),
        LayerSpec::conv(5, 5, 2, 32),  LayerSpec::batchnorm(), LayerSpec::dropout(0.5),
        LayerSpec::conv(5, 5, 1, 64),  LayerSpec::batchnorm(), LayerSpec::dropout(0.5),
        LayerSpec::conv(3, 3, 1, 128), LayerSpec::batchnorm(), LayerSpec::dropout(0.5),
        LayerSpec::flatten(),          LayerSpec::dense(64),   LayerSpec::dense(32),
    };
    return s;
}

/// Per-row output sizes ({h, w, c} while spatial, {n} once flattened),
/// computed from the recipe alone.
inline std::vector<std::vector<int>> trace_rows(const BackboneSpec& spec) {
    std::vector<std::vector<int>> rows;
    int h = spec.input_h, w = spec.input_w, c = spec.input_c;
    bool flat = false;
    int n = 0;
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::conv:
                if (flat) throw std::invalid_argument("backbone: conv after flatten");
                h = (h + l.stride - 1) / l.stride;
                w = (w + l.stride - 1) / l.stride;
                c = l.units;
                break;
            case LayerKind::batchnorm:
            case LayerKind::dropout:
                break;
            case LayerKind::flatten:
                if (flat) throw std::invalid_argument("backbone: repeated flatten");
                flat = true;
                n = h * w * c;
                break;
            case LayerKind::dense:
                if (!flat) throw std::invalid_argument("backbone: dense before flatten");
                n = l.units;
                break;
        }
        rows.push_back(flat ? std::vector<int>{n} : std::vector<int>{h, w, c});
    }
    return rows;
}

inline int embedding_dim(const BackboneSpec& spec) {
    const auto rows = trace_rows(spec);
    if (rows.empty() || rows.back().size() != 1)
        throw std::invalid_argument("backbone: must end in a dense layer");
    return rows.back()[0];
}

/// Trainable scalar count of the backbone, derived from the recipe by
/// plain arithmetic (conv kh*kw*cin*cout + cout, batchnorm 2c,
/// dense in*out + out). Running statistics are not trainable and are
/// excluded.
inline std::int64_t backbone_param_count(const BackboneSpec& spec) {
    std::int64_t total = 0;
    int h = spec.input_h, w = spec.input_w, c = spec.input_c;
    bool flat = false;
    std::int64_t n = 0;
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::conv:
                total += static_cast<std::int64_t>(l.kernel_h) * l.kernel_w * c * l.units + l.units;
                h = (h + l.stride - 1) / l.stride;
                w = (w + l.stride - 1) / l.stride;
                c = l.units;
                break;
            case LayerKind::batchnorm:
                total += 2 * static_cast<std::int64_t>(flat ? n : c);
                break;
            case LayerKind::dropout:
                break;
            case LayerKind::flatten:
                flat = true;
                n = static_cast<std::int64_t>(h) * w * c;
                break;
            case LayerKind::dense:
                total += n * l.units + l.units;
                n = l.units;
                break;
        }
    }
    return total;
}

inline Network build_network(const BackboneSpec& spec, Rng& init) {
    Network net;
    int h = spec.input_h, w = spec.input_w, c = spec.input_c;
    bool flat = false;
    int n = 0;
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::conv:
                if (flat) throw std::invalid_argument("backbone: conv after flatten");
                net.add(std::make_unique<Conv2d>(l.kernel_h, l.kernel_w, l.stride, c, l.units, init));
                if (l.relu_after) net.add(std::make_unique<Relu>());
                h = (h + l.stride - 1) / l.stride;
                w = (w + l.stride - 1) / l.stride;
                c = l.units;
                break;
            case LayerKind::batchnorm:
                if (flat) throw std::invalid_argument("backbone: batchnorm after flatten unsupported");
                net.add(std::make_unique<BatchNorm>(c));
                break;
            case LayerKind::dropout:
                net.add(std::make_unique<Dropout>(l.rate));
                break;
            case LayerKind::flatten:
                net.add(std::make_unique<Flatten>());
                flat = true;
                n = h * w * c;
                break;
            case LayerKind::dense:
                if (!flat) throw std::invalid_argument("backbone: dense before flatten");
                net.add(std::make_unique<Dense>(n, l.units, init));
                n = l.units;
                break;
        }
    }
    return net;
}

// ---------------------------------------------------------------------------
// Siamese model
// ---------------------------------------------------------------------------

/// How the two embeddings are reduced before the decision layer:
/// elementwise_abs feeds |e1 - e2| (a vector) to a dense layer,
/// scalar_norm feeds the single Euclidean distance instead.
enum class DistanceKind { elementwise_abs, scalar_norm };

inline int distance_dim(const BackboneSpec& spec, DistanceKind kind) {
    return kind == DistanceKind::elementwise_abs ? embedding_dim(spec) : 1;
}

/// One-shot similarity model: a single backbone shared by both twins
/// (shared by construction, not by copying) plus a dense+sigmoid decision
/// head over the embedding distance.
struct SiameseModel {
    BackboneSpec spec;
    DistanceKind distance = DistanceKind::elementwise_abs;
    Network backbone;
    Network head;
    AdamState opt;

    std::vector<Tensor*> params() {
        auto out = backbone.params();
        for (Tensor* p : head.params()) out.push_back(p);
        return out;
    }
    std::vector<Tensor*> grads() {
        auto out = backbone.grads();
        for (Tensor* g : head.grads()) out.push_back(g);
        return out;
    }
    std::vector<Tensor*> state() {
        auto out = backbone.state();
        for (Tensor* s : head.state()) out.push_back(s);
        return out;
    }
    void zero_grad() {
        backbone.zero_grad();
        head.zero_grad();
    }
    std::int64_t param_count() { return backbone.param_count() + head.param_count(); }
};

inline SiameseModel make_siamese(const BackboneSpec& spec,
                                 DistanceKind distance = DistanceKind::elementwise_abs,
                                 std::uint64_t seed = 0) {
    SiameseModel m;
    m.spec = spec;
    m.distance = distance;
    Rng init(derive_seed(seed, 0x1217));
    m.backbone = build_network(spec, init);
    m.head.add(std::make_unique<Dense>(distance_dim(spec, distance), 1, init));
    m.head.add(std::make_unique<Sigmoid>());
    return m;
}

/// Stacks spectrum matrices into an NHWC batch, bins as rows and frames
/// as columns, one channel.
inline Tensor pack_batch(const BackboneSpec& spec, const std::vector<const SpectrumMatrix*>& batch) {
    if (batch.empty()) throw std::invalid_argument("pack_batch: empty batch");
    Tensor t({static_cast<int>(batch.size()), spec.input_h, spec.input_w, spec.input_c});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const SpectrumMatrix& m = *batch[i];
        if (m.n_bins != spec.input_h || m.n_frames != spec.input_w)
            throw std::invalid_argument("pack_batch: matrix dimensions do not match backbone input");
        double* dst = t.data.data() + i * static_cast<std::size_t>(spec.input_h) * spec.input_w;
        for (int b = 0; b < spec.input_h; ++b)
            for (int f = 0; f < spec.input_w; ++f)
                dst[static_cast<std::size_t>(b) * spec.input_w + f] = m.at(f, b);
    }
    return t;
}

/// Feature vector of one matrix. Inference is deterministic. Train mode
/// draws dropout masks from mask_seed, but batchnorm rejects single-row
/// batches in train mode, so training goes through the batched loop.
inline std::vector<double> embed(SiameseModel& model, const SpectrumMatrix& x, Mode mode,
                                 std::uint64_t mask_seed = 0) {
    Rng rng(mask_seed);
    const Tensor out = model.backbone.forward(pack_batch(model.spec, {&x}), mode,
                                              mode == Mode::train ? &rng : nullptr, nullptr);
    return {out.data.begin(), out.data.end()};
}

/// Embeds every sample (inference mode, batched). Row i corresponds to
/// dataset sample i.
inline std::vector<std::vector<double>> embed_all(SiameseModel& model, const Dataset& ds,
                                                  int batch_size = 256) {
    std::vector<std::vector<double>> out;
    out.reserve(ds.samples.size());
    const int dim = embedding_dim(model.spec);
    for (int start = 0; start < ds.size(); start += batch_size) {
        const int n = std::min(batch_size, ds.size() - start);
        std::vector<const SpectrumMatrix*> ptrs(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            ptrs[static_cast<std::size_t>(i)] = &ds.samples[static_cast<std::size_t>(start + i)];
        const Tensor e = model.backbone.forward(pack_batch(model.spec, ptrs), Mode::infer, nullptr,
                                                nullptr);
        for (int i = 0; i < n; ++i)
            out.emplace_back(e.data.begin() + static_cast<std::ptrdiff_t>(i) * dim,
                             e.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * dim);
    }
    return out;
}

inline std::vector<double> distance_vector(DistanceKind kind, const std::vector<double>& e1,
                                           const std::vector<double>& e2) {
    if (e1.size() != e2.size()) throw std::invalid_argument("distance_vector: length mismatch");
    if (kind == DistanceKind::elementwise_abs) {
        std::vector<double> d(e1.size());
        for (std::size_t i = 0; i < e1.size(); ++i) d[i] = std::abs(e1[i] - e2[i]);
        return d;
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < e1.size(); ++i) sq += (e1[i] - e2[i]) * (e1[i] - e2[i]);
    return {std::sqrt(sq)};
}

/// Same-class probability from precomputed embeddings (decision head in
/// inference mode).
inline double score_from_embeddings(SiameseModel& model, const std::vector<double>& e1,
                                    const std::vector<double>& e2) {
    std::vector<double> d = distance_vector(model.distance, e1, e2);
    Tensor in({1, static_cast<int>(d.size())});
    in.data = std::move(d);
    return model.head.forward(in, Mode::infer, nullptr, nullptr).data[0];
}

/// Same-class probability for a pair of matrices. Both twin passes draw
/// their dropout masks from the same mask_seed, which keeps the score
/// exactly symmetric in (x1, x2) whenever the mode permits evaluation
/// (batchnorm propagates an error for train mode on single rows).
inline double pair_score(SiameseModel& model, const SpectrumMatrix& x1, const SpectrumMatrix& x2,
                         Mode mode, std::uint64_t mask_seed = 0) {
    const std::vector<double> e1 = embed(model, x1, mode, mask_seed);
    const std::vector<double> e2 = embed(model, x2, mode, mask_seed);
    std::vector<double> d = distance_vector(model.distance, e1, e2);
    Tensor in({1, static_cast<int>(d.size())});
    in.data = std::move(d);
    Rng rng(derive_seed(mask_seed, 1));
    return model.head.forward(in, mode, mode == Mode::train ? &rng : nullptr, nullptr).data[0];
}

// ---------------------------------------------------------------------------
// Pair sampling
// ---------------------------------------------------------------------------

/// Indices of two dataset samples plus the same-class target bit.
struct SamplePair {
    int first = 0;
    int second = 0;
    int target = 0;  // 1 iff the two labels are equal
};

using PairBatch = std::vector<SamplePair>;

/// Draws ceil(count/2) same-class and floor(count/2) different-class
/// pairs, interleaved so every contiguous minibatch stays balanced.
/// Classes are chosen uniformly (among those with enough samples) and
/// members uniformly without replacement within a pair.
inline PairBatch sample_pairs(const Dataset& ds, int count, std::uint64_t seed) {
    if (count < 0) throw std::invalid_argument("sample_pairs: negative count");
    const auto by_class = ds.indices_by_class();
    std::vector<int> same_ok, any_ok;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() >= 2) same_ok.push_back(static_cast<int>(c));
        if (!by_class[c].empty()) any_ok.push_back(static_cast<int>(c));
    }
    if (same_ok.empty() || any_ok.size() < 2)
        throw std::invalid_argument("sample_pairs: need two classes and one class with two samples");

    Rng rng(seed);
    PairBatch out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        SamplePair p;
        if (k % 2 == 0) {
            const auto& idx = by_class[static_cast<std::size_t>(
                same_ok[rng.index(same_ok.size())])];
            const std::size_t i = rng.index(idx.size());
            std::size_t j = rng.index(idx.size() - 1);
            if (j >= i) ++j;
            p.first = idx[i];
            p.second = idx[j];
            p.target = 1;
        } else {
            const std::size_t a = rng.index(any_ok.size());
            std::size_t b = rng.index(any_ok.size() - 1);
            if (b >= a) ++b;
            const auto& ia = by_class[static_cast<std::size_t>(any_ok[a])];
            const auto& ib = by_class[static_cast<std::size_t>(any_ok[b])];
            p.first = ia[rng.index(ia.size())];
            p.second = ib[rng.index(ib.size())];
            p.target = 0;
        }
        out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int batch_size = 64;
    double learning_rate = 0.006;
    int epochs = 50;
    int pairs_per_epoch = 0;  // 0: one pair (or sample) per training example
    int patience = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw std::invalid_argument("TrainConfig: learning_rate must be finite and >= 0");
        if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
        if (pairs_per_epoch < 0) throw std::invalid_argument("TrainConfig: pairs_per_epoch must be >= 0");
        if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    }
};

struct TrainHistory {
    double initial_loss = 0.0;          // validation loss before any update
    double initial_accuracy = 0.0;      // validation accuracy before any update
    std::vector<double> epoch_loss;     // mean training loss per epoch
    std::vector<double> val_accuracy;   // validation accuracy per epoch
    int best_epoch = -1;                // index into the arrays; -1 = initial weights
    double best_val_accuracy = 0.0;
    bool early_stopped = false;
    int epochs_run = 0;
};

/// Optional per-epoch observer: (epoch index, mean training loss,
/// validation accuracy). Called after each epoch's validation pass.
using EpochCallback = std::function<void(int, double, double)>;

namespace detail {

inline std::vector<const SpectrumMatrix*> gather(const Dataset& ds, const PairBatch& pairs,
                                                 std::size_t begin, std::size_t end, bool second) {
    std::vector<const SpectrumMatrix*> out;
    out.reserve(end - begin);
    for (std::size_t k = begin; k < end; ++k)
        out.push_back(&ds.samples[static_cast<std::size_t>(second ? pairs[k].second : pairs[k].first)]);
    return out;
}

/// Mean validation-pair loss and threshold-0.5 accuracy from embeddings.
inline void score_val_pairs(SiameseModel& model, const std::vector<std::vector<double>>& emb,
                            const PairBatch& pairs, double& loss, double& accuracy) {
    double lsum = 0.0;
    int correct = 0;
    for (const SamplePair& p : pairs) {
        const double s = score_from_embeddings(model, emb[static_cast<std::size_t>(p.first)],
                                               emb[static_cast<std::size_t>(p.second)]);
        lsum += bce_loss(s, p.target).loss;
        correct += ((s > 0.5) == (p.target == 1)) ? 1 : 0;
    }
    loss = lsum / static_cast<double>(pairs.size());
    accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
}

}  // namespace detail

/// Trains the shared backbone and decision head on randomly drawn pairs
/// with binary cross entropy and Adam. Each epoch draws a fresh seeded
/// pair set, evaluates validation pair accuracy (threshold 0.5), and
/// keeps the best-validation parameters; stops early after `patience`
/// epochs without improvement or when validation accuracy cannot improve
/// further (reached 1.0). The best snapshot (including batchnorm running
/// statistics) is restored before returning.
inline TrainHistory train_siamese(SiameseModel& model, const Dataset& train_set,
                                  const Dataset& val_set, const TrainConfig& cfg,
                                  const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (val_set.size() < 2) throw std::invalid_argument("train_siamese: validation set too small");
    const int pairs_per_epoch =
        cfg.pairs_per_epoch > 0 ? cfg.pairs_per_epoch : train_set.size();
    if (pairs_per_epoch <= 0) throw std::invalid_argument("train_siamese: empty training set");

    const PairBatch val_pairs =
        sample_pairs(val_set, 2 * val_set.size(), derive_seed(cfg.seed, 0x7A11));

    TrainHistory hist;
    {
        const auto emb = embed_all(model, val_set);
        detail::score_val_pairs(model, emb, val_pairs, hist.initial_loss, hist.initial_accuracy);
    }
    AdamState& opt = model.opt;
    opt.lr = cfg.learning_rate;
    opt.init(model.params());

    double best_acc = hist.initial_accuracy;
    std::vector<double> best_params = snapshot_values(model.params());
    std::vector<double> best_state = snapshot_values(model.state());
    int since_best = 0;

    const std::uint64_t pair_stream = derive_seed(cfg.seed, 0xE70C);
    const std::uint64_t mask_stream = derive_seed(cfg.seed, 0x3A5C);
    const int dim = distance_dim(model.spec, model.distance);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const PairBatch pairs =
            sample_pairs(train_set, pairs_per_epoch, derive_seed(pair_stream, static_cast<std::uint64_t>(epoch)));
        Rng mask_rng(derive_seed(mask_stream, static_cast<std::uint64_t>(epoch)));

        double loss_sum = 0.0;
        std::size_t processed = 0;
        std::vector<Cache> tape1, tape2, tape_head;
        for (std::size_t begin = 0; begin < pairs.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(pairs.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const int b = static_cast<int>(end - begin);
            if (b < 2) break;  // batchnorm cannot take statistics from one pair

            const Tensor x1 = pack_batch(model.spec, detail::gather(train_set, pairs, begin, end, false));
            const Tensor x2 = pack_batch(model.spec, detail::gather(train_set, pairs, begin, end, true));

            // Both twins see identical dropout masks (same seed per pair
            // evaluation, matching pair_score): independent masks decorrelate
            // the twin embeddings and drown the distance signal in noise.
            const std::uint64_t batch_seed = mask_rng.next();
            Rng twin1_rng(batch_seed), twin2_rng(batch_seed);

            model.zero_grad();
            const Tensor e1 = model.backbone.forward(x1, Mode::train, &twin1_rng, &tape1);
            const Tensor e2 = model.backbone.forward(x2, Mode::train, &twin2_rng, &tape2);

            const int edim = e1.dim(1);
            Tensor dist({b, dim});
            for (int i = 0; i < b; ++i) {
                const double* a = e1.data.data() + static_cast<std::size_t>(i) * edim;
                const double* c = e2.data.data() + static_cast<std::size_t>(i) * edim;
                if (model.distance == DistanceKind::elementwise_abs) {
                    for (int j = 0; j < edim; ++j)
                        dist.data[static_cast<std::size_t>(i) * dim + j] = std::abs(a[j] - c[j]);
                } else {
                    double sq = 0.0;
                    for (int j = 0; j < edim; ++j) sq += (a[j] - c[j]) * (a[j] - c[j]);
                    dist.data[static_cast<std::size_t>(i)] = std::sqrt(sq);
                }
            }

            const Tensor prob = model.head.forward(dist, Mode::train, &twin1_rng, &tape_head);
            Tensor grad_p({b, 1});
            for (int i = 0; i < b; ++i) {
                const auto r = bce_loss(prob.data[static_cast<std::size_t>(i)], pairs[begin + static_cast<std::size_t>(i)].target);
                loss_sum += r.loss;
                grad_p.data[static_cast<std::size_t>(i)] = r.dloss_dp / static_cast<double>(b);
            }

            const Tensor grad_dist = model.head.backward(grad_p, tape_head);
            Tensor ge1({b, edim}), ge2({b, edim});
            for (int i = 0; i < b; ++i) {
                const double* a = e1.data.data() + static_cast<std::size_t>(i) * edim;
                const double* c = e2.data.data() + static_cast<std::size_t>(i) * edim;
                if (model.distance == DistanceKind::elementwise_abs) {
                    for (int j = 0; j < edim; ++j) {
                        const double diff = a[j] - c[j];
                        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                        const double g = grad_dist.data[static_cast<std::size_t>(i) * dim + j] * sign;
                        ge1.data[static_cast<std::size_t>(i) * edim + j] = g;
                        ge2.data[static_cast<std::size_t>(i) * edim + j] = -g;
                    }
                } else {
                    const double d = std::max(dist.data[static_cast<std::size_t>(i)], 1e-12);
                    const double gd = grad_dist.data[static_cast<std::size_t>(i)];
                    for (int j = 0; j < edim; ++j) {
                        const double g = gd * (a[j] - c[j]) / d;
                        ge1.data[static_cast<std::size_t>(i) * edim + j] = g;
                        ge2.data[static_cast<std::size_t>(i) * edim + j] = -g;
                    }
                }
            }
            model.backbone.backward(ge1, tape1);
            model.backbone.backward(ge2, tape2);
            adam_step(model.params(), model.grads(), opt);
            processed += static_cast<std::size_t>(b);
        }
        hist.epoch_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(processed, 1)));
        if (!std::isfinite(hist.epoch_loss.back()))
            throw TrainError("train_siamese: loss became non-finite");

        const auto emb = embed_all(model, val_set);
        double vloss = 0.0, vacc = 0.0;
        detail::score_val_pairs(model, emb, val_pairs, vloss, vacc);
        hist.val_accuracy.push_back(vacc);
        hist.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(epoch, hist.epoch_loss.back(), vacc);

        if (vacc > best_acc) {
            best_acc = vacc;
            hist.best_epoch = epoch;
            best_params = snapshot_values(model.params());
            best_state = snapshot_values(model.state());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if (best_acc >= 1.0 || since_best >= cfg.patience) {
            hist.early_stopped = epoch + 1 < cfg.epochs;
            break;
        }
    }

    restore_values(model.params(), best_params);
    restore_values(model.state(), best_state);
    hist.best_val_accuracy = best_acc;
    return hist;
}

// ---------------------------------------------------------------------------
// Softmax CNN baseline
// ---------------------------------------------------------------------------

/// Four-class classifier: the same backbone recipe with a dense layer to
/// 4 logits; softmax lives in the loss and in predict.
struct CnnModel {
    BackboneSpec spec;
    Network net;
    AdamState opt;
    int n_classes = kNumClasses;
};

inline CnnModel make_cnn(const BackboneSpec& spec, std::uint64_t seed = 0) {
    CnnModel m;
    m.spec = spec;
    Rng init(derive_seed(seed, 0xC221));
    m.net = build_network(spec, init);
    m.net.add(std::make_unique<Dense>(embedding_dim(spec), kNumClasses, init));
    return m;
}

/// Argmax class predictions in inference mode; ties resolve to the lowest
/// class index.
inline std::vector<int> cnn_predict(CnnModel& model, const Dataset& ds, int batch_size = 256) {
    std::vector<int> out;
    out.reserve(ds.samples.size());
    for (int start = 0; start < ds.size(); start += batch_size) {
        const int n = std::min(batch_size, ds.size() - start);
        std::vector<const SpectrumMatrix*> ptrs(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            ptrs[static_cast<std::size_t>(i)] = &ds.samples[static_cast<std::size_t>(start + i)];
        const Tensor logits =
            model.net.forward(pack_batch(model.spec, ptrs), Mode::infer, nullptr, nullptr);
        for (int i = 0; i < n; ++i) {
            const double* row = logits.data.data() + static_cast<std::size_t>(i) * model.n_classes;
            out.push_back(static_cast<int>(std::max_element(row, row + model.n_classes) - row));
        }
    }
    return out;
}

/// Trains the baseline with categorical cross entropy over seeded
/// shuffles of the training set; early stopping mirrors train_siamese
/// (best validation accuracy, patience, perfect stop, best-snapshot
/// restore).
inline TrainHistory train_cnn(CnnModel& model, const Dataset& train_set, const Dataset& val_set,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train_set.size() == 0) throw std::invalid_argument("train_cnn: empty training set");
    if (val_set.size() == 0) throw std::invalid_argument("train_cnn: empty validation set");

    const auto val_labels = [&] {
        std::vector<int> v;
        v.reserve(val_set.samples.size());
        for (const auto& s : val_set.samples) v.push_back(s.label);
        return v;
    }();
    const auto val_accuracy = [&]() {
        const std::vector<int> pred = cnn_predict(model, val_set);
        int ok = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == val_labels[i] ? 1 : 0;
        return static_cast<double>(ok) / static_cast<double>(pred.size());
    };
    const auto val_loss = [&]() {
        double sum = 0.0;
        for (int start = 0; start < val_set.size(); start += 256) {
            const int n = std::min(256, val_set.size() - start);
            std::vector<const SpectrumMatrix*> ptrs(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i)
                ptrs[static_cast<std::size_t>(i)] = &val_set.samples[static_cast<std::size_t>(start + i)];
            const Tensor logits =
                model.net.forward(pack_batch(model.spec, ptrs), Mode::infer, nullptr, nullptr);
            for (int i = 0; i < n; ++i) {
                std::vector<double> row(logits.data.begin() + static_cast<std::ptrdiff_t>(i) * model.n_classes,
                                        logits.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * model.n_classes);
                sum += softmax_cross_entropy(row, val_labels[static_cast<std::size_t>(start + i)]).loss;
            }
        }
        return sum / static_cast<double>(val_set.size());
    };

    TrainHistory hist;
    hist.initial_loss = val_loss();
    hist.initial_accuracy = val_accuracy();

    AdamState& opt = model.opt;
    opt.lr = cfg.learning_rate;
    opt.init(model.net.params());

    double best_acc = hist.initial_accuracy;
    std::vector<double> best_params = snapshot_values(model.net.params());
    std::vector<double> best_state = snapshot_values(model.net.state());
    int since_best = 0;

    const int samples_per_epoch =
        cfg.pairs_per_epoch > 0 ? std::min(cfg.pairs_per_epoch, train_set.size()) : train_set.size();
    const std::uint64_t shuffle_stream = derive_seed(cfg.seed, 0x5F0F);
    const std::uint64_t mask_stream = derive_seed(cfg.seed, 0x3A5D);

    std::vector<int> order(static_cast<std::size_t>(train_set.size()));
    for (int i = 0; i < train_set.size(); ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(shuffle_stream, static_cast<std::uint64_t>(epoch)));
        detail::shuffle_indices(order, shuffle_rng);
        Rng mask_rng(derive_seed(mask_stream, static_cast<std::uint64_t>(epoch)));

        double loss_sum = 0.0;
        int processed = 0;
        std::vector<Cache> tape;
        for (int begin = 0; begin < samples_per_epoch; begin += cfg.batch_size) {
            const int end = std::min(samples_per_epoch, begin + cfg.batch_size);
            const int b = end - begin;
            if (b < 2) break;  // batchnorm cannot take statistics from one sample
            std::vector<const SpectrumMatrix*> ptrs(static_cast<std::size_t>(b));
            for (int i = 0; i < b; ++i)
                ptrs[static_cast<std::size_t>(i)] =
                    &train_set.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + i)])];

            model.net.zero_grad();
            const Tensor logits = model.net.forward(pack_batch(model.spec, ptrs), Mode::train,
                                                    &mask_rng, &tape);
            Tensor grad({b, model.n_classes});
            for (int i = 0; i < b; ++i) {
                std::vector<double> row(logits.data.begin() + static_cast<std::ptrdiff_t>(i) * model.n_classes,
                                        logits.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * model.n_classes);
                const int label =
                    train_set.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + i)])].label;
                auto ce = softmax_cross_entropy(row, label);
                loss_sum += ce.loss;
                for (int k = 0; k < model.n_classes; ++k)
                    grad.data[static_cast<std::size_t>(i) * model.n_classes + k] =
                        ce.dlogits[static_cast<std::size_t>(k)] / static_cast<double>(b);
            }
            model.net.backward(grad, tape);
            adam_step(model.net.params(), model.net.grads(), opt);
            processed += b;
        }
        hist.epoch_loss.push_back(loss_sum / static_cast<double>(std::max(processed, 1)));
        if (!std::isfinite(hist.epoch_loss.back()))
            throw TrainError("train_cnn: loss became non-finite");
        hist.val_accuracy.push_back(val_accuracy());
        hist.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(epoch, hist.epoch_loss.back(), hist.val_accuracy.back());

        if (hist.val_accuracy.back() > best_acc) {
            best_acc = hist.val_accuracy.back();
            hist.best_epoch = epoch;
            best_params = snapshot_values(model.net.params());
            best_state = snapshot_values(model.net.state());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if (best_acc >= 1.0 || since_best >= cfg.patience) {
            hist.early_stopped = epoch + 1 < cfg.epochs;
            break;
        }
    }

    restore_values(model.net.params(), best_params);
    restore_values(model.net.state(), best_state);
    hist.best_val_accuracy = best_acc;
    return hist;
}

}  // namespace rhm
