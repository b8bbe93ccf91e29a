#include "vibefm/training.hpp"

#include "vibefm/error.hpp"
#include "vibefm/rng.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

namespace vibefm {

using nn::Tensor;
using nn::Var;

// ---------------------------------------------------------------------------
// config serialization

nlohmann::json augment_params_to_json(const AugmentParams& p)
{
    return {{"permutation_min_k", p.permutation_min_k},
            {"permutation_max_k", p.permutation_max_k},
            {"warp_knots", p.warp_knots},
            {"warp_sigma", p.warp_sigma},
            {"magnitude_knots", p.magnitude_knots},
            {"magnitude_sigma", p.magnitude_sigma},
            {"scaling_min", p.scaling_min},
            {"scaling_max", p.scaling_max},
            {"mixup_alpha", p.mixup_alpha},
            {"op_probability", p.op_probability}};
}

AugmentParams augment_params_from_json(const nlohmann::json& j, AugmentParams p)
{
    if (j.contains("permutation_min_k")) j.at("permutation_min_k").get_to(p.permutation_min_k);
    if (j.contains("permutation_max_k")) j.at("permutation_max_k").get_to(p.permutation_max_k);
    if (j.contains("warp_knots")) j.at("warp_knots").get_to(p.warp_knots);
    if (j.contains("warp_sigma")) j.at("warp_sigma").get_to(p.warp_sigma);
    if (j.contains("magnitude_knots")) j.at("magnitude_knots").get_to(p.magnitude_knots);
    if (j.contains("magnitude_sigma")) j.at("magnitude_sigma").get_to(p.magnitude_sigma);
    if (j.contains("scaling_min")) j.at("scaling_min").get_to(p.scaling_min);
    if (j.contains("scaling_max")) j.at("scaling_max").get_to(p.scaling_max);
    if (j.contains("mixup_alpha")) j.at("mixup_alpha").get_to(p.mixup_alpha);
    if (j.contains("op_probability")) j.at("op_probability").get_to(p.op_probability);
    return p;
}

nlohmann::json train_config_to_json(const TrainConfig& c)
{
    return {{"stage", std::string(to_string(c.stage))},
            {"batch_size", c.batch_size},
            {"optimizer", std::string(to_string(c.optimizer))},
            {"initial_lr", c.initial_lr},
            {"scheduler", "cosine"},
            {"lr_decay", c.lr_decay},
            {"decay_mode", c.decay_mode == DecayMode::CosineFloor ? "cosine_floor" : "step"},
            {"lr_step_epochs", c.lr_step_epochs},
            {"epochs", c.epochs},
            {"augmentations", c.augmentations},
            {"seed", c.seed},
            {"temperature", c.temperature},
            {"loss_weights", {{"shared", c.loss_weights.shared}, {"private", c.loss_weights.private_}, {"orth", c.loss_weights.orth}}},
            {"weight_decay", c.weight_decay},
            {"patience", c.patience},
            {"augment", augment_params_to_json(c.augment)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c)
{
    if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
    if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    if (j.contains("initial_lr")) j.at("initial_lr").get_to(c.initial_lr);
    if (j.contains("scheduler") && j.at("scheduler").get<std::string>() != "cosine")
        fail(ErrorCode::ConfigInvalid, "only the cosine scheduler is supported");
    if (j.contains("lr_decay")) j.at("lr_decay").get_to(c.lr_decay);
    if (j.contains("decay_mode")) {
        const auto mode = j.at("decay_mode").get<std::string>();
        if (mode == "cosine_floor") c.decay_mode = DecayMode::CosineFloor;
        else if (mode == "step") c.decay_mode = DecayMode::Step;
        else fail(ErrorCode::ConfigInvalid, "decay_mode must be cosine_floor or step");
    }
    if (j.contains("lr_step_epochs")) j.at("lr_step_epochs").get_to(c.lr_step_epochs);
    if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
    if (j.contains("augmentations")) j.at("augmentations").get_to(c.augmentations);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("temperature")) j.at("temperature").get_to(c.temperature);
    if (j.contains("loss_weights")) {
        const auto& w = j.at("loss_weights");
        if (w.contains("shared")) w.at("shared").get_to(c.loss_weights.shared);
        if (w.contains("private")) w.at("private").get_to(c.loss_weights.private_);
        if (w.contains("orth")) w.at("orth").get_to(c.loss_weights.orth);
    }
    if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
    if (j.contains("patience")) j.at("patience").get_to(c.patience);
    if (j.contains("augment")) c.augment = augment_params_from_json(j.at("augment"), c.augment);
    return c;
}

nlohmann::json norm_stats_to_json(const NormStats& stats)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, m] : stats.modalities) {
        auto planes = [](const std::vector<PlaneStats>& v) {
            auto arr = nlohmann::json::array();
            for (const auto& p : v) arr.push_back({p.mean, p.std});
            return arr;
        };
        j[name] = {{"re", planes(m.re)}, {"im", planes(m.im)}};
    }
    return j;
}

NormStats norm_stats_from_json(const nlohmann::json& j)
{
    NormStats stats;
    for (const auto& [name, m] : j.items()) {
        auto planes = [](const nlohmann::json& arr) {
            std::vector<PlaneStats> v;
            for (const auto& p : arr) v.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            return v;
        };
        stats.modalities[name] = {planes(m.at("re")), planes(m.at("im"))};
    }
    return stats;
}

std::string config_hash(const TrainConfig& train, const EncoderConfig& encoder)
{
    const nlohmann::json j{{"train", train_config_to_json(train)}, {"encoder", encoder}};
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(j.dump()));
    return buf;
}

// ---------------------------------------------------------------------------

double cosine_lr(int epoch, const TrainConfig& config)
{
    if (epoch < 0 || epoch >= config.epochs)
        fail(ErrorCode::EpochOutOfRange, "epoch " + std::to_string(epoch) + " outside [0, " +
                                             std::to_string(config.epochs) + ")");
    const double lr0 = config.initial_lr;
    if (config.decay_mode == DecayMode::Step) {
        const int step = config.lr_step_epochs > 0 ? config.lr_step_epochs : std::max(1, config.epochs / 3);
        return lr0 * std::pow(config.lr_decay, epoch / step);
    }
    if (config.epochs == 1) return lr0;
    const double lr_min = lr0 * config.lr_decay;
    const double t = static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<NamedParam> params, double weight_decay)
    : kind_(kind), params_(std::move(params)), weight_decay_(weight_decay)
{
    for (const auto& p : params_) {
        m_.emplace_back(p.var.size(), 0.0);
        v_.emplace_back(p.var.size(), 0.0);
    }
}

void Optimizer::step(double lr)
{
    ++steps_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& value = params_[i].var.mutable_value().data;
        const auto grad = params_[i].var.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        const double decay = kind_ == OptimizerKind::AdamW ? lr * weight_decay_ : 0.0;
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double g = grad[k];
            m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g;
            v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g * g;
            value[k] -= decay * value[k];
            value[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
        }
    }
}

void Optimizer::zero_grad()
{
    for (auto& p : params_) p.var.zero_grad();
}

// ---------------------------------------------------------------------------
// data plumbing

std::vector<Spectrogram> clean_spectrograms(const Segment& segment, std::span<const ModalitySpec> specs)
{
    std::vector<Spectrogram> out;
    out.reserve(specs.size());
    for (const auto& spec : specs) out.push_back(interval_stft(segment.at(spec.name), spec));
    return out;
}

NormStats compute_norm_stats(std::span<const Segment> segments, std::span<const ModalitySpec> specs)
{
    if (segments.empty()) fail(ErrorCode::EmptyDataset, "no segments for normalization statistics");
    std::vector<std::vector<Spectrogram>> all;
    all.reserve(segments.size());
    for (const auto& s : segments) all.push_back(clean_spectrograms(s, specs));
    return compute_norm_stats(std::span<const std::vector<Spectrogram>>(all));
}

namespace {

std::vector<Spectrogram> normalized(std::vector<Spectrogram> specs, const NormStats& norm)
{
    for (auto& s : specs) s = normalize(s, norm);
    return specs;
}

std::vector<Tensor> pack(const std::vector<std::vector<Spectrogram>>& samples, std::span<const ModalitySpec> specs)
{
    std::vector<const std::vector<Spectrogram>*> ptrs;
    ptrs.reserve(samples.size());
    for (const auto& s : samples) ptrs.push_back(&s);
    return pack_batch(ptrs, specs);
}

// One augmented, normalized view of a segment (time ops, STFT, frequency ops).
std::vector<Spectrogram> augmented_view(const Segment& seg, std::span<const ModalitySpec> specs,
                                        const AugmentationPlan* plan, Rng& rng, const NormStats& norm)
{
    std::vector<Spectrogram> out;
    out.reserve(specs.size());
    for (const auto& spec : specs) {
        const Signal& raw = seg.at(spec.name);
        Spectrogram s = plan ? interval_stft(apply_time_ops(raw, *plan, rng), spec) : interval_stft(raw, spec);
        if (plan) s = apply_freq_ops(s, *plan, rng);
        out.push_back(normalize(s, norm));
    }
    return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    return order;
}

int label_of(const Segment& s)
{
    if (!s.label) fail(ErrorCode::InvalidArgument, "segment of run '" + s.run_id + "' has no label");
    return *s.label;
}

void check_labels(std::span<const Segment> data, int num_classes, bool need_two)
{
    std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
    for (const auto& s : data) {
        const int y = label_of(s);
        if (y < 0 || y >= num_classes)
            fail(ErrorCode::InvalidArgument, "label " + std::to_string(y) + " outside [0, " +
                                                 std::to_string(num_classes) + ")");
        seen[static_cast<std::size_t>(y)] = 1;
    }
    if (need_two && std::accumulate(seen.begin(), seen.end(), 0) < 2)
        fail(ErrorCode::SingleClassDataset, "training data holds a single class");
}

double accuracy_of(std::span<const int> pred, std::span<const Segment> data)
{
    if (data.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < data.size(); ++i) hit += pred[i] == label_of(data[i]) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(data.size());
}

std::vector<int> argmax_rows(const Var& logits)
{
    const std::size_t c = logits.shape()[1];
    std::vector<int> out(logits.shape()[0]);
    for (std::size_t r = 0; r < out.size(); ++r) {
        const double* row = logits.data().data() + r * c;
        out[r] = static_cast<int>(std::max_element(row, row + c) - row);
    }
    return out;
}

Tensor rows_of(const Tensor& t, std::size_t begin, std::size_t end)
{
    const std::size_t w = t.shape[1];
    Tensor out({end - begin, w});
    std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(begin * w),
              t.data.begin() + static_cast<std::ptrdiff_t>(end * w), out.data.begin());
    return out;
}

std::vector<Var> as_constants(std::vector<Tensor> t)
{
    std::vector<Var> out;
    for (auto& x : t) out.push_back(Var::constant(std::move(x)));
    return out;
}

void require_finite(double loss, int epoch)
{
    if (!std::isfinite(loss))
        fail(ErrorCode::Divergence, "loss became non-finite in epoch " + std::to_string(epoch) +
                                        "; parameters hold the last finite state");
}

struct Snapshot {
    std::vector<std::vector<double>> values;
};

Snapshot snapshot(const std::vector<NamedParam>& params)
{
    Snapshot s;
    for (const auto& p : params) s.values.push_back(p.var.value().data);
    return s;
}

void restore(const std::vector<NamedParam>& params, const Snapshot& s)
{
    for (std::size_t i = 0; i < params.size(); ++i) {
        nn::Var v = params[i].var;
        v.mutable_value().data = s.values[i];
    }
}

// Labeled training loop shared by the supervised and fine-tuning stages.
struct LabeledLoop {
    const TrainConfig& config;
    const TrainOptions& options;
    MultimodalModel& model;
    const NormStats& norm;
    std::span<const Segment> train;
    std::span<const Segment> val;
    Stage stage;
    bool frozen_encoder; // embeddings of clean data can be cached

    std::vector<EpochMetrics> history;
    int best_epoch = -1;
    std::optional<double> best_val;

    void run()
    {
        const auto specs = model.specs();
        const int classes = model.num_classes();
        const auto enabled = parse_augment_list(config.augmentations);
        const AugmentParams& params = config.augment;
        auto trainable = trainable_parameters(model, stage);
        set_trainable(model, stage);
        Optimizer opt(config.optimizer, trainable, config.weight_decay);

        std::vector<Tensor> train_cache, val_cache;
        if (frozen_encoder) {
            train_cache = embed(model, norm, train);
            if (!val.empty()) val_cache = embed(model, norm, val);
        }

        Snapshot best = snapshot(trainable);
        int since_best = 0;
        const std::size_t n = train.size();
        const auto batch = static_cast<std::size_t>(config.batch_size);

        for (int epoch = 0; epoch < config.epochs; ++epoch) {
            const double lr = cosine_lr(epoch, config);
            const auto order = epoch_order(n, config.seed, epoch);
            double loss_sum = 0.0;
            std::size_t loss_count = 0;

            for (std::size_t start = 0; start < n; start += batch) {
                const std::size_t end = std::min(n, start + batch);
                std::vector<std::vector<Spectrogram>> views;
                Tensor targets({end - start, static_cast<std::size_t>(classes)});
                for (std::size_t b = start; b < end; ++b) {
                    const std::size_t idx = order[b];
                    Rng rng(derive_seed(config.seed, "sample", static_cast<std::uint64_t>(epoch) * n + idx));
                    const Segment& seg = train[idx];
                    std::vector<double> soft(static_cast<std::size_t>(classes), 0.0);
                    soft[static_cast<std::size_t>(label_of(seg))] = 1.0;

                    std::optional<AugmentationPlan> plan;
                    if (!enabled.empty()) plan = sample_plan(stage, rng.engine()(), params, enabled);
                    if (plan && plan->contains(AugmentOp::Mixup) && n > 1) {
                        const auto partner_idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(n) - 1));
                        const Segment& partner = train[partner_idx];
                        std::vector<double> psoft(static_cast<std::size_t>(classes), 0.0);
                        psoft[static_cast<std::size_t>(label_of(partner))] = 1.0;
                        const double lambda = sample_mixup_lambda(rng, config.augment.mixup_alpha);
                        LabeledExample mixed = mixup({seg.modalities, soft}, {partner.modalities, psoft}, lambda);
                        Segment m = seg;
                        m.modalities = std::move(mixed.modalities);
                        soft = std::move(mixed.soft_label);
                        views.push_back(augmented_view(m, specs, &*plan, rng, norm));
                    } else {
                        views.push_back(augmented_view(seg, specs, plan ? &*plan : nullptr, rng, norm));
                    }
                    std::copy(soft.begin(), soft.end(),
                              targets.data.begin() + static_cast<std::ptrdiff_t>((b - start) * soft.size()));
                }
                auto inputs = pack(views, specs);
                auto embeddings = model.encode(inputs);
                Var loss = nn::soft_cross_entropy(model.logits(embeddings), targets);
                const double value = loss.data()[0];
                require_finite(value, epoch);
                nn::backward(loss);
                opt.step(lr);
                opt.zero_grad();
                loss_sum += value * static_cast<double>(end - start);
                loss_count += end - start;
            }

            EpochMetrics m;
            m.epoch = epoch;
            m.stage = stage;
            m.lr = lr;
            m.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_count, 1));
            const auto train_pred =
                frozen_encoder ? predict_from_embeddings(model, train_cache) : predict(model, norm, train);
            m.train_acc = accuracy_of(train_pred, train);
            if (!val.empty()) {
                const auto val_pred = frozen_encoder ? predict_from_embeddings(model, val_cache) : predict(model, norm, val);
                m.val_acc = accuracy_of(val_pred, val);
            }
            history.push_back(m);
            if (options.on_epoch) options.on_epoch(m);

            const double score = m.val_acc.value_or(*m.train_acc);
            if (!best_val || score > *best_val) {
                best_val = score;
                best_epoch = epoch;
                best = snapshot(trainable);
                since_best = 0;
            } else if (options.early_stopping && config.patience > 0 && ++since_best >= config.patience) {
                break;
            }
        }
        restore(trainable, best);
        if (val.empty()) best_val.reset();
        set_trainable(model, stage);
    }
};

} // namespace

std::vector<Tensor> embed(const MultimodalModel& model, const NormStats& norm, std::span<const Segment> segments,
                          std::size_t batch_size)
{
    const auto& specs = model.specs();
    std::vector<Tensor> out;
    const auto d = static_cast<std::size_t>(model.config().embedding_dim);
    for (std::size_t m = 0; m < specs.size(); ++m) out.emplace_back(nn::Shape{segments.size(), d});
    // Inference only: no parameter may record a graph here.
    std::vector<std::pair<NamedParam, bool>> flags;
    for (auto& p : model.encoder_parameters()) {
        flags.emplace_back(p, p.var.requires_grad());
        p.var.set_requires_grad(false);
    }
    for (std::size_t start = 0; start < segments.size(); start += batch_size) {
        const std::size_t end = std::min(segments.size(), start + batch_size);
        std::vector<std::vector<Spectrogram>> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(normalized(clean_spectrograms(segments[i], specs), norm));
        auto emb = model.encode(pack(batch, specs));
        for (std::size_t m = 0; m < emb.size(); ++m)
            std::copy(emb[m].data().begin(), emb[m].data().end(),
                      out[m].data.begin() + static_cast<std::ptrdiff_t>(start * d));
    }
    for (auto& [p, on] : flags) p.var.set_requires_grad(on);
    return out;
}

std::vector<int> predict_from_embeddings(const MultimodalModel& model, std::span<const Tensor> embeddings)
{
    return argmax_rows(model.logits(as_constants({embeddings.begin(), embeddings.end()})));
}

std::vector<int> predict(const MultimodalModel& model, const NormStats& norm, std::span<const Segment> segments,
                         std::size_t batch_size)
{
    if (segments.empty()) return {};
    auto emb = embed(model, norm, segments, batch_size);
    return predict_from_embeddings(model, emb);
}

// ---------------------------------------------------------------------------

TrainResult pretrain(std::span<const Segment> data, const TrainConfig& config, const EncoderConfig& encoder,
                     std::span<const ModalitySpec> specs, const TrainOptions& options)
{
    if (config.stage != Stage::Pretrain) fail(ErrorCode::StageMismatch, "pretrain needs a PRETRAIN config");
    config.validate();
    if (data.empty()) fail(ErrorCode::EmptyDataset, "no segments to pretrain on");
    for (const auto& s : data) validate_segment(s, specs);

    NormStats norm = compute_norm_stats(data, specs);
    MultimodalModel model(encoder, {specs.begin(), specs.end()}, HeadKind::LinearProbe, kDefaultNumClasses);
    set_trainable(model, Stage::Pretrain);
    auto trainable = trainable_parameters(model, Stage::Pretrain);
    Optimizer opt(config.optimizer, trainable, config.weight_decay);

    const auto enabled = parse_augment_list(config.augmentations);
    const AugmentParams& params = config.augment;
    const std::size_t n = data.size();
    const auto batch = static_cast<std::size_t>(config.batch_size);
    std::vector<EpochMetrics> history;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, config);
        const auto order = epoch_order(n, config.seed, epoch);
        LossBreakdown sum;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(n, start + batch);
            const std::size_t b = end - start;
            if (b < 2) continue; // a single pair has no negatives
            std::vector<std::vector<Spectrogram>> views(2 * b);
            for (std::size_t v = 0; v < 2; ++v)
                for (std::size_t i = 0; i < b; ++i) {
                    const std::size_t idx = order[start + i];
                    Rng rng(derive_seed(config.seed, v == 0 ? "view1" : "view2",
                                        static_cast<std::uint64_t>(epoch) * n + idx));
                    std::optional<AugmentationPlan> plan;
                    if (!enabled.empty()) plan = sample_plan(Stage::Pretrain, rng.engine()(), params, enabled);
                    views[v * b + i] = augmented_view(data[idx], specs, plan ? &*plan : nullptr, rng, norm);
                }
            auto embeddings = model.encode(pack(views, specs));

            FocalViews fv;
            fv.shared_dim = static_cast<std::size_t>(encoder.shared_dim);
            for (const auto& e : embeddings) {
                fv.view1.push_back(rows_of(e.value(), 0, b));
                fv.view2.push_back(rows_of(e.value(), b, 2 * b));
            }
            FocalGradients grads;
            const LossBreakdown loss = focal_loss(fv, config, &grads);
            require_finite(loss.total, epoch);

            std::vector<std::pair<Var, std::vector<double>>> seeds;
            for (std::size_t m = 0; m < embeddings.size(); ++m) {
                std::vector<double> g = grads.view1[m].data;
                g.insert(g.end(), grads.view2[m].data.begin(), grads.view2[m].data.end());
                seeds.emplace_back(embeddings[m], std::move(g));
            }
            nn::backward(seeds);
            opt.step(lr);
            opt.zero_grad();

            const auto w = static_cast<double>(b);
            sum.total += loss.total * w;
            sum.shared_term += loss.shared_term * w;
            sum.private_term += loss.private_term * w;
            sum.orth_term += loss.orth_term * w;
            seen += b;
        }
        if (seen == 0) fail(ErrorCode::EmptyDataset, "batches of one sample cannot be contrasted");
        const auto count = static_cast<double>(seen);
        EpochMetrics m;
        m.epoch = epoch;
        m.stage = Stage::Pretrain;
        m.lr = lr;
        m.train_loss = sum.total / count;
        m.shared = sum.shared_term / count;
        m.private_ = sum.private_term / count;
        m.orth = sum.orth_term / count;
        history.push_back(m);
        if (options.on_epoch) options.on_epoch(m);
    }

    TrainResult result{std::move(model), std::move(norm), Stage::Pretrain, config, std::move(history), config.epochs - 1,
                       std::nullopt, config_hash(config, encoder)};
    return result;
}

TrainResult train_supervised(std::span<const Segment> train, std::span<const Segment> val, const TrainConfig& config,
                             const EncoderConfig& encoder, std::span<const ModalitySpec> specs, int num_classes,
                             const TrainOptions& options)
{
    if (config.stage != Stage::Supervised) fail(ErrorCode::StageMismatch, "train_supervised needs a SUPERVISED config");
    config.validate();
    if (train.empty()) fail(ErrorCode::EmptyDataset, "no labeled segments to train on");
    for (const auto& s : train) validate_segment(s, specs);
    check_labels(train, num_classes, true);
    check_labels(val, num_classes, false);

    NormStats norm = compute_norm_stats(train, specs);
    MultimodalModel model(encoder, {specs.begin(), specs.end()}, HeadKind::SupervisedFusion, num_classes);
    model.reset_head(HeadKind::SupervisedFusion, derive_seed(encoder.seed, "head", options.head_seed));
    LabeledLoop loop{config, options, model, norm, train, val, Stage::Supervised, false, {}, -1, {}};
    loop.run();
    return {std::move(model), std::move(norm), Stage::Supervised, config, std::move(loop.history), loop.best_epoch,
            loop.best_val, config_hash(config, encoder)};
}

TrainResult finetune_linear(const TrainResult& pretrained, std::span<const Segment> train,
                            std::span<const Segment> val, const TrainConfig& config, int num_classes,
                            const TrainOptions& options)
{
    if (pretrained.stage != Stage::Pretrain)
        fail(ErrorCode::StageMismatch, "linear probing needs a PRETRAIN checkpoint, got " +
                                           std::string(to_string(pretrained.stage)));
    if (config.stage != Stage::Finetune) fail(ErrorCode::StageMismatch, "finetune_linear needs a FINETUNE config");
    config.validate();
    if (train.empty()) fail(ErrorCode::EmptySubset, "no labeled segments to fine-tune on");
    MultimodalModel model = pretrained.model.clone();
    check_labels(train, num_classes, false);
    check_labels(val, num_classes, false);
    model.reset_head(HeadKind::LinearProbe, derive_seed(config.seed, "probe", options.head_seed), num_classes);

    LabeledLoop loop{config, options, model, pretrained.norm, train, val, Stage::Finetune, true, {}, -1, {}};
    loop.run();
    return {std::move(model), pretrained.norm, Stage::Finetune, config, std::move(loop.history), loop.best_epoch,
            loop.best_val, config_hash(config, model.config())};
}

TrainResult finetune_supervised_baseline(const TrainResult& supervised, std::span<const Segment> train,
                                         std::span<const Segment> val, const TrainConfig& config,
                                         const TrainOptions& options)
{
    if (supervised.stage != Stage::Supervised)
        fail(ErrorCode::StageMismatch, "the fine-tune baseline needs a SUPERVISED checkpoint, got " +
                                           std::string(to_string(supervised.stage)));
    if (config.stage != Stage::SupervisedFinetune && config.stage != Stage::Finetune)
        fail(ErrorCode::StageMismatch, "the fine-tune baseline needs a fine-tuning config");
    config.validate();
    if (train.empty()) fail(ErrorCode::EmptySubset, "no labeled segments to fine-tune on");
    MultimodalModel model = supervised.model.clone();
    check_labels(train, model.num_classes(), false);
    check_labels(val, model.num_classes(), false);
    model.head().reset_output(derive_seed(config.seed, "baseline_head", options.head_seed));

    TrainConfig cfg = config;
    cfg.stage = Stage::SupervisedFinetune;
    LabeledLoop loop{cfg, options, model, supervised.norm, train, val, Stage::SupervisedFinetune, true, {}, -1, {}};
    loop.run();
    return {std::move(model), supervised.norm, Stage::SupervisedFinetune, cfg, std::move(loop.history),
            loop.best_epoch, loop.best_val, config_hash(cfg, model.config())};
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> optional_from(const nlohmann::json& j)
{
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

} // namespace

void save_run(const std::filesystem::path& path, const TrainResult& result)
{
    auto history = nlohmann::json::array();
    for (const auto& m : result.history)
        history.push_back({{"epoch", m.epoch},
                           {"stage", std::string(to_string(m.stage))},
                           {"lr", m.lr},
                           {"train_loss", m.train_loss},
                           {"train_acc", optional_json(m.train_acc)},
                           {"val_acc", optional_json(m.val_acc)},
                           {"shared", optional_json(m.shared)},
                           {"private", optional_json(m.private_)},
                           {"orth", optional_json(m.orth)}});
    CheckpointMeta meta;
    meta.stage = result.stage;
    meta.seed = result.config.seed;
    meta.extra = {{"train_config", train_config_to_json(result.config)},
                  {"norm_stats", norm_stats_to_json(result.norm)},
                  {"history", history},
                  {"best_epoch", result.best_epoch},
                  {"best_val", optional_json(result.best_val)},
                  {"config_hash", result.config_hash}};
    save_checkpoint(path, result.model, meta);
}

TrainResult load_run(const std::filesystem::path& path)
{
    LoadedCheckpoint ck = load_checkpoint(path);
    const auto& extra = ck.meta.extra;
    if (!extra.contains("train_config") || !extra.contains("norm_stats"))
        fail(ErrorCode::BadCheckpoint, path.string() + " carries no training record");
    TrainConfig cfg = train_config_from_json(extra.at("train_config"), TrainConfig::defaults(ck.meta.stage));
    std::vector<EpochMetrics> history;
    for (const auto& h : extra.value("history", nlohmann::json::array())) {
        EpochMetrics m;
        m.epoch = h.at("epoch").get<int>();
        m.stage = parse_stage(h.at("stage").get<std::string>());
        m.lr = h.at("lr").get<double>();
        m.train_loss = h.at("train_loss").get<double>();
        m.train_acc = optional_from(h.at("train_acc"));
        m.val_acc = optional_from(h.at("val_acc"));
        m.shared = optional_from(h.at("shared"));
        m.private_ = optional_from(h.at("private"));
        m.orth = optional_from(h.at("orth"));
        history.push_back(m);
    }
    return {std::move(ck.model),
            norm_stats_from_json(extra.at("norm_stats")),
            ck.meta.stage,
            cfg,
            std::move(history),
            extra.value("best_epoch", -1),
            optional_from(extra.value("best_val", nlohmann::json(nullptr))),
            extra.value("config_hash", std::string())};
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> history)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << kMetricsHeader << '\n';
    for (const auto& m : history)
        out << m.epoch << ',' << to_string(m.stage) << ',' << fmt(m.lr) << ',' << fmt(m.train_loss) << ','
            << fmt(m.train_acc) << ',' << fmt(m.val_acc) << ',' << fmt(m.shared) << ',' << fmt(m.private_) << ','
            << fmt(m.orth) << '\n';
    if (!out) fail(ErrorCode::Io, "failed writing " + path.string());
}

} // namespace vibefm
