#include "vibefm/evaluation.hpp"

#include "vibefm/error.hpp"
#include "vibefm/rng.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace vibefm {

void SplitSpec::validate() const
{
    for (double r : {train, val, test})
        if (!(r > 0.0) || !std::isfinite(r)) fail(ErrorCode::ConfigInvalid, "split ratios must be positive");
}

namespace {

struct Unit {
    std::string key;
    int label = -1;
    std::vector<std::size_t> members;
};

int require_label(const Segment& s)
{
    if (!s.label) fail(ErrorCode::InvalidArgument, "segment of run '" + s.run_id + "' is unlabeled");
    return *s.label;
}

std::vector<Unit> group_runs(std::span<const Segment> data)
{
    std::map<std::string, std::size_t> index;
    std::vector<Unit> units;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int y = require_label(data[i]);
        const std::string key = data[i].run_id.empty() ? "#" + std::to_string(i) : data[i].run_id;
        auto [it, fresh] = index.emplace(key, units.size());
        if (fresh) units.push_back({key, y, {}});
        Unit& u = units[it->second];
        if (u.label != y) fail(ErrorCode::InvalidArgument, "run '" + key + "' mixes labels");
        u.members.push_back(i);
    }
    return units;
}

// Classes shuffled independently and interleaved so that every prefix is close
// to class-proportional; the first member of each class comes first.
std::vector<std::size_t> stratified_order(const std::vector<int>& labels, Rng& rng)
{
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    struct Key {
        double position;
        int label;
        std::size_t item;
    };
    std::vector<Key> keys;
    for (auto& [label, items] : by_class) {
        rng.shuffle(items.begin(), items.end());
        const auto n = static_cast<double>(items.size());
        for (std::size_t j = 0; j < items.size(); ++j)
            keys.push_back({j == 0 ? -1.0 : (static_cast<double>(j) + 0.5) / n, label, items[j]});
    }
    std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
        return a.position != b.position ? a.position < b.position : a.label < b.label;
    });
    std::vector<std::size_t> order;
    order.reserve(keys.size());
    for (const auto& k : keys) order.push_back(k.item);
    return order;
}

std::size_t round_count(double x) { return static_cast<std::size_t>(std::llround(x)); }

} // namespace

DatasetSplit split_dataset(std::span<const Segment> dataset, const SplitSpec& spec)
{
    spec.validate();
    if (dataset.size() < 10)
        fail(ErrorCode::TooSmall, "need at least 10 segments to split, got " + std::to_string(dataset.size()));
    auto units = group_runs(dataset);
    const double total = spec.train + spec.val + spec.test;
    const std::size_t n = units.size();

    Rng rng(derive_seed(spec.seed, "split"));
    std::vector<std::size_t> order;
    if (spec.stratified) {
        std::map<int, std::size_t> per_class;
        for (const auto& u : units) ++per_class[u.label];
        for (const auto& [label, count] : per_class)
            if (count < 3)
                fail(ErrorCode::ClassUnsplittable, "class " + std::to_string(label) + " has " + std::to_string(count) +
                                                       " run(s); three are needed to reach every split");
        std::vector<int> labels;
        for (const auto& u : units) labels.push_back(u.label);
        order = stratified_order(labels, rng);
    } else {
        order.resize(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order.begin(), order.end());
    }

    const std::size_t n_test = std::max<std::size_t>(1, round_count(static_cast<double>(n) * spec.test / total));
    const std::size_t n_val = std::max<std::size_t>(1, round_count(static_cast<double>(n) * spec.val / total));
    if (n_test + n_val >= n) fail(ErrorCode::TooSmall, "too few runs to fill all three splits");

    // Test takes the front of the order, validation the next block.
    std::vector<int> assignment(n, 0);
    for (std::size_t p = 0; p < n; ++p) assignment[order[p]] = p < n_test ? 2 : (p < n_test + n_val ? 1 : 0);

    DatasetSplit out;
    std::set<int> train_classes, all_classes;
    for (std::size_t i = 0; i < dataset.size(); ++i) all_classes.insert(*dataset[i].label);
    // Emit segments in dataset order within each split.
    std::vector<int> seg_split(dataset.size());
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t m : units[u].members) seg_split[m] = assignment[u];
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto& dst = seg_split[i] == 0 ? out.train : (seg_split[i] == 1 ? out.val : out.test);
        dst.push_back(dataset[i]);
        if (seg_split[i] == 0) train_classes.insert(*dataset[i].label);
    }
    if (spec.stratified && train_classes != all_classes)
        fail(ErrorCode::ClassUnsplittable, "a class has no run left for training");
    return out;
}

std::vector<Segment> subsample_labels(std::span<const Segment> train, double ratio, std::uint64_t seed)
{
    if (!(ratio > 0.0 && ratio <= 1.0))
        fail(ErrorCode::RatioOutOfRange, "label ratio must lie in (0, 1], got " + std::to_string(ratio));
    if (train.empty()) fail(ErrorCode::EmptySubset, "nothing to subsample");
    std::vector<int> labels;
    labels.reserve(train.size());
    for (const auto& s : train) labels.push_back(require_label(s));
    const std::size_t classes = std::set<int>(labels.begin(), labels.end()).size();
    Rng rng(derive_seed(seed, "labels"));
    const auto order = stratified_order(labels, rng);
    const std::size_t k =
        std::min(train.size(), std::max(classes, round_count(ratio * static_cast<double>(train.size()))));
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    std::vector<Segment> out;
    out.reserve(k);
    for (std::size_t i : chosen) out.push_back(train[i]);
    return out;
}

Metrics metrics(std::span<const int> predictions, std::span<const int> truth, int num_classes)
{
    if (predictions.size() != truth.size())
        fail(ErrorCode::LengthMismatch, std::to_string(predictions.size()) + " predictions for " +
                                            std::to_string(truth.size()) + " labels");
    if (truth.empty()) fail(ErrorCode::Empty, "no predictions to score");
    if (num_classes < 1) fail(ErrorCode::InvalidArgument, "num_classes must be positive");
    const auto c = static_cast<std::size_t>(num_classes);
    std::vector<std::size_t> tp(c, 0), predicted(c, 0), actual(c, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int p = predictions[i];
        const int t = truth[i];
        if (p < 0 || p >= num_classes || t < 0 || t >= num_classes)
            fail(ErrorCode::InvalidArgument, "class index outside [0, " + std::to_string(num_classes) + ")");
        ++predicted[static_cast<std::size_t>(p)];
        ++actual[static_cast<std::size_t>(t)];
        if (p == t) {
            ++correct;
            ++tp[static_cast<std::size_t>(t)];
        }
    }
    double f1_sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        // F1 = 2TP / (predicted + actual), and 0 when both are empty.
        const std::size_t denom = predicted[k] + actual[k];
        if (denom > 0) f1_sum += 2.0 * static_cast<double>(tp[k]) / static_cast<double>(denom);
    }
    return {static_cast<double>(correct) / static_cast<double>(truth.size()), f1_sum / static_cast<double>(c)};
}

std::vector<int> labels_of(std::span<const Segment> segments)
{
    std::vector<int> out;
    out.reserve(segments.size());
    for (const auto& s : segments) out.push_back(require_label(s));
    return out;
}

ConvergenceCurve record_convergence(std::string cell, std::span<const EpochMetrics> history, int first_n_epochs)
{
    ConvergenceCurve curve{std::move(cell), {}};
    for (const auto& m : history) {
        if (m.epoch >= first_n_epochs) break;
        curve.points.push_back({m.epoch, m.train_acc.value_or(0.0), m.val_acc.value_or(0.0)});
    }
    return curve;
}

int epochs_to_fraction(const ConvergenceCurve& curve, double fraction)
{
    if (curve.points.empty()) fail(ErrorCode::Empty, "empty convergence curve");
    const double target = fraction * curve.points.back().train_accuracy;
    for (const auto& p : curve.points)
        if (p.train_accuracy >= target) return p.epoch;
    return curve.points.back().epoch;
}

// ---------------------------------------------------------------------------
// grid

void GridSpec::validate() const
{
    if (frameworks.empty() || encoders.empty() || ratios.empty() || test_domains.empty() || seeds.empty())
        fail(ErrorCode::ConfigInvalid, "grid dimensions must be non-empty");
    for (double r : ratios)
        if (!(r > 0.0 && r <= 1.0)) fail(ErrorCode::RatioOutOfRange, "label ratio must lie in (0, 1]");
    if (convergence_epochs < 1) fail(ErrorCode::ConfigInvalid, "convergence_epochs must be positive");
}

std::string cell_id(EncoderKind encoder, Framework framework, double ratio, std::uint64_t seed)
{
    char pct[32];
    std::snprintf(pct, sizeof pct, "%g", ratio * 100.0);
    return std::string(to_string(encoder)) + "_" + std::string(to_string(framework)) + "_r" + pct + "_s" +
           std::to_string(seed);
}

namespace {

struct UnitResult {
    std::vector<EvalRow> rows;
    std::vector<ConvergenceCurve> curves;
};

const std::vector<Segment>& domain_data(const DomainData& data, DomainTag tag)
{
    auto it = data.find(tag);
    if (it == data.end() || it->second.empty())
        fail(ErrorCode::MissingDomain, "no dataset for domain " + std::string(to_string(tag)));
    return it->second;
}

TrainConfig seeded(TrainConfig c, std::uint64_t seed, const char* stage)
{
    c.seed = derive_seed(seed, stage);
    return c;
}

UnitResult run_unit(const GridSpec& grid, const GridSettings& settings, const DomainData& data, EncoderKind kind,
                    std::uint64_t seed, const GridProgress& progress)
{
    auto log = [&](const std::string& msg) {
        if (progress.log) progress.log(std::string(to_string(kind)) + " s" + std::to_string(seed) + ": " + msg);
    };
    SplitSpec split_spec = settings.split;
    split_spec.seed = derive_seed(seed, "split");

    const auto train_split = split_dataset(domain_data(data, grid.train_domain), split_spec);
    std::map<DomainTag, std::vector<Segment>> tests;
    for (DomainTag d : grid.test_domains)
        tests[d] = d == grid.train_domain ? train_split.test : split_dataset(domain_data(data, d), split_spec).test;

    EncoderConfig enc = settings.encoder;
    enc.kind = kind;
    enc.seed = derive_seed(seed, "encoder");
    const auto& specs = settings.specs;

    const std::vector<Segment>& source =
        grid.pretrain_domain ? domain_data(data, *grid.pretrain_domain) : train_split.train;

    auto has = [&](Framework f) {
        return std::find(grid.frameworks.begin(), grid.frameworks.end(), f) != grid.frameworks.end();
    };

    std::optional<TrainResult> pretrained, source_model;
    if (has(Framework::Focal)) {
        log("pre-training on " + std::to_string(source.size()) + " segments");
        std::vector<Segment> unlabeled(source.begin(), source.end());
        for (auto& s : unlabeled) s.label.reset();
        pretrained = pretrain(unlabeled, seeded(settings.pretrain, seed, "pretrain"), enc, specs);
        if (progress.on_pretrained) progress.on_pretrained(std::string(to_string(kind)) + "_s" + std::to_string(seed), *pretrained);
    }
    if (has(Framework::SupervisedFinetune)) {
        log("training the supervised source model");
        TrainOptions opts;
        opts.head_seed = 1;
        source_model = train_supervised(source, {}, seeded(settings.supervised, seed, "source"), enc, specs,
                                        settings.num_classes, opts);
    }

    UnitResult out;
    for (double ratio : grid.ratios) {
        const auto labeled = subsample_labels(train_split.train, ratio, derive_seed(seed, "subsample"));
        for (Framework f : grid.frameworks) {
            const std::string cell = cell_id(kind, f, ratio, seed);
            log(cell + " on " + std::to_string(labeled.size()) + " labels");
            std::optional<TrainResult> result;
            switch (f) {
            case Framework::Supervised:
                result = train_supervised(labeled, train_split.val, seeded(settings.supervised, seed, "supervised"),
                                          enc, specs, settings.num_classes);
                break;
            case Framework::SupervisedFinetune:
                result = finetune_supervised_baseline(*source_model, labeled, train_split.val,
                                                      seeded(settings.supervised_finetune, seed, "baseline"));
                break;
            case Framework::Focal:
                result = finetune_linear(*pretrained, labeled, train_split.val,
                                         seeded(settings.finetune, seed, "finetune"), settings.num_classes);
                break;
            }
            out.curves.push_back(record_convergence(cell, result->history, grid.convergence_epochs));
            for (DomainTag d : grid.test_domains) {
                const auto& test = tests.at(d);
                const auto pred = predict(result->model, result->norm, test);
                const Metrics m = metrics(pred, labels_of(test), settings.num_classes);
                out.rows.push_back({kind, f, ratio, grid.train_domain, d, m.accuracy, m.macro_f1, seed, false});
            }
        }
    }
    return out;
}

template <class T>
std::size_t position_of(const std::vector<T>& v, const T& x)
{
    return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
}

} // namespace

void mark_best(std::vector<EvalRow>& rows)
{
    for (auto& r : rows) {
        double best = -1.0;
        for (const auto& o : rows)
            if (o.encoder == r.encoder && o.label_ratio == r.label_ratio && o.train_domain == r.train_domain &&
                o.test_domain == r.test_domain && o.seed == r.seed)
                best = std::max(best, o.accuracy);
        r.best = r.accuracy == best;
    }
}

EvalReport run_grid(const GridSpec& grid, const GridSettings& settings, const DomainData& data, int jobs,
                    const GridProgress& progress)
{
    grid.validate();
    domain_data(data, grid.train_domain);
    for (DomainTag d : grid.test_domains) domain_data(data, d);
    if (grid.pretrain_domain) domain_data(data, *grid.pretrain_domain);

    struct Job {
        EncoderKind kind;
        std::uint64_t seed;
    };
    std::vector<Job> queue;
    for (EncoderKind e : grid.encoders)
        for (std::uint64_t s : grid.seeds) queue.push_back({e, s});
    std::vector<std::optional<UnitResult>> results(queue.size());
    std::vector<std::exception_ptr> errors(queue.size());

    std::mutex log_mutex;
    GridProgress safe = progress;
    if (progress.log)
        safe.log = [&](const std::string& m) {
            std::lock_guard lock(log_mutex);
            progress.log(m);
        };
    if (progress.on_pretrained)
        safe.on_pretrained = [&](const std::string& k, const TrainResult& r) {
            std::lock_guard lock(log_mutex);
            progress.on_pretrained(k, r);
        };

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < queue.size(); i = next++) {
            try {
                results[i] = run_unit(grid, settings, data, queue[i].kind, queue[i].seed, safe);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto threads = static_cast<std::size_t>(std::clamp(jobs, 1, static_cast<int>(queue.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    EvalReport report;
    for (auto& r : results) {
        report.rows.insert(report.rows.end(), r->rows.begin(), r->rows.end());
        report.curves.insert(report.curves.end(), r->curves.begin(), r->curves.end());
    }
    auto rank = [&](const EvalRow& r) {
        return std::make_tuple(position_of(grid.encoders, r.encoder), position_of(grid.frameworks, r.framework),
                               position_of(grid.ratios, r.label_ratio), position_of(grid.test_domains, r.test_domain),
                               position_of(grid.seeds, r.seed));
    };
    std::stable_sort(report.rows.begin(), report.rows.end(),
                     [&](const EvalRow& a, const EvalRow& b) { return rank(a) < rank(b); });
    std::sort(report.curves.begin(), report.curves.end(),
              [](const ConvergenceCurve& a, const ConvergenceCurve& b) { return a.cell < b.cell; });
    mark_best(report.rows);
    return report;
}

// ---------------------------------------------------------------------------
// report files

namespace {

std::string g17(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string f4(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s)
{
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorCode::Io, "failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string curve_csv(const ConvergenceCurve& c)
{
    std::string out = "epoch,train_accuracy,eval_accuracy\n";
    for (const auto& p : c.points)
        out += std::to_string(p.epoch) + "," + g17(p.train_accuracy) + "," + g17(p.eval_accuracy) + "\n";
    return out;
}

ConvergenceCurve parse_curve(std::string cell, const std::string& text)
{
    ConvergenceCurve c{std::move(cell), {}};
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 3) fail(ErrorCode::Io, "malformed convergence line: " + line);
        c.points.push_back({std::stoi(f[0]), parse_double(f[1]), parse_double(f[2])});
    }
    return c;
}

} // namespace

std::string report_csv(std::span<const EvalRow> rows)
{
    std::string out(kGridHeader);
    out += '\n';
    for (const auto& r : rows)
        out += std::string(to_string(r.encoder)) + "," + std::string(to_string(r.framework)) + "," +
               g17(r.label_ratio) + "," + std::string(to_string(r.train_domain)) + "," +
               std::string(to_string(r.test_domain)) + "," + g17(r.accuracy) + "," + g17(r.macro_f1) + "," +
               std::to_string(r.seed) + "," + (r.best ? "true" : "false") + "\n";
    return out;
}

std::vector<EvalRow> parse_report_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kGridHeader) fail(ErrorCode::Io, "grid CSV header mismatch");
    std::vector<EvalRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 9) fail(ErrorCode::Io, "malformed grid line: " + line);
        try {
            EvalRow r;
            r.encoder = parse_encoder_kind(f[0]);
            r.framework = parse_framework(f[1]);
            r.label_ratio = parse_double(f[2]);
            r.train_domain = parse_domain_tag(f[3]);
            r.test_domain = parse_domain_tag(f[4]);
            r.accuracy = parse_double(f[5]);
            r.macro_f1 = parse_double(f[6]);
            r.seed = std::stoull(f[7]);
            if (f[8] != "true" && f[8] != "false") throw std::invalid_argument(f[8]);
            r.best = f[8] == "true";
            rows.push_back(r);
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            fail(ErrorCode::Io, "malformed grid line: " + line);
        }
    }
    return rows;
}

std::string report_markdown(const EvalReport& report)
{
    std::vector<EncoderKind> encoders;
    std::vector<Framework> frameworks;
    std::vector<std::pair<DomainTag, DomainTag>> domains;
    std::set<double> ratio_set;
    for (const auto& r : report.rows) {
        if (std::find(encoders.begin(), encoders.end(), r.encoder) == encoders.end()) encoders.push_back(r.encoder);
        if (std::find(frameworks.begin(), frameworks.end(), r.framework) == frameworks.end())
            frameworks.push_back(r.framework);
        const std::pair<DomainTag, DomainTag> d{r.train_domain, r.test_domain};
        if (std::find(domains.begin(), domains.end(), d) == domains.end()) domains.push_back(d);
        ratio_set.insert(r.label_ratio);
    }
    const std::vector<double> ratios(ratio_set.rbegin(), ratio_set.rend()); // 100%, 50%, 10%, 1%

    std::ostringstream md;
    md << "# Evaluation grid\n\nMedian over seeds. Bold marks the best framework per encoder and column.\n";
    for (const auto& [train_d, test_d] : domains) {
        md << "\n## Train " << to_string(train_d) << ", test " << to_string(test_d) << "\n\n| Encoder | Framework |";
        for (double r : ratios) {
            char pct[32];
            std::snprintf(pct, sizeof pct, "%g%%", r * 100.0);
            md << " Acc " << pct << " | F1 " << pct << " |";
        }
        md << "\n|---|---|";
        for (std::size_t i = 0; i < ratios.size(); ++i) md << "---|---|";
        md << '\n';
        for (EncoderKind e : encoders) {
            // cells[framework][ratio] = {acc, f1}, NaN when absent
            std::vector<std::vector<std::array<double, 2>>> cells(frameworks.size());
            for (std::size_t fi = 0; fi < frameworks.size(); ++fi)
                for (double r : ratios) {
                    std::vector<double> acc, f1;
                    for (const auto& row : report.rows)
                        if (row.encoder == e && row.framework == frameworks[fi] && row.label_ratio == r &&
                            row.train_domain == train_d && row.test_domain == test_d) {
                            acc.push_back(row.accuracy);
                            f1.push_back(row.macro_f1);
                        }
                    cells[fi].push_back(acc.empty() ? std::array<double, 2>{NAN, NAN}
                                                    : std::array<double, 2>{median(acc), median(f1)});
                }
            for (std::size_t fi = 0; fi < frameworks.size(); ++fi) {
                md << "| " << to_string(e) << " | " << to_string(frameworks[fi]) << " |";
                for (std::size_t ri = 0; ri < ratios.size(); ++ri)
                    for (int k = 0; k < 2; ++k) {
                        const double v = cells[fi][ri][static_cast<std::size_t>(k)];
                        if (std::isnan(v)) {
                            md << " - |";
                            continue;
                        }
                        bool best = true;
                        for (std::size_t o = 0; o < frameworks.size(); ++o)
                            if (cells[o][ri][static_cast<std::size_t>(k)] > v) best = false;
                        md << (best ? " **" + f4(v) + "** |" : " " + f4(v) + " |");
                    }
                md << '\n';
            }
        }
    }
    return md.str();
}

std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir)
{
    report.validate();
    if (report.rows.empty()) fail(ErrorCode::Empty, "report has no rows");
    std::error_code ec;
    std::filesystem::create_directories(dir / "convergence", ec);
    if (ec) fail(ErrorCode::Io, "cannot create " + (dir / "convergence").string() + ": " + ec.message());
    std::vector<std::filesystem::path> files{dir / "grid.csv", dir / "grid.md"};
    write_text(files[0], report_csv(report.rows));
    write_text(files[1], report_markdown(report));
    for (const auto& c : report.curves) {
        const auto base = dir / "convergence" / c.cell;
        files.push_back(base.string() + ".csv");
        write_text(files.back(), curve_csv(c));
        files.push_back(base.string() + ".png");
        write_convergence_png(files.back(), c);
    }
    return files;
}

EvalReport read_report(const std::filesystem::path& dir)
{
    EvalReport report;
    report.rows = parse_report_csv(read_text(dir / "grid.csv"));
    const auto conv = dir / "convergence";
    if (std::filesystem::is_directory(conv)) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(conv))
            if (entry.path().extension() == ".csv") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) report.curves.push_back(parse_curve(f.stem().string(), read_text(f)));
    }
    return report;
}

// ---------------------------------------------------------------------------
// PNG plot

namespace {

struct Canvas {
    int w, h;
    std::vector<unsigned char> rgb;

    Canvas(int width, int height) : w(width), h(height), rgb(static_cast<std::size_t>(width * height * 3), 255) {}

    void dot(int x, int y, std::array<unsigned char, 3> c)
    {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        auto* p = &rgb[static_cast<std::size_t>((y * w + x) * 3)];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }

    void line(int x0, int y0, int x1, int y1, std::array<unsigned char, 3> c, int thick = 1)
    {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            for (int a = 0; a < thick; ++a)
                for (int b = 0; b < thick; ++b) dot(x0 + a, y0 + b, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
};

} // namespace

void write_convergence_png(const std::filesystem::path& path, const ConvergenceCurve& curve)
{
    constexpr int W = 480, H = 320, L = 40, R = 15, T = 15, B = 30;
    Canvas cv(W, H);
    const std::array<unsigned char, 3> axis{0, 0, 0}, grid{220, 220, 220}, train{31, 119, 180}, eval{255, 127, 14};
    const int max_epoch = curve.points.empty() ? 1 : std::max(1, curve.points.back().epoch);
    auto px = [&](double epoch) { return L + static_cast<int>(std::lround(epoch / max_epoch * (W - L - R))); };
    auto py = [&](double acc) { return H - B - static_cast<int>(std::lround(std::clamp(acc, 0.0, 1.0) * (H - T - B))); };
    for (int k = 1; k <= 4; ++k) cv.line(L, py(k * 0.25), W - R, py(k * 0.25), grid);
    cv.line(L, H - B, W - R, H - B, axis);
    cv.line(L, T, L, H - B, axis);
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const auto& a = curve.points[i - 1];
        const auto& b = curve.points[i];
        cv.line(px(a.epoch), py(a.eval_accuracy), px(b.epoch), py(b.eval_accuracy), eval, 2);
        cv.line(px(a.epoch), py(a.train_accuracy), px(b.epoch), py(b.train_accuracy), train, 2);
    }
    if (curve.points.size() == 1) {
        cv.line(px(0), py(curve.points[0].train_accuracy), px(0) + 2, py(curve.points[0].train_accuracy), train, 2);
    }
    // legend swatches
    cv.line(W - R - 60, T + 5, W - R - 40, T + 5, train, 2);
    cv.line(W - R - 60, T + 15, W - R - 40, T + 15, eval, 2);

    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) fail(ErrorCode::Io, "cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        fail(ErrorCode::Io, "libpng failed on " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < H; ++y) png_write_row(png, &cv.rgb[static_cast<std::size_t>(y * W * 3)]);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(fp) != 0) fail(ErrorCode::Io, "failed closing " + path.string());
}

} // namespace vibefm
