#include "vibefm/cli.hpp"

#include "vibefm/config_io.hpp"
#include "vibefm/error.hpp"
#include "vibefm/rng.hpp"
#include "vibefm/training.hpp"
#include "vibefm/version.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fftw3.h>
#include <png.h>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace vibefm {

namespace {

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

json split_to_json(const SplitSpec& s)
{
    return {{"train", s.train}, {"val", s.val}, {"test", s.test}, {"seed", s.seed}, {"stratified", s.stratified}};
}

SplitSpec split_from_json(const json& j)
{
    SplitSpec s;
    j.at("train").get_to(s.train);
    j.at("val").get_to(s.val);
    j.at("test").get_to(s.test);
    j.at("seed").get_to(s.seed);
    j.at("stratified").get_to(s.stratified);
    return s;
}

json grid_to_json(const GridSpec& g)
{
    json frameworks = json::array(), encoders = json::array(), tests = json::array();
    for (auto f : g.frameworks) frameworks.push_back(std::string(to_string(f)));
    for (auto e : g.encoders) encoders.push_back(std::string(to_string(e)));
    for (auto d : g.test_domains) tests.push_back(std::string(to_string(d)));
    return {{"frameworks", frameworks},
            {"encoders", encoders},
            {"ratios", g.ratios},
            {"train_domain", std::string(to_string(g.train_domain))},
            {"test_domains", tests},
            {"pretrain_domain", g.pretrain_domain ? std::string(to_string(*g.pretrain_domain)) : std::string()},
            {"seeds", g.seeds},
            {"convergence_epochs", g.convergence_epochs}};
}

GridSpec grid_from_json(const json& j)
{
    GridSpec g;
    g.frameworks.clear();
    for (const auto& f : j.at("frameworks")) g.frameworks.push_back(parse_framework(f.get<std::string>()));
    g.encoders.clear();
    for (const auto& e : j.at("encoders")) g.encoders.push_back(parse_encoder_kind(e.get<std::string>()));
    j.at("ratios").get_to(g.ratios);
    g.train_domain = parse_domain_tag(j.at("train_domain").get<std::string>());
    g.test_domains.clear();
    for (const auto& d : j.at("test_domains")) g.test_domains.push_back(parse_domain_tag(d.get<std::string>()));
    const auto pre = j.at("pretrain_domain").get<std::string>();
    if (!pre.empty()) g.pretrain_domain = parse_domain_tag(pre);
    j.at("seeds").get_to(g.seeds);
    j.at("convergence_epochs").get_to(g.convergence_epochs);
    return g;
}

// Every key the user wrote must exist in the canonical defaults. The synth
// table is checked by its own reader, which knows about per-modality maps.
void check_keys(const json& user, const json& canonical, const std::string& path)
{
    for (const auto& [key, value] : user.items()) {
        const std::string where = path.empty() ? key : path + "." + key;
        if (!canonical.contains(key)) fail(ErrorCode::ConfigInvalid, "unknown key '" + where + "'");
        if (value.is_null()) fail(ErrorCode::ConfigInvalid, "key '" + where + "' has no value");
        if (where == "synth") continue;
        const auto& ref = canonical.at(key);
        if (ref.is_object()) {
            if (!value.is_object()) fail(ErrorCode::ConfigInvalid, "key '" + where + "' must be a table");
            check_keys(value, ref, where);
        }
    }
}

TrainConfig stage_from_json(const json& j, Stage stage, const std::string& section)
{
    TrainConfig c = train_config_from_json(j, TrainConfig::defaults(stage));
    if (c.stage != stage)
        fail(ErrorCode::ConfigInvalid, section + ".stage must be " + std::string(to_string(stage)));
    c.validate();
    return c;
}

ExperimentConfig defaults_for(std::uint64_t seed, double epoch_scale, const AugmentParams& augment)
{
    ExperimentConfig c;
    c.seed = seed;
    c.epoch_scale = epoch_scale;
    c.augment = augment;
    c.synth.seed = seed;
    c.encoder.seed = derive_seed(seed, "encoder");
    c.split.seed = derive_seed(seed, "split");
    c.grid.seeds = {seed, seed + 1, seed + 2};
    const std::pair<TrainConfig*, Stage> stages[] = {{&c.pretrain, Stage::Pretrain},
                                                     {&c.train, Stage::Supervised},
                                                     {&c.finetune, Stage::Finetune},
                                                     {&c.supervised_finetune, Stage::SupervisedFinetune}};
    for (auto [cfg, stage] : stages) {
        *cfg = TrainConfig::defaults(stage, epoch_scale);
        cfg->seed = derive_seed(seed, lower(to_string(stage)));
        cfg->augment = augment;
    }
    return c;
}

} // namespace

json experiment_to_json(const ExperimentConfig& c)
{
    return {{"seed", c.seed},
            {"epoch_scale", c.epoch_scale},
            {"output_dir", c.output_dir},
            {"data_root", c.data_root},
            {"label_ratio", c.label_ratio},
            {"checkpoint", c.checkpoint},
            {"synth", c.synth},
            {"encoder", c.encoder},
            {"augment", augment_params_to_json(c.augment)},
            {"pretrain", train_config_to_json(c.pretrain)},
            {"train", train_config_to_json(c.train)},
            {"finetune", train_config_to_json(c.finetune)},
            {"supervised_finetune", train_config_to_json(c.supervised_finetune)},
            {"split", split_to_json(c.split)},
            {"grid", grid_to_json(c.grid)}};
}

ExperimentConfig experiment_from_json(const json& user)
{
    if (!user.is_object()) fail(ErrorCode::ConfigInvalid, "configuration must be a table");
    try {
        const auto seed = user.contains("seed") ? user.at("seed").get<std::uint64_t>() : std::uint64_t{0};
        const double scale = user.contains("epoch_scale") ? user.at("epoch_scale").get<double>() : 1.0;
        if (!(scale > 0.0)) fail(ErrorCode::ConfigInvalid, "epoch_scale must be positive");

        json merged = experiment_to_json(defaults_for(seed, scale, AugmentParams{}));
        check_keys(user, merged, "");
        const AugmentParams augment =
            user.contains("augment") ? augment_params_from_json(user.at("augment"), AugmentParams{}) : AugmentParams{};
        augment.validate();
        merged = experiment_to_json(defaults_for(seed, scale, augment));
        merged.merge_patch(user);

        ExperimentConfig c;
        c.seed = seed;
        c.epoch_scale = scale;
        c.augment = augment;
        merged.at("output_dir").get_to(c.output_dir);
        merged.at("data_root").get_to(c.data_root);
        merged.at("label_ratio").get_to(c.label_ratio);
        merged.at("checkpoint").get_to(c.checkpoint);
        from_json(merged.at("synth"), c.synth);
        c.synth.validate();
        merged.at("encoder").get_to(c.encoder);
        c.encoder.validate();
        c.pretrain = stage_from_json(merged.at("pretrain"), Stage::Pretrain, "pretrain");
        c.train = stage_from_json(merged.at("train"), Stage::Supervised, "train");
        c.finetune = stage_from_json(merged.at("finetune"), Stage::Finetune, "finetune");
        c.supervised_finetune =
            stage_from_json(merged.at("supervised_finetune"), Stage::SupervisedFinetune, "supervised_finetune");
        c.split = split_from_json(merged.at("split"));
        c.split.validate();
        c.grid = grid_from_json(merged.at("grid"));
        c.grid.validate();
        if (!(c.label_ratio > 0.0 && c.label_ratio <= 1.0))
            fail(ErrorCode::ConfigInvalid, "label_ratio must lie in (0, 1]");
        if (c.output_dir.empty()) fail(ErrorCode::ConfigInvalid, "output_dir must not be empty");
        return c;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigInvalid) throw;
        fail(ErrorCode::ConfigInvalid, e.what());
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigInvalid, e.what());
    }
}

void apply_override(json& config, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        fail(ErrorCode::InvalidArgument, "--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);

    json value;
    try {
        value = parse_toml("v = " + text).at("v");
    } catch (const Error&) {
        value = text;
    }

    json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) fail(ErrorCode::InvalidArgument, "malformed key '" + key + "'");
        if (!node->is_object()) fail(ErrorCode::ConfigInvalid, "'" + key + "' descends into a non-table value");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

std::string experiment_hash(const ExperimentConfig& config)
{
    json j = experiment_to_json(config);
    j.erase("output_dir"); // where results go does not change them
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(j.dump()));
    return buf;
}

// ---------------------------------------------------------------------------

namespace {

struct Run {
    ExperimentConfig cfg;
    fs::path out;
    int jobs = 1;
    std::ostream& log;
    std::vector<fs::path> files;
    json extra = json::object();
    std::map<DomainTag, std::vector<Segment>> cache;

    const std::vector<Segment>& domain(DomainTag tag)
    {
        auto it = cache.find(tag);
        if (it != cache.end()) return it->second;
        std::vector<Segment> data;
        if (cfg.data_root.empty()) {
            log << "generating " << to_string(tag) << "\n";
            data = generate_domain(cfg.synth, tag, jobs);
        } else {
            const fs::path dir = fs::path(cfg.data_root) / std::string(to_string(tag));
            if (!fs::is_directory(dir)) fail(ErrorCode::MissingDomain, "no dataset directory " + dir.string());
            data = read_dataset(dir, cfg.synth.modalities);
        }
        return cache.emplace(tag, std::move(data)).first->second;
    }

    DatasetSplit split(DomainTag tag) { return split_dataset(domain(tag), cfg.split); }

    std::vector<Segment> labeled_subset(const std::vector<Segment>& train) const
    {
        return subsample_labels(train, cfg.label_ratio, derive_seed(cfg.seed, "labels"));
    }

    fs::path produce(const std::string& name)
    {
        files.push_back(name);
        return out / name;
    }

    TrainOptions options(const std::string& stage)
    {
        TrainOptions o;
        o.on_epoch = [this, stage](const EpochMetrics& m) {
            log << stage << " epoch " << m.epoch << " loss " << m.train_loss;
            if (m.train_acc) log << " train_acc " << *m.train_acc;
            if (m.val_acc) log << " val_acc " << *m.val_acc;
            if (m.orth) log << " orth " << *m.orth;
            log << "\n";
        };
        return o;
    }

    fs::path checkpoint_or(const std::string& fallback) const
    {
        const fs::path p = cfg.checkpoint.empty() ? out / fallback : fs::path(cfg.checkpoint);
        if (!fs::exists(p)) fail(ErrorCode::Io, "checkpoint " + p.string() + " does not exist");
        return p;
    }
};

std::vector<DomainTag> grid_domains(const GridSpec& g)
{
    std::vector<DomainTag> tags{g.train_domain};
    tags.insert(tags.end(), g.test_domains.begin(), g.test_domains.end());
    if (g.pretrain_domain) tags.push_back(*g.pretrain_domain);
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    return tags;
}

void cmd_synth(Run& run)
{
    json probes = json::object();
    for (DomainTag tag : grid_domains(run.cfg.grid)) {
        const auto data = generate_domain(run.cfg.synth, tag, run.jobs);
        const std::string name = "data/" + std::string(to_string(tag));
        write_dataset(run.produce(name), data, run.cfg.synth.modalities);
        if (tag != DomainTag::ModUnlabeled) {
            const double p = separability_probe(data, run.cfg.synth.modalities);
            probes[std::string(to_string(tag))] = p;
            run.log << to_string(tag) << ": " << data.size() << " segments, probe " << p << "\n";
        }
    }
    write_synth_spec(run.produce("data/synth.toml"), run.cfg.synth);
    run.extra["separability_probe"] = probes;
}

void cmd_pretrain(Run& run)
{
    const auto& g = run.cfg.grid;
    std::vector<Segment> source = g.pretrain_domain ? run.domain(*g.pretrain_domain) : run.split(g.train_domain).train;
    for (auto& s : source) s.label.reset();
    const auto result = pretrain(source, run.cfg.pretrain, run.cfg.encoder, run.cfg.synth.modalities, run.options("pretrain"));
    save_run(run.produce("pretrain.ckpt"), result);
    write_metrics_csv(run.produce("pretrain_metrics.csv"), result.history);
}

void cmd_train(Run& run)
{
    const auto split = run.split(run.cfg.grid.train_domain);
    const auto subset = run.labeled_subset(split.train);
    const auto result = train_supervised(subset, split.val, run.cfg.train, run.cfg.encoder, run.cfg.synth.modalities,
                                         run.cfg.synth.num_classes, run.options("train"));
    save_run(run.produce("train.ckpt"), result);
    write_metrics_csv(run.produce("train_metrics.csv"), result.history);
}

void cmd_finetune(Run& run)
{
    const auto base = load_run(run.checkpoint_or("pretrain.ckpt"));
    const auto split = run.split(run.cfg.grid.train_domain);
    const auto subset = run.labeled_subset(split.train);
    if (base.stage != Stage::Pretrain && base.stage != Stage::Supervised)
        fail(ErrorCode::StageMismatch, "finetune needs a PRETRAIN or SUPERVISED checkpoint, got " +
                                           std::string(to_string(base.stage)));
    const TrainResult result =
        base.stage == Stage::Pretrain
            ? finetune_linear(base, subset, split.val, run.cfg.finetune, run.cfg.synth.num_classes,
                              run.options("finetune"))
            : finetune_supervised_baseline(base, subset, split.val, run.cfg.supervised_finetune,
                                           run.options("supervised_finetune"));
    save_run(run.produce("finetune.ckpt"), result);
    write_metrics_csv(run.produce("finetune_metrics.csv"), result.history);
}

void cmd_evaluate(Run& run, std::ostream& out)
{
    const auto model = load_run(run.checkpoint_or("finetune.ckpt"));
    if (model.stage == Stage::Pretrain)
        fail(ErrorCode::StageMismatch, "a PRETRAIN checkpoint has no trained classifier; run finetune first");
    std::ostringstream csv;
    csv << "test_domain,accuracy,macro_f1,segments\n";
    for (DomainTag tag : run.cfg.grid.test_domains) {
        const auto test = run.split(tag).test;
        const auto pred = predict(model.model, model.norm, test);
        const auto truth = labels_of(test);
        const Metrics m = metrics(pred, truth, run.cfg.synth.num_classes);
        char line[160];
        std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%zu\n", std::string(to_string(tag)).c_str(), m.accuracy,
                      m.macro_f1, test.size());
        csv << line;
    }
    std::ofstream f(run.produce("evaluation.csv"), std::ios::binary);
    f << csv.str();
    if (!f) fail(ErrorCode::Io, "cannot write evaluation.csv");
    out << csv.str();
}

void cmd_grid(Run& run, std::ostream& out)
{
    DomainData data;
    for (DomainTag tag : grid_domains(run.cfg.grid)) data.emplace(tag, run.domain(tag));
    GridSettings settings;
    settings.encoder = run.cfg.encoder;
    settings.specs = run.cfg.synth.modalities;
    settings.num_classes = run.cfg.synth.num_classes;
    settings.pretrain = run.cfg.pretrain;
    settings.supervised = run.cfg.train;
    settings.finetune = run.cfg.finetune;
    settings.supervised_finetune = run.cfg.supervised_finetune;
    settings.split = run.cfg.split;

    std::mutex mu;
    GridProgress progress;
    progress.log = [&](const std::string& line) {
        std::lock_guard lock(mu);
        run.log << line << "\n";
    };
    progress.on_pretrained = [&](const std::string& key, const TrainResult& r) {
        std::lock_guard lock(mu);
        fs::create_directories(run.out / "pretrain");
        write_metrics_csv(run.produce("pretrain/" + key + "_metrics.csv"), r.history);
    };
    const EvalReport report = run_grid(run.cfg.grid, settings, data, run.jobs, progress);
    for (const auto& p : emit_report(report, run.out)) run.files.push_back(fs::relative(p, run.out));
    out << report_markdown(report);
}

void cmd_report(Run& run, std::ostream& out)
{
    const EvalReport report = read_report(run.out);
    for (const auto& p : emit_report(report, run.out)) run.files.push_back(fs::relative(p, run.out));
    out << report_markdown(report);
}

json versions()
{
    char eigen[32];
    std::snprintf(eigen, sizeof eigen, "%d.%d.%d", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION);
    char nl[32];
    std::snprintf(nl, sizeof nl, "%d.%d.%d", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                  NLOHMANN_JSON_VERSION_PATCH);
    return {{"vibefm", std::string(kVersion)},
            {"checkpoint_format", kCheckpointFormat},
            {"eigen", std::string(eigen)},
            {"fftw", std::string(fftw_version)},
            {"libpng", std::string(PNG_LIBPNG_VER_STRING)},
            {"nlohmann_json", std::string(nl)},
            {"cli11", std::string(CLI11_VERSION)},
            {"compiler", std::string(__VERSION__)}};
}

void write_manifest(const Run& run, const std::string& command)
{
    const fs::path path = run.out / "manifest.json";
    json manifest = json::object();
    if (fs::exists(path)) {
        std::ifstream in(path);
        manifest = json::parse(in, nullptr, false);
        if (!manifest.is_object() || !manifest.contains("commands")) manifest = json::object();
    }
    std::vector<std::string> files;
    for (const auto& f : run.files) files.push_back(f.generic_string());
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    json entry{{"config_hash", experiment_hash(run.cfg)},
               {"seed", run.cfg.seed},
               {"versions", versions()},
               {"config", experiment_to_json(run.cfg)},
               {"files", files}};
    for (const auto& [k, v] : run.extra.items()) entry[k] = v;
    manifest["commands"][command] = entry;
    std::ofstream out(path, std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
}

const std::vector<std::pair<std::string, std::string>>& subcommands()
{
    static const std::vector<std::pair<std::string, std::string>> list{
        {"synth", "generate the synthetic domains to <output_dir>/data"},
        {"pretrain", "self-supervised focal pre-training"},
        {"train", "end-to-end supervised training"},
        {"finetune", "linear probe on a pretrained model, or last-layer fine-tune of a supervised one"},
        {"evaluate", "accuracy and macro-F1 of a trained model on each test domain"},
        {"grid", "the full framework x encoder x ratio x seed grid with reports"},
        {"report", "re-render grid.md and convergence plots from grid.csv"},
    };
    return list;
}

} // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Multimodal vibration sensing with factorized contrastive pre-training", "vibefm"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", std::string(kVersion));
    std::string config_path;
    std::vector<std::string> sets;
    int jobs = 1;
    for (const auto& [name, help] : subcommands()) {
        auto* sc = app.add_subcommand(name, help);
        sc->add_option("--config", config_path, "experiment config (.toml, or .json)")->required();
        sc->add_option("--set", sets, "override a config key, e.g. --set train.seed=7 (repeatable)")
            ->expected(1)
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        sc->add_option("--jobs", jobs, "parallel workers (grid cells, data synthesis)")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? e.what() : app.help()) << "\n";
            return exit_code::ok;
        }
        err << "vibefm: " << e.what() << "\n\n";
        auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return exit_code::bad_arguments;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    if (!fs::is_regular_file(config_path)) {
        err << "vibefm: config file '" << config_path << "' not found\n\n" << app.get_subcommands().front()->help();
        return exit_code::bad_arguments;
    }

    std::optional<ExperimentConfig> cfg;
    try {
        json user = load_config_file(config_path);
        for (const auto& s : sets) {
            try {
                apply_override(user, s);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::InvalidArgument) throw;
                err << "vibefm: " << e.what() << "\n";
                return exit_code::bad_arguments;
            }
        }
        cfg = experiment_from_json(user);
        if (const char* env = std::getenv("VIBEFM_OUT"); env && *env) cfg->output_dir = env;
    } catch (const std::exception& e) {
        err << "vibefm: invalid config: " << e.what() << "\n";
        return exit_code::config_invalid;
    }

    try {
        Run run{*cfg, fs::path(cfg->output_dir), jobs, err, {}, json::object(), {}};
        fs::create_directories(run.out);
        if (command == "synth") cmd_synth(run);
        else if (command == "pretrain") cmd_pretrain(run);
        else if (command == "train") cmd_train(run);
        else if (command == "finetune") cmd_finetune(run);
        else if (command == "evaluate") cmd_evaluate(run, out);
        else if (command == "grid") cmd_grid(run, out);
        else cmd_report(run, out);
        write_manifest(run, command);
    } catch (const std::exception& e) {
        err << "vibefm: " << command << " failed: " << e.what() << "\n";
        return exit_code::runtime_failure;
    }
    return exit_code::ok;
}

} // namespace vibefm
