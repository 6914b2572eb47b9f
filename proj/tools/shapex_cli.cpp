// shapex command-line driver: gen, train-blackbox, train-shapelets, explain,
// eval-saliency, eval-occlusion, plot.
//
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include "shapex/attribution.hpp"
#include "shapex/core.hpp"
#include "shapex/error.hpp"
#include "shapex/eval.hpp"
#include "shapex/model.hpp"
#include "shapex/sdd.hpp"
#include "shapex/svg.hpp"
#include "shapex/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <type_traits>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Options of one subcommand. Each knob is a CLI flag and, under the same name
// with '_' for '-', a key of the --config JSON file. Flags win over the file,
// the file wins over the built-in default.
class Knobs {
public:
    explicit Knobs(CLI::App* app) : app_(app) {
        app_->add_option("--config", config_path_, "JSON file with default values for any option below");
    }

    template <typename T>
    CLI::Option* add(const std::string& flag, T& var, const std::string& help) {
        CLI::Option* opt = nullptr;
        if constexpr (std::is_same_v<T, bool>) {
            opt = app_->add_flag("--" + flag, var, help);
        } else {
            opt = app_->add_option("--" + flag, var, help)->capture_default_str();
        }
        std::string key = flag;
        for (auto& c : key) c = c == '-' ? '_' : c;
        apply_.push_back([opt, &var, key](const json& cfg) {
            if (opt->count() == 0 && cfg.contains(key)) {
                try {
                    var = cfg.at(key).get<T>();
                } catch (const json::exception&) {
                    throw shapex::ConfigError("config key '" + key + "' has the wrong type");
                }
            }
        });
        dump_.push_back([&var, key](json& out) { out[key] = var; });
        return opt;
    }

    // Loads --config, applies it under the flags, returns the resolved values.
    json resolve(const std::string& command) {
        json cfg = json::object();
        if (!config_path_.empty()) {
            std::ifstream in(config_path_);
            if (!in) throw shapex::IoError("cannot open config file " + config_path_);
            try {
                in >> cfg;
            } catch (const json::exception& e) {
                throw shapex::ParseError(config_path_ + ": " + e.what());
            }
            if (!cfg.is_object()) throw shapex::ConfigError(config_path_ + ": config must be a JSON object");
        }
        for (auto& f : apply_) f(cfg);
        json out = json::object();
        out["command"] = command;
        for (auto& f : dump_) f(out);
        return out;
    }

private:
    CLI::App* app_;
    std::string config_path_;
    std::vector<std::function<void(const json&)>> apply_;
    std::vector<std::function<void(json&)>> dump_;
};

std::uint64_t default_seed() {
    if (const char* env = std::getenv("SHAPEX_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            std::cerr << "warning: ignoring non-numeric SHAPEX_SEED\n";
        }
    }
    return 0;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw shapex::IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw shapex::IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw shapex::IoError("write failed: " + path.string());
}

shapex::Dataset load(const std::string& path) { return shapex::load_dataset(path, shapex::format_from_path(path)); }

std::vector<shapex::SaliencyMap> load_maps(const std::string& path) {
    return shapex::saliency_maps_from_csv(read_text(path));
}

void echo(const json& run) { std::cout << run.dump() << "\n"; }

const std::vector<std::string> kBaselines{"linear", "zero", "mean"};

shapex::Baseline parse_baseline(const std::string& s) {
    if (s == "zero") return shapex::Baseline::zero;
    if (s == "mean") return shapex::Baseline::mean;
    return shapex::Baseline::linear;
}

std::vector<double> parse_ratios(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw shapex::ConfigError("bad ratio '" + item + "'");
        }
    }
    if (out.empty()) throw shapex::ConfigError("no occlusion ratios given");
    return out;
}

// ---- gen -------------------------------------------------------------------

struct GenOpts {
    std::string variant = "mcc";
    std::string mode = "h";
    std::size_t length = 800;
    std::size_t n_train = 10000;
    std::size_t n_test = 2000;
    std::size_t motif_len = 40;
    std::uint64_t seed = 0;
    std::string out;
};

void setup_gen(CLI::App& app, std::function<void()>& run) {
    auto* sub = app.add_subcommand("gen", "Generate a synthetic MCC/MTC dataset (train.tsv, test.tsv)");
    auto o = std::make_shared<GenOpts>();
    o->seed = default_seed();
    auto k = std::make_shared<Knobs>(sub);
    k->add("variant", o->variant, "mcc (motif count) or mtc (motif type)")->check(CLI::IsMember({"mcc", "mtc"}));
    k->add("mode", o->mode, "e (motif peak = 1 x noise std) or h (3 x)")->check(CLI::IsMember({"e", "h"}));
    k->add("t", o->length, "series length");
    k->add("train", o->n_train, "training instances");
    k->add("test", o->n_test, "test instances");
    k->add("motif-len", o->motif_len, "motif length");
    k->add("seed", o->seed, "random seed (default: $SHAPEX_SEED or 0)");
    k->add("out", o->out, "output directory")->required();
    sub->callback([&run, sub, o, k] {
        run = [sub, o, k] {
            const auto cfg = k->resolve(sub->get_name());
            shapex::SynthConfig sc;
            sc.variant = o->variant == "mtc" ? shapex::SynthVariant::mtc : shapex::SynthVariant::mcc;
            sc.amplitude_mode = o->mode == "e" ? shapex::AmplitudeMode::equal : shapex::AmplitudeMode::high;
            sc.length = o->length;
            sc.n_train = o->n_train;
            sc.n_test = o->n_test;
            sc.motif_len = o->motif_len;
            sc.seed = o->seed;
            sc.validate();
            echo(cfg);
            const auto splits = shapex::generate(sc);
            fs::create_directories(o->out);
            shapex::save_dataset(splits.train, fs::path(o->out) / "train.tsv");
            shapex::save_dataset(splits.test, fs::path(o->out) / "test.tsv");
        };
    });
}

// ---- train-blackbox --------------------------------------------------------

struct BlackboxOpts {
    std::string train;
    std::string test;
    std::string out;
    double lr = 3e-3;
    std::size_t batch = 32;
    std::size_t epochs = 80;
    double background_masking = 0.0;
    std::uint64_t seed = 0;
};

void setup_blackbox(CLI::App& app, std::function<void()>& run) {
    auto* sub = app.add_subcommand("train-blackbox", "Train the built-in reference CNN classifier");
    auto o = std::make_shared<BlackboxOpts>();
    o->seed = default_seed();
    auto k = std::make_shared<Knobs>(sub);
    k->add("train", o->train, "training dataset (TSV/CSV)")->required();
    k->add("test", o->test, "optional test dataset; its accuracy is reported");
    k->add("out", o->out, "output model JSON")->required();
    k->add("lr", o->lr, "Adam step size");
    k->add("batch", o->batch, "mini-batch size");
    k->add("epochs", o->epochs, "training epochs");
    k->add("background-masking", o->background_masking,
           "probability of flattening random background spans of a training instance (needs ground truth)");
    k->add("seed", o->seed, "random seed (default: $SHAPEX_SEED or 0)");
    sub->callback([&run, sub, o, k] {
        run = [sub, o, k] {
            auto cfg = k->resolve(sub->get_name());
            shapex::CnnTrainConfig cc;
            cc.lr = o->lr;
            cc.batch_size = o->batch;
            cc.epochs = o->epochs;
            cc.seed = o->seed;
            cc.background_masking = o->background_masking;
            if (cc.batch_size == 0) throw shapex::ConfigError("batch size must be positive");
            echo(cfg);
            const auto train = load(o->train);
            std::optional<shapex::Dataset> test;
            if (!o->test.empty()) test = load(o->test);
            shapex::CnnTrainReport rep;
            const auto model = shapex::train_reference(train, cc, test ? &*test : nullptr, &rep);
            shapex::save_cnn(model->weights(), o->out);
            json report{{"train_accuracy", rep.train_accuracy}};
            if (test) report["test_accuracy"] = rep.test_accuracy;
            std::cout << report.dump() << "\n";
        };
    });
}

// ---- train-shapelets -------------------------------------------------------

struct ShapeletOpts {
    std::string train;
    std::string out;
    std::size_t num_shapelets = 6;
    std::size_t shapelet_len = 0;
    std::size_t patch_len = 0;
    std::size_t num_heads = 2;
    std::size_t d_model = 16;
    std::string pooling = "max";
    double lambda_match = 1.0;
    double lambda_div = 0.5;
    double delta = 0.3;
    double lr = 1e-3;
    std::size_t batch = 32;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
};

void setup_shapelets(CLI::App& app, std::function<void()>& run) {
    auto* sub = app.add_subcommand("train-shapelets", "Learn a shapelet bank (describe-and-detect training)");
    auto o = std::make_shared<ShapeletOpts>();
    o->seed = default_seed();
    auto k = std::make_shared<Knobs>(sub);
    k->add("train", o->train, "training dataset (TSV/CSV)")->required();
    k->add("out", o->out, "output bank JSON")->required();
    k->add("num-shapelets", o->num_shapelets, "N, number of shapelets");
    k->add("shapelet-len", o->shapelet_len, "L; 0 picks max(8, round(T/10)) rounded to a multiple of 4");
    k->add("patch-len", o->patch_len, "P, encoder patch length; 0 picks L/4");
    k->add("num-heads", o->num_heads, "H, encoder attention heads");
    k->add("d-model", o->d_model, "encoder width");
    k->add("pooling", o->pooling, "pooling of the activation map for the classification head")
        ->check(CLI::IsMember({"max", "mean"}));
    k->add("lambda-match", o->lambda_match, "weight of the matching loss");
    k->add("lambda-div", o->lambda_div, "weight of the diversity loss");
    k->add("delta", o->delta, "diversity margin on cosine similarity");
    k->add("lr", o->lr, "Adam step size");
    k->add("batch", o->batch, "mini-batch size");
    k->add("epochs", o->epochs, "training epochs");
    k->add("seed", o->seed, "random seed (default: $SHAPEX_SEED or 0)");
    sub->callback([&run, sub, o, k] {
        run = [sub, o, k] {
            auto cfg = k->resolve(sub->get_name());
            shapex::TrainConfig tc;
            tc.hyper.num_shapelets = o->num_shapelets;
            tc.hyper.shapelet_len = o->shapelet_len;
            tc.hyper.patch_len = o->patch_len;
            tc.hyper.num_heads = o->num_heads;
            tc.hyper.d_model = o->d_model;
            tc.hyper.pooling = o->pooling == "mean" ? shapex::Pooling::mean : shapex::Pooling::max;
            tc.loss.match = o->lambda_match;
            tc.loss.div = o->lambda_div;
            tc.loss.margin = o->delta;
            tc.lr = o->lr;
            tc.batch_size = o->batch;
            tc.epochs = o->epochs;
            tc.seed = o->seed;
            if (tc.loss.match < 0 || tc.loss.div < 0) throw shapex::ConfigError("loss weights must be non-negative");
            if (tc.batch_size == 0) throw shapex::ConfigError("batch size must be positive");
            const auto train = load(o->train);
            const auto resolved = tc.hyper.resolved(train.series_length());
            cfg["shapelet_len"] = resolved.shapelet_len;
            cfg["patch_len"] = resolved.patch_len;
            echo(cfg);
            const auto bank = shapex::train_shapelets(train, tc);
            shapex::save_bank(bank, o->out);
        };
    });
}

// ---- explain ---------------------------------------------------------------

struct ExplainOpts {
    std::string bank;
    std::string model;
    std::string data;
    std::string out;
    double omega = 0.0;
    std::size_t gap_tolerance = 0;
    std::string segments = "peak";
    std::size_t k_exact = 12;
    std::size_t num_samples = 64;
    bool unrestricted = false;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    std::size_t equal_length = 0;
};

void setup_explain(CLI::App& app, std::function<void()>& run) {
    auto* sub = app.add_subcommand("explain", "Shapley saliency for every instance of a dataset");
    auto o = std::make_shared<ExplainOpts>();
    o->seed = default_seed();
    auto k = std::make_shared<Knobs>(sub);
    k->add("bank", o->bank, "shapelet bank JSON (not needed with --equal-length)");
    k->add("model", o->model, "black box: builtin:PATH (reference CNN JSON) or external:\"CMD\"")->required();
    k->add("data", o->data, "dataset to explain (TSV/CSV)")->required();
    k->add("out", o->out, "output directory for saliency.csv and shapley.json")->required();
    k->add("omega", o->omega, "activation threshold; 0 picks 1.5/N");
    k->add("gap-tolerance", o->gap_tolerance, "segments at most this many steps apart count as connected");
    k->add("segments", o->segments, "peak: the run holding each shapelet's peak; all: every run")
        ->check(CLI::IsMember({"peak", "all"}));
    k->add("k-exact", o->k_exact, "exact enumeration when a segment has at most this many connected partners");
    k->add("num-samples", o->num_samples, "permutations per segment in sampled mode");
    k->add("unrestricted", o->unrestricted, "let every segment play in one coalition game");
    k->add("seed", o->seed, "sampling seed (default: $SHAPEX_SEED or 0)");
    k->add("threads", o->threads, "worker threads; 0 uses all cores");
    k->add("equal-length", o->equal_length, "ablation: equal-length segments of this size instead of shapelets");
    sub->callback([&run, sub, o, k] {
        run = [sub, o, k] {
            auto cfg = k->resolve(sub->get_name());
            if (o->equal_length == 0 && o->bank.empty()) throw CLI::RequiredError("--bank");
            echo(cfg);
            const auto ds = load(o->data);
            const auto f = shapex::open_classifier(o->model, std::size_t(ds.num_classes));

            shapex::ShapleyConfig sh;
            sh.k_exact = o->k_exact;
            sh.num_samples = o->num_samples;
            sh.seed = o->seed;
            sh.restrict_to_component = !o->unrestricted;

            std::vector<shapex::SaliencyMap> maps;
            json instances = json::array();
            if (o->equal_length > 0) {
                maps.resize(ds.size());
                for (std::size_t i = 0; i < ds.size(); ++i) {
                    const auto& x = ds.instances[i].values;
                    const auto target = shapex::argmax(f->predict_proba(x));
                    auto local = sh;
                    local.seed = sh.seed + i;
                    shapex::ShapleyResult res;
                    maps[i] = shapex::equal_length_shapley(x, *f, target, o->equal_length, local, &res);
                    auto j = shapex::shapley_to_json(res, shapex::equal_length_segments(x.size(), o->equal_length));
                    j["target"] = target;
                    instances.push_back(std::move(j));
                }
            } else {
                const auto bank = shapex::load_bank(o->bank);
                shapex::ExplainConfig ec;
                ec.segment.threshold = o->omega;
                ec.segment.gap_tolerance = o->gap_tolerance;
                ec.segment.mode = o->segments == "all" ? shapex::SegmentMode::all_runs : shapex::SegmentMode::peak_run;
                ec.shapley = sh;
                const auto all = shapex::explain_all(ds, bank, *f, ec, o->threads);
                std::size_t empty = 0;
                for (const auto& ex : all) {
                    maps.push_back(ex.saliency);
                    auto j = shapex::shapley_to_json(ex.result, ex.segments);
                    j["target"] = ex.target;
                    instances.push_back(std::move(j));
                    empty += ex.empty_segments;
                }
                if (empty > 0) {
                    std::cerr << "warning: " << empty << " instance(s) had no segment above the threshold\n";
                }
            }
            const fs::path dir(o->out);
            fs::create_directories(dir);
            write_text(dir / "saliency.csv", shapex::saliency_maps_to_csv(maps));
            json doc{{"version", 1}, {"kind", "explanations"}, {"instances", instances}};
            write_text(dir / "shapley.json", doc.dump(1) + "\n");
        };
    });
}

// ---- eval-saliency ---------------------------------------------------------

struct EvalSalOpts {
    std::string data;
    std::string saliency;
    std::string out;
};

void setup_eval_saliency(CLI::App& app, std::function<void()>& run) {
    auto* sub = app.add_subcommand("eval-saliency", "AUPRC / AUP / AUR of saliency maps against ground truth");
    auto o = std::make_shared<EvalSalOpts>();
    auto k = std::make_shared<Knobs>(sub);
    k->add("data", o->data, "dataset with ground-truth saliency columns")->required();
    k->add("saliency", o->saliency, "saliency.csv written by explain")->required();
    k->add("out", o->out, "optional CSV file for the metrics row");
    sub->callback([&run, sub, o, k] {
        run = [sub, o, k] {
            echo(k->resolve(sub->get_name()));
            const auto ds = load(o->data);
            const auto maps = load_maps(o->saliency);
            const auto m = shapex::mean_saliency_metrics(ds, maps);
            const auto text = shapex::metrics_csv_header() + shapex::metrics_to_csv_row(m);
            std::cout << text;
            if (!o->out.empty()) write_text(o->out, text);
        };
    });
}

// ---- eval-occlusion --------------------------------------------------------

struct EvalOccOpts {
    std::string data;
    std::string saliency;
    std::string model;
    std::string ratios = "0,0.1,0.2,0.3,0.4,0.5";
    std::string baseline = "linear";
    std::string order = "bottom";
    std::string out;
};

void setup_eval_occlusion(CLI::App& app, std::function<void()>& run) {
    auto* sub = app.add_subcommand("eval-occlusion", "Classifier AUROC after masking the least salient steps");
    auto o = std::make_shared<EvalOccOpts>();
    auto k = std::make_shared<Knobs>(sub);
    k->add("data", o->data, "labeled test dataset")->required();
    k->add("saliency", o->saliency, "saliency.csv written by explain")->required();
    k->add("model", o->model, "black box: builtin:PATH or external:\"CMD\"")->required();
    k->add("ratios", o->ratios, "comma-separated masking fractions");
    k->add("baseline", o->baseline, "replacement for masked steps")->check(CLI::IsMember(kBaselines));
    k->add("order", o->order, "bottom masks the least salient steps, top the most salient")
        ->check(CLI::IsMember({"bottom", "top"}));
    k->add("out", o->out, "optional CSV file for the curve");
    sub->callback([&run, sub, o, k] {
        run = [sub, o, k] {
            auto cfg = k->resolve(sub->get_name());
            shapex::OcclusionConfig oc;
            oc.ratios = parse_ratios(o->ratios);
            oc.baseline = parse_baseline(o->baseline);
            oc.order = o->order == "top" ? shapex::OcclusionOrder::top : shapex::OcclusionOrder::bottom;
            echo(cfg);
            const auto ds = load(o->data);
            const auto maps = load_maps(o->saliency);
            const auto f = shapex::open_classifier(o->model, std::size_t(ds.num_classes));
            const auto curve = shapex::occlusion(ds, maps, *f, oc);
            const auto text = shapex::occlusion_to_csv(curve);
            std::cout << text;
            if (!o->out.empty()) write_text(o->out, text);
        };
    });
}

// ---- plot ------------------------------------------------------------------

struct PlotOpts {
    std::string data;
    std::string saliency;
    std::size_t index = 0;
    std::vector<std::string> curves;
    std::string title;
    std::string out;
};

void setup_plot(CLI::App& app, std::function<void()>& run) {
    auto* sub = app.add_subcommand("plot", "Render a saliency overlay or occlusion curves to SVG");
    auto o = std::make_shared<PlotOpts>();
    auto k = std::make_shared<Knobs>(sub);
    k->add("data", o->data, "dataset holding the series to draw");
    k->add("saliency", o->saliency, "saliency.csv; draws instance --index over its series");
    k->add("index", o->index, "instance to draw");
    k->add("curves", o->curves, "occlusion CSVs, each as LABEL=PATH or PATH; draws AUROC vs ratio");
    k->add("title", o->title, "plot title");
    k->add("out", o->out, "output SVG file")->required();
    sub->callback([&run, sub, o, k] {
        run = [sub, o, k] {
            auto cfg = k->resolve(sub->get_name());
            const bool overlay = !o->saliency.empty();
            if (overlay == !o->curves.empty()) {
                throw CLI::ValidationError("plot", "give either --saliency (with --data) or --curves");
            }
            if (overlay && o->data.empty()) throw CLI::RequiredError("--data");
            echo(cfg);
            std::string svg;
            if (overlay) {
                const auto ds = load(o->data);
                const auto maps = load_maps(o->saliency);
                if (o->index >= ds.size() || o->index >= maps.size()) {
                    throw shapex::ShapeError("instance " + std::to_string(o->index) + " out of range");
                }
                const auto& ts = ds.instances[o->index];
                std::optional<std::span<const std::uint8_t>> gt;
                if (ts.gt_saliency) gt = std::span<const std::uint8_t>(*ts.gt_saliency);
                svg = shapex::saliency_svg(ts.values, maps[o->index], gt, o->title);
            } else {
                std::vector<shapex::NamedCurve> named;
                for (const auto& item : o->curves) {
                    const auto eq = item.find('=');
                    const std::string path = eq == std::string::npos ? item : item.substr(eq + 1);
                    const std::string label = eq == std::string::npos ? fs::path(path).stem().string() : item.substr(0, eq);
                    named.push_back({label, shapex::occlusion_from_csv(read_text(path))});
                }
                svg = shapex::occlusion_svg(named, o->title);
            }
            write_text(o->out, svg);
        };
    });
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"shapex: shapelet-driven Shapley explanations for time-series classifiers"};
    app.require_subcommand(1);
    std::function<void()> run;
    setup_gen(app, run);
    setup_blackbox(app, run);
    setup_shapelets(app, run);
    setup_explain(app, run);
    setup_eval_saliency(app, run);
    setup_eval_occlusion(app, run);
    setup_plot(app, run);

    try {
        app.parse(argc, argv);
        if (run) run();
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    } catch (const shapex::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
