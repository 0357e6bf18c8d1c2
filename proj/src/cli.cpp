#include "mixlink/cli.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mixlink/analysis.hpp"
#include "mixlink/gradcheck.hpp"
#include "mixlink/report_io.hpp"
#include "mixlink/verify.hpp"

namespace mixlink::cli {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
    if (!j.is_object()) throw ConfigError("config section \"" + context + "\" must be an object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown key \"" + key + "\" in " + context);
    }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("bad value for \"" + key + "\": " + e.what());
    }
}

NetworkSpec parse_explicit_network(const json& j) {
    check_keys(j, {"L", "blocks", "k1", "k2", "position", "multiplier", "theta", "classes",
                   "input_size", "dropout"},
               "network.explicit");
    const int k1 = get_or(j, "k1", 12);
    const int k2 = get_or(j, "k2", 12);
    const std::string pos_str = get_or<std::string>(j, "position", "unfixed");
    LinkPosition position;
    if (pos_str == "fixed")
        position = LinkPosition::Fixed;
    else if (pos_str == "unfixed")
        position = LinkPosition::Unfixed;
    else
        throw ConfigError("network.explicit.position must be \"fixed\" or \"unfixed\"");
    const int multiplier = get_or(j, "multiplier", 4);
    const double theta = get_or(j, "theta", 1.0);
    const int classes = get_or(j, "classes", 10);
    const int input_size = get_or(j, "input_size", 32);
    const double dropout = get_or(j, "dropout", 0.0);

    NetworkSpec spec;
    try {
        if (j.contains("blocks")) {
            if (j.contains("L"))
                throw ConfigError("network.explicit accepts either \"L\" or \"blocks\", not both");
            const auto layer_counts = j.at("blocks").get<std::vector<int>>();
            if (layer_counts.empty()) throw ConfigError("network.explicit.blocks is empty");
            MixedLinkConfig link{k1, k2, position};
            spec.name = "explicit";
            spec.stem = {3, stem_width(link), 3, 1, 1, false};
            for (int n : layer_counts) spec.blocks.push_back({n, link});
            spec.theta = theta;
            spec.multiplier = multiplier;
            spec.classes = classes;
        } else if (j.contains("L")) {
            spec = build_cifar_spec(j.at("L").get<int>(), k1, k2, position, multiplier, theta,
                                    classes);
        } else {
            throw ConfigError("network.explicit needs \"L\" or \"blocks\"");
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("network.explicit: ") + e.what());
    }
    spec.input_height = spec.input_width = input_size;
    spec.dropout_rate = dropout;
    return spec;
}

} // namespace

NetworkSpec toy_network_spec(int classes, int input_size) {
    MixedLinkConfig link{4, 4, LinkPosition::Unfixed};
    NetworkSpec spec;
    spec.name = "toy";
    spec.input_channels = 3;
    spec.input_height = spec.input_width = input_size;
    spec.stem = {3, stem_width(link), 3, 1, 1, false};
    spec.blocks = {{2, link}, {2, link}, {2, link}};
    spec.theta = 1.0;
    spec.multiplier = 2;
    spec.classes = classes;
    return spec;
}

NetworkSpec RunConfig::resolve_network(bool fallback_toy) const {
    if (preset && explicit_network)
        throw ConfigError("network section names both a preset and an explicit network");
    if (preset) {
        try {
            return preset_spec(*preset);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (explicit_network) return *explicit_network;
    if (fallback_toy) return toy_network_spec(train.dataset.classes, train.dataset.size);
    throw ConfigError("missing network section: give {\"network\": {\"preset\": ...}} or an "
                      "explicit network");
}

RunConfig parse_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        // nlohmann reports the line/column in the message.
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    check_keys(doc, {"seed", "network", "verify", "gradcheck", "count_params", "train", "output"},
               "config");

    RunConfig cfg;
    cfg.seed = get_or<std::uint64_t>(doc, "seed", 0);

    if (doc.contains("network")) {
        const auto& jn = doc.at("network");
        check_keys(jn, {"preset", "explicit"}, "network");
        if (jn.contains("preset")) cfg.preset = jn.at("preset").get<std::string>();
        if (jn.contains("explicit")) cfg.explicit_network = parse_explicit_network(jn.at("explicit"));
    }

    if (doc.contains("verify")) {
        const auto& jv = doc.at("verify");
        check_keys(jv, {"trials", "l_min", "l_max", "tolerance", "suite", "arch"}, "verify");
        cfg.verify.trials = get_or(jv, "trials", cfg.verify.trials);
        cfg.verify.depth_min = get_or(jv, "l_min", cfg.verify.depth_min);
        cfg.verify.depth_max = get_or(jv, "l_max", cfg.verify.depth_max);
        cfg.verify.tolerance = get_or(jv, "tolerance", cfg.verify.tolerance);
        cfg.verify.suite = get_or(jv, "suite", cfg.verify.suite);
        cfg.verify.arch = get_or(jv, "arch", cfg.verify.arch);
        if (cfg.verify.trials < 1) throw ConfigError("verify.trials must be >= 1");
    }

    if (doc.contains("gradcheck")) {
        const auto& jg = doc.at("gradcheck");
        check_keys(jg, {"op", "trials", "tolerance", "dtype"}, "gradcheck");
        cfg.gradcheck.op = get_or(jg, "op", cfg.gradcheck.op);
        cfg.gradcheck.trials = get_or(jg, "trials", cfg.gradcheck.trials);
        cfg.gradcheck.dtype = get_or(jg, "dtype", cfg.gradcheck.dtype);
        cfg.gradcheck.tolerance = get_or(
            jg, "tolerance", cfg.gradcheck.dtype == "32bit" ? gradcheck::kTol32 : gradcheck::kTol64);
        if (cfg.gradcheck.dtype != "64bit" && cfg.gradcheck.dtype != "32bit")
            throw ConfigError("gradcheck.dtype must be \"64bit\" or \"32bit\"");
    }

    if (doc.contains("count_params")) {
        const auto& jc = doc.at("count_params");
        check_keys(jc, {"grid", "tolerance"}, "count_params");
        cfg.count_params.grid = get_or(jc, "grid", cfg.count_params.grid);
        cfg.count_params.tolerance = get_or(jc, "tolerance", cfg.count_params.tolerance);
    }

    if (doc.contains("train")) {
        const auto& jt = doc.at("train");
        check_keys(jt,
                   {"batch_size", "epochs", "lr", "milestones", "decay", "weight_decay",
                    "momentum", "nesterov", "dropout", "dataset", "ablate", "k2_values",
                    "save_weights"},
                   "train");
        auto& t = cfg.train.train;
        t.batch_size = get_or(jt, "batch_size", t.batch_size);
        t.epochs = get_or(jt, "epochs", t.epochs);
        t.learning_rate = get_or(jt, "lr", t.learning_rate);
        t.milestones = get_or(jt, "milestones", t.milestones);
        t.decay_factor = get_or(jt, "decay", t.decay_factor);
        t.weight_decay = get_or(jt, "weight_decay", t.weight_decay);
        t.momentum = get_or(jt, "momentum", t.momentum);
        t.nesterov = get_or(jt, "nesterov", t.nesterov);
        t.dropout_rate = get_or(jt, "dropout", t.dropout_rate);
        if (jt.contains("dataset")) {
            const auto& jd = jt.at("dataset");
            check_keys(jd, {"classes", "per_class", "per_class_test", "size", "sigma"},
                       "train.dataset");
            auto& d = cfg.train.dataset;
            d.classes = get_or(jd, "classes", d.classes);
            d.per_class = get_or(jd, "per_class", d.per_class);
            d.per_class_test = get_or(jd, "per_class_test", d.per_class_test);
            d.size = get_or(jd, "size", d.size);
            d.sigma = get_or(jd, "sigma", d.sigma);
        }
        cfg.train.ablate = get_or(jt, "ablate", cfg.train.ablate);
        cfg.train.k2_values = get_or(jt, "k2_values", cfg.train.k2_values);
        cfg.train.save_weights = get_or(jt, "save_weights", cfg.train.save_weights);
        if (cfg.train.ablate != "none" && cfg.train.ablate != "position" &&
            cfg.train.ablate != "k2")
            throw ConfigError("train.ablate must be \"none\", \"position\" or \"k2\"");
        try {
            t.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("train: ") + e.what());
        }
    }

    if (doc.contains("output")) {
        const auto& jo = doc.at("output");
        check_keys(jo, {"path", "format"}, "output");
        cfg.output.path = get_or(jo, "path", cfg.output.path);
        cfg.output.format = get_or(jo, "format", cfg.output.format);
        if (cfg.output.format != "table" && cfg.output.format != "json" &&
            cfg.output.format != "csv")
            throw ConfigError("output.format must be \"table\", \"json\" or \"csv\"");
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

namespace {

void write_output(const RunConfig& config, const std::string& text, std::ostream& out) {
    if (config.output.path.empty()) {
        out << text;
        return;
    }
    std::ofstream file(config.output.path);
    if (!file) throw std::runtime_error("cannot open output path: " + config.output.path);
    file << text;
}

// Stage-level layout: one row per stem/block/transition/head with the
// output size and width after that stage.
std::string stage_summary(const NetworkSpec& spec) {
    std::ostringstream out;
    char line[128];
    auto row = [&](const std::string& name, const std::string& what, int size, int width) {
        std::snprintf(line, sizeof(line), "%-14s %-38s %4dx%-4d %6d\n", name.c_str(),
                      what.c_str(), size, size, width);
        out << line;
    };
    std::snprintf(line, sizeof(line), "%-14s %-38s %-9s %6s\n", "stage", "operation", "output",
                  "width");
    out << line;

    int size = spec.input_height / spec.stem.stride;
    row("stem", std::to_string(spec.stem.kernel) + "x" + std::to_string(spec.stem.kernel) +
                    " conv, stride " + std::to_string(spec.stem.stride),
        size, spec.stem.out_channels);
    if (spec.stem.max_pool_after) {
        size = (size + 2 - 3) / 2 + 1;
        row("stem", "3x3 max pool, stride 2", size, spec.stem.out_channels);
    }
    int width = spec.stem.out_channels;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        const auto& bs = spec.blocks[b];
        width += bs.layers * bs.link.k2;
        row("block" + std::to_string(b + 1),
            std::to_string(bs.layers) + " layers, k1=" + std::to_string(bs.link.k1) +
                ", k2=" + std::to_string(bs.link.k2) + ", " +
                (bs.link.position == LinkPosition::Fixed ? "fixed" : "unfixed"),
            size, width);
        if (b + 1 < spec.blocks.size()) {
            width = static_cast<int>(std::floor(spec.theta * width));
            size = (size - 2) / 2 + 1;
            row("transition" + std::to_string(b + 1), "1x1 conv + 2x2 average pool, stride 2",
                size, width);
        }
    }
    row("head", "global average pool", 1, width);
    row("head", std::to_string(spec.classes) + "-way linear", 1, spec.classes);
    return out.str();
}

} // namespace

int cmd_describe(const RunConfig& config, std::ostream& out, std::ostream& err) {
    NetworkSpec spec;
    try {
        spec = config.resolve_network();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    const ParamReport report = count_params(spec);
    std::ostringstream text;
    text << "network: " << spec.name << " (depth label " << depth_label(spec) << ")\n";
    if (config.output.format == "json")
        text << report_to_json(report);
    else if (config.output.format == "csv")
        text << report_to_csv(report);
    else
        text << stage_summary(spec) << "\n" << report_to_table(report);
    write_output(config, text.str(), out);
    return kExitOk;
}

int cmd_count_params(const RunConfig& config, std::ostream& out, std::ostream& err) {
    std::ostringstream text;
    if (config.count_params.grid) {
        const GridReport grid = param_grid_search(config.count_params.tolerance);
        text << (config.output.format == "json" ? grid_to_json(grid) : grid_to_table(grid));
        write_output(config, text.str(), out);
        return kExitOk;
    }
    NetworkSpec spec;
    try {
        spec = config.resolve_network();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    const ParamReport report = count_params(spec);
    if (config.output.format == "json")
        text << report_to_json(report);
    else if (config.output.format == "csv")
        text << report_to_csv(report);
    else
        text << report_to_table(report);
    try {
        const double target = paper_param_target(spec.name);
        const auto cmp = compare_to_reference(report, target, config.count_params.tolerance);
        text << "paper total: " << format_number(target)
             << "M, relative error: " << format_number(cmp.rel_error) << " -> "
             << (cmp.pass ? "pass" : "fail") << "\n";
    } catch (const std::invalid_argument&) {
        // not a paper preset; nothing to compare against
    }
    write_output(config, text.str(), out);
    return kExitOk;
}

int cmd_verify_topology(const RunConfig& config, std::ostream& out, std::ostream& err) {
    const auto& v = config.verify;
    std::vector<verify::SuiteResult> suites;
    if (v.suite == "all") {
        suites = verify::run_all(v.trials, v.depth_min, v.depth_max, config.seed, v.tolerance);
    } else if (v.suite == "unrolling") {
        suites.push_back(
            verify::unrolling_suite(v.trials, v.depth_min, v.depth_max, config.seed, v.tolerance));
    } else if (v.suite == "reduction") {
        suites.push_back(verify::reduction_suite(v.trials, v.arch, config.seed));
    } else if (v.suite == "width-law") {
        suites.push_back(verify::width_law_suite(v.trials, config.seed));
    } else if (v.suite == "witness") {
        suites.push_back(verify::witness_suite());
    } else {
        err << "error: unknown suite \"" << v.suite
            << "\" (known: all, unrolling, reduction, width-law, witness)\n";
        return kExitUsage;
    }

    bool all_pass = true;
    out << "seed: " << config.seed << "\n";
    for (const auto& s : suites) {
        out << (s.pass ? "[PASS] " : "[FAIL] ") << s.suite << ": " << s.trials
            << " trials, max deviation " << format_number(s.max_deviation) << ": " << s.detail;
        if (!s.pass) out << " (reproduce with seed " << s.failing_seed << ")";
        out << "\n";
        all_pass = all_pass && s.pass;
    }
    if (!config.output.path.empty())
        write_output(config, suites_to_json(suites, config.seed), out);
    return all_pass ? kExitOk : kExitFailure;
}

namespace {

template <class T>
int run_gradcheck(const RunConfig& config, std::ostream& out) {
    const auto& g = config.gradcheck;
    std::vector<std::string> ops;
    if (g.op == "all")
        ops = gradcheck::op_names();
    else
        ops.push_back(g.op);

    bool all_pass = true;
    out << "dtype: " << g.dtype << ", tolerance: " << format_number(g.tolerance)
        << ", trials per op: " << g.trials << ", seed: " << config.seed << "\n";
    for (const auto& op : ops) {
        const auto r = gradcheck::run_op<T>(op, g.trials, config.seed, g.tolerance);
        out << (r.pass ? "[PASS] " : "[FAIL] ") << r.op << ": max relative error "
            << format_number(r.max_rel_error);
        if (!r.pass)
            out << " at seed " << r.failing_seed << " (" << r.worst_coordinate << ")";
        out << "\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? kExitOk : kExitFailure;
}

} // namespace

int cmd_gradcheck(const RunConfig& config, std::ostream& out, std::ostream& err) {
    const auto& g = config.gradcheck;
    if (g.op != "all") {
        const auto& names = gradcheck::op_names();
        if (std::find(names.begin(), names.end(), g.op) == names.end()) {
            err << "error: unknown gradcheck op \"" << g.op << "\"\n";
            return kExitUsage;
        }
    }
    if (g.dtype == "32bit") return run_gradcheck<float>(config, out);
    return run_gradcheck<double>(config, out);
}

namespace {

struct ToyRun {
    TrainHistory history;
    double oracle_train = 0.0;
    double oracle_test = 0.0;
};

ToyRun run_toy(const RunConfig& config, NetworkSpec spec) {
    const auto& d = config.train.dataset;
    if (spec.classes != d.classes)
        throw ConfigError("network has " + std::to_string(spec.classes) +
                          " classes but train.dataset.classes is " + std::to_string(d.classes));
    if (spec.input_height != d.size || spec.input_width != d.size)
        throw ConfigError("network input size " + std::to_string(spec.input_height) +
                          " does not match train.dataset.size " + std::to_string(d.size));
    TrainConfig tc = config.train.train;
    tc.seed = config.seed;
    spec.dropout_rate = tc.dropout_rate;
    const ToyDataset data =
        make_toy_dataset(d.classes, d.per_class, d.size, d.sigma, config.seed, d.per_class_test);
    LayerGraph graph = build_network(spec, config.seed);
    ToyRun run;
    run.history = train_loop(graph, data, tc);
    run.oracle_train = nearest_pattern_accuracy(data, false);
    run.oracle_test = nearest_pattern_accuracy(data, true);
    if (!config.train.save_weights.empty()) graph.save_weights(config.train.save_weights);
    return run;
}

} // namespace

int cmd_train_toy(const RunConfig& config, std::ostream& out, std::ostream& err) {
    const std::string path =
        config.output.path.empty() ? std::string("toy_history.csv") : config.output.path;

    if (config.train.ablate == "position") {
        // Fixed vs unfixed at identical parameter budget (identical shapes,
        // only the addition offset differs).
        NetworkSpec base = config.resolve_network(true);
        TrainHistory histories[2];
        const char* names[2] = {"fixed", "unfixed"};
        for (int i = 0; i < 2; ++i) {
            NetworkSpec spec = base;
            for (auto& b : spec.blocks)
                b.link.position = i == 0 ? LinkPosition::Fixed : LinkPosition::Unfixed;
            histories[i] = run_toy(config, spec).history;
        }
        std::ostringstream csv;
        csv << "epoch,lr,fixed_loss,fixed_train_acc,fixed_test_acc,unfixed_loss,"
               "unfixed_train_acc,unfixed_test_acc\n";
        const std::size_t rows =
            std::min(histories[0].epochs.size(), histories[1].epochs.size());
        for (std::size_t i = 0; i < rows; ++i) {
            const auto& f = histories[0].epochs[i];
            const auto& u = histories[1].epochs[i];
            csv << f.epoch << ',' << format_number(f.lr) << ',' << format_number(f.loss) << ','
                << format_number(f.train_accuracy) << ',' << format_number(f.test_accuracy) << ','
                << format_number(u.loss) << ',' << format_number(u.train_accuracy) << ','
                << format_number(u.test_accuracy) << '\n';
        }
        std::ofstream file(path);
        file << csv.str();
        for (int i = 0; i < 2; ++i)
            out << names[i] << ": final train acc "
                << format_number(histories[i].final_train_accuracy()) << ", final test acc "
                << format_number(histories[i].final_test_accuracy()) << "\n";
        out << "paired curves written to " << path << "\n";
        const bool diverged = histories[0].diverged || histories[1].diverged;
        if (diverged) err << "error: training diverged; partial history saved\n";
        return diverged ? kExitFailure : kExitOk;
    }

    if (config.train.ablate == "k2") {
        std::ostringstream csv;
        csv << "k2,epoch,lr,loss,train_acc,test_acc\n";
        bool diverged = false;
        for (int k2 : config.train.k2_values) {
            NetworkSpec spec = config.resolve_network(true);
            for (auto& b : spec.blocks) b.link.k2 = k2;
            // Rebuild the stem for the new width rule.
            spec.stem.out_channels = stem_width(spec.blocks.front().link);
            const auto run = run_toy(config, spec);
            for (const auto& e : run.history.epochs)
                csv << k2 << ',' << e.epoch << ',' << format_number(e.lr) << ','
                    << format_number(e.loss) << ',' << format_number(e.train_accuracy) << ','
                    << format_number(e.test_accuracy) << '\n';
            out << "k2 = " << k2 << ": final train acc "
                << format_number(run.history.final_train_accuracy()) << ", final test acc "
                << format_number(run.history.final_test_accuracy()) << "\n";
            diverged = diverged || run.history.diverged;
        }
        std::ofstream file(path);
        file << csv.str();
        out << "sweep written to " << path << "\n";
        if (diverged) err << "error: training diverged; partial history saved\n";
        return diverged ? kExitFailure : kExitOk;
    }

    const auto run = run_toy(config, config.resolve_network(true));
    std::ofstream file(path);
    file << history_to_csv(run.history);
    out << "seed: " << config.seed << "\n";
    out << "nearest-pattern oracle: train " << format_number(run.oracle_train) << ", test "
        << format_number(run.oracle_test) << "\n";
    out << "final: train acc " << format_number(run.history.final_train_accuracy())
        << ", test acc " << format_number(run.history.final_test_accuracy()) << ", epochs "
        << run.history.epochs.size() << "\n";
    out << "history written to " << path << "\n";
    if (run.history.diverged) {
        err << "error: training diverged; partial history saved to " << path << "\n";
        return kExitFailure;
    }
    return kExitOk;
}

} // namespace mixlink::cli
