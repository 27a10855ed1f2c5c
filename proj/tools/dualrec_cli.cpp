// Command-line entry point: world generation, training, inference and
// evaluation. Every subcommand is deterministic given flags + seed +
// input files. Exit codes: 0 success, 2 usage/validation error,
// 1 runtime failure.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dualrec/diffusion.hpp"
#include "dualrec/evalharness.hpp"
#include "dualrec/model.hpp"
#include "dualrec/pipeline.hpp"
#include "dualrec/synthworld.hpp"

using namespace dualrec;
using ordered_json = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
}

int run_gen_world(const WorldSpec& spec, const std::string& out_path) {
    Dataset ds = gen_world(spec);
    save_dataset(ds, out_path);
    std::cout << "world written to " << out_path << ": " << ds.items.size() << " items, "
              << ds.users.size() << " users, " << ds.outfits.size() << " outfits, eta_max="
              << ds.eta_max << "\n";
    return 0;
}

struct TrainFlags {
    std::string dataset, init, out, metrics;
    TrainConfig cfg;
    int steps = -1;  // -1 = stage default
    int depth = 2, width = 64, heads = 4, cap_pref = 64;
    double dropout = 0.1;
};

int run_train(const TrainFlags& f) {
    Dataset ds = load_dataset(f.dataset);
    Vocab vocab(ds.schema, ds.categories);
    TrainConfig cfg = f.cfg;
    if (f.steps >= 0)
        cfg.steps = f.steps;
    else
        cfg.steps = cfg.stage == 1 ? 20000 : (cfg.stage == 2 ? 10000 : 2000);

    Model<float> model = [&] {
        if (!f.init.empty()) return load_checkpoint_file<float>(f.init);
        if (cfg.stage >= 2) throw UsageError("train: stage >= 2 requires --init");
        ModelConfig mc;
        mc.depth = f.depth;
        mc.width = f.width;
        mc.heads = f.heads;
        mc.c = ds.spec.c;
        mc.h = ds.spec.h;
        mc.w = ds.spec.w;
        mc.vocab = vocab.size();
        mc.cap_pref = f.cap_pref;
        mc.dropout = f.dropout;
        mc.seed = cfg.seed;
        return Model<float>(mc);
    }();

    try {
        cfg.validate();
    } catch (const PipelineError& e) {
        throw UsageError(e.what());
    }
    std::ofstream metrics;
    if (!f.metrics.empty()) {
        metrics.open(f.metrics, std::ios::binary);
        if (!metrics) throw UsageError("train: cannot open metrics path " + f.metrics);
    }
    Trainer<float> trainer(model, ds, vocab, cfg);
    trainer.run(f.metrics.empty() ? nullptr : &metrics, [&](int step, const Model<float>& m) {
        save_checkpoint(m, f.out);
        (void)step;
    });
    if (cfg.steps == 0) save_checkpoint(model, f.out);  // still emit the checkpoint
    std::cout << "checkpoint written to " << f.out << " after " << cfg.steps << " steps\n";
    return 0;
}

struct InferFlags {
    std::string dataset, checkpoint, out, task = "pfitb", categories;
    int n = 10;
    uint64_t seed = 0;
    int user = -1, outfit = -1;
    InferParams ip;
};

void write_sample(std::ostream& os, const std::string& task, int request, int user, int outfit,
                  const std::string& category, const std::string& expected_style, uint64_t seed,
                  const GeneratedItem<float>& item) {
    ordered_json j;
    j["task"] = task;
    j["request"] = request;
    j["user"] = user;
    if (outfit >= 0) j["outfit"] = outfit;
    j["category"] = category;
    if (!expected_style.empty()) j["expected_style"] = expected_style;
    j["seed"] = seed;
    j["round"] = item.round;
    j["caption"] = render(item.caption);
    j["latent"] = floats_to_base64(item.latent.data);
    os << j.dump() << "\n";
}

int run_infer(const InferFlags& f) {
    Dataset ds = load_dataset(f.dataset);
    Vocab vocab(ds.schema, ds.categories);
    Model<float> model = load_checkpoint_file<float>(f.checkpoint);
    f.ip.scales.validate();

    std::ofstream os(f.out, std::ios::binary);
    if (!os) throw UsageError("infer: cannot open output path " + f.out);

    // request targets: eval-split outfits (all outfits if none are
    // flagged eval), cycled round-robin
    std::vector<int> targets;
    for (const auto& of : ds.outfits)
        if (of.split == "eval") targets.push_back(of.id);
    if (targets.empty())
        for (const auto& of : ds.outfits) targets.push_back(of.id);

    if (f.task == "pfitb") {
        for (int r = 0; r < f.n; ++r) {
            int oid = f.outfit >= 0 ? f.outfit : targets[size_t(r) % targets.size()];
            const Outfit& of = ds.outfit(oid);
            int uid = f.user >= 0 ? f.user : of.owner;
            uint64_t seed = f.seed + uint64_t(r);
            auto item = infer_pfitb(model, ds, vocab, uid, oid, f.ip, seed);
            const Item& held = ds.item(of.item_ids[size_t(of.held_out)]);
            write_sample(os, "pfitb", r, uid, oid, held.category, of.style, seed, item);
        }
    } else if (f.task == "gor") {
        std::vector<std::string> cats =
            f.categories.empty() ? std::vector<std::string>(ds.categories.begin(),
                                                            ds.categories.begin() +
                                                                ds.spec.outfit_size)
                                 : split_csv(f.categories);
        if (cats.empty()) throw UsageError("infer: gor needs at least one category");
        for (int r = 0; r < f.n; ++r) {
            int uid = f.user >= 0 ? f.user : ds.outfit(targets[size_t(r) % targets.size()]).owner;
            uint64_t seed = f.seed + uint64_t(r);
            auto items = infer_gor(model, ds, vocab, uid, cats, f.ip, seed);
            for (size_t i = 0; i < items.size(); ++i)
                write_sample(os, "gor", r, uid, -1, cats[i], "", seed, items[i]);
        }
    } else {
        throw UsageError("infer: task must be pfitb or gor");
    }
    std::cout << "samples written to " << f.out << "\n";
    return 0;
}

std::vector<SampleRecord> load_samples(const std::string& path, const Dataset& ds) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw UsageError("eval: cannot open samples file " + path);
    std::vector<SampleRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            ordered_json j = ordered_json::parse(line);
            SampleRecord s;
            s.task = j.at("task");
            s.request = j.at("request");
            s.user = j.at("user");
            if (j.contains("outfit")) s.outfit = j.at("outfit");
            s.category = j.at("category");
            if (j.contains("expected_style")) s.expected_style = j.at("expected_style");
            s.seed = j.at("seed");
            s.round = j.at("round");
            s.caption = parse_caption(j.at("caption"), ds.schema);
            s.latent = Latentf(ds.spec.c, ds.spec.h, ds.spec.w);
            s.latent.data = base64_to_floats(j.at("latent"));
            if (int(s.latent.data.size()) != ds.latent_dim())
                throw std::runtime_error("latent size mismatch");
            out.push_back(std::move(s));
        } catch (const std::exception& e) {
            throw UsageError("eval: malformed samples file at line " + std::to_string(lineno) +
                             ": " + e.what());
        }
    }
    return out;
}

int run_eval(const std::string& dataset, const std::string& samples_path,
             const std::string& out_path, bool baseline_random) {
    Dataset ds = load_dataset(dataset);
    auto samples = load_samples(samples_path, ds);
    EvalReport rep = evaluate(samples, ds, baseline_random);
    std::ofstream os(out_path, std::ios::binary);
    if (!os) throw UsageError("eval: cannot open report path " + out_path);
    os << rep.to_csv();
    std::cout << rep.summary();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-branch diffusion recommendation engine"};
    app.set_config("--config", "", "flat key=value config file; flags override");
    app.require_subcommand(1);

    // gen-world
    WorldSpec spec;
    std::string world_out = "world.jsonl";
    auto* gw = app.add_subcommand("gen-world", "generate a synthetic world dataset");
    gw->add_option("--seed", spec.seed);
    gw->add_option("--items", spec.n_items);
    gw->add_option("--users", spec.n_users);
    gw->add_option("--outfits", spec.n_outfits);
    gw->add_option("--outfit-size", spec.outfit_size);
    gw->add_option("--eta", spec.eta);
    gw->add_option("--eval-fraction", spec.eval_fraction);
    gw->add_option("--out", world_out);

    // train
    TrainFlags tf;
    auto* tr = app.add_subcommand("train", "run one training stage");
    tr->add_option("--dataset", tf.dataset)->required();
    tr->add_option("--stage", tf.cfg.stage);
    tr->add_option("--steps", tf.steps);
    tr->add_option("--batch", tf.cfg.batch);
    tr->add_option("--seed", tf.cfg.seed);
    tr->add_option("--init", tf.init);
    tr->add_option("--out", tf.out)->required();
    tr->add_option("--metrics", tf.metrics);
    tr->add_option("--lr", tf.cfg.lr);
    tr->add_option("--wd", tf.cfg.weight_decay);
    tr->add_option("--lambda-text", tf.cfg.loss.lambda_text);
    tr->add_option("--lambda-m", tf.cfg.loss.lambda_m);
    tr->add_option("--drop-m", tf.cfg.loss.drop_m);
    tr->add_option("--drop-p", tf.cfg.loss.drop_p);
    tr->add_option("--drop-d", tf.cfg.loss.drop_d);
    tr->add_flag("--adam", tf.cfg.adam);
    tr->add_option("--depth", tf.depth);
    tr->add_option("--width", tf.width);
    tr->add_option("--heads", tf.heads);
    tr->add_option("--cap-pref", tf.cap_pref);
    tr->add_option("--dropout", tf.dropout);
    tr->add_option("--checkpoint-every", tf.cfg.checkpoint_every);
    tr->add_option("--log-every", tf.cfg.log_every);

    // infer
    InferFlags inf;
    auto* in = app.add_subcommand("infer", "generate items with a trained checkpoint");
    in->add_option("--dataset", inf.dataset)->required();
    in->add_option("--checkpoint", inf.checkpoint)->required();
    in->add_option("--task", inf.task);
    in->add_option("--n", inf.n);
    in->add_option("--seed", inf.seed);
    in->add_option("--user", inf.user);
    in->add_option("--outfit", inf.outfit);
    in->add_option("--categories", inf.categories);
    in->add_option("--out", inf.out)->required();
    in->add_option("--scale-d", inf.ip.scales.s_d);
    in->add_option("--scale-m", inf.ip.scales.s_m);
    in->add_option("--scale-p", inf.ip.scales.s_p);
    in->add_option("--image-steps", inf.ip.image_steps);
    in->add_option("--text-steps", inf.ip.text_steps);
    in->add_option("--lambda-m", inf.ip.lambda_m);

    // eval
    std::string ev_dataset, ev_samples, ev_out = "report.csv";
    bool ev_baseline = false;
    auto* ev = app.add_subcommand("eval", "score a samples file against the world oracles");
    ev->add_option("--dataset", ev_dataset)->required();
    ev->add_option("--samples", ev_samples)->required();
    ev->add_option("--out", ev_out);
    ev->add_flag("--baseline-random", ev_baseline);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gw->parsed()) return run_gen_world(spec, world_out);
        if (tr->parsed()) return run_train(tf);
        if (in->parsed()) return run_infer(inf);
        if (ev->parsed()) return run_eval(ev_dataset, ev_samples, ev_out, ev_baseline);
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SpecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const VocabError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ModelError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const EvalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 1;
    }
}
