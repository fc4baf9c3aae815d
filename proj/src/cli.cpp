#include "objdino/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "objdino/activation_store.hpp"
#include "objdino/discovery.hpp"
#include "objdino/guided_decoding.hpp"
#include "objdino/head_selector.hpp"
#include "objdino/metrics.hpp"
#include "objdino/parallel.hpp"
#include "objdino/similarity.hpp"

namespace objdino {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PipelineOptions {
    double tau = kDefaultTau;
    double wq = 1.0 / 3.0, wk = 1.0 / 3.0, wv = 1.0 / 3.0;
    std::size_t k = kDefaultClusters;
    double theta = 0.5;
    double tau_cut = kDefaultTauCut;
    double epsilon = kDefaultEpsilon;
    double alpha = 0.4;
    std::string mode = "additive";
    std::uint64_t seed = 0;

    EnsembleWeights weights() const {
        try {
            return EnsembleWeights(wq, wk, wv);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
};

void add_similarity_flags(CLI::App* cmd, PipelineOptions& o) {
    cmd->add_option("--tau", o.tau, "softmax temperature")->envname("OBJDINO_TAU")->check(CLI::PositiveNumber);
    cmd->add_option("--wq", o.wq, "query map weight")->envname("OBJDINO_WQ");
    cmd->add_option("--wk", o.wk, "key map weight")->envname("OBJDINO_WK");
    cmd->add_option("--wv", o.wv, "value map weight")->envname("OBJDINO_WV");
}

std::string image_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%04zu", index);
    return buf;
}

std::vector<HeadId> parse_heads(const std::string& text) {
    std::vector<HeadId> heads;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw UsageError("head '" + item + "' must be layer:head");
        try {
            const auto layer = std::stoul(item.substr(0, colon));
            const auto head = std::stoul(item.substr(colon + 1));
            heads.push_back({std::uint32_t(layer), std::uint32_t(head)});
        } catch (const std::logic_error&) {
            throw UsageError("head '" + item + "' must be layer:head");
        }
    }
    if (heads.empty()) throw UsageError("head list is empty");
    return heads;
}

// Dump paths from arguments; directories expand to their *.objdump files in name order.
std::vector<fs::path> collect_dumps(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<fs::path> found;
            for (const auto& entry : fs::directory_iterator(in))
                if (entry.path().extension() == ".objdump") found.push_back(entry.path());
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.emplace_back(in);
        }
    }
    if (out.empty()) throw UsageError("no dump files given");
    return out;
}

std::vector<ActivationDump> load_dumps(const std::vector<fs::path>& paths) {
    std::vector<ActivationDump> dumps(paths.size());
    parallel_for(paths.size(), [&](std::size_t i) { dumps[i] = read_dump(paths[i]); });
    return dumps;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << text;
}

std::string fixed2(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v;
    return s.str();
}

// ---- gen -----------------------------------------------------------------------------------

struct GenOptions {
    std::uint64_t seed = 0;
    std::size_t images = 1;
    std::uint32_t grid = 14;
    std::uint32_t layers = 12;
    std::uint32_t heads = 12;
    std::uint32_t dim = 16;
    std::uint32_t patch = 16;
    double sigma = 0.1;
    std::string planted;
    std::string distractors;
    std::string out = ".";
};

GridBox random_box(std::uint32_t grid, std::mt19937_64& rng) {
    // At least 2 patches per side where the grid allows, so an object is more than one token.
    const std::uint32_t lo = std::min<std::uint32_t>(grid, std::max<std::uint32_t>(2, grid / 4));
    const std::uint32_t hi = std::max(lo, 2 * grid / 5);
    std::uniform_int_distribution<std::uint32_t> side(lo, hi);
    const std::uint32_t h = side(rng), w = side(rng);
    const std::uint32_t r0 = std::uniform_int_distribution<std::uint32_t>(0, grid - h)(rng);
    const std::uint32_t c0 = std::uniform_int_distribution<std::uint32_t>(0, grid - w)(rng);
    return {r0, c0, r0 + h - 1, c0 + w - 1};
}

int cmd_gen(const GenOptions& o, std::ostream& out) {
    if (o.planted.empty()) throw UsageError("--planted must name at least one head");
    if (o.images == 0) throw UsageError("--images must be >= 1");
    SyntheticConfig base;
    base.layers = o.layers;
    base.heads = o.heads;
    base.grid = o.grid;
    base.head_dim = o.dim;
    base.patch_size = o.patch;
    base.noise_sigma = o.sigma;
    base.planted_heads = parse_heads(o.planted);
    if (!o.distractors.empty()) {
        std::stringstream ss(o.distractors);
        std::string group;
        while (std::getline(ss, group, ';')) base.distractor_groups.push_back(parse_heads(group));
    }
    for (const auto& id : base.planted_heads)
        if (id.layer >= o.layers || id.head >= o.heads)
            throw UsageError("planted head " + to_string(id) + " outside the model");

    fs::create_directories(o.out);
    std::ostringstream truth_lines;
    for (std::size_t i = 0; i < o.images; ++i) {
        std::seed_seq seq{std::uint64_t(o.seed), std::uint64_t(i)};
        std::mt19937_64 rng(seq);
        SyntheticConfig cfg = base;
        cfg.seed = rng();
        cfg.object_box = random_box(o.grid, rng);
        const auto image = generate_synthetic(cfg);
        const auto name = image_name(i);
        const fs::path dump_path = fs::path(o.out) / (name + ".objdump");
        write_dump(image.dump, dump_path);
        write_ground_truth(image.truth, ground_truth_path(dump_path));
        const auto& b = cfg.object_box;
        nlohmann::json line;
        line["image_id"] = name;
        line["boxes"] = {{b.col_min * o.patch, b.row_min * o.patch, (b.col_max + 1) * o.patch,
                          (b.row_max + 1) * o.patch}};
        truth_lines << line.dump() << "\n";
    }
    write_text(fs::path(o.out) / "ground_truth.jsonl", truth_lines.str());
    out << "wrote " << o.images << " dumps to " << o.out << "\n";
    return kExitOk;
}

// ---- analyze -------------------------------------------------------------------------------

struct AnalyzeOptions {
    std::vector<std::string> inputs;
    std::string out = "selection.json";
    std::string hist;
};

int cmd_analyze(const AnalyzeOptions& a, const PipelineOptions& p, std::ostream& out) {
    const auto paths = collect_dumps(a.inputs);
    const auto dumps = load_dumps(paths);
    const auto& h = dumps.front().header();
    for (const auto& d : dumps)
        if (d.header().layers != h.layers || d.header().heads != h.heads)
            throw std::runtime_error("dumps disagree on layer/head counts");
    if (p.k == 0 || p.k > dumps.front().head_count())
        throw UsageError("--k must lie in [1, L*H] = [1, " + std::to_string(dumps.front().head_count()) + "]");
    if (!(p.theta >= 0.0 && p.theta <= 1.0)) throw UsageError("--theta must lie in [0, 1]");

    SelectionConfig cfg{p.tau, p.weights(), p.k, p.theta, p.seed};
    const auto selection = select_over_dataset(dumps, cfg);
    write_text(a.out, to_json(selection));
    fs::path hist = a.hist.empty() ? fs::path(a.out).replace_extension(".layers.csv") : fs::path(a.hist);
    write_text(hist, layer_histogram_csv(selection, h.layers));
    out << "selected " << selection.heads.size() << " of " << dumps.front().head_count() << " heads over "
        << dumps.size() << " image(s)\n";
    return kExitOk;
}

// ---- discover ------------------------------------------------------------------------------

struct DiscoverOptions {
    std::vector<std::string> inputs;
    std::string selection;
    std::string out = "-";
};

int cmd_discover(const DiscoverOptions& d, const PipelineOptions& p, std::ostream& out) {
    if (d.selection.empty()) throw UsageError("--selection is required");
    const auto selection = read_head_selection(d.selection);
    const auto paths = collect_dumps(d.inputs);
    DiscoveryConfig cfg{p.tau, p.weights(), p.tau_cut, p.epsilon};
    if (!(cfg.tau_cut > 0.0 && cfg.tau_cut < 1.0)) throw UsageError("--tau-cut must lie in (0, 1)");
    if (!(cfg.epsilon > 0.0 && cfg.epsilon < 1.0)) throw UsageError("--epsilon must lie in (0, 1)");

    std::vector<std::string> lines(paths.size());
    parallel_for(paths.size(), [&](std::size_t i) {
        const auto dump = read_dump(paths[i]);
        const auto result = discover(dump, selection, cfg);
        lines[i] = prediction_json_line(paths[i].stem().string(), result.bbox_pixels);
    });
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    if (d.out == "-") out << text;
    else write_text(d.out, text);
    return kExitOk;
}

// ---- eval ----------------------------------------------------------------------------------

struct EvalOptions {
    std::string preds, gt, chair, synonyms, pope;
};

int cmd_eval(const EvalOptions& e, std::ostream& out) {
    if (e.preds.empty() != e.gt.empty()) throw UsageError("--preds and --gt must be given together");
    if (e.preds.empty() && e.chair.empty() && e.pope.empty())
        throw UsageError("nothing to evaluate: pass --preds/--gt, --chair or --pope");
    if (!e.preds.empty()) {
        const double c = corloc(read_predictions(e.preds), read_ground_truth_boxes(e.gt));
        out << "CorLoc: " << fixed2(c) << "\n";
    }
    if (!e.chair.empty()) {
        std::map<std::string, std::string> synonyms;
        if (!e.synonyms.empty()) synonyms = read_synonyms(e.synonyms);
        const auto records = read_caption_records(e.chair, synonyms);
        const auto s = chair(records);
        out << "CHAIR_S: " << fixed2(s.chair_s) << "\n" << "CHAIR_I: " << fixed2(s.chair_i) << "\n";
    }
    if (!e.pope.empty()) {
        const auto outcomes = read_pope_outcomes(e.pope);
        const auto s = pope_scores(outcomes);
        out << "POPE accuracy: " << fixed2(s.accuracy) << "\n"
            << "POPE precision: " << fixed2(s.precision) << "\n"
            << "POPE recall: " << fixed2(s.recall) << "\n"
            << "POPE F1: " << fixed2(s.f1) << "\n";
    }
    return kExitOk;
}

// ---- render --------------------------------------------------------------------------------

struct RenderOptions {
    std::string input;
    std::string selection;
    int layer = -1;
    int head = -1;
    std::string component = "ens";
    bool no_invert = false;
    std::string out = "saliency.pgm";
};

std::string to_pgm(const SaliencyMap& map, std::uint32_t patch_size) {
    const std::uint32_t w = map.grid_w * patch_size, h = map.grid_h * patch_size;
    std::string data = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    data.reserve(data.size() + std::size_t(w) * h);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const float v = map.values[std::size_t(y / patch_size) * map.grid_w + x / patch_size];
            data.push_back(char(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
        }
    return data;
}

int cmd_render(const RenderOptions& r, const PipelineOptions& p, std::ostream& out) {
    const auto dump = read_dump(r.input);
    const auto& h = dump.header();
    SimilarityMap map;
    if (!r.selection.empty()) {
        map = aggregate_affinity(dump, read_head_selection(r.selection), p.tau, p.weights());
    } else {
        if (r.layer < 0 || r.head < 0) throw UsageError("render needs --selection or --layer/--head");
        const HeadId id{std::uint32_t(r.layer), std::uint32_t(r.head)};
        if (!dump.contains(id)) throw UsageError("head " + to_string(id) + " outside dump");
        if (r.component == "ens") map = head_ensemble(dump, id, p.tau, p.weights());
        else if (r.component == "q") map = component_similarity(dump.tensor(id, Component::query), p.tau, MapKind::query);
        else if (r.component == "k") map = component_similarity(dump.tensor(id, Component::key), p.tau, MapKind::key);
        else if (r.component == "v") map = component_similarity(dump.tensor(id, Component::value), p.tau, MapKind::value);
        else throw UsageError("--component must be one of q, k, v, ens");
    }
    write_text(r.out, to_pgm(saliency(map, h.grid_h, h.grid_w, !r.no_invert), h.patch_size));
    out << "wrote " << r.out << "\n";
    return kExitOk;
}

// ---- decode --------------------------------------------------------------------------------

struct DecodeOptions {
    std::string standard, guidance;
    std::size_t max_new_tokens = 64;
};

int cmd_decode(const DecodeOptions& d, const PipelineOptions& p, std::ostream& out) {
    GuidanceConfig cfg;
    cfg.alpha = p.alpha;
    cfg.max_new_tokens = d.max_new_tokens;
    try {
        cfg.mode = parse_mode(p.mode);
        validate(cfg);
    } catch (const DecodeError& e) {
        throw UsageError(e.what());
    }
    const auto tokens = greedy_decode(read_logit_stream(d.standard, Branch::standard),
                                      read_logit_stream(d.guidance, Branch::guidance), cfg);
    for (std::size_t i = 0; i < tokens.size(); ++i) out << (i ? " " : "") << tokens[i];
    out << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Object-centric attention-head analysis and discovery toolkit", "objdino"};
    app.require_subcommand(1);
    PipelineOptions pipeline;
    app.add_option("--seed", pipeline.seed, "random seed")->envname("OBJDINO_SEED");

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic planted corpus");
    gen_cmd->add_option("--seed", gen.seed, "corpus seed")->envname("OBJDINO_SEED");
    gen_cmd->add_option("--images", gen.images, "number of images");
    gen_cmd->add_option("--grid", gen.grid, "patch grid side")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--layers", gen.layers, "layers L")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--heads", gen.heads, "heads per layer H")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--dim", gen.dim, "head dimension d")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--patch", gen.patch, "patch size in pixels")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--sigma", gen.sigma, "noise sigma")->check(CLI::NonNegativeNumber);
    gen_cmd->add_option("--planted", gen.planted, "planted heads, e.g. \"11:0,11:1,9:3\"")->required();
    gen_cmd->add_option("--distractors", gen.distractors, "distractor groups, ';'-separated head lists");
    gen_cmd->add_option("--out", gen.out, "output directory");

    AnalyzeOptions analyze;
    auto* analyze_cmd = app.add_subcommand("analyze", "select object-centric heads");
    analyze_cmd->add_option("dumps", analyze.inputs, "dump files or directories")->required();
    add_similarity_flags(analyze_cmd, pipeline);
    analyze_cmd->add_option("--k", pipeline.k, "k-means clusters")->envname("OBJDINO_K");
    analyze_cmd->add_option("--theta", pipeline.theta, "frequency threshold")->envname("OBJDINO_THETA");
    analyze_cmd->add_option("--seed", pipeline.seed, "k-means seed")->envname("OBJDINO_SEED");
    analyze_cmd->add_option("--out", analyze.out, "head selection JSON");
    analyze_cmd->add_option("--hist", analyze.hist, "per-layer histogram CSV");

    DiscoverOptions disc;
    auto* discover_cmd = app.add_subcommand("discover", "normalized-cut object discovery");
    discover_cmd->add_option("dumps", disc.inputs, "dump files or directories")->required();
    discover_cmd->add_option("--selection", disc.selection, "head selection JSON");
    add_similarity_flags(discover_cmd, pipeline);
    discover_cmd->add_option("--tau-cut", pipeline.tau_cut, "edge threshold")->envname("OBJDINO_TAU_CUT");
    discover_cmd->add_option("--epsilon", pipeline.epsilon, "floor edge weight")->envname("OBJDINO_EPSILON");
    discover_cmd->add_option("--seed", pipeline.seed, "unused; accepted for uniformity")->envname("OBJDINO_SEED");
    discover_cmd->add_option("--out", disc.out, "predictions JSON lines ('-' for stdout)");

    EvalOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "CorLoc / CHAIR / POPE");
    eval_cmd->add_option("--preds", ev.preds, "predictions JSON lines");
    eval_cmd->add_option("--gt", ev.gt, "ground-truth boxes JSON lines");
    eval_cmd->add_option("--chair", ev.chair, "caption records JSON lines");
    eval_cmd->add_option("--synonyms", ev.synonyms, "surface -> canonical JSON map");
    eval_cmd->add_option("--pope", ev.pope, "POPE outcomes JSON lines");

    RenderOptions rend;
    auto* render_cmd = app.add_subcommand("render", "write an inverted saliency PGM");
    render_cmd->add_option("dump", rend.input, "dump file")->required();
    render_cmd->add_option("--selection", rend.selection, "aggregate over these heads");
    render_cmd->add_option("--layer", rend.layer, "single head layer");
    render_cmd->add_option("--head", rend.head, "single head index");
    render_cmd->add_option("--component", rend.component, "q, k, v or ens");
    render_cmd->add_flag("--no-invert", rend.no_invert, "keep raw orientation");
    add_similarity_flags(render_cmd, pipeline);
    render_cmd->add_option("--out", rend.out, "output PGM");

    DecodeOptions dec;
    auto* decode_cmd = app.add_subcommand("decode", "greedy guided decoding over recorded logits");
    decode_cmd->add_option("--std", dec.standard, "standard-branch LOGITS01 file")->required();
    decode_cmd->add_option("--guid", dec.guidance, "guidance-branch LOGITS01 file")->required();
    decode_cmd->add_option("--alpha", pipeline.alpha, "guidance weight")->envname("OBJDINO_ALPHA");
    decode_cmd->add_option("--mode", pipeline.mode, "additive or convex")->envname("OBJDINO_MODE");
    decode_cmd->add_option("--max-new-tokens", dec.max_new_tokens, "generation cap");
    decode_cmd->add_option("--seed", pipeline.seed, "unused; accepted for uniformity")->envname("OBJDINO_SEED");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen(gen, out);
        if (*analyze_cmd) return cmd_analyze(analyze, pipeline, out);
        if (*discover_cmd) return cmd_discover(disc, pipeline, out);
        if (*eval_cmd) return cmd_eval(ev, out);
        if (*render_cmd) return cmd_render(rend, pipeline, out);
        if (*decode_cmd) return cmd_decode(dec, pipeline, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace objdino
