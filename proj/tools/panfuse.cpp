// panfuse: command line front end for crop planning, fusion, evaluation,
// loss checks, sampling and visualization.
//
// Exit codes: 0 success, 1 runtime or partial failure, 2 usage or config error.

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "panfuse/batch.hpp"
#include "panfuse/config.hpp"
#include "panfuse/fuse.hpp"
#include "panfuse/io.hpp"
#include "panfuse/losses.hpp"
#include "panfuse/metrics.hpp"
#include "panfuse/sampler.hpp"
#include "panfuse/tiler.hpp"
#include "panfuse/viz.hpp"

namespace fs = std::filesystem;
using namespace panfuse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

void write_png(const Raster<std::uint8_t>& rgb, const fs::path& path) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw WriteError("cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw WriteError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(rgb.width()), static_cast<png_uint_32>(rgb.height()), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = rgb.width() * 3;
    for (std::size_t y = 0; y < rgb.height(); ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.values().data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

void write_viz(const PanopticMap& pan, const LabelSpec& labels, const fs::path& labels_path, const fs::path& out) {
    const auto colors = viz::ColorMap::from_label_json(read_json(labels_path), labels.n_classes());
    write_png(viz::colorize(pan, labels, colors), out);
}

void log_line(const nlohmann::json& j) { std::cerr << j.dump() << "\n"; }

std::vector<std::size_t> parse_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            const long v = std::stol(item, &pos);
            if (pos != item.size() || v < 1) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("bad list entry '" + item + "'");
        }
    }
    return out;
}

PipelineConfig load_or_default(const std::string& path) {
    return path.empty() ? PipelineConfig{} : load_config(path);
}

// ---------------------------------------------------------------------------

struct PlanArgs {
    std::size_t width = 0, height = 0;
    std::string scales, out, config;
    std::optional<std::size_t> overlap;
};

int cmd_plan(const PlanArgs& a) {
    const auto cfg = load_or_default(a.config);
    const auto scales = a.scales.empty() ? cfg.tiler.scales : parse_list(a.scales);
    const auto plan = tiler::plan_crops(a.width, a.height, scales, a.overlap.value_or(cfg.tiler.overlap));
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : plan.crops)
        j.push_back({{"scale", c.scale}, {"x", c.x}, {"y", c.y}, {"w", c.width}, {"h", c.height}});
    if (a.out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json(j, a.out);
    return kExitOk;
}

struct FuseArgs {
    std::string probs, boundary, labels, config, out, viz, mask, dump_instances, manifest;
    std::optional<std::size_t> threads;
    bool fail_fast = false;
};

void dump_instances(const FuseResult& res, const fs::path& dir) {
    fs::create_directories(dir);
    for (std::size_t k = 0; k < res.segments.size(); ++k) {
        const auto& s = res.segments[k];
        write_tensor(s.local_ids, dir / ("segment_" + std::to_string(k) + ".pft"));
        nlohmann::json cuts = nlohmann::json::array();
        for (const auto& c : s.delineation.cuts)
            cuts.push_back({{"depth", c.depth}, {"nodes", c.nodes}, {"lambda", c.lambda}, {"cost", c.discrete_cost},
                            {"stable", c.stable}, {"applied", c.applied}});
        write_json({{"class_id", s.class_id},
                    {"first_pixel", s.first_pixel},
                    {"instances", s.delineation.instances.size()},
                    {"dropped_nodes", s.delineation.dropped.size()},
                    {"cuts", cuts},
                    {"warnings", s.delineation.warnings}},
                   dir / ("segment_" + std::to_string(k) + ".json"));
    }
}

int cmd_fuse(const FuseArgs& a) {
    auto cfg = load_or_default(a.config);
    if (a.fail_fast) cfg.run.fail_fast = true;
    if (a.threads) cfg.run.threads = *a.threads;
    cfg.run.threads = batch::threads_from_env(cfg.run.threads);
    cfg.validate();
    const LabelSpec labels = read_label_spec(a.labels);

    if (!a.manifest.empty()) {
        const auto jobs = batch::read_manifest(a.manifest);
        log_line({{"event", "batch_start"}, {"images", jobs.size()}, {"threads", cfg.run.threads}});
        const auto summary = batch::run_fuse_batch(jobs, cfg, labels, cfg.run.threads,
                                                   [](const batch::ImageOutcome& o) { log_line(batch::to_json(o)); });
        nlohmann::json failures = nlohmann::json::array();
        for (const auto& o : summary.images)
            if (o.status != batch::ImageOutcome::Status::Ok) failures.push_back({{"id", o.id}, {"error", o.error}});
        log_line({{"event", "batch_end"},
                  {"ok", summary.count(batch::ImageOutcome::Status::Ok)},
                  {"failed", summary.count(batch::ImageOutcome::Status::Failed)},
                  {"skipped", summary.count(batch::ImageOutcome::Status::Skipped)},
                  {"failures", failures}});
        return summary.all_ok() ? kExitOk : kExitFailure;
    }

    if (a.probs.empty() || a.boundary.empty() || a.out.empty())
        throw ConfigError("fuse needs --probs, --boundary and --out (or --manifest)");
    const auto probs = as<float>(read_tensor(a.probs), "probs");
    const auto bnd = as<float>(read_tensor(a.boundary), "boundary");
    std::optional<BinaryMap> mask;
    if (!a.mask.empty()) mask = as<std::uint8_t>(read_tensor(a.mask), "mask");
    const auto res = fuse(probs, bnd, labels, cfg.fuse, mask ? &*mask : nullptr, !a.dump_instances.empty());
    write_tensor(panoptic_to_dense(res.panoptic), a.out);
    if (!a.viz.empty()) write_viz(res.panoptic, labels, a.labels, a.viz);
    if (!a.dump_instances.empty()) dump_instances(res, a.dump_instances);
    batch::ImageOutcome o;
    o.id = fs::path(a.probs).stem().string();
    o.status = batch::ImageOutcome::Status::Ok;
    o.timings = res.timings;
    o.warnings = res.warnings;
    for (const auto& t : res.timings) o.seconds += t.seconds;
    log_line(batch::to_json(o));
    return kExitOk;
}

struct EvalArgs {
    std::string pred, gt, labels, out;
};

int cmd_eval(const EvalArgs& a) {
    const LabelSpec labels = read_label_spec(a.labels);
    std::vector<fs::path> gt_files;
    for (const auto& e : fs::directory_iterator(a.gt))
        if (e.is_regular_file() && e.path().extension() == ".pft") gt_files.push_back(e.path());
    std::sort(gt_files.begin(), gt_files.end());
    if (gt_files.empty()) throw LoadError(LoadError::Kind::Io, "no .pft files in " + a.gt);

    metrics::Evaluator ev(labels);
    int status = kExitOk;
    std::size_t evaluated = 0;
    for (const auto& g : gt_files) {
        const fs::path p = fs::path(a.pred) / g.filename();
        try {
            const auto gt = read_panoptic(g);
            const auto pred = read_panoptic(p);
            ev.add_panoptic(pred, gt);
            ev.add_semantic(semantic_of(pred), semantic_of(gt));
            ++evaluated;
        } catch (const Error& e) {
            log_line({{"event", "eval_error"}, {"file", g.filename().string()}, {"error", e.what()}});
            status = kExitFailure;
        }
    }
    auto report = metrics::to_json(ev.report(), labels);
    report["images"] = evaluated;
    if (a.out.empty())
        std::cout << report.dump(2) << "\n";
    else
        write_json(report, a.out);
    return status;
}

struct LossArgs {
    std::string kind, probs, targets, labels;
    double t_k = 0.2;
    int ignore_id = 255;
};

int cmd_loss(const LossArgs& a) {
    losses::LossConfig cfg;
    cfg.t_k = a.t_k;
    const auto probs = as<float>(read_tensor(a.probs), "probs");
    double value = 0.0;
    if (a.kind == "sem") {
        int ignore = a.ignore_id;
        if (!a.labels.empty()) ignore = read_label_spec(a.labels).ignore_id();
        if (ignore < 0 || ignore > 0xFFFF) throw ConfigError("--ignore-id out of range");
        const auto targets = as<ClassId>(read_tensor(a.targets), "targets");
        value = losses::bootstrapped_ce(probs, targets, static_cast<ClassId>(ignore), cfg);
    } else {
        const auto targets = as<std::uint8_t>(read_tensor(a.targets), "targets");
        value = losses::binary_ce(probs, targets, cfg);
    }
    std::printf("%.17g\n", value);
    return kExitOk;
}

struct SampleArgs {
    std::string labeled, unlabeled, ids, out, config;
    std::optional<std::size_t> n;
    bool no_dedupe = false;
};

int cmd_sample(const SampleArgs& a) {
    auto cfg = load_or_default(a.config).sampler;
    if (a.n) cfg.n_neighbors = *a.n;
    if (a.no_dedupe) cfg.dedupe = false;
    cfg.validate();
    const auto ids = read_json(a.ids);
    std::vector<std::string> lid, uid;
    try {
        lid = ids.at("labeled").get<std::vector<std::string>>();
        uid = ids.at("unlabeled").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(LoadError::Kind::Format, a.ids + ": " + e.what());
    }
    const auto labeled = features_from_rows(as<float>(read_tensor(a.labeled), "labeled features"), lid);
    const auto unlabeled = features_from_rows(as<float>(read_tensor(a.unlabeled), "unlabeled features"), uid);
    const auto sel = sampler::select_neighbors(labeled, unlabeled, cfg);

    nlohmann::json picks = nlohmann::json::array();
    for (const auto& p : sel.picks) {
        nlohmann::json list = nlohmann::json::array();
        for (std::size_t k = 0; k < p.unlabeled.size(); ++k)
            list.push_back({{"id", uid[p.unlabeled[k]]}, {"similarity", p.similarity[k]}});
        picks.push_back({{"labeled", lid[p.labeled]}, {"picks", list}});
    }
    for (const auto& w : sel.warnings) log_line({{"event", "warning"}, {"message", w}});
    const nlohmann::json doc = {{"n_neighbors", cfg.n_neighbors}, {"dedupe", cfg.dedupe},
                                {"selection", picks}, {"warnings", sel.warnings}};
    if (a.out.empty())
        std::cout << doc.dump(2) << "\n";
    else
        write_json(doc, a.out);
    return kExitOk;
}

struct VizArgs {
    std::string pan, labels, out;
};

int cmd_viz(const VizArgs& a) {
    const LabelSpec labels = read_label_spec(a.labels);
    write_viz(read_panoptic(a.pan), labels, a.labels, a.out);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"panfuse: panoptic fusion of class-probability and boundary maps"};
    app.require_subcommand(0, 1);

    bool print_defaults = false, dump_config = false;
    std::string global_config;
    app.add_flag("--print-defaults", print_defaults, "Print the default configuration as TOML and exit");
    app.add_flag("--dump-config", dump_config, "Print the effective configuration (with --config) and exit");
    app.add_option("--config", global_config, "Pipeline configuration (TOML, or JSON by extension)");

    PlanArgs plan;
    auto* plan_cmd = app.add_subcommand("plan", "Emit the crop plan as JSON");
    plan_cmd->add_option("--width", plan.width)->required();
    plan_cmd->add_option("--height", plan.height)->required();
    plan_cmd->add_option("--scales", plan.scales, "Comma separated, e.g. 1,2");
    plan_cmd->add_option("--overlap", plan.overlap);
    plan_cmd->add_option("--config", plan.config);
    plan_cmd->add_option("--out", plan.out);

    FuseArgs fa;
    auto* fuse_cmd = app.add_subcommand("fuse", "Fuse one image, or a manifest of images");
    fuse_cmd->add_option("--probs", fa.probs);
    fuse_cmd->add_option("--boundary", fa.boundary);
    fuse_cmd->add_option("--labels", fa.labels)->required();
    fuse_cmd->add_option("--config", fa.config);
    fuse_cmd->add_option("--out", fa.out);
    fuse_cmd->add_option("--viz", fa.viz, "PNG visualization of the result");
    fuse_cmd->add_option("--mask", fa.mask, "uint8 PFT; nonzero pixels are forced to ignore");
    fuse_cmd->add_option("--dump-instances", fa.dump_instances, "Directory for per-segment instance masks");
    fuse_cmd->add_option("--manifest", fa.manifest, "Batch manifest JSON");
    fuse_cmd->add_option("--threads", fa.threads);
    fuse_cmd->add_flag("--fail-fast", fa.fail_fast);

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "mIoU and PQ over a directory of panoptic maps");
    eval_cmd->add_option("--pred", ea.pred)->required();
    eval_cmd->add_option("--gt", ea.gt)->required();
    eval_cmd->add_option("--labels", ea.labels)->required();
    eval_cmd->add_option("--out", ea.out);

    LossArgs la;
    auto* loss_cmd = app.add_subcommand("loss", "Evaluate a head loss on stored maps");
    loss_cmd->add_option("--kind", la.kind)->required()->check(CLI::IsMember({"sem", "bnd"}));
    loss_cmd->add_option("--probs", la.probs)->required();
    loss_cmd->add_option("--targets", la.targets)->required();
    loss_cmd->add_option("--t-k", la.t_k);
    loss_cmd->add_option("--ignore-id", la.ignore_id);
    loss_cmd->add_option("--labels", la.labels, "Take the ignore id from a label spec");

    SampleArgs sa;
    auto* sample_cmd = app.add_subcommand("sample", "Pick unlabeled images nearest to each labeled one");
    sample_cmd->add_option("--labeled", sa.labeled)->required();
    sample_cmd->add_option("--unlabeled", sa.unlabeled)->required();
    sample_cmd->add_option("--ids", sa.ids, "JSON {\"labeled\": [...], \"unlabeled\": [...]}")->required();
    sample_cmd->add_option("-n", sa.n);
    sample_cmd->add_option("--config", sa.config);
    sample_cmd->add_flag("--no-dedupe", sa.no_dedupe);
    sample_cmd->add_option("--out", sa.out);

    VizArgs va;
    auto* viz_cmd = app.add_subcommand("viz", "Render a panoptic map to PNG");
    viz_cmd->add_option("--pan", va.pan)->required();
    viz_cmd->add_option("--labels", va.labels)->required();
    viz_cmd->add_option("--out", va.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (print_defaults) {
            std::cout << dump_toml(PipelineConfig{});
            return kExitOk;
        }
        if (dump_config) {
            std::cout << dump_toml(load_or_default(global_config));
            return kExitOk;
        }
        if (*plan_cmd) return cmd_plan(plan);
        if (*fuse_cmd) {
            if (fa.config.empty()) fa.config = global_config;
            return cmd_fuse(fa);
        }
        if (*eval_cmd) return cmd_eval(ea);
        if (*loss_cmd) return cmd_loss(la);
        if (*sample_cmd) {
            if (sa.config.empty()) sa.config = global_config;
            return cmd_sample(sa);
        }
        if (*viz_cmd) return cmd_viz(va);
        std::cout << app.help();
        return kExitConfig;
    } catch (const ConfigError& e) {
        log_line({{"event", "error"}, {"kind", "config"}, {"error", e.what()}});
        return kExitConfig;
    } catch (const std::exception& e) {
        log_line({{"event", "error"}, {"error", e.what()}});
        return kExitFailure;
    }
}
