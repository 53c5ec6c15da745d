// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

// urbansplat command-line tool. Talks to the library only through the C
// interface.

#include "urbansplat/urbansplat.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;
constexpr int kWaymoTestEvery = 4;
constexpr const char* kTrainConfigFile = "train_config.json";
constexpr const char* kInitConfigFile = "init_config.json";
constexpr const char* kTrainLogFile = "train_log.jsonl";

/// Carries an exit code up to main.
struct Failure {
    int code;
    std::string message;
};

void check(usp_status status)
{
    if (status != USP_OK) {
        throw Failure{status == USP_ERR_VALIDATION ? kExitValidation : kExitRuntime, usp_last_error()};
    }
}

[[noreturn]] void invalid(const std::string& message) { throw Failure{kExitValidation, message}; }

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        invalid("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw Failure{kExitRuntime, "cannot write " + path.string()};
    }
}

json parse_json(const std::string& text, const std::string& what)
{
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        invalid(what + ": " + e.what());
    }
}

/// SEED from the environment, when set.
std::optional<std::uint64_t> env_seed()
{
    const char* s = std::getenv("SEED");
    if (!s || !*s) {
        return std::nullopt;
    }
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used != std::string(s).size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        invalid(std::string("SEED must be a non-negative integer, got '") + s + "'");
    }
}

struct DatasetHandle {
    usp_dataset* p = nullptr;
    explicit DatasetHandle(const std::string& root) { check(usp_dataset_load(root.c_str(), &p)); }
    ~DatasetHandle() { usp_dataset_free(p); }
    DatasetHandle(const DatasetHandle&) = delete;
    DatasetHandle& operator=(const DatasetHandle&) = delete;
};

struct SceneHandle {
    usp_scene* p = nullptr;
    SceneHandle() = default;
    explicit SceneHandle(const std::string& dir) { check(usp_scene_load(dir.c_str(), &p)); }
    ~SceneHandle() { usp_scene_free(p); }
    SceneHandle(const SceneHandle&) = delete;
    SceneHandle& operator=(const SceneHandle&) = delete;
};

/// Explicit camera index, or the first recorded view of timestep `frame`.
int resolve_camera(const usp_scene* scene, int frame, std::optional<int> camera)
{
    if (camera) {
        return *camera;
    }
    int views = 0;
    check(usp_scene_view_count(scene, &views));
    for (int i = 0; i < views; ++i) {
        int t = 0;
        check(usp_scene_view_timestep(scene, i, &t));
        if (t == frame) {
            return i;
        }
    }
    invalid("no recorded view has timestep " + std::to_string(frame) + "; pass --camera");
}

struct SplitFlags {
    bool waymo = false;
    std::optional<int> test_every;

    void add(CLI::App* cmd)
    {
        auto* w = cmd->add_flag("--waymo-split", waymo, "Hold out every 4th frame (indices 3, 7, ...)");
        cmd->add_option("--test-every", test_every, "Hold out frames with index % n == n - 1 (0: none)")
            ->excludes(w)
            ->check(CLI::NonNegativeNumber);
    }

    std::optional<int> value() const
    {
        if (waymo) {
            return kWaymoTestEvery;
        }
        return test_every;
    }
};

// ---- subcommands ----------------------------------------------------------

struct TrainArgs {
    std::string data, config, out;
    SplitFlags split;
    int threads = 0;
    bool quiet = false;
};

int run_train(const TrainArgs& a)
{
    json config = parse_json(read_file(a.config), a.config);
    if (!config.is_object()) {
        invalid(a.config + ": expected a JSON object");
    }
    json init = json::object();
    if (config.contains("init")) {
        init = config["init"];
        config.erase("init");
    }
    if (const auto seed = env_seed()) {
        config["seed"] = *seed;
        if (init.is_object()) {
            init["seed"] = *seed;
        }
    }
    if (const auto te = a.split.value()) {
        config["test_every"] = *te;
    }
    if (a.threads > 0) {
        config["threads"] = a.threads;
    }
    const std::string config_text = config.dump(2) + "\n";
    const std::string init_text = init.dump(2) + "\n";

    DatasetHandle dataset(a.data);
    SceneHandle scene;
    check(usp_scene_init(dataset.p, init_text.c_str(), &scene.p));

    fs::create_directories(a.out);
    write_file(fs::path(a.out) / kTrainConfigFile, config_text);
    write_file(fs::path(a.out) / kInitConfigFile, init_text);
    std::ofstream log(fs::path(a.out) / kTrainLogFile, std::ios::binary);
    if (!log) {
        throw Failure{kExitRuntime, "cannot write " + (fs::path(a.out) / kTrainLogFile).string()};
    }
    struct Sink {
        std::ofstream* log;
        bool quiet;
        long lines = 0;
    } sink{&log, a.quiet};
    const auto on_log = [](const char* line, void* user) {
        auto* s = static_cast<Sink*>(user);
        *s->log << line << '\n';
        if (!s->quiet && ++s->lines % 100 == 0) {
            std::fprintf(stderr, "%s\n", line);
        }
    };
    check(usp_train(dataset.p, scene.p, config_text.c_str(), a.out.c_str(), on_log, &sink));
    log.close();
    check(usp_scene_save(scene.p, a.out.c_str()));
    return 0;
}

struct RenderArgs {
    std::string ckpt, out, script;
    int frame = 0;
    std::optional<int> camera;
    int threads = 0;
};

int run_render(const RenderArgs& a)
{
    SceneHandle scene(a.ckpt);
    const int cam = resolve_camera(scene.p, a.frame, a.camera);
    check(usp_render_png(scene.p, cam, a.frame, a.threads, a.out.c_str()));
    return 0;
}

int run_edit(const RenderArgs& a)
{
    SceneHandle scene(a.ckpt);
    const std::string script = read_file(a.script);
    SceneHandle edited;
    check(usp_scene_edit(scene.p, script.c_str(), &edited.p));
    const int cam = resolve_camera(edited.p, a.frame, a.camera);
    check(usp_render_png(edited.p, cam, a.frame, a.threads, a.out.c_str()));
    return 0;
}

int run_decompose(const RenderArgs& a, const std::string& target)
{
    SceneHandle scene(a.ckpt);
    std::optional<int> id;
    if (target != "background") {
        try {
            std::size_t used = 0;
            id = std::stoi(target, &used);
            if (used != target.size()) {
                throw std::invalid_argument(target);
            }
        } catch (const std::exception&) {
            invalid("--target must be 'background' or an object id, got '" + target + "'");
        }
    }
    const int cam = resolve_camera(scene.p, a.frame, a.camera);
    check(usp_render_component_png(scene.p, id ? &*id : nullptr, cam, a.frame, a.threads, a.out.c_str()));
    return 0;
}

struct EvalArgs {
    std::string ckpt, data, report, images;
    std::string split = "test";
    SplitFlags split_flags;
    int threads = 0;
};

int run_eval(const EvalArgs& a)
{
    // The split defaults to the one the checkpoint was trained with.
    int test_every = 0;
    if (const auto te = a.split_flags.value()) {
        test_every = *te;
    } else if (fs::exists(fs::path(a.ckpt) / kTrainConfigFile)) {
        const json c = parse_json(read_file(fs::path(a.ckpt) / kTrainConfigFile), kTrainConfigFile);
        if (c.contains("test_every") && c["test_every"].is_number_integer()) {
            test_every = c["test_every"].get<int>();
        }
    }
    const usp_split split = a.split == "train" ? USP_SPLIT_TRAIN : a.split == "all" ? USP_SPLIT_ALL : USP_SPLIT_TEST;
    SceneHandle scene(a.ckpt);
    DatasetHandle dataset(a.data);
    char* raw = nullptr;
    check(usp_evaluate(scene.p, dataset.p, test_every, split, a.threads, a.images.empty() ? nullptr : a.images.c_str(),
                       &raw));
    const std::unique_ptr<char, decltype(&usp_string_free)> report(raw, usp_string_free);
    write_file(a.report, report.get());
    const json parsed = json::parse(report.get());
    std::cout << parsed["aggregate"].dump() << '\n';
    return 0;
}

struct SynthArgs {
    std::string spec, out, truth;
    double sigma_t = 0.0;
    double sigma_yaw_deg = 0.0;
    std::uint64_t noise_seed = 0;
};

int run_synth(const SynthArgs& a)
{
    const std::string spec = read_file(a.spec);
    const auto seed = env_seed();
    const fs::path truth = a.truth.empty() ? fs::path(a.out) / "truth_ckpt" : fs::path(a.truth);
    const double deg = std::acos(-1.0) / 180.0;
    check(usp_synth_generate(spec.c_str(), seed ? static_cast<std::int64_t>(*seed) : -1, a.sigma_t,
                             a.sigma_yaw_deg * deg, a.noise_seed, a.out.c_str(), truth.string().c_str()));
    return 0;
}

void add_render_options(CLI::App* cmd, RenderArgs& a, bool with_out = true)
{
    cmd->add_option("--ckpt", a.ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--frame", a.frame, "Timestep to render")->required()->check(CLI::NonNegativeNumber);
    cmd->add_option("--camera", a.camera, "Recorded view index (default: the view of --frame)")
        ->check(CLI::NonNegativeNumber);
    if (with_out) {
        cmd->add_option("--out", a.out, "Output PNG")->required();
    }
    cmd->add_option("--threads", a.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"urbansplat: dynamic urban scene reconstruction with Gaussian splats"};
    app.set_version_flag("--version", usp_version());
    app.require_subcommand(1);

    TrainArgs train;
    auto* cmd_train = app.add_subcommand("train", "Initialize from LiDAR and optimize a scene");
    cmd_train->add_option("--data", train.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd_train->add_option("--config", train.config, "Train config JSON (optional \"init\" section)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_train->add_option("--out", train.out, "Output directory: checkpoint, config and log")->required();
    cmd_train->add_option("--threads", train.threads, "Worker threads (0: config value)")
        ->check(CLI::NonNegativeNumber);
    cmd_train->add_flag("--quiet", train.quiet, "No progress lines on stderr");
    train.split.add(cmd_train);

    RenderArgs render;
    auto* cmd_render = app.add_subcommand("render", "Render a recorded view of a checkpoint");
    add_render_options(cmd_render, render);

    EvalArgs eval;
    auto* cmd_eval = app.add_subcommand("eval", "Score a checkpoint against a dataset");
    cmd_eval->add_option("--ckpt", eval.ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    cmd_eval->add_option("--data", eval.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd_eval->add_option("--split", eval.split, "Frames to score")
        ->check(CLI::IsMember({"test", "train", "all"}));
    cmd_eval->add_option("--report", eval.report, "Output JSON report")->required();
    cmd_eval->add_option("--images", eval.images, "Directory for the rendered frames (NNNN.png)");
    cmd_eval->add_option("--threads", eval.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
    eval.split_flags.add(cmd_eval);

    RenderArgs edit;
    auto* cmd_edit = app.add_subcommand("edit", "Apply an edit script and render");
    add_render_options(cmd_edit, edit);
    cmd_edit->add_option("--script", edit.script, "Edit script JSON")->required()->check(CLI::ExistingFile);

    RenderArgs decompose;
    std::string target;
    auto* cmd_decompose = app.add_subcommand("decompose", "Render the background or one object alone");
    add_render_options(cmd_decompose, decompose);
    cmd_decompose->add_option("--target", target, "'background' or an object id")->required();

    SynthArgs synth;
    auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic dataset and its ground-truth checkpoint");
    cmd_synth->add_option("--spec", synth.spec, "Synthetic scene spec JSON")->required()->check(CLI::ExistingFile);
    cmd_synth->add_option("--out", synth.out, "Dataset output directory")->required();
    cmd_synth->add_option("--truth-ckpt", synth.truth, "Ground-truth checkpoint directory (default: OUT/truth_ckpt)");
    cmd_synth->add_option("--sigma-t", synth.sigma_t, "Pose translation noise, meters")
        ->check(CLI::NonNegativeNumber);
    cmd_synth->add_option("--sigma-yaw", synth.sigma_yaw_deg, "Pose yaw noise, degrees")
        ->check(CLI::NonNegativeNumber);
    cmd_synth->add_option("--noise-seed", synth.noise_seed, "Seed of the pose noise");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        if (cmd_train->parsed()) return run_train(train);
        if (cmd_render->parsed()) return run_render(render);
        if (cmd_eval->parsed()) return run_eval(eval);
        if (cmd_edit->parsed()) return run_edit(edit);
        if (cmd_decompose->parsed()) return run_decompose(decompose, target);
        if (cmd_synth->parsed()) return run_synth(synth);
    } catch (const Failure& f) {
        std::fprintf(stderr, "error: %s\n", f.message.c_str());
        return f.code;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitValidation;
}
