// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/urbansplat.h"

#include "urbansplat/checkpoint.hpp"
#include "urbansplat/dataset.hpp"
#include "urbansplat/edit.hpp"
#include "urbansplat/errors.hpp"
#include "urbansplat/evaluate.hpp"
#include "urbansplat/init.hpp"
#include "urbansplat/parallel.hpp"
#include "urbansplat/synthbench.hpp"
#include "urbansplat/training.hpp"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

struct usp_dataset {
    urbansplat::Dataset value;
};

struct usp_scene {
    urbansplat::SceneGraph value;
};

namespace {

thread_local std::string last_error;

template <class Fn>
usp_status guarded(Fn&& fn)
{
    last_error.clear();
    try {
        fn();
        return USP_OK;
    } catch (const urbansplat::ValidationError& e) {
        last_error = e.what();
        return USP_ERR_VALIDATION;
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return USP_ERR_RUNTIME;
    } catch (const std::exception& e) {
        last_error = e.what();
        return USP_ERR_RUNTIME;
    } catch (...) {
        last_error = "unknown error";
        return USP_ERR_RUNTIME;
    }
}

template <class T>
const T& require(const T* p, const char* what)
{
    if (!p) {
        throw urbansplat::ValidationError(std::string(what) + " is null");
    }
    return *p;
}

const char* require_str(const char* s, const char* what)
{
    if (!s) {
        throw urbansplat::ValidationError(std::string(what) + " is null");
    }
    return s;
}

template <class T>
T& require_out(T* p)
{
    if (!p) {
        throw urbansplat::ValidationError("output pointer is null");
    }
    return *p;
}

const urbansplat::View& view_at(const urbansplat::SceneGraph& scene, int camera)
{
    if (camera < 0 || static_cast<std::size_t>(camera) >= scene.views.size()) {
        throw urbansplat::ValidationError("camera index " + std::to_string(camera) + " outside 0.." +
                                          std::to_string(static_cast<long>(scene.views.size()) - 1));
    }
    return scene.views[static_cast<std::size_t>(camera)];
}

void check_timestep(const urbansplat::SceneGraph& scene, int t)
{
    if (t < 0 || t >= scene.num_frames) {
        throw urbansplat::ValidationError("frame " + std::to_string(t) + " outside 0.." +
                                          std::to_string(scene.num_frames - 1));
    }
}

char* duplicate(const std::string& s)
{
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) {
        throw std::bad_alloc();
    }
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

} // namespace

extern "C" {

const char* usp_version(void) { return "0.1.0"; }

const char* usp_last_error(void) { return last_error.c_str(); }

void usp_string_free(char* s) { std::free(s); }

usp_status usp_set_threads(int threads)
{
    return guarded([&] {
        if (threads < 0) {
            throw urbansplat::ValidationError("thread count must be >= 0");
        }
        urbansplat::set_default_threads(threads);
    });
}

usp_status usp_dataset_load(const char* root, usp_dataset** out)
{
    return guarded([&] {
        usp_dataset*& slot = require_out(out);
        slot = nullptr;
        auto d = std::make_unique<usp_dataset>();
        d->value = urbansplat::load_dataset(require_str(root, "dataset root"));
        slot = d.release();
    });
}

void usp_dataset_free(usp_dataset* dataset) { delete dataset; }

usp_status usp_dataset_frame_count(const usp_dataset* dataset, int* out)
{
    return guarded([&] { require_out(out) = static_cast<int>(require(dataset, "dataset").value.frames.size()); });
}

usp_status usp_synth_generate(const char* spec_json, int64_t seed_override, double sigma_translation,
                              double sigma_yaw, uint64_t noise_seed, const char* dataset_dir,
                              const char* truth_checkpoint_dir)
{
    return guarded([&] {
        urbansplat::SynthSpec spec = urbansplat::synth_spec_from_json(require_str(spec_json, "spec"));
        if (seed_override >= 0) {
            spec.seed = static_cast<std::uint64_t>(seed_override);
        }
        urbansplat::SynthResult r = urbansplat::generate(spec);
        urbansplat::Dataset ds = std::move(r.dataset);
        if (sigma_translation > 0.0 || sigma_yaw > 0.0) {
            ds = urbansplat::perturb(ds, sigma_translation, sigma_yaw, noise_seed).dataset;
        } else if (sigma_translation < 0.0 || sigma_yaw < 0.0) {
            throw urbansplat::ValidationError("pose noise sigmas must be >= 0");
        }
        urbansplat::save_dataset(ds, require_str(dataset_dir, "dataset directory"));
        if (truth_checkpoint_dir) {
            urbansplat::save_checkpoint(r.scene, truth_checkpoint_dir);
        }
    });
}

usp_status usp_scene_init(const usp_dataset* dataset, const char* init_json, usp_scene** out)
{
    return guarded([&] {
        usp_scene*& slot = require_out(out);
        slot = nullptr;
        const urbansplat::InitConfig config =
            init_json ? urbansplat::init_config_from_json(init_json) : urbansplat::InitConfig{};
        auto s = std::make_unique<usp_scene>();
        s->value = urbansplat::init_scene(require(dataset, "dataset").value, config);
        slot = s.release();
    });
}

usp_status usp_scene_load(const char* checkpoint_dir, usp_scene** out)
{
    return guarded([&] {
        usp_scene*& slot = require_out(out);
        slot = nullptr;
        auto s = std::make_unique<usp_scene>();
        s->value = urbansplat::load_checkpoint(require_str(checkpoint_dir, "checkpoint directory"));
        slot = s.release();
    });
}

usp_status usp_scene_save(const usp_scene* scene, const char* checkpoint_dir)
{
    return guarded([&] {
        urbansplat::save_checkpoint(require(scene, "scene").value,
                                    require_str(checkpoint_dir, "checkpoint directory"));
    });
}

void usp_scene_free(usp_scene* scene) { delete scene; }

usp_status usp_scene_frame_count(const usp_scene* scene, int* out)
{
    return guarded([&] { require_out(out) = require(scene, "scene").value.num_frames; });
}

usp_status usp_scene_view_count(const usp_scene* scene, int* out)
{
    return guarded([&] { require_out(out) = static_cast<int>(require(scene, "scene").value.views.size()); });
}

usp_status usp_scene_view_timestep(const usp_scene* scene, int index, int* out)
{
    return guarded([&] { require_out(out) = view_at(require(scene, "scene").value, index).timestep; });
}

usp_status usp_scene_object_count(const usp_scene* scene, int* out)
{
    return guarded([&] { require_out(out) = static_cast<int>(require(scene, "scene").value.objects.size()); });
}

usp_status usp_scene_object_id(const usp_scene* scene, int index, int* out)
{
    return guarded([&] {
        const auto& objects = require(scene, "scene").value.objects;
        if (index < 0 || static_cast<std::size_t>(index) >= objects.size()) {
            throw urbansplat::ValidationError("object index out of range");
        }
        require_out(out) = objects[static_cast<std::size_t>(index)].id;
    });
}

usp_status usp_scene_edit(const usp_scene* scene, const char* script_json, usp_scene** out)
{
    return guarded([&] {
        usp_scene*& slot = require_out(out);
        slot = nullptr;
        const urbansplat::EditScript script = urbansplat::edit_script_from_json(require_str(script_json, "script"));
        auto s = std::make_unique<usp_scene>();
        s->value = urbansplat::apply_edit(require(scene, "scene").value, script);
        slot = s.release();
    });
}

usp_status usp_train(const usp_dataset* dataset, usp_scene* scene, const char* config_json, const char* out_dir,
                     usp_log_fn on_log, void* user)
{
    return guarded([&] {
        const urbansplat::Dataset& ds = require(dataset, "dataset").value;
        if (!scene) {
            throw urbansplat::ValidationError("scene is null");
        }
        const urbansplat::TrainConfig config = urbansplat::train_config_from_json(require_str(config_json, "config"));
        std::function<void(const urbansplat::IterationMetrics&)> callback;
        if (on_log) {
            callback = [&](const urbansplat::IterationMetrics& m) { on_log(m.to_json_line().c_str(), user); };
        }
        std::optional<std::filesystem::path> dir;
        if (out_dir) {
            dir = out_dir;
        }
        const std::vector<urbansplat::Tracklet>* truth = ds.truth_tracklets.empty() ? nullptr : &ds.truth_tracklets;
        scene->value = urbansplat::train(ds, scene->value, config, callback, dir, truth);
    });
}

usp_status usp_render_png(const usp_scene* scene, int camera, int timestep, int threads, const char* png_path)
{
    return guarded([&] {
        const urbansplat::SceneGraph& s = require(scene, "scene").value;
        check_timestep(s, timestep);
        const urbansplat::Image image = urbansplat::render_image(s, view_at(s, camera).camera, timestep, threads);
        urbansplat::write_png(require_str(png_path, "output path"), image);
    });
}

usp_status usp_render_component_png(const usp_scene* scene, const int* object_id, int camera, int timestep,
                                    int threads, const char* png_path)
{
    return guarded([&] {
        const urbansplat::SceneGraph& s = require(scene, "scene").value;
        check_timestep(s, timestep);
        urbansplat::RenderConfig config;
        config.timestep = timestep;
        config.num_threads = threads;
        if (object_id) {
            if (!s.find_object(*object_id)) {
                throw urbansplat::ValidationError("unknown object id " + std::to_string(*object_id));
            }
            config.include_background = false;
            config.include_object_ids = std::vector<int>{*object_id};
        } else {
            config.include_object_ids = std::vector<int>{};
        }
        const urbansplat::Image image = urbansplat::render_image(s, view_at(s, camera).camera, config);
        urbansplat::write_png(require_str(png_path, "output path"), image);
    });
}

usp_status usp_evaluate(const usp_scene* scene, const usp_dataset* dataset, int test_every, usp_split split,
                        int threads, const char* image_dir, char** report_json)
{
    return guarded([&] {
        char*& slot = require_out(report_json);
        slot = nullptr;
        const urbansplat::Dataset& ds = require(dataset, "dataset").value;
        if (test_every < 0 || test_every == 1) {
            throw urbansplat::ValidationError("test_every must be 0 or >= 2");
        }
        std::vector<std::size_t> frames;
        switch (split) {
        case USP_SPLIT_TRAIN: frames = urbansplat::split_frames(ds.frames.size(), test_every, false); break;
        case USP_SPLIT_TEST: frames = urbansplat::split_frames(ds.frames.size(), test_every, true); break;
        case USP_SPLIT_ALL: frames = urbansplat::split_frames(ds.frames.size(), 0, false); break;
        default: throw urbansplat::ValidationError("unknown split");
        }
        urbansplat::EvalOptions options;
        options.threads = threads;
        if (image_dir) {
            options.image_dir = image_dir;
        }
        const urbansplat::EvalReport report = urbansplat::evaluate(require(scene, "scene").value, ds, frames, options);
        slot = duplicate(report.to_json());
    });
}

} // extern "C"
