#include "das/io.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "das/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "map serialization assumes a little-endian host");

namespace das {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("io: cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("io: JSON parse failure in '" + path + "': " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("io: cannot write '" + path + "'");
    out << text;
}

void append_doubles(std::ofstream& bin, const std::vector<double>& values) {
    bin.write(reinterpret_cast<const char*>(values.data()),
              std::streamsize(values.size() * sizeof(double)));
}

std::vector<double> read_doubles(const std::string& bin_path, std::uint64_t offset,
                                 std::uint64_t count) {
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw ConfigError("io: cannot open sidecar '" + bin_path + "'");
    in.seekg(std::streamoff(offset * sizeof(double)));
    std::vector<double> out(count);
    in.read(reinterpret_cast<char*>(out.data()), std::streamsize(count * sizeof(double)));
    if (std::uint64_t(in.gcount()) != count * sizeof(double))
        throw ConfigError("io: sidecar '" + bin_path + "' truncated");
    return out;
}

json map_header(const DenseMap& m, const std::string& bin_name, std::uint64_t offset) {
    return json{{"height", m.height},   {"width", m.width}, {"channels", m.channels},
                {"dtype", "f64"},       {"layout", "row-major"},
                {"data", bin_name},     {"offset", offset},
                {"count", m.values.size()}};
}

DenseMap map_from_header(const json& h, const std::string& dir) {
    if (h.at("dtype").get<std::string>() != "f64")
        throw ConfigError("io: unsupported map dtype");
    if (h.at("layout").get<std::string>() != "row-major")
        throw ConfigError("io: unsupported map layout");
    DenseMap m(h.at("height").get<int>(), h.at("width").get<int>(),
               h.at("channels").get<int>());
    std::uint64_t count = h.at("count").get<std::uint64_t>();
    if (count != m.values.size())
        throw ConfigError("io: map header count does not match shape");
    std::string bin = (fs::path(dir) / h.at("data").get<std::string>()).string();
    m.values = read_doubles(bin, h.at("offset").get<std::uint64_t>(), count);
    if (!all_finite(m)) throw NumericalError("io: non-finite values in map file");
    return m;
}

// Deterministic shortest-roundtrip double formatting for CSV output.
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json param_to_json(const Param& p) {
    return json{{"shape", {p.shape.h, p.shape.w, p.shape.c}}, {"values", p.value}};
}

Param param_from_json(const json& j) {
    auto sh = j.at("shape");
    Param p(Shape{sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()});
    p.value = j.at("values").get<std::vector<double>>();
    if (int(p.value.size()) != p.shape.size())
        throw ConfigError("io: parameter value count does not match shape");
    return p;
}

}  // namespace

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("io: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_dense_map(const std::string& json_path, const std::string& bin_path,
                    const DenseMap& map) {
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw ConfigError("io: cannot write '" + bin_path + "'");
    append_doubles(bin, map.values);
    json j = map_header(map, fs::path(bin_path).filename().string(), 0);
    write_text(json_path, j.dump(2) + "\n");
}

DenseMap load_dense_map(const std::string& json_path) {
    json j = read_json(json_path);
    return map_from_header(j, fs::path(json_path).parent_path().string());
}

void save_prediction_maps(const std::string& json_path, const std::string& bin_path,
                          const PredictionMaps& maps,
                          const std::vector<double>& strides) {
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw ConfigError("io: cannot write '" + bin_path + "'");
    std::string bin_name = fs::path(bin_path).filename().string();
    std::uint64_t offset = 0;
    json levels = json::array();
    auto add = [&](const DenseMap& m, json& level, const char* role) {
        level[role] = map_header(m, bin_name, offset);
        append_doubles(bin, m.values);
        offset += m.values.size();
    };
    for (std::size_t l = 0; l < maps.confidence.size(); ++l) {
        json level;
        level["stride"] = strides.at(l);
        add(maps.confidence[l], level, "confidence");
        add(maps.centerness[l], level, "centerness");
        add(maps.center_coord[l], level, "center_coord");
        add(maps.joint_offsets[l], level, "joint_offsets");
        if (l < maps.log_sigma.size() && maps.log_sigma[l].size() > 0)
            add(maps.log_sigma[l], level, "log_sigma");
        levels.push_back(std::move(level));
    }
    json j{{"levels", std::move(levels)}};
    write_text(json_path, j.dump(2) + "\n");
}

PredictionMaps load_prediction_maps(const std::string& json_path,
                                    std::vector<double>* strides) {
    json j = read_json(json_path);
    std::string dir = fs::path(json_path).parent_path().string();
    PredictionMaps maps;
    if (strides) strides->clear();
    for (const json& level : j.at("levels")) {
        if (strides) strides->push_back(level.at("stride").get<double>());
        maps.confidence.push_back(map_from_header(level.at("confidence"), dir));
        maps.centerness.push_back(map_from_header(level.at("centerness"), dir));
        maps.center_coord.push_back(map_from_header(level.at("center_coord"), dir));
        maps.joint_offsets.push_back(map_from_header(level.at("joint_offsets"), dir));
        if (level.contains("log_sigma"))
            maps.log_sigma.push_back(map_from_header(level.at("log_sigma"), dir));
        else
            maps.log_sigma.emplace_back();
    }
    return maps;
}

void save_scene(const std::string& path, const Scene& scene, const Skeleton& skeleton) {
    json persons = json::array();
    for (const Pose3D& p : scene.persons) {
        json joints = json::array();
        for (const ImageJoint& j : p.joints) joints.push_back({j.x, j.y, j.d});
        json person{{"joints", std::move(joints)}};
        if (!p.valid.empty()) person["valid"] = p.valid;
        persons.push_back(std::move(person));
    }
    json j{{"camera",
            {{"f", scene.intrinsics.f}, {"cx", scene.intrinsics.cx},
             {"cy", scene.intrinsics.cy}}},
           {"persons", std::move(persons)},
           {"skeleton",
            {{"K", skeleton.joint_count()},
             {"root_index", skeleton.root_index},
             {"names", skeleton.names}}}};
    write_text(path, j.dump(2) + "\n");
}

Scene load_scene(const std::string& path, Skeleton* skeleton) {
    json j = read_json(path);
    Scene scene;
    const json& cam = j.at("camera");
    scene.intrinsics = {cam.at("f").get<double>(), cam.at("cx").get<double>(),
                        cam.at("cy").get<double>()};
    int root_index = j.at("skeleton").at("root_index").get<int>();
    for (const json& person : j.at("persons")) {
        Pose3D pose;
        pose.root_index = root_index;
        for (const json& joint : person.at("joints")) {
            pose.joints.push_back({joint.at(0).get<double>(), joint.at(1).get<double>(),
                                   joint.at(2).get<double>()});
        }
        if (person.contains("valid"))
            pose.valid = person.at("valid").get<std::vector<std::uint8_t>>();
        scene.camera_persons.push_back(back_project(pose, scene.intrinsics));
        scene.persons.push_back(std::move(pose));
    }
    if (skeleton) {
        skeleton->root_index = root_index;
        skeleton->names = j.at("skeleton").at("names").get<std::vector<std::string>>();
        skeleton->offsets_mm.assign(j.at("skeleton").at("K").get<int>(), {0, 0, 0});
    }
    return scene;
}

void save_scenes(const std::string& dir, const std::vector<Scene>& scenes,
                 const Skeleton& skeleton) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%05zu.json", i);
        save_scene((fs::path(dir) / name).string(), scenes[i], skeleton);
    }
}

std::vector<Scene> load_scenes(const std::string& dir, Skeleton* skeleton) {
    std::vector<std::string> files;
    if (!fs::is_directory(dir)) throw ConfigError("io: '" + dir + "' is not a directory");
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.rfind("scene_", 0) == 0 && e.path().extension() == ".json")
            files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("io: no scene_*.json files in '" + dir + "'");
    std::vector<Scene> out;
    for (const std::string& f : files) out.push_back(load_scene(f, skeleton));
    return out;
}

void save_flow(const std::string& path, const FlowModel& flow) {
    json layers = json::array();
    for (const CouplingLayer& cl : flow.layers) {
        json mask = json::array();
        for (int d = 0; d < 3; ++d) {
            bool transformed = false;
            for (int t : cl.transform) transformed |= (t == d);
            mask.push_back(transformed ? 1 : 0);
        }
        layers.push_back(
            {{"mask", std::move(mask)},
             {"scale_weights",
              {{"w1", param_to_json(cl.w1s)}, {"b1", param_to_json(cl.b1s)},
               {"w2", param_to_json(cl.w2s)}, {"b2", param_to_json(cl.b2s)}}},
             {"translate_weights",
              {{"w1", param_to_json(cl.w1t)}, {"b1", param_to_json(cl.b1t)},
               {"w2", param_to_json(cl.w2t)}, {"b2", param_to_json(cl.b2t)}}}});
    }
    json j{{"base", flow.base == BaseDist::Gaussian ? "gaussian" : "laplace"},
           {"s_max", flow.s_max},
           {"hidden", flow.hidden},
           {"layers", std::move(layers)}};
    write_text(path, j.dump(2) + "\n");
}

FlowModel load_flow(const std::string& path) {
    json j = read_json(path);
    FlowModel flow;
    std::string base = j.at("base").get<std::string>();
    if (base == "gaussian") flow.base = BaseDist::Gaussian;
    else if (base == "laplace") flow.base = BaseDist::Laplace;
    else throw ConfigError("io: unknown flow base '" + base + "'");
    flow.s_max = j.at("s_max").get<double>();
    flow.hidden = j.at("hidden").get<int>();
    for (const json& jl : j.at("layers")) {
        CouplingLayer cl;
        auto mask = jl.at("mask");
        for (int d = 0; d < 3; ++d) {
            if (mask.at(d).get<int>() != 0) cl.transform.push_back(d);
            else cl.keep.push_back(d);
        }
        const json& sw = jl.at("scale_weights");
        cl.w1s = param_from_json(sw.at("w1"));
        cl.b1s = param_from_json(sw.at("b1"));
        cl.w2s = param_from_json(sw.at("w2"));
        cl.b2s = param_from_json(sw.at("b2"));
        const json& tw = jl.at("translate_weights");
        cl.w1t = param_from_json(tw.at("w1"));
        cl.b1t = param_from_json(tw.at("b1"));
        cl.w2t = param_from_json(tw.at("w2"));
        cl.b2t = param_from_json(tw.at("b2"));
        flow.layers.push_back(std::move(cl));
    }
    return flow;
}

void save_samplers(const std::string& path, const std::vector<SamplerMlp>& samplers) {
    json layers = json::array();
    for (const SamplerMlp& s : samplers) {
        layers.push_back({{"M", s.M},
                          {"hidden", s.hidden},
                          {"w1", param_to_json(s.w1)},
                          {"b1", param_to_json(s.b1)},
                          {"w_disp", param_to_json(s.w_disp)},
                          {"b_disp", param_to_json(s.b_disp)},
                          {"w_logit", param_to_json(s.w_logit)},
                          {"b_logit", param_to_json(s.b_logit)}});
    }
    write_text(path, json{{"layers", std::move(layers)}}.dump(2) + "\n");
}

std::vector<SamplerMlp> load_samplers(const std::string& path) {
    json j = read_json(path);
    std::vector<SamplerMlp> out;
    for (const json& jl : j.at("layers")) {
        SamplerMlp s;
        s.M = jl.at("M").get<int>();
        s.hidden = jl.at("hidden").get<int>();
        s.w1 = param_from_json(jl.at("w1"));
        s.b1 = param_from_json(jl.at("b1"));
        s.w_disp = param_from_json(jl.at("w_disp"));
        s.b_disp = param_from_json(jl.at("b_disp"));
        s.w_logit = param_from_json(jl.at("w_logit"));
        s.b_logit = param_from_json(jl.at("b_logit"));
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

json head_to_json(const ConvHead& h) {
    return json{{"in_channels", h.in_channels},
                {"width", h.width},
                {"K", h.K},
                {"k1", param_to_json(h.k1)},       {"b1", param_to_json(h.b1)},
                {"k2", param_to_json(h.k2)},       {"b2", param_to_json(h.b2)},
                {"conf_k", param_to_json(h.conf_k)}, {"conf_b", param_to_json(h.conf_b)},
                {"ctr_k", param_to_json(h.ctr_k)},   {"ctr_b", param_to_json(h.ctr_b)},
                {"root_k", param_to_json(h.root_k)}, {"root_b", param_to_json(h.root_b)},
                {"joint_k", param_to_json(h.joint_k)}, {"joint_b", param_to_json(h.joint_b)},
                {"sigma_k", param_to_json(h.sigma_k)}, {"sigma_b", param_to_json(h.sigma_b)}};
}

ConvHead head_from_json(const json& j) {
    ConvHead h;
    h.in_channels = j.at("in_channels").get<int>();
    h.width = j.at("width").get<int>();
    h.K = j.at("K").get<int>();
    h.k1 = param_from_json(j.at("k1"));
    h.b1 = param_from_json(j.at("b1"));
    h.k2 = param_from_json(j.at("k2"));
    h.b2 = param_from_json(j.at("b2"));
    h.conf_k = param_from_json(j.at("conf_k"));
    h.conf_b = param_from_json(j.at("conf_b"));
    h.ctr_k = param_from_json(j.at("ctr_k"));
    h.ctr_b = param_from_json(j.at("ctr_b"));
    h.root_k = param_from_json(j.at("root_k"));
    h.root_b = param_from_json(j.at("root_b"));
    h.joint_k = param_from_json(j.at("joint_k"));
    h.joint_b = param_from_json(j.at("joint_b"));
    h.sigma_k = param_from_json(j.at("sigma_k"));
    h.sigma_b = param_from_json(j.at("sigma_b"));
    return h;
}

}  // namespace

void save_model(const std::string& dir, const TrainedModel& model) {
    fs::create_directories(dir);
    json meta{{"config", json::parse(dump_config(model.cfg))},
              {"K", model.K},
              {"root_index", model.root_index},
              {"mode", model.cfg.train.mode == TrainMode::Direct ? "direct" : "conv"},
              {"scene_count", model.scenes.size()}};
    write_text((fs::path(dir) / "meta.json").string(), meta.dump(2) + "\n");
    save_flow((fs::path(dir) / "flow.json").string(), model.flow);
    save_samplers((fs::path(dir) / "sampler.json").string(), model.samplers);

    if (model.cfg.train.mode == TrainMode::Conv) {
        write_text((fs::path(dir) / "head.json").string(),
                   head_to_json(model.head).dump(2) + "\n");
        return;
    }

    // Direct mode: per-scene parameter maps as one bundle per scene.
    for (std::size_t si = 0; si < model.scenes.size(); ++si) {
        const DirectSceneParams& sp = model.scenes[si];
        PredictionMaps raw;
        int L = int(sp.conf_logit.size());
        for (int l = 0; l < L; ++l) {
            auto to_map = [](const Param& p) {
                DenseMap m(p.shape.h, p.shape.w, p.shape.c);
                m.values = p.value;
                return m;
            };
            raw.confidence.push_back(to_map(sp.conf_logit[l]));  // stored as logits
            raw.centerness.push_back(to_map(sp.ctr_logit[l]));   // stored as logits
            raw.center_coord.push_back(to_map(sp.center_coord[l]));
            raw.joint_offsets.push_back(to_map(sp.joint_offsets[l]));
            raw.log_sigma.push_back(to_map(sp.log_sigma[l]));
        }
        char base[48];
        std::snprintf(base, sizeof(base), "params_%05zu", si);
        save_prediction_maps((fs::path(dir) / (std::string(base) + ".json")).string(),
                             (fs::path(dir) / (std::string(base) + ".bin")).string(), raw,
                             model.cfg.levels.strides);
    }
}

TrainedModel load_model(const std::string& dir) {
    json meta = read_json((fs::path(dir) / "meta.json").string());
    TrainedModel model;
    model.cfg = parse_config(meta.at("config").dump());
    model.K = meta.at("K").get<int>();
    model.root_index = meta.at("root_index").get<int>();
    model.flow = load_flow((fs::path(dir) / "flow.json").string());
    model.samplers = load_samplers((fs::path(dir) / "sampler.json").string());

    if (model.cfg.train.mode == TrainMode::Conv) {
        model.head = head_from_json(read_json((fs::path(dir) / "head.json").string()));
        return model;
    }

    std::size_t count = meta.at("scene_count").get<std::size_t>();
    for (std::size_t si = 0; si < count; ++si) {
        char base[48];
        std::snprintf(base, sizeof(base), "params_%05zu.json", si);
        PredictionMaps raw =
            load_prediction_maps((fs::path(dir) / base).string());
        DirectSceneParams sp;
        for (std::size_t l = 0; l < raw.confidence.size(); ++l) {
            auto to_param = [](const DenseMap& m) {
                Param p(Shape{m.height, m.width, m.channels});
                p.value = m.values;
                return p;
            };
            sp.conf_logit.push_back(to_param(raw.confidence[l]));
            sp.ctr_logit.push_back(to_param(raw.centerness[l]));
            sp.center_coord.push_back(to_param(raw.center_coord[l]));
            sp.joint_offsets.push_back(to_param(raw.joint_offsets[l]));
            sp.log_sigma.push_back(to_param(raw.log_sigma[l]));
        }
        model.scenes.push_back(std::move(sp));
    }
    return model;
}

void save_report_csv(const std::string& path, const Report& report) {
    std::ostringstream os;
    os << "scene_id,mpjpe_mm,pck_rel,pck_abs,detections,gt_persons,matched\n";
    for (const SceneMetrics& m : report.scenes) {
        os << m.scene_id << ',' << fmt(m.mpjpe_mm) << ',' << fmt(m.pck_rel) << ','
           << fmt(m.pck_abs) << ',' << m.detections << ',' << m.gt_persons << ','
           << m.matched << '\n';
    }
    os << "mean," << fmt(report.mean_mpjpe) << ',' << fmt(report.mean_pck_rel) << ','
       << fmt(report.mean_pck_abs) << ",,,\n";
    write_text(path, os.str());
}

void save_loss_history_csv(const std::string& path,
                           const std::vector<LossBreakdown>& history) {
    std::ostringstream os;
    os << "step,L_cls,L_centerness,L_root,L_pose,total\n";
    for (std::size_t i = 0; i < history.size(); ++i) {
        const LossBreakdown& h = history[i];
        os << i << ',' << fmt(h.cls) << ',' << fmt(h.centerness) << ',' << fmt(h.root)
           << ',' << fmt(h.pose) << ',' << fmt(h.total) << '\n';
    }
    write_text(path, os.str());
}

void save_distribution_csv(const std::string& path, const DistributionTable& table) {
    std::ostringstream os;
    os << "z1,z2,density\n";
    for (int iy = 0; iy < table.n; ++iy) {
        for (int ix = 0; ix < table.n; ++ix) {
            os << fmt(table.z_min + ix * table.step) << ','
               << fmt(table.z_min + iy * table.step) << ','
               << fmt(table.density[std::size_t(iy) * table.n + ix]) << '\n';
        }
    }
    write_text(path, os.str());
}

void save_detections_json(const std::string& path,
                          const std::vector<Detection>& detections) {
    json dets = json::array();
    for (const Detection& d : detections) {
        json joints = json::array();
        json cam = json::array();
        for (const ImageJoint& j : d.pose.joints) joints.push_back({j.x, j.y, j.d});
        for (const auto& j : d.camera_pose.joints) cam.push_back({j[0], j[1], j[2]});
        dets.push_back({{"score", d.score},
                        {"level", d.level},
                        {"pixel", d.pixel},
                        {"joints_image", std::move(joints)},
                        {"joints_camera", std::move(cam)}});
    }
    write_text(path, json{{"detections", std::move(dets)}}.dump(2) + "\n");
}

}  // namespace das
