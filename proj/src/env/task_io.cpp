#include "mori/env/env.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace mori::env {

using nlohmann::json;

namespace {

json vec(Vec2 v) { return json::array({v.x, v.y}); }

Vec2 vec_from(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 2) throw std::invalid_argument(what + " must be a two-element array");
    return {j[0].get<double>(), j[1].get<double>()};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || it.key() == k;
        if (!ok) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
    }
}

}  // namespace

std::string task_to_json(const TaskSpec& t) {
    json init = json::object();
    for (const auto& [k, r] : t.init) init[k] = {{"center", vec(r.center)}, {"half_extent", vec(r.half_extent)}};
    const auto& g = t.geometry;
    json j{{"task", to_string(t.id)},
           {"horizon", t.horizon},
           {"success_predicate", t.success_predicate},
           {"init", init},
           {"geometry",
            {{"max_step", g.max_step},
             {"grasp_radius", g.grasp_radius},
             {"insert_tolerance", g.insert_tolerance},
             {"place_tolerance", g.place_tolerance},
             {"lid_tolerance", g.lid_tolerance},
             {"fold_tolerance", g.fold_tolerance}}}};
    return j.dump(2);
}

TaskSpec task_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("task file is not valid JSON: ") + e.what());
    }
    check_keys(j, {"task", "horizon", "success_predicate", "init", "geometry"}, "task file");
    if (!j.contains("task")) throw std::invalid_argument("task file needs a 'task' id");
    TaskSpec t = default_task(task_from_string(j.at("task").get<std::string>()));
    try {
        if (j.contains("horizon")) t.horizon = j.at("horizon").get<int>();
        if (j.contains("success_predicate")) {
            const auto p = j.at("success_predicate").get<std::string>();
            if (p != t.success_predicate)
                throw std::invalid_argument("success_predicate '" + p + "' does not belong to task " + to_string(t.id));
        }
        if (j.contains("init")) {
            const auto& init = j.at("init");
            if (!init.is_object()) throw std::invalid_argument("init must be an object");
            for (auto it = init.begin(); it != init.end(); ++it) {
                if (!t.init.count(it.key()))
                    throw std::invalid_argument("unknown init range '" + it.key() + "' for task " + to_string(t.id));
                check_keys(it.value(), {"center", "half_extent"}, "init." + it.key());
                auto& r = t.init[it.key()];
                if (it->contains("center")) r.center = vec_from(it->at("center"), "init." + it.key() + ".center");
                if (it->contains("half_extent"))
                    r.half_extent = vec_from(it->at("half_extent"), "init." + it.key() + ".half_extent");
            }
        }
        if (j.contains("geometry")) {
            const auto& g = j.at("geometry");
            check_keys(g, {"max_step", "grasp_radius", "insert_tolerance", "place_tolerance", "lid_tolerance",
                           "fold_tolerance"},
                       "geometry");
            auto& d = t.geometry;
            d.max_step = g.value("max_step", d.max_step);
            d.grasp_radius = g.value("grasp_radius", d.grasp_radius);
            d.insert_tolerance = g.value("insert_tolerance", d.insert_tolerance);
            d.place_tolerance = g.value("place_tolerance", d.place_tolerance);
            d.lid_tolerance = g.value("lid_tolerance", d.lid_tolerance);
            d.fold_tolerance = g.value("fold_tolerance", d.fold_tolerance);
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("task file value has the wrong type: ") + e.what());
    }
    validate(t);
    return t;
}

TaskSpec load_task(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::invalid_argument("cannot read task file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return task_from_json(ss.str());
}

}  // namespace mori::env
