#include "mori/buffers/buffers.hpp"

#include <json.hpp>

#include <fstream>
#include <iostream>

namespace mori::buffers {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Source s) {
    switch (s) {
        case Source::offline_demo: return "offline_demo";
        case Source::online_intervention: return "online_intervention";
        case Source::online_policy: return "online_policy";
    }
    return "?";
}

Source source_from_string(const std::string& s) {
    if (s == "offline_demo") return Source::offline_demo;
    if (s == "online_intervention") return Source::online_intervention;
    if (s == "online_policy") return Source::online_policy;
    throw std::invalid_argument("unknown source '" + s + "'");
}

std::string to_string(Actor a) {
    switch (a) {
        case Actor::oracle: return "oracle";
        case Actor::bc: return "bc";
        case Actor::rl: return "rl";
        case Actor::human: return "human";
    }
    return "?";
}

Actor actor_from_string(const std::string& s) {
    if (s == "oracle") return Actor::oracle;
    if (s == "bc") return Actor::bc;
    if (s == "rl") return Actor::rl;
    if (s == "human") return Actor::human;
    throw std::invalid_argument("unknown actor '" + s + "'");
}

std::string to_string(Store s) {
    switch (s) {
        case Store::demo: return "demo";
        case Store::success: return "success";
        case Store::replay: return "replay";
    }
    return "?";
}

void BufferSet::validate_episode(const Episode& ep) {
    if (ep.empty()) throw RoutingError("episode is empty");
    for (std::size_t i = 0; i < ep.size(); ++i) {
        const bool last = i + 1 == ep.size();
        if (ep[i].done != last)
            throw RoutingError("episode must be done exactly at its last step (violated at step " +
                               std::to_string(i) + ")");
        if (ep[i].reward != 0.0f && ep[i].reward != 1.0f) throw RoutingError("reward must be 0 or 1");
        if (ep[i].intervened != (ep[i].source == Source::online_intervention) &&
            ep[i].source != Source::offline_demo)
            throw RoutingError("intervened flag disagrees with source tag");
        if (!last && ep[i].next_state != ep[i + 1].state)
            throw RoutingError("episode is not contiguous at step " + std::to_string(i));
        if (ep[i].state.size() != ep.front().state.size() || ep[i].next_state.size() != ep[i].state.size())
            throw RoutingError("state dimension changes within episode");
    }
}

void BufferSet::append(Store s, const Episode& ep, bool only_intervened) {
    auto& dst = s == Store::demo ? demo_ : s == Store::success ? success_ : replay_;
    auto& ends = s == Store::demo ? demo_ends_ : s == Store::success ? success_ends_ : replay_ends_;
    std::size_t added = 0;
    for (const auto& t : ep) {
        if (only_intervened && !t.intervened) continue;
        if (dst.size() >= capacity_) throw RoutingError("store " + to_string(s) + " is at capacity");
        dst.push_back(t);
        ++added;
    }
    if (added > 0) ends.push_back(dst.size());
}

void BufferSet::load_offline(const std::vector<Episode>& demos) {
    for (const auto& ep : demos) {
        validate_episode(ep);
        for (const auto& t : ep)
            if (t.source != Source::offline_demo) throw RoutingError("offline episode carries an online source tag");
    }
    for (const auto& ep : demos) {
        append(Store::demo, ep, false);
        if (ep.back().reward == 1.0f) append(Store::success, ep, false);
        counters_.offline_demo += static_cast<std::int64_t>(ep.size());
    }
}

void BufferSet::ingest_episode(const Episode& ep) {
    validate_episode(ep);
    for (const auto& t : ep)
        if (t.source == Source::offline_demo) throw RoutingError("online episode carries an offline source tag");
    std::int64_t intervened = 0;
    for (const auto& t : ep) intervened += t.intervened ? 1 : 0;
    const bool succeeded = ep.back().reward == 1.0f;

    append(Store::replay, ep, false);
    if (intervened > 0) append(Store::demo, ep, true);
    if (succeeded) append(Store::success, ep, false);

    counters_.online_intervention += intervened;
    counters_.online_policy += static_cast<std::int64_t>(ep.size()) - intervened;
    counters_.online_episodes += 1;
    if (succeeded) {
        counters_.online_successes += 1;
        counters_.auto_success += static_cast<std::int64_t>(ep.size()) - intervened;
    }
}

const std::vector<Transition>& BufferSet::store(Store s) const {
    return s == Store::demo ? demo_ : s == Store::success ? success_ : replay_;
}

const std::vector<std::size_t>& BufferSet::episode_ends(Store s) const {
    return s == Store::demo ? demo_ends_ : s == Store::success ? success_ends_ : replay_ends_;
}

std::vector<Sample> BufferSet::sample_pair(std::size_t batch, std::mt19937_64& rng, Store a, Store b) {
    std::vector<Sample> out;
    if (batch == 0) return out;
    const auto& sa = store(a);
    const auto& sb = store(b);
    if (sa.empty() && sb.empty())
        throw RoutingError("cannot sample: stores " + to_string(a) + " and " + to_string(b) + " are empty");
    if (sa.empty() || sb.empty()) {
        if (counters_.fallback_warnings == 0)
            std::cerr << "warning: store " << to_string(sa.empty() ? a : b)
                      << " is empty, sampling only from " << to_string(sa.empty() ? b : a) << "\n";
        ++counters_.fallback_warnings;
    }
    out.reserve(batch);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < batch; ++i) {
        bool pick_a = coin(rng);
        if (sa.empty()) pick_a = false;
        if (sb.empty()) pick_a = true;
        const auto& src = pick_a ? sa : sb;
        std::uniform_int_distribution<std::size_t> idx(0, src.size() - 1);
        out.push_back({&src[idx(rng)], pick_a ? a : b});
    }
    return out;
}

std::vector<Sample> BufferSet::sample_bc(std::size_t batch, std::mt19937_64& rng) {
    return sample_pair(batch, rng, Store::success, Store::demo);
}
std::vector<Sample> BufferSet::sample_bc(std::size_t batch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_bc(batch, rng);
}
std::vector<Sample> BufferSet::sample_rl(std::size_t batch, std::mt19937_64& rng) {
    return sample_pair(batch, rng, Store::replay, Store::demo);
}
std::vector<Sample> BufferSet::sample_rl(std::size_t batch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_rl(batch, rng);
}

Ratios BufferSet::ratios() const {
    if (replay_.empty()) throw std::domain_error("ratios undefined: replay buffer is empty");
    const auto n = static_cast<double>(replay_.size());
    return {static_cast<double>(demo_.size()) / n, static_cast<double>(counters_.auto_success) / n};
}

// ---- persistence ----

json transition_to_json(const Transition& t) {
    return json{{"s", t.state},
                {"a", t.arm_action},
                {"g", env::to_string(t.gripper_action)},
                {"r", t.reward},
                {"s2", t.next_state},
                {"d", t.done},
                {"i", t.intervened},
                {"src", to_string(t.source)},
                {"actor", to_string(t.actor)}};
}

Transition transition_from_json(const json& j) {
    Transition t;
    t.state = j.at("s").get<std::vector<float>>();
    t.arm_action = j.at("a").get<std::array<float, 2>>();
    t.gripper_action = env::gripper_from_string(j.at("g").get<std::string>());
    t.reward = j.at("r").get<float>();
    t.next_state = j.at("s2").get<std::vector<float>>();
    t.done = j.at("d").get<bool>();
    t.intervened = j.at("i").get<bool>();
    t.source = source_from_string(j.at("src").get<std::string>());
    t.actor = actor_from_string(j.value("actor", std::string("oracle")));
    return t;
}

namespace {

void write_store(const fs::path& file, const std::vector<Transition>& store, const std::vector<std::size_t>& ends) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    std::size_t e = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        json j = transition_to_json(store[i]);
        while (e < ends.size() && ends[e] <= i) ++e;
        j["ep"] = e;
        out << j.dump() << "\n";
    }
}

void read_store(const fs::path& file, std::vector<Transition>& store, std::vector<std::size_t>& ends) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    std::string line;
    long long last_ep = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        const long long ep = j.at("ep").get<long long>();
        if (last_ep >= 0 && ep != last_ep) ends.push_back(store.size());
        last_ep = ep;
        store.push_back(transition_from_json(j));
    }
    if (!store.empty()) ends.push_back(store.size());
}

}  // namespace

void BufferSet::save(const fs::path& dir) const {
    fs::create_directories(dir);
    write_store(dir / "demo.jsonl", demo_, demo_ends_);
    write_store(dir / "success.jsonl", success_, success_ends_);
    write_store(dir / "replay.jsonl", replay_, replay_ends_);
    json m{{"capacity", capacity_},
           {"counts", {{"demo", demo_.size()}, {"success", success_.size()}, {"replay", replay_.size()}}},
           {"sources",
            {{"offline_demo", counters_.offline_demo},
             {"online_intervention", counters_.online_intervention},
             {"online_policy", counters_.online_policy}}},
           {"auto_success", counters_.auto_success},
           {"online_episodes", counters_.online_episodes},
           {"online_successes", counters_.online_successes}};
    std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

BufferSet BufferSet::load(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
    json m = json::parse(in);
    BufferSet b(m.at("capacity").get<std::size_t>());
    read_store(dir / "demo.jsonl", b.demo_, b.demo_ends_);
    read_store(dir / "success.jsonl", b.success_, b.success_ends_);
    read_store(dir / "replay.jsonl", b.replay_, b.replay_ends_);
    const auto& src = m.at("sources");
    b.counters_.offline_demo = src.at("offline_demo").get<std::int64_t>();
    b.counters_.online_intervention = src.at("online_intervention").get<std::int64_t>();
    b.counters_.online_policy = src.at("online_policy").get<std::int64_t>();
    b.counters_.auto_success = m.at("auto_success").get<std::int64_t>();
    b.counters_.online_episodes = m.at("online_episodes").get<std::int64_t>();
    b.counters_.online_successes = m.at("online_successes").get<std::int64_t>();
    const auto& counts = m.at("counts");
    if (counts.at("demo").get<std::size_t>() != b.demo_.size() ||
        counts.at("success").get<std::size_t>() != b.success_.size() ||
        counts.at("replay").get<std::size_t>() != b.replay_.size())
        throw std::runtime_error("buffer store sizes disagree with manifest in " + dir.string());
    return b;
}

std::string episode_jsonl(const Episode& episode, std::size_t index) {
    std::string out;
    for (const auto& t : episode) {
        json j = transition_to_json(t);
        j["ep"] = index;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void save_episodes(const fs::path& file, const std::vector<Episode>& episodes) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    for (std::size_t e = 0; e < episodes.size(); ++e) out << episode_jsonl(episodes[e], e);
}

std::vector<Episode> load_episodes(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    std::vector<Episode> out;
    std::string line;
    long long last = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        const long long ep = j.at("ep").get<long long>();
        if (ep != last) {
            out.emplace_back();
            last = ep;
        }
        out.back().push_back(transition_from_json(j));
    }
    return out;
}

}  // namespace mori::buffers
