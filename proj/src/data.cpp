#include "reactflow/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace reactflow {

namespace {

constexpr uint64_t kMagic = 0x5246444154413031ULL;  // "RFDATA01"
constexpr uint32_t kVersion = 1;

constexpr int64_t kPursuitLag = 4;
constexpr double kOrbitRadius = 0.5;
constexpr double kOrbitRate = 0.15;
constexpr double kEvadeDistance = 0.6;

}  // namespace

void DatasetConfig::validate() const {
    RF_REQUIRE(n_pairs >= 1, "dataset config: n_pairs must be >= 1");
    RF_REQUIRE(length >= 8, "dataset config: length must be >= 8");
    RF_REQUIRE(n_labels >= 2, "dataset config: n_labels must be >= 2");
    RF_REQUIRE(jitter >= 0.0, "dataset config: jitter must be >= 0");
}

Tensor positions_to_frames(const Tensor& pos) {
    RF_REQUIRE(pos.rank() == 2 && pos.dim(1) == 2, "positions_to_frames: expect [T,2]");
    const int64_t T = pos.dim(0);
    Tensor f({T, 4});
    for (int64_t t = 0; t < T; ++t) {
        f.at2(t, 0) = pos.at2(t, 0);
        f.at2(t, 1) = pos.at2(t, 1);
        f.at2(t, 2) = t > 0 ? pos.at2(t, 0) - pos.at2(t - 1, 0) : 0.0;
        f.at2(t, 3) = t > 0 ? pos.at2(t, 1) - pos.at2(t - 1, 1) : 0.0;
    }
    return f;
}

Tensor frames_to_positions(const Tensor& frames) {
    RF_REQUIRE(frames.rank() == 2 && frames.dim(1) >= 2, "frames_to_positions: expect [T,>=2]");
    return slice(frames, 1, 0, 2);
}

Tensor analytic_reactor_positions(const Tensor& actor_pos, int64_t label) {
    RF_REQUIRE(actor_pos.rank() == 2 && actor_pos.dim(1) == 2, "analytic reactor: expect [T,2]");
    RF_REQUIRE(label >= 0, "analytic reactor: negative label");
    const int64_t T = actor_pos.dim(0);
    const int64_t rule = label % 3;
    const double gain = 1.0 + 0.25 * static_cast<double>(label / 3);
    Tensor r({T, 2});
    for (int64_t t = 0; t < T; ++t) {
        const double ax = actor_pos.at2(t, 0);
        const double ay = actor_pos.at2(t, 1);
        switch (rule) {
            case 0: {
                const int64_t src = std::max<int64_t>(0, t - kPursuitLag);
                r.at2(t, 0) = -gain * actor_pos.at2(src, 0);
                r.at2(t, 1) = -gain * actor_pos.at2(src, 1);
                break;
            }
            case 1: {
                const double ang = kOrbitRate * static_cast<double>(t);
                r.at2(t, 0) = ax + gain * kOrbitRadius * std::cos(ang);
                r.at2(t, 1) = ay + gain * kOrbitRadius * std::sin(ang);
                break;
            }
            default: {
                const double norm = std::sqrt(ax * ax + ay * ay) + 1e-6;
                r.at2(t, 0) = ax + gain * kEvadeDistance * ax / norm;
                r.at2(t, 1) = ay + gain * kEvadeDistance * ay / norm;
                break;
            }
        }
    }
    return r;
}

MotionSequence analytic_reactor(const MotionSequence& actor, int64_t label) {
    MotionSequence out;
    out.frames = positions_to_frames(analytic_reactor_positions(frames_to_positions(actor.frames), label));
    out.role = Role::reactor;
    out.fps = actor.fps;
    return out;
}

static Tensor random_actor_positions(int64_t T, Rng& rng) {
    Tensor pos({T, 2});
    for (int axis = 0; axis < 2; ++axis) {
        const double offset = rng.uniform01() - 0.5;
        double amp[3], freq[3], phase[3];
        for (int k = 0; k < 3; ++k) {
            amp[k] = (0.2 + 0.5 * rng.uniform01()) / static_cast<double>(k + 1);
            freq[k] = (0.03 + 0.07 * rng.uniform01()) * static_cast<double>(k + 1);
            phase[k] = 6.283185307179586 * rng.uniform01();
        }
        for (int64_t t = 0; t < T; ++t) {
            double v = offset;
            for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(freq[k] * static_cast<double>(t) + phase[k]);
            pos.at2(t, axis) = v;
        }
    }
    return pos;
}

Dataset make_toy_dataset(const DatasetConfig& cfg, Split split) {
    cfg.validate();
    Dataset ds;
    ds.split = split;
    ds.config = cfg;
    // splits draw from disjoint streams of the same seed
    Rng rng(cfg.seed * 2654435761ULL + (split == Split::train ? 0x7261696eULL : 0x74657374ULL));
    ds.pairs.reserve(static_cast<size_t>(cfg.n_pairs));
    for (int64_t i = 0; i < cfg.n_pairs; ++i) {
        MotionPair pair;
        pair.label = i % cfg.n_labels;
        Tensor apos = random_actor_positions(cfg.length, rng);
        Tensor rpos = analytic_reactor_positions(apos, pair.label);
        if (cfg.jitter > 0.0)
            for (int64_t j = 0; j < rpos.numel(); ++j) rpos.at(j) += cfg.jitter * rng.normal();
        pair.actor.frames = positions_to_frames(apos);
        pair.actor.role = Role::actor;
        pair.reactor.frames = positions_to_frames(rpos);
        pair.reactor.role = Role::reactor;
        ds.pairs.push_back(std::move(pair));
    }
    return ds;
}

uint64_t Dataset::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto fold = [&h](uint64_t x) {
        h ^= x;
        h *= 0x100000001b3ULL;
    };
    fold(static_cast<uint64_t>(split));
    fold(config.seed);
    fold(static_cast<uint64_t>(pairs.size()));
    for (const auto& p : pairs) {
        fold(static_cast<uint64_t>(p.label));
        fold(fnv1a(p.actor.frames.vec()));
        fold(fnv1a(p.reactor.frames.vec()));
    }
    return h;
}

TokenizedPair tokenize(const MotionVae& vae, const ParameterStore& vae_params, const MotionPair& pair) {
    RF_REQUIRE(pair.actor.length() == pair.reactor.length(), "tokenize: pair lengths differ");
    TokenizedPair out;
    out.actor = vae.encode(vae_params, pair.actor).first;
    out.reactor = vae.encode(vae_params, pair.reactor).first;
    out.label = pair.label;
    RF_REQUIRE(out.actor.size() == out.reactor.size(), "tokenize: token lengths differ");
    return out;
}

// ---------------------------------------------------------------------------
// binary container: fixed little-endian header, f64 payload

namespace {

template <class T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    RF_REQUIRE(is.good(), std::string("dataset load: truncated file while reading ") + what);
    return v;
}

void put_tensor(std::ofstream& os, const Tensor& t) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
}

Tensor get_tensor(std::ifstream& is, Shape shape) {
    Tensor t(std::move(shape));
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
    RF_REQUIRE(is.good(), "dataset load: truncated payload");
    return t;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    RF_REQUIRE(os.good(), "dataset save: cannot open " + path);
    put(os, kMagic);
    put(os, kVersion);
    put(os, ds.config.seed);
    put(os, static_cast<uint8_t>(ds.split));
    put(os, static_cast<uint32_t>(ds.pairs.size()));
    put(os, static_cast<uint32_t>(ds.config.length));
    put(os, static_cast<uint32_t>(4));  // channels
    put(os, static_cast<uint32_t>(ds.config.n_labels));
    put(os, ds.config.jitter);
    for (const auto& p : ds.pairs) {
        put(os, static_cast<uint32_t>(p.label));
        put_tensor(os, p.actor.frames);
        put_tensor(os, p.reactor.frames);
    }
    put(os, ds.content_hash());
    RF_REQUIRE(os.good(), "dataset save: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    RF_REQUIRE(is.good(), "dataset load: cannot open " + path);
    RF_REQUIRE(get<uint64_t>(is, "magic") == kMagic, "dataset load: bad magic, not a dataset file");
    const uint32_t version = get<uint32_t>(is, "version");
    RF_REQUIRE(version == kVersion,
               "dataset load: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.config.seed = get<uint64_t>(is, "seed");
    ds.split = static_cast<Split>(get<uint8_t>(is, "split"));
    const uint32_t n = get<uint32_t>(is, "pair count");
    ds.config.n_pairs = n;
    ds.config.length = get<uint32_t>(is, "length");
    const uint32_t channels = get<uint32_t>(is, "channels");
    RF_REQUIRE(channels == 4, "dataset load: unexpected channel count");
    ds.config.n_labels = get<uint32_t>(is, "label count");
    ds.config.jitter = get<double>(is, "jitter");
    ds.pairs.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        MotionPair p;
        p.label = get<uint32_t>(is, "label");
        p.actor.frames = get_tensor(is, {ds.config.length, 4});
        p.actor.role = Role::actor;
        p.reactor.frames = get_tensor(is, {ds.config.length, 4});
        p.reactor.role = Role::reactor;
        ds.pairs.push_back(std::move(p));
    }
    const uint64_t stored = get<uint64_t>(is, "hash");
    RF_REQUIRE(stored == ds.content_hash(), "dataset load: payload hash mismatch");
    return ds;
}

void export_jsonl(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    RF_REQUIRE(os.good(), "jsonl export: cannot open " + path);
    for (const auto& p : ds.pairs) {
        nlohmann::json j;
        j["label"] = p.label;
        auto dump = [](const Tensor& t) {
            std::vector<std::vector<double>> rows;
            for (int64_t r = 0; r < t.dim(0); ++r) {
                std::vector<double> row;
                for (int64_t c = 0; c < t.dim(1); ++c) row.push_back(t.at2(r, c));
                rows.push_back(std::move(row));
            }
            return rows;
        };
        j["actor"] = dump(p.actor.frames);
        j["reactor"] = dump(p.reactor.frames);
        os << j.dump() << "\n";
    }
}

}  // namespace reactflow
