#include "reactflow/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace reactflow {

namespace {

constexpr uint64_t kMagic = 0x5246434b50543031ULL;  // "RFCKPT01"
constexpr uint32_t kVersion = 1;

void put_bytes(std::string& buf, const void* p, size_t n) {
    buf.append(static_cast<const char*>(p), n);
}

template <class T>
void put(std::string& buf, T v) {
    put_bytes(buf, &v, sizeof(T));
}

void put_str(std::string& buf, const std::string& s) {
    put(buf, static_cast<uint32_t>(s.size()));
    put_bytes(buf, s.data(), s.size());
}

void put_tensor(std::string& buf, const Tensor& t) {
    put(buf, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put(buf, t.dim(i));
    put_bytes(buf, t.data(), sizeof(double) * static_cast<size_t>(t.numel()));
}

void put_tensor_map(std::string& buf, const std::map<std::string, Tensor>& m) {
    put(buf, static_cast<uint32_t>(m.size()));
    for (const auto& [name, t] : m) {
        put_str(buf, name);
        put_tensor(buf, t);
    }
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    template <class T>
    T get(const char* what) {
        RF_REQUIRE(pos + sizeof(T) <= buf.size(),
                   std::string("checkpoint load: truncated while reading ") + what);
        T v{};
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string get_str(const char* what) {
        const uint32_t n = get<uint32_t>(what);
        RF_REQUIRE(pos + n <= buf.size(),
                   std::string("checkpoint load: truncated while reading ") + what);
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }

    Tensor get_tensor(const char* what) {
        const uint32_t rank = get<uint32_t>(what);
        RF_REQUIRE(rank <= 8, "checkpoint load: implausible tensor rank");
        Shape shape;
        for (uint32_t i = 0; i < rank; ++i) shape.push_back(get<int64_t>(what));
        Tensor t(shape);
        const size_t bytes = sizeof(double) * static_cast<size_t>(t.numel());
        RF_REQUIRE(pos + bytes <= buf.size(),
                   std::string("checkpoint load: truncated tensor payload for ") + what);
        std::memcpy(t.data(), buf.data() + pos, bytes);
        pos += bytes;
        return t;
    }

    std::map<std::string, Tensor> get_tensor_map(const char* what) {
        std::map<std::string, Tensor> m;
        const uint32_t n = get<uint32_t>(what);
        for (uint32_t i = 0; i < n; ++i) {
            std::string name = get_str(what);
            m.emplace(std::move(name), get_tensor(what));
        }
        return m;
    }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string buf;
    put(buf, kMagic);
    put(buf, kVersion);
    put_str(buf, ckpt.kind);
    put_str(buf, ckpt.config_json);
    put_tensor_map(buf, ckpt.params.entries());
    put(buf, static_cast<uint8_t>(ckpt.has_trainer_state ? 1 : 0));
    if (ckpt.has_trainer_state) {
        put(buf, ckpt.iteration);
        put(buf, ckpt.opt_steps);
        put(buf, static_cast<uint32_t>(ckpt.rng_state.size()));
        for (uint64_t w : ckpt.rng_state) put(buf, w);
        put_tensor_map(buf, ckpt.opt_m);
        put_tensor_map(buf, ckpt.opt_v);
    }
    put(buf, fnv1a(buf.data(), buf.size()));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        RF_REQUIRE(os.good(), "checkpoint save: cannot open " + tmp);
        os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        RF_REQUIRE(os.good(), "checkpoint save: write failed for " + tmp);
    }
    RF_REQUIRE(std::rename(tmp.c_str(), path.c_str()) == 0,
               "checkpoint save: atomic rename failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    RF_REQUIRE(is.good(), "checkpoint load: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string buf = ss.str();
    RF_REQUIRE(buf.size() > sizeof(uint64_t), "checkpoint load: file too small");

    const std::string body = buf.substr(0, buf.size() - sizeof(uint64_t));
    uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + body.size(), sizeof(uint64_t));
    RF_REQUIRE(stored == fnv1a(body.data(), body.size()), "checkpoint load: integrity hash mismatch");

    Reader r{body};
    RF_REQUIRE(r.get<uint64_t>("magic") == kMagic, "checkpoint load: bad magic");
    const uint32_t version = r.get<uint32_t>("version");
    RF_REQUIRE(version == kVersion, "checkpoint load: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.kind = r.get_str("kind");
    ckpt.config_json = r.get_str("config");
    for (auto& [name, t] : r.get_tensor_map("params")) ckpt.params.create(name, std::move(t));
    ckpt.has_trainer_state = r.get<uint8_t>("trainer flag") != 0;
    if (ckpt.has_trainer_state) {
        ckpt.iteration = r.get<int64_t>("iteration");
        ckpt.opt_steps = r.get<int64_t>("opt steps");
        const uint32_t nw = r.get<uint32_t>("rng words");
        for (uint32_t i = 0; i < nw; ++i) ckpt.rng_state.push_back(r.get<uint64_t>("rng word"));
        ckpt.opt_m = r.get_tensor_map("moment1");
        ckpt.opt_v = r.get_tensor_map("moment2");
    }
    RF_REQUIRE(r.pos == body.size(), "checkpoint load: trailing bytes");
    return ckpt;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    RF_REQUIRE(is.good(), "file_hash: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string buf = ss.str();
    return fnv1a(buf.data(), buf.size());
}

}  // namespace reactflow
