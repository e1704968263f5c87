#pragma once

// Named learnable tensors with parallel gradient accumulators, the optimizers
// that update them, and the binary checkpoint container.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "msranker/tensor.hpp"

namespace msranker {

class ParamStore {
public:
    void add(const std::string& name, Tensor t) {
        if (params_.count(name)) throw ValidationError("duplicate parameter name: " + name);
        grads_.emplace(name, Tensor::zeros(t.shape));
        params_.emplace(name, std::move(t));
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    Tensor& param(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& param(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }
    Tensor& grad(const std::string& name) {
        auto it = grads_.find(name);
        if (it == grads_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& grad(const std::string& name) const {
        auto it = grads_.find(name);
        if (it == grads_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }

    void zero_grads() {
        for (auto& [name, g] : grads_) std::fill(g.data.begin(), g.data.end(), 0.0);
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back(name);
        return out;
    }

    size_t count() const { return params_.size(); }

    // Bumped by every optimizer step; episode traces record it so a stale
    // trace cannot be replayed against updated parameters.
    uint64_t version() const { return version_; }
    void bump_version() { ++version_; }

    uint64_t checksum() const {
        uint64_t h = 1469598103934665603ull;
        for (const auto& [name, t] : params_) {
            h = fnv1a64(name.data(), name.size(), h);
            h = fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
        }
        return h;
    }

private:
    std::map<std::string, Tensor> params_;  // ordered: deterministic iteration
    std::map<std::string, Tensor> grads_;
    uint64_t version_ = 0;
};

// ---- optimizers ----

struct Optimizer {
    std::string kind = "adam";  // "adam" or "sgd"
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long t = 0;
    std::map<std::string, Tensor> m, v;

    explicit Optimizer(std::string k = "adam") : kind(std::move(k)) {
        if (kind != "adam" && kind != "sgd")
            throw ValidationError("unknown optimizer: " + kind);
    }

    void step(ParamStore& store, double lr) {
        ++t;
        for (const auto& name : store.names()) {
            Tensor& p = store.param(name);
            const Tensor& g = store.grad(name);
            if (kind == "sgd") {
                for (long long i = 0; i < p.size(); ++i) p.data[i] -= lr * g.data[i];
                continue;
            }
            Tensor& mi = moment(m, name, p.shape);
            Tensor& vi = moment(v, name, p.shape);
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
            for (long long i = 0; i < p.size(); ++i) {
                mi.data[i] = beta1 * mi.data[i] + (1.0 - beta1) * g.data[i];
                vi.data[i] = beta2 * vi.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
                const double mhat = mi.data[i] / c1;
                const double vhat = vi.data[i] / c2;
                p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
        store.bump_version();
    }

private:
    static Tensor& moment(std::map<std::string, Tensor>& side, const std::string& name,
                          const Shape& shape) {
        auto it = side.find(name);
        if (it == side.end()) it = side.emplace(name, Tensor::zeros(shape)).first;
        return it->second;
    }
};

// ---- checkpoint container ----
//
// Layout: magic, config JSON (the fingerprint), named tensors, vocab tokens.
// All integers little-endian u64; tensor payloads are raw doubles, so a
// save/load round trip is bit-exact.

struct Checkpoint {
    std::string config_json;
    ParamStore store;
    std::vector<std::string> vocab_tokens;  // index order, reserved entries included
};

namespace detail {

inline void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ValidationError("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}
inline void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
    uint64_t n = get_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw ValidationError("checkpoint: truncated string");
    return s;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "MSRCKPT1";

inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const std::string& config_json,
                            const std::vector<std::string>& vocab_tokens) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw ValidationError("cannot write checkpoint: " + tmp);
        os.write(kCheckpointMagic, 8);
        detail::put_str(os, config_json);
        const auto names = store.names();
        detail::put_u64(os, names.size());
        for (const auto& name : names) {
            const Tensor& t = store.param(name);
            detail::put_str(os, name);
            detail::put_u64(os, t.shape.size());
            for (int d : t.shape) detail::put_u64(os, static_cast<uint64_t>(d));
            os.write(reinterpret_cast<const char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        }
        detail::put_u64(os, vocab_tokens.size());
        for (const auto& tok : vocab_tokens) detail::put_str(os, tok);
        if (!os) throw std::runtime_error("I/O failure writing checkpoint: " + tmp);
    }
    fs::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        throw ValidationError("not a checkpoint file: " + path);
    Checkpoint ck;
    ck.config_json = detail::get_str(is);
    const uint64_t n = detail::get_u64(is);
    for (uint64_t i = 0; i < n; ++i) {
        std::string name = detail::get_str(is);
        const uint64_t ndim = detail::get_u64(is);
        Shape shape;
        for (uint64_t d = 0; d < ndim; ++d)
            shape.push_back(static_cast<int>(detail::get_u64(is)));
        Tensor t = Tensor::zeros(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!is) throw ValidationError("checkpoint: truncated tensor " + name);
        ck.store.add(name, std::move(t));
    }
    const uint64_t nv = detail::get_u64(is);
    for (uint64_t i = 0; i < nv; ++i) ck.vocab_tokens.push_back(detail::get_str(is));
    return ck;
}

}  // namespace msranker
