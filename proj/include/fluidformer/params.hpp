#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fluidformer/autodiff.hpp"
#include "fluidformer/tensor.hpp"

namespace ff {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Named parameter registry. Insertion order is the manifest order used by
// the checkpoint format. Non-learnable entries (e.g. BN running stats) are
// serialized but skipped by the optimizer.
class ParamRegistry {
public:
    Tensor& add(const std::string& name, Tensor init, bool learnable = true) {
        if (index_.count(name)) throw CheckpointError("duplicate parameter name: " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(init), learnable});
        return entries_.back().tensor;
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    Tensor& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw CheckpointError("unknown parameter: " + name);
        return entries_[it->second].tensor;
    }
    const Tensor& get(const std::string& name) const {
        return const_cast<ParamRegistry*>(this)->get(name);
    }
    bool learnable(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw CheckpointError("unknown parameter: " + name);
        return entries_[it->second].learnable;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }
    std::vector<std::string> learnable_names() const {
        std::vector<std::string> out;
        for (const auto& e : entries_)
            if (e.learnable) out.push_back(e.name);
        return out;
    }

    // Checkpoint format (little-endian): magic "FFCK", u32 version=1,
    // u32 tensor count; per tensor: u32 name length, name bytes, u8 learnable,
    // u32 rank, u32 dims..., float32 payload (row-major).
    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
        f.write("FFCK", 4);
        write_u32(f, 1);
        write_u32(f, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& e : entries_) {
            write_u32(f, static_cast<std::uint32_t>(e.name.size()));
            f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
            char l = e.learnable ? 1 : 0;
            f.write(&l, 1);
            write_u32(f, static_cast<std::uint32_t>(e.tensor.rank()));
            for (auto d : e.tensor.shape) write_u32(f, static_cast<std::uint32_t>(d));
            std::vector<float> buf(e.tensor.numel());
            for (std::size_t i = 0; i < buf.size(); ++i)
                buf[i] = static_cast<float>(e.tensor.data[i]);
            f.write(reinterpret_cast<const char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
        if (!f) throw CheckpointError("write failure: " + path);
    }

    // Strict load: the file must contain exactly the registered names with
    // matching shapes; nothing is modified when validation fails.
    void load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw CheckpointError("cannot open checkpoint: " + path);
        char magic[4];
        f.read(magic, 4);
        if (!f || std::memcmp(magic, "FFCK", 4) != 0)
            throw CheckpointError("bad checkpoint magic: " + path);
        if (read_u32(f) != 1) throw CheckpointError("unsupported checkpoint version");
        std::uint32_t count = read_u32(f);
        std::vector<std::pair<std::string, Tensor>> loaded;
        for (std::uint32_t i = 0; i < count; ++i) {
            std::uint32_t nl = read_u32(f);
            std::string name(nl, '\0');
            f.read(name.data(), nl);
            char l;
            f.read(&l, 1);
            std::uint32_t rank = read_u32(f);
            std::vector<std::size_t> shape(rank);
            for (auto& d : shape) d = read_u32(f);
            Tensor t(shape);
            std::vector<float> buf(t.numel());
            f.read(reinterpret_cast<char*>(buf.data()),
                   static_cast<std::streamsize>(buf.size() * sizeof(float)));
            if (!f) throw CheckpointError("truncated checkpoint: " + path);
            for (std::size_t k = 0; k < buf.size(); ++k) t.data[k] = buf[k];
            loaded.emplace_back(std::move(name), std::move(t));
        }
        // validate before touching any tensor
        std::string missing, extra, mismatched;
        std::unordered_map<std::string, std::size_t> seen;
        for (std::size_t i = 0; i < loaded.size(); ++i) seen[loaded[i].first] = i;
        for (const auto& e : entries_) {
            auto it = seen.find(e.name);
            if (it == seen.end()) {
                missing += " " + e.name;
            } else if (loaded[it->second].second.shape != e.tensor.shape) {
                mismatched += " " + e.name + " (expected " + shape_str(e.tensor.shape) +
                              ", file has " + shape_str(loaded[it->second].second.shape) + ")";
            }
        }
        for (const auto& [n, t] : loaded)
            if (!index_.count(n)) extra += " " + n;
        if (!missing.empty() || !extra.empty() || !mismatched.empty()) {
            std::string msg = "checkpoint mismatch:";
            if (!missing.empty()) msg += " missing:" + missing;
            if (!extra.empty()) msg += " unexpected:" + extra;
            if (!mismatched.empty()) msg += " shape:" + mismatched;
            throw CheckpointError(msg);
        }
        for (auto& [n, t] : loaded) entries_[index_[n]].tensor = std::move(t);
    }

private:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool learnable;
    };

    static void write_u32(std::ofstream& f, std::uint32_t v) {
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    static std::uint32_t read_u32(std::ifstream& f) {
        std::uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        if (!f) throw CheckpointError("truncated checkpoint header");
        return v;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Per-forward binding of registry tensors onto a tape. Each parameter gets
// one leaf Var per pass; grads are read back by name after backward().
struct NetCtx {
    ad::Tape& tape;
    ParamRegistry& params;
    bool training = true;

    ad::Var p(const std::string& name) {
        auto it = bound.find(name);
        if (it != bound.end()) return it->second;
        bool rg = params.learnable(name);
        auto v = tape.leaf(params.get(name), rg);
        bound[name] = v;
        return v;
    }

    ad::Var constant(Tensor t) { return tape.leaf(std::move(t), false); }

    std::unordered_map<std::string, ad::Var> bound;
};

}  // namespace ff
