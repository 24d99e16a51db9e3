#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tdr/prelude.hpp"

namespace tdr {

// On-disk checkpoint: a text header, one line per entry with
//   <name> <dtype> <shape d0xd1x...> <byte offset into the data section>
// terminated by "data <total bytes>", then raw little-endian values.
// Round-trips are bit-exact.
struct Checkpoint {
    struct Entry {
        std::string name;
        std::string dtype;  // f32 | f64 | i64
        Shape shape;
        std::vector<unsigned char> bytes;
    };

    std::vector<Entry> entries;

    static size_t dtype_size(const std::string& d) {
        if (d == "f32") return 4;
        if (d == "f64" || d == "i64") return 8;
        fail("checkpoint: unknown dtype " + d);
    }

    void put_f32(const std::string& name, const Shape& shape, const std::vector<float>& v) {
        Entry e{name, "f32", shape, {}};
        e.bytes.resize(v.size() * 4);
        std::memcpy(e.bytes.data(), v.data(), e.bytes.size());
        entries.push_back(std::move(e));
    }

    void put_f64(const std::string& name, const Shape& shape, const std::vector<double>& v) {
        Entry e{name, "f64", shape, {}};
        e.bytes.resize(v.size() * 8);
        std::memcpy(e.bytes.data(), v.data(), e.bytes.size());
        entries.push_back(std::move(e));
    }

    void put_i64(const std::string& name, int64_t v) {
        Entry e{name, "i64", {1}, {}};
        e.bytes.resize(8);
        std::memcpy(e.bytes.data(), &v, 8);
        entries.push_back(std::move(e));
    }

    const Entry& get(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        fail("checkpoint: missing entry " + name);
    }

    bool has(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return true;
        return false;
    }

    std::vector<float> get_f32(const std::string& name) const {
        const Entry& e = get(name);
        require(e.dtype == "f32", "checkpoint: " + name + " is " + e.dtype + ", expected f32");
        std::vector<float> v(e.bytes.size() / 4);
        std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
        return v;
    }

    std::vector<double> get_f64(const std::string& name) const {
        const Entry& e = get(name);
        require(e.dtype == "f64", "checkpoint: " + name + " is " + e.dtype + ", expected f64");
        std::vector<double> v(e.bytes.size() / 8);
        std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
        return v;
    }

    int64_t get_i64(const std::string& name) const {
        const Entry& e = get(name);
        require(e.dtype == "i64", "checkpoint: " + name + " is " + e.dtype + ", expected i64");
        int64_t v = 0;
        std::memcpy(&v, e.bytes.data(), 8);
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        require(bool(f), "checkpoint: cannot open " + path + " for writing");
        f << "tdrckpt 1\n";
        size_t offset = 0;
        for (const auto& e : entries) {
            f << e.name << ' ' << e.dtype << ' ' << shape_str(e.shape) << ' ' << offset << '\n';
            offset += e.bytes.size();
        }
        f << "data " << offset << '\n';
        for (const auto& e : entries)
            f.write(reinterpret_cast<const char*>(e.bytes.data()), std::streamsize(e.bytes.size()));
        require(bool(f), "checkpoint: write failed for " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        require(bool(f), "checkpoint: cannot open " + path);
        std::string magic;
        int version = 0;
        f >> magic >> version;
        require(magic == "tdrckpt" && version == 1, "checkpoint: bad header in " + path);

        struct Pending {
            std::string name, dtype;
            Shape shape;
            size_t offset;
        };
        std::vector<Pending> pending;
        size_t total = 0;
        while (true) {
            std::string name;
            f >> name;
            require(bool(f), "checkpoint: truncated header in " + path);
            if (name == "data") {
                f >> total;
                break;
            }
            Pending p;
            p.name = name;
            std::string shapes;
            f >> p.dtype >> shapes >> p.offset;
            size_t pos = 0;
            while (pos < shapes.size()) {
                size_t next = shapes.find('x', pos);
                if (next == std::string::npos) next = shapes.size();
                p.shape.push_back(std::stoi(shapes.substr(pos, next - pos)));
                pos = next + 1;
            }
            pending.push_back(std::move(p));
        }
        f.get();  // newline before the data section

        std::vector<unsigned char> blob(total);
        f.read(reinterpret_cast<char*>(blob.data()), std::streamsize(total));
        require(size_t(f.gcount()) == total, "checkpoint: truncated data in " + path);

        Checkpoint c;
        for (size_t i = 0; i < pending.size(); ++i) {
            const size_t end = i + 1 < pending.size() ? pending[i + 1].offset : total;
            Entry e{pending[i].name, pending[i].dtype, pending[i].shape, {}};
            e.bytes.assign(blob.begin() + std::ptrdiff_t(pending[i].offset),
                           blob.begin() + std::ptrdiff_t(end));
            require(e.bytes.size() == size_t(numel(e.shape)) * dtype_size(e.dtype),
                    "checkpoint: size mismatch for entry " + e.name);
            c.entries.push_back(std::move(e));
        }
        return c;
    }
};

}  // namespace tdr
