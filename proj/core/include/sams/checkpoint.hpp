#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sams/tensor.hpp"

namespace sams {

// Single-file parameter archive: magic "SAMSCKP1", little-endian integers,
// 64-bit little-endian floats, entries in insertion order. Each entry is a
// named tensor or a JSON text blob (the manifest).
class Checkpoint {
public:
    void put_tensor(const std::string& name, const Tensor& t);
    void put_json(const std::string& name, const nlohmann::json& j);

    bool has(const std::string& name) const;
    std::vector<std::string> names() const;

    Tensor tensor(const std::string& name) const;
    nlohmann::json json(const std::string& name) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    struct Entry {
        std::string name;
        std::uint8_t kind;  // 0 tensor, 1 json
        Shape shape;
        std::vector<double> data;  // tensor payload
        std::string text;          // json payload
    };
    const Entry& find(const std::string& name) const;
    std::vector<Entry> entries_;
};

}  // namespace sams
