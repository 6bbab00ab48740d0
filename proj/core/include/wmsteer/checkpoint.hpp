#pragma once

/* Checkpoint container: a small binary format holding named float64 tensors
 * plus a JSON metadata block (training config echo, schedule name, counters).
 *
 * Layout: "WMTC" magic, u32 format version, u64 manifest length, manifest
 * JSON, then the raw little-endian float64 payload.  Tensors round-trip
 * bit-exactly, which the determinism guarantees rely on. */

#include <nlohmann/json.hpp>

#include <string>
#include <utility>
#include <vector>

#include "wmsteer/nn.hpp"
#include "wmsteer/tensor.hpp"

namespace wmsteer {

class Checkpoint {
public:
    nlohmann::json meta = nlohmann::json::object();

    void add(const std::string& name, Tensor t);
    const Tensor* find(const std::string& name) const;
    std::size_t tensor_count() const { return tensors_.size(); }

    // Adds every parameter of a store under "<prefix>.<param name>".
    void add_store(const std::string& prefix, const ParamStore& store);
    // Restores parameter values; every parameter must be present with the
    // right shape (extra checkpoint tensors are ignored).
    void load_store(const std::string& prefix, ParamStore& store) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    std::vector<std::pair<std::string, Tensor>> tensors_;
};

}  // namespace wmsteer
