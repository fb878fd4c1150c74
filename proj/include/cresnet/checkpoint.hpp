#pragma once

// Checkpoint file format, version 1.
//
//   bytes 0..7   magic "CRNCKPT1"
//   bytes 8..11  u32 little-endian: header JSON size
//   then         header JSON (version, scalar type, arch spec, classes,
//                epochs completed, seed, tensor manifest)
//   then         raw little-endian scalar payload, tensors back to back in
//                manifest order
//
// The manifest mirrors the model's parameter walk: params, then optimizer
// velocities in the same order, then each batchnorm's running mean and
// variance. Restoring into a freshly built model of the same spec is
// bitwise exact, which is what makes training resume reproducible.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cresnet/arch.hpp"
#include "cresnet/model.hpp"

namespace cresnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

inline constexpr char kCheckpointMagic[9] = "CRNCKPT1";

template <typename T>
struct Checkpoint {
  ArchSpec arch;
  std::int64_t classes = 0;
  int epoch = 0;  // epochs completed when saved
  std::uint64_t seed = 0;
  std::vector<std::string> names;         // manifest order
  std::vector<std::string> roles;         // param | velocity | bn_mean | bn_var
  std::vector<std::vector<T>> payload;
};

namespace detail {

template <typename T>
constexpr const char* scalar_tag() {
  if constexpr (sizeof(T) == 4) return "f32";
  else return "f64";
}

template <typename T>
void append_scalars(std::string& out, const std::vector<T>& v) {
  const size_t at = out.size();
  out.resize(at + v.size() * sizeof(T));
  std::memcpy(out.data() + at, v.data(), v.size() * sizeof(T));
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model,
                     const std::vector<std::vector<T>>& velocities, int epoch,
                     std::uint64_t seed) {
  nlohmann::json manifest = nlohmann::json::array();
  std::string payload;

  size_t vi = 0;
  model.for_each_parameter([&](const std::string& name, Tensor<T>& p) {
    manifest.push_back({{"name", name}, {"role", "param"}, {"count", p.size()}});
    detail::append_scalars(payload, p.vec());
    ++vi;
  });
  if (velocities.size() != vi)
    throw Error("save_checkpoint: " + std::to_string(velocities.size()) +
                " velocity slots for " + std::to_string(vi) + " parameters");
  size_t k = 0;
  model.for_each_parameter([&](const std::string& name, Tensor<T>& p) {
    const std::vector<T>& v = velocities[k++];
    if (static_cast<std::int64_t>(v.size()) != p.size())
      throw Error("save_checkpoint: velocity size mismatch at " + name);
    manifest.push_back({{"name", name}, {"role", "velocity"},
                        {"count", static_cast<std::int64_t>(v.size())}});
    detail::append_scalars(payload, v);
  });
  model.for_each_bn_state([&](const std::string& name, BnState<T>& s) {
    manifest.push_back({{"name", name}, {"role", "bn_mean"},
                        {"count", static_cast<std::int64_t>(s.running_mean.size())}});
    detail::append_scalars(payload, s.running_mean);
    manifest.push_back({{"name", name}, {"role", "bn_var"},
                        {"count", static_cast<std::int64_t>(s.running_var.size())}});
    detail::append_scalars(payload, s.running_var);
  });

  nlohmann::json header;
  header["version"] = 1;
  header["scalar"] = detail::scalar_tag<T>();
  header["arch"] = to_json(model.spec);
  header["classes"] = model.classes;
  header["epoch"] = epoch;
  header["seed"] = seed;
  header["tensors"] = std::move(manifest);
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 8);
  const std::uint32_t hsize = static_cast<std::uint32_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&hsize), 4);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("short write to checkpoint " + path);
}

template <typename T>
Checkpoint<T> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError(path + ": not a checkpoint (bad magic)", 0);
  std::uint32_t hsize = 0;
  if (!in.read(reinterpret_cast<char*>(&hsize), 4))
    throw DataError(path + ": truncated header size", 8);
  std::string header_str(hsize, '\0');
  if (!in.read(header_str.data(), hsize))
    throw DataError(path + ": truncated header", 12);

  Checkpoint<T> ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
    if (header.at("version").get<int>() != 1)
      throw DataError(path + ": unsupported checkpoint version " +
                      std::to_string(header.at("version").get<int>()), 12);
    const std::string scalar = header.at("scalar").get<std::string>();
    if (scalar != detail::scalar_tag<T>())
      throw DataError(path + ": scalar type is " + scalar + ", reader expects " +
                      detail::scalar_tag<T>(), 12);
    ckpt.arch = arch_from_json(header.at("arch"));
    ckpt.classes = header.at("classes").get<std::int64_t>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    long long offset = 12 + static_cast<long long>(hsize);
    for (const auto& t : header.at("tensors")) {
      const auto count = t.at("count").get<std::int64_t>();
      std::vector<T> data(static_cast<size_t>(count));
      if (!in.read(reinterpret_cast<char*>(data.data()),
                   static_cast<std::streamsize>(count * sizeof(T))))
        throw DataError(path + ": truncated payload at tensor " +
                        t.at("name").get<std::string>(), offset);
      offset += count * static_cast<long long>(sizeof(T));
      ckpt.names.push_back(t.at("name").get<std::string>());
      ckpt.roles.push_back(t.at("role").get<std::string>());
      ckpt.payload.push_back(std::move(data));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint header: " + e.what(), 12);
  } catch (const SpecError& e) {
    throw DataError(path + ": checkpoint arch spec invalid: " + e.what(), 12);
  }
  return ckpt;
}

// Restores parameters, optimizer velocities, and batchnorm state into a
// model of the same spec. Velocities may be null for evaluation-only use.
template <typename T>
void restore_checkpoint(const Checkpoint<T>& ckpt, Model<T>& model,
                        std::vector<std::vector<T>>* velocities = nullptr) {
  if (!(model.spec == ckpt.arch))
    throw DataError("checkpoint arch '" + ckpt.arch.name + "' does not match model '" +
                    model.spec.name + "'");
  if (model.classes != ckpt.classes)
    throw DataError("checkpoint was trained with " + std::to_string(ckpt.classes) +
                    " classes, model has " + std::to_string(model.classes));
  size_t at = 0;
  auto next = [&](const std::string& name, const std::string& role,
                  std::int64_t count) -> const std::vector<T>& {
    if (at >= ckpt.names.size())
      throw DataError("checkpoint manifest ended before " + name + " (" + role + ")");
    if (ckpt.names[at] != name || ckpt.roles[at] != role ||
        static_cast<std::int64_t>(ckpt.payload[at].size()) != count)
      throw DataError("checkpoint manifest mismatch: expected " + name + " (" + role +
                      ", " + std::to_string(count) + " values), found " + ckpt.names[at] +
                      " (" + ckpt.roles[at] + ", " +
                      std::to_string(ckpt.payload[at].size()) + ")");
    return ckpt.payload[at++];
  };

  if (velocities) velocities->clear();
  model.for_each_parameter([&](const std::string& name, Tensor<T>& p) {
    p.vec() = next(name, "param", p.size());
  });
  model.for_each_parameter([&](const std::string& name, Tensor<T>& p) {
    const std::vector<T>& v = next(name, "velocity", p.size());
    if (velocities) velocities->push_back(v);
  });
  model.for_each_bn_state([&](const std::string& name, BnState<T>& s) {
    s.running_mean = next(name, "bn_mean",
                          static_cast<std::int64_t>(s.running_mean.size()));
    s.running_var = next(name, "bn_var",
                         static_cast<std::int64_t>(s.running_var.size()));
    s.initialized = true;
  });
  if (at != ckpt.names.size())
    throw DataError("checkpoint has " + std::to_string(ckpt.names.size() - at) +
                    " trailing tensors the model did not consume");
}

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint<T>& ckpt) {
  Model<T> model = build_model<T>(ckpt.arch, ckpt.classes, ckpt.seed);
  restore_checkpoint(ckpt, model);
  return model;
}

}  // namespace cresnet
