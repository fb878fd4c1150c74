#pragma once

// Architecture descriptions and the built-in registry.
//
// An ArchSpec lists the stem convolutions, four stages of repeated blocks,
// and the full jumper mask (one entry per shortcut slot). expand() turns it
// into a NetPlan: concrete per-layer shapes plus the tap points each jumper
// connects, validated against the declared mask. Both the cost analyzer and
// the model builder consume the NetPlan, so they can never disagree on
// structure.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cresnet/error.hpp"

namespace cresnet {

enum class BlockKind { Basic, Bottleneck, Cross3x3, CrossBottleneck3, CrossBottleneck6 };
enum class JumperKind { Solid, Dashed };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::Basic: return "basic";
    case BlockKind::Bottleneck: return "bottleneck";
    case BlockKind::Cross3x3: return "cross3x3";
    case BlockKind::CrossBottleneck3: return "cross_bottleneck3";
    case BlockKind::CrossBottleneck6: return "cross_bottleneck6";
  }
  throw SpecError("unhandled block kind");
}

inline BlockKind block_kind_from_string(const std::string& s) {
  if (s == "basic") return BlockKind::Basic;
  if (s == "bottleneck") return BlockKind::Bottleneck;
  if (s == "cross3x3") return BlockKind::Cross3x3;
  if (s == "cross_bottleneck3") return BlockKind::CrossBottleneck3;
  if (s == "cross_bottleneck6") return BlockKind::CrossBottleneck6;
  throw SpecError("unknown block kind '" + s + "'");
}

inline std::string to_string(JumperKind k) {
  return k == JumperKind::Solid ? "solid" : "dashed";
}

inline JumperKind jumper_kind_from_string(const std::string& s) {
  if (s == "solid") return JumperKind::Solid;
  if (s == "dashed") return JumperKind::Dashed;
  throw SpecError("unknown jumper kind '" + s + "'");
}

// Kernel sizes of the convolutions inside one block, in order.
inline const std::vector<std::int64_t>& block_kernels(BlockKind k) {
  static const std::vector<std::int64_t> basic = {3, 3};
  static const std::vector<std::int64_t> bottleneck = {1, 3, 1};
  static const std::vector<std::int64_t> cross3 = {3, 3, 3};
  static const std::vector<std::int64_t> cb3 = {1, 3, 1};
  static const std::vector<std::int64_t> cb6 = {1, 3, 1, 1, 3, 1};
  switch (k) {
    case BlockKind::Basic: return basic;
    case BlockKind::Bottleneck: return bottleneck;
    case BlockKind::Cross3x3: return cross3;
    case BlockKind::CrossBottleneck3: return cb3;
    case BlockKind::CrossBottleneck6: return cb6;
  }
  throw SpecError("unhandled block kind");
}

// Shortcut slots per block: {source tap, destination layer}. Tap t is the
// output of layer t (tap 0 is the block input); the jumper is added to the
// output of the destination layer. Baseline blocks add before the final
// ReLU; cross blocks add after each layer's ReLU.
struct JumperSlot {
  int index;       // 1-based, matches j1/j2/j3 naming
  int src_tap;
  int dest_layer;  // 1-based
};

inline const std::vector<JumperSlot>& block_jumper_slots(BlockKind k) {
  static const std::vector<JumperSlot> one_span2 = {{1, 0, 2}};
  static const std::vector<JumperSlot> one_span3 = {{1, 0, 3}};
  static const std::vector<JumperSlot> cross = {{1, 0, 2}, {2, 1, 3}};
  static const std::vector<JumperSlot> cb6 = {{1, 0, 4}, {2, 2, 5}, {3, 3, 6}};
  switch (k) {
    case BlockKind::Basic: return one_span2;
    case BlockKind::Bottleneck: return one_span3;
    case BlockKind::Cross3x3: return cross;
    case BlockKind::CrossBottleneck3: return cross;
    case BlockKind::CrossBottleneck6: return cb6;
  }
  throw SpecError("unhandled block kind");
}

// Dashed jumpers carry conv + batchnorm everywhere except the cross
// bottleneck families, whose shortcuts are bare 1x1 convs.
inline bool dashed_jumper_has_bn(BlockKind k) {
  switch (k) {
    case BlockKind::Basic:
    case BlockKind::Bottleneck:
    case BlockKind::Cross3x3:
      return true;
    case BlockKind::CrossBottleneck3:
    case BlockKind::CrossBottleneck6:
      return false;
  }
  throw SpecError("unhandled block kind");
}

struct ConvSpec {
  std::int64_t kernel = 3;
  std::int64_t out_channels = 64;
  std::int64_t stride = 1;
  bool operator==(const ConvSpec&) const = default;
};

struct StageSpec {
  BlockKind block = BlockKind::Cross3x3;
  int repeats = 1;
  std::vector<std::int64_t> channels;  // per-layer out channels, one per kernel
  std::int64_t stride = 1;             // applied by the first block's first 3x3 conv
  bool operator==(const StageSpec&) const = default;
};

struct JumperSpec {
  int stage = 0;  // 0-based
  int block = 0;  // 0-based within the stage
  int index = 1;  // 1-based slot within the block
  JumperKind kind = JumperKind::Solid;
  bool bn = false;  // dashed only: 1x1 conv followed by batchnorm
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t stride = 1;
  bool operator==(const JumperSpec&) const = default;
};

struct ArchSpec {
  std::string name;
  std::string provenance = "custom";  // "verified" | "reconstructed" | "custom"
  std::int64_t input_channels = 3;
  std::vector<ConvSpec> stem;
  std::vector<StageSpec> stages;    // exactly four
  std::vector<JumperSpec> jumpers;  // full mask, ordered (stage, block, index)
  bool operator==(const ArchSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Expansion

struct LayerPlan {
  std::int64_t kernel = 3;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t stride = 1;
  std::int64_t pad = 1;
};

struct JumperPlan {
  int index = 1;
  JumperKind kind = JumperKind::Solid;
  bool bn = false;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t stride = 1;
  int src_tap = 0;
  int dest_layer = 0;
};

struct BlockPlan {
  BlockKind kind = BlockKind::Cross3x3;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::vector<LayerPlan> layers;
  std::vector<JumperPlan> jumpers;
};

struct NetPlan {
  std::vector<LayerPlan> stem;
  std::vector<std::vector<BlockPlan>> stages;
  std::int64_t feature_channels = 0;  // into the global pool / classifier
};

namespace detail {

inline BlockPlan plan_block(const StageSpec& stage, std::int64_t in_channels, bool first) {
  const auto& kernels = block_kernels(stage.block);
  if (stage.channels.size() != kernels.size())
    throw SpecError(to_string(stage.block) + " stage needs " +
                    std::to_string(kernels.size()) + " channel entries, got " +
                    std::to_string(stage.channels.size()));
  BlockPlan block;
  block.kind = stage.block;
  block.in_channels = in_channels;
  block.out_channels = stage.channels.back();
  std::int64_t c = in_channels;
  bool stride_placed = false;
  for (size_t l = 0; l < kernels.size(); ++l) {
    LayerPlan layer;
    layer.kernel = kernels[l];
    layer.in_channels = c;
    layer.out_channels = stage.channels[l];
    layer.pad = kernels[l] / 2;
    layer.stride = 1;
    if (first && !stride_placed && kernels[l] == 3) {
      layer.stride = stage.stride;  // downsampling sits on the first 3x3 conv
      stride_placed = true;
    }
    block.layers.push_back(layer);
    c = layer.out_channels;
  }
  if (first && !stride_placed && stage.stride != 1)
    throw SpecError("stage stride needs a 3x3 conv to land on");
  for (const JumperSlot& slot : block_jumper_slots(stage.block)) {
    JumperPlan j;
    j.index = slot.index;
    j.src_tap = slot.src_tap;
    j.dest_layer = slot.dest_layer;
    j.in_channels = slot.src_tap == 0 ? in_channels
                                      : block.layers[slot.src_tap - 1].out_channels;
    j.out_channels = block.layers[slot.dest_layer - 1].out_channels;
    j.stride = 1;
    for (int l = slot.src_tap; l < slot.dest_layer; ++l) j.stride *= block.layers[l].stride;
    block.jumpers.push_back(j);
  }
  return block;
}

}  // namespace detail

// Expands the spec and validates the declared jumper mask against the
// derived slots. Throws SpecError on any mismatch.
inline NetPlan expand(const ArchSpec& spec) {
  if (spec.name.empty()) throw SpecError("arch spec has no name");
  if (spec.input_channels <= 0) throw SpecError("input_channels must be positive");
  if (spec.stem.empty()) throw SpecError("arch spec needs at least one stem conv");
  if (spec.stages.size() != 4)
    throw SpecError("arch spec needs exactly 4 stages, got " +
                    std::to_string(spec.stages.size()));

  NetPlan plan;
  std::int64_t c = spec.input_channels;
  for (const ConvSpec& s : spec.stem) {
    if (s.kernel <= 0 || s.kernel % 2 == 0)
      throw SpecError("stem kernel must be odd and positive");
    if (s.out_channels <= 0 || s.stride <= 0) throw SpecError("bad stem conv");
    plan.stem.push_back({s.kernel, c, s.out_channels, s.stride, s.kernel / 2});
    c = s.out_channels;
  }
  for (const StageSpec& stage : spec.stages) {
    if (stage.repeats < 1) throw SpecError("stage repeats must be >= 1");
    if (stage.stride < 1) throw SpecError("stage stride must be >= 1");
    for (std::int64_t ch : stage.channels)
      if (ch <= 0) throw SpecError("stage channels must be positive");
    std::vector<BlockPlan> blocks;
    for (int b = 0; b < stage.repeats; ++b) {
      blocks.push_back(detail::plan_block(stage, c, b == 0));
      c = blocks.back().out_channels;
    }
    plan.stages.push_back(std::move(blocks));
  }
  plan.feature_channels = c;

  // The declared mask must cover every slot exactly once, in canonical
  // order, with endpoints that match the derived structure.
  size_t ji = 0;
  for (size_t s = 0; s < plan.stages.size(); ++s) {
    for (size_t b = 0; b < plan.stages[s].size(); ++b) {
      for (JumperPlan& derived : plan.stages[s][b].jumpers) {
        const std::string where = "jumper s" + std::to_string(s) + ".b" +
                                  std::to_string(b) + ".j" + std::to_string(derived.index);
        if (ji >= spec.jumpers.size())
          throw SpecError("jumper mask too short: missing " + where);
        const JumperSpec& decl = spec.jumpers[ji++];
        if (decl.stage != static_cast<int>(s) || decl.block != static_cast<int>(b) ||
            decl.index != derived.index)
          throw SpecError("jumper mask out of order at entry " + std::to_string(ji - 1) +
                          ": expected " + where);
        if (decl.in_channels != derived.in_channels ||
            decl.out_channels != derived.out_channels || decl.stride != derived.stride)
          throw SpecError(where + " declares " + std::to_string(decl.in_channels) + "->" +
                          std::to_string(decl.out_channels) + " stride " +
                          std::to_string(decl.stride) + " but the structure gives " +
                          std::to_string(derived.in_channels) + "->" +
                          std::to_string(derived.out_channels) + " stride " +
                          std::to_string(derived.stride));
        if (decl.kind == JumperKind::Solid) {
          if (derived.in_channels != derived.out_channels || derived.stride != 1)
            throw SpecError(where + " cannot be solid: endpoints differ (" +
                            std::to_string(derived.in_channels) + "->" +
                            std::to_string(derived.out_channels) + " stride " +
                            std::to_string(derived.stride) + ")");
          if (decl.bn) throw SpecError(where + ": solid jumpers carry no batchnorm");
        }
        derived.kind = decl.kind;
        derived.bn = decl.kind == JumperKind::Dashed && decl.bn;
      }
    }
  }
  if (ji != spec.jumpers.size())
    throw SpecError("jumper mask has " + std::to_string(spec.jumpers.size()) +
                    " entries but the structure has " + std::to_string(ji) + " slots");
  return plan;
}

inline void validate(const ArchSpec& spec) { (void)expand(spec); }

// ---------------------------------------------------------------------------
// JSON spec files

inline nlohmann::json to_json(const ArchSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["provenance"] = spec.provenance;
  j["input_channels"] = spec.input_channels;
  j["stem"] = nlohmann::json::array();
  for (const ConvSpec& s : spec.stem)
    j["stem"].push_back({{"kernel", s.kernel},
                         {"out_channels", s.out_channels},
                         {"stride", s.stride}});
  j["stages"] = nlohmann::json::array();
  for (const StageSpec& s : spec.stages)
    j["stages"].push_back({{"block", to_string(s.block)},
                           {"repeats", s.repeats},
                           {"channels", s.channels},
                           {"stride", s.stride}});
  j["jumpers"] = nlohmann::json::array();
  for (const JumperSpec& s : spec.jumpers)
    j["jumpers"].push_back({{"stage", s.stage},
                            {"block", s.block},
                            {"index", s.index},
                            {"kind", to_string(s.kind)},
                            {"bn", s.bn},
                            {"in_channels", s.in_channels},
                            {"out_channels", s.out_channels},
                            {"stride", s.stride}});
  return j;
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec spec;
  try {
    spec.name = j.at("name").get<std::string>();
    spec.provenance = j.value("provenance", std::string("custom"));
    spec.input_channels = j.value("input_channels", std::int64_t{3});
    for (const auto& s : j.at("stem"))
      spec.stem.push_back({s.at("kernel").get<std::int64_t>(),
                           s.at("out_channels").get<std::int64_t>(),
                           s.at("stride").get<std::int64_t>()});
    for (const auto& s : j.at("stages")) {
      StageSpec st;
      st.block = block_kind_from_string(s.at("block").get<std::string>());
      st.repeats = s.at("repeats").get<int>();
      st.channels = s.at("channels").get<std::vector<std::int64_t>>();
      st.stride = s.at("stride").get<std::int64_t>();
      spec.stages.push_back(std::move(st));
    }
    for (const auto& s : j.at("jumpers")) {
      JumperSpec js;
      js.stage = s.at("stage").get<int>();
      js.block = s.at("block").get<int>();
      js.index = s.at("index").get<int>();
      js.kind = jumper_kind_from_string(s.at("kind").get<std::string>());
      js.bn = s.at("bn").get<bool>();
      js.in_channels = s.at("in_channels").get<std::int64_t>();
      js.out_channels = s.at("out_channels").get<std::int64_t>();
      js.stride = s.at("stride").get<std::int64_t>();
      spec.jumpers.push_back(js);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed arch spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

inline void spec_to_file(const ArchSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write spec file " + path);
  out << to_json(spec).dump(2) << "\n";
}

// File-level problems (unreadable, bad JSON, failed validation) surface as
// DataError so the CLI can distinguish bad inputs from bad usage.
inline ArchSpec spec_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read spec file " + path);
  nlohmann::json j;
  try {
    in >> j;
    return arch_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("spec file " + path + ": " + e.what());
  } catch (const SpecError& e) {
    throw DataError("spec file " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Registry

namespace detail {

// Derived view of every jumper slot, used to apply a variant's placement
// rule. `forced` means the endpoints differ so the slot cannot be solid.
struct SlotInfo {
  int stage, block, index;
  std::int64_t in_channels, out_channels, stride;
  bool forced;
  bool transition;  // first block of a stage whose input does not match its output
};

// expand() demands a complete mask, so slot enumeration runs its own dry pass.
inline std::vector<SlotInfo> enumerate_slots(const ArchSpec& partial) {
  std::int64_t c = partial.input_channels;
  for (const ConvSpec& s : partial.stem) c = s.out_channels;
  std::vector<SlotInfo> slots;
  for (size_t st = 0; st < partial.stages.size(); ++st) {
    const StageSpec& stage = partial.stages[st];
    for (int b = 0; b < stage.repeats; ++b) {
      BlockPlan bp = plan_block(stage, c, b == 0);
      const bool transition =
          b == 0 && (bp.in_channels != bp.out_channels || stage.stride != 1);
      for (const JumperPlan& jp : bp.jumpers)
        slots.push_back({static_cast<int>(st), b, jp.index, jp.in_channels,
                         jp.out_channels, jp.stride,
                         jp.in_channels != jp.out_channels || jp.stride != 1,
                         transition});
      c = bp.out_channels;
    }
  }
  return slots;
}

// Builds the full mask from a placement rule; forced slots are always dashed.
template <typename Pred>
void apply_mask(ArchSpec& spec, Pred dashed) {
  spec.jumpers.clear();
  for (const SlotInfo& s : enumerate_slots(spec)) {
    JumperSpec j;
    j.stage = s.stage;
    j.block = s.block;
    j.index = s.index;
    j.kind = (s.forced || dashed(s)) ? JumperKind::Dashed : JumperKind::Solid;
    j.bn = j.kind == JumperKind::Dashed &&
           dashed_jumper_has_bn(spec.stages[static_cast<size_t>(s.stage)].block);
    j.in_channels = s.in_channels;
    j.out_channels = s.out_channels;
    j.stride = s.stride;
    spec.jumpers.push_back(j);
  }
}

inline ArchSpec skeleton(const std::string& name, const std::string& provenance,
                         BlockKind kind, const std::vector<int>& repeats,
                         const std::vector<std::vector<std::int64_t>>& channels) {
  ArchSpec spec;
  spec.name = name;
  spec.provenance = provenance;
  spec.input_channels = 3;
  spec.stem = {{3, 64, 1}, {3, 64, 1}};
  for (size_t s = 0; s < 4; ++s) {
    StageSpec st;
    st.block = kind;
    st.repeats = repeats[s];
    st.channels = channels[s];
    st.stride = s == 0 ? 1 : 2;
    spec.stages.push_back(std::move(st));
  }
  return spec;
}

// Stage channel plans double per stage: base, 2x, 4x, 8x.
inline std::vector<std::vector<std::int64_t>> widths(const std::vector<std::int64_t>& base) {
  std::vector<std::vector<std::int64_t>> out;
  for (std::int64_t m : {1, 2, 4, 8}) {
    std::vector<std::int64_t> stage;
    for (std::int64_t b : base) stage.push_back(b * m);
    out.push_back(std::move(stage));
  }
  return out;
}

}  // namespace detail

inline const std::vector<std::string>& registry_names() {
  static const std::vector<std::string> names = {
      "resnet18_ft",  "resnet34_ft",  "resnet50_ft",  "cresnet15_a1",
      "cresnet18_a",  "cresnet27_a",  "cresnet27_a1", "cresnet27_a2",
      "cresnet27_b",  "cresnet27_b1", "cresnet27_b2", "cresnet27_b3",
      "cresnet27_c1"};
  return names;
}

inline ArchSpec registry_get(const std::string& name) {
  using detail::apply_mask;
  using detail::skeleton;
  using detail::widths;
  using detail::SlotInfo;

  const auto never = [](const SlotInfo&) { return false; };
  const auto transitions = [](const SlotInfo& s) { return s.transition; };

  ArchSpec spec;
  if (name == "resnet18_ft") {
    spec = skeleton(name, "verified", BlockKind::Basic, {2, 2, 2, 2}, widths({64, 64}));
    apply_mask(spec, never);
  } else if (name == "resnet34_ft") {
    spec = skeleton(name, "verified", BlockKind::Basic, {3, 4, 6, 3}, widths({64, 64}));
    apply_mask(spec, never);
  } else if (name == "resnet50_ft") {
    spec = skeleton(name, "verified", BlockKind::Bottleneck, {3, 4, 6, 3},
                    widths({64, 64, 256}));
    apply_mask(spec, never);
  } else if (name == "cresnet15_a1") {
    spec = skeleton(name, "verified", BlockKind::Cross3x3, {1, 1, 1, 1},
                    widths({64, 64, 64}));
    apply_mask(spec, transitions);
  } else if (name == "cresnet18_a") {
    spec = skeleton(name, "verified", BlockKind::Cross3x3, {1, 2, 1, 1},
                    widths({64, 64, 64}));
    apply_mask(spec, never);
  } else if (name == "cresnet27_a") {
    spec = skeleton(name, "reconstructed", BlockKind::Cross3x3, {2, 2, 2, 2},
                    widths({64, 64, 64}));
    apply_mask(spec, never);
  } else if (name == "cresnet27_a1") {
    spec = skeleton(name, "reconstructed", BlockKind::Cross3x3, {2, 2, 2, 2},
                    widths({64, 64, 64}));
    apply_mask(spec, transitions);
  } else if (name == "cresnet27_a2") {
    spec = skeleton(name, "verified", BlockKind::Cross3x3, {2, 2, 2, 2},
                    widths({64, 64, 64}));
    // Bespoke mask: stage-0 blocks dash j2, transitions dash both.
    apply_mask(spec, [](const SlotInfo& s) {
      return s.transition || (s.stage == 0 && s.index == 2);
    });
  } else if (name == "cresnet27_b") {
    spec = skeleton(name, "reconstructed", BlockKind::CrossBottleneck6, {1, 1, 1, 1},
                    widths({64, 128, 128, 64, 128, 128}));
    // Every j1 dashed (the transition ones are forced anyway).
    apply_mask(spec, [](const SlotInfo& s) { return s.index == 1; });
  } else if (name == "cresnet27_b1") {
    spec = skeleton(name, "reconstructed", BlockKind::CrossBottleneck6, {1, 1, 1, 1},
                    widths({64, 128, 128, 64, 128, 128}));
    apply_mask(spec, never);
  } else if (name == "cresnet27_b2") {
    spec = skeleton(name, "verified", BlockKind::CrossBottleneck6, {1, 1, 1, 1},
                    widths({64, 128, 128, 64, 128, 128}));
    apply_mask(spec, [](const SlotInfo& s) { return s.index == 1 || s.index == 2; });
  } else if (name == "cresnet27_b3") {
    spec = skeleton(name, "reconstructed", BlockKind::CrossBottleneck6, {1, 1, 1, 1},
                    widths({64, 128, 128, 64, 128, 128}));
    apply_mask(spec, [](const SlotInfo&) { return true; });
  } else if (name == "cresnet27_c1") {
    spec = skeleton(name, "verified", BlockKind::CrossBottleneck3, {2, 2, 2, 2},
                    widths({64, 64, 256}));
    apply_mask(spec, [](const SlotInfo&) { return true; });
  } else {
    std::string known;
    for (const auto& n : registry_names()) known += (known.empty() ? "" : ", ") + n;
    throw SpecError("unknown architecture '" + name + "' (known: " + known + ")");
  }
  validate(spec);
  return spec;
}

inline std::vector<ArchSpec> registry_all() {
  std::vector<ArchSpec> out;
  for (const auto& n : registry_names()) out.push_back(registry_get(n));
  return out;
}

}  // namespace cresnet
