#pragma once

// Static cost analysis: exact parameter and FLOP counts from a NetPlan.
//
// Conventions (shared by every figure this library reports):
//   - one FLOP = one multiply-accumulate
//   - conv: k*k*Cin*Cout*Hout*Wout FLOPs, k*k*Cin*Cout params (bias-free)
//   - batchnorm: 2C params (gamma, beta), 0 FLOPs; running stats are state,
//     not parameters
//   - fc: Cin*K FLOPs, Cin*K + K params (bias)
//   - solid jumpers, ReLU, additions, pooling: 0 params, 0 FLOPs
//   - each conv row folds in the params of the batchnorm that follows it;
//     dashed jumpers without batchnorm contribute conv params only
//
// Totals are exact int64; rounding to 0.01M / 0.01G happens only in the
// display helpers.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "cresnet/arch.hpp"

namespace cresnet {

struct LayerCost {
  std::string name;  // stem.0, s2.b0.l1, s2.b0.j1, fc
  std::string type;  // conv_bn, jumper_solid, jumper_dashed, jumper_dashed_bn, fc
  std::int64_t kernel = 0;
  std::int64_t stride = 1;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct JumperCensus {
  std::int64_t total = 0;
  std::int64_t solid = 0;
  std::int64_t dashed = 0;
};

struct CostReport {
  std::string arch;
  std::int64_t classes = 0;
  std::int64_t input_h = 0;
  std::int64_t input_w = 0;
  std::vector<LayerCost> rows;
  std::int64_t params_total = 0;
  std::int64_t flops_total = 0;
  std::int64_t weight_layers = 0;  // stem + block convs + fc; jumpers excluded
  JumperCensus jumpers;
};

namespace detail {

inline std::int64_t conv_cost_out(std::int64_t in, std::int64_t kernel,
                                  std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

inline LayerCost conv_bn_row(const std::string& name, const LayerPlan& l,
                             std::int64_t h, std::int64_t w) {
  LayerCost row;
  row.name = name;
  row.type = "conv_bn";
  row.kernel = l.kernel;
  row.stride = l.stride;
  row.in_channels = l.in_channels;
  row.out_channels = l.out_channels;
  row.out_h = conv_cost_out(h, l.kernel, l.stride, l.pad);
  row.out_w = conv_cost_out(w, l.kernel, l.stride, l.pad);
  const std::int64_t conv_params = l.kernel * l.kernel * l.in_channels * l.out_channels;
  row.params = conv_params + 2 * l.out_channels;
  row.flops = conv_params * row.out_h * row.out_w;
  return row;
}

}  // namespace detail

inline CostReport analyze(const ArchSpec& spec, std::int64_t classes,
                          std::int64_t input_h = 32, std::int64_t input_w = 32) {
  if (classes <= 0) throw SpecError("classes must be positive");
  if (input_h <= 0 || input_w <= 0) throw SpecError("input size must be positive");
  const NetPlan plan = expand(spec);

  CostReport report;
  report.arch = spec.name;
  report.classes = classes;
  report.input_h = input_h;
  report.input_w = input_w;

  std::int64_t h = input_h, w = input_w;
  for (size_t i = 0; i < plan.stem.size(); ++i) {
    LayerCost row = detail::conv_bn_row("stem." + std::to_string(i), plan.stem[i], h, w);
    h = row.out_h;
    w = row.out_w;
    report.rows.push_back(std::move(row));
    ++report.weight_layers;
  }

  for (size_t s = 0; s < plan.stages.size(); ++s) {
    for (size_t b = 0; b < plan.stages[s].size(); ++b) {
      const BlockPlan& block = plan.stages[s][b];
      const std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b);
      // Spatial size after each layer; tap 0 is the block input.
      std::vector<std::int64_t> hs = {h}, ws = {w};
      for (size_t l = 0; l < block.layers.size(); ++l) {
        LayerCost row = detail::conv_bn_row(
            prefix + ".l" + std::to_string(l + 1), block.layers[l], hs.back(), ws.back());
        hs.push_back(row.out_h);
        ws.push_back(row.out_w);
        report.rows.push_back(std::move(row));
        ++report.weight_layers;
      }
      for (const JumperPlan& j : block.jumpers) {
        LayerCost row;
        row.name = prefix + ".j" + std::to_string(j.index);
        row.kernel = j.kind == JumperKind::Dashed ? 1 : 0;
        row.stride = j.stride;
        row.in_channels = j.in_channels;
        row.out_channels = j.out_channels;
        row.out_h = hs[static_cast<size_t>(j.dest_layer)];
        row.out_w = ws[static_cast<size_t>(j.dest_layer)];
        ++report.jumpers.total;
        if (j.kind == JumperKind::Solid) {
          row.type = "jumper_solid";
          ++report.jumpers.solid;
        } else {
          row.type = j.bn ? "jumper_dashed_bn" : "jumper_dashed";
          ++report.jumpers.dashed;
          const std::int64_t conv_params = j.in_channels * j.out_channels;
          row.params = conv_params + (j.bn ? 2 * j.out_channels : 0);
          row.flops = conv_params * row.out_h * row.out_w;
        }
        report.rows.push_back(std::move(row));
      }
      h = hs.back();
      w = ws.back();
    }
  }

  LayerCost fc;
  fc.name = "fc";
  fc.type = "fc";
  fc.in_channels = plan.feature_channels;
  fc.out_channels = classes;
  fc.out_h = 1;
  fc.out_w = 1;
  fc.params = plan.feature_channels * classes + classes;
  fc.flops = plan.feature_channels * classes;
  report.rows.push_back(std::move(fc));
  ++report.weight_layers;

  for (const LayerCost& row : report.rows) {
    report.params_total += row.params;
    report.flops_total += row.flops;
  }
  return report;
}

inline std::int64_t count_params(const ArchSpec& spec, std::int64_t classes) {
  return analyze(spec, classes).params_total;
}

inline std::int64_t count_flops(const ArchSpec& spec, std::int64_t classes,
                                std::int64_t input_hw = 32) {
  return analyze(spec, classes, input_hw, input_hw).flops_total;
}

inline JumperCensus jumper_census(const ArchSpec& spec) {
  JumperCensus census;
  const NetPlan plan = expand(spec);
  for (const auto& stage : plan.stages)
    for (const BlockPlan& block : stage)
      for (const JumperPlan& j : block.jumpers) {
        ++census.total;
        (j.kind == JumperKind::Solid ? census.solid : census.dashed)++;
      }
  return census;
}

struct CompareResult {
  std::string arch_a, arch_b;
  std::int64_t flops_a = 0, flops_b = 0;
  std::int64_t params_a = 0, params_b = 0;
  double flops_pct = 0;   // 100 * (a - b) / b, negative when a is cheaper
  double params_pct = 0;
};

inline CompareResult compare(const ArchSpec& a, const ArchSpec& b, std::int64_t classes,
                             std::int64_t input_hw = 32) {
  CompareResult r;
  r.arch_a = a.name;
  r.arch_b = b.name;
  r.flops_a = count_flops(a, classes, input_hw);
  r.flops_b = count_flops(b, classes, input_hw);
  r.params_a = count_params(a, classes);
  r.params_b = count_params(b, classes);
  r.flops_pct = 100.0 * static_cast<double>(r.flops_a - r.flops_b) /
                static_cast<double>(r.flops_b);
  r.params_pct = 100.0 * static_cast<double>(r.params_a - r.params_b) /
                 static_cast<double>(r.params_b);
  return r;
}

// ---------------------------------------------------------------------------
// Formatting

inline std::string fmt_millions(std::int64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f M", static_cast<double>(v) / 1e6);
  return buf;
}

inline std::string fmt_gflops(std::int64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f G", static_cast<double>(v) / 1e9);
  return buf;
}

inline std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f%%", v);
  return buf;
}

inline std::string fmt_grouped(std::int64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  int run = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (run == 3 && *it != '-') {
      out.push_back(',');
      run = 0;
    }
    out.push_back(*it);
    ++run;
  }
  return {out.rbegin(), out.rend()};
}

inline nlohmann::json report_to_json(const CostReport& r) {
  nlohmann::json j;
  j["arch"] = r.arch;
  j["classes"] = r.classes;
  j["input"] = {{"h", r.input_h}, {"w", r.input_w}};
  j["totals"] = {{"params", r.params_total},
                 {"flops", r.flops_total},
                 {"weight_layers", r.weight_layers},
                 {"jumpers",
                  {{"total", r.jumpers.total},
                   {"solid", r.jumpers.solid},
                   {"dashed", r.jumpers.dashed}}}};
  j["layers"] = nlohmann::json::array();
  for (const LayerCost& row : r.rows)
    j["layers"].push_back({{"name", row.name},
                           {"type", row.type},
                           {"kernel", row.kernel},
                           {"stride", row.stride},
                           {"in_channels", row.in_channels},
                           {"out_channels", row.out_channels},
                           {"out_h", row.out_h},
                           {"out_w", row.out_w},
                           {"params", row.params},
                           {"flops", row.flops}});
  return j;
}

inline std::string report_to_csv(const CostReport& r) {
  std::string out = "name,type,kernel,stride,in_channels,out_channels,out_h,out_w,params,flops\n";
  char buf[256];
  for (const LayerCost& row : r.rows) {
    std::snprintf(buf, sizeof buf,
                  "%s,%s,%" PRId64 ",%" PRId64 ",%" PRId64 ",%" PRId64 ",%" PRId64
                  ",%" PRId64 ",%" PRId64 ",%" PRId64 "\n",
                  row.name.c_str(), row.type.c_str(), row.kernel, row.stride,
                  row.in_channels, row.out_channels, row.out_h, row.out_w, row.params,
                  row.flops);
    out += buf;
  }
  return out;
}

}  // namespace cresnet
