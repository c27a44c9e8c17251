#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smallbig/network.hpp"

namespace smallbig {

/// Analytic (non-executing) parameter and FLOP accounting for a built
/// network. FLOPs are multiply-accumulates (1 MAC = 1 FLOP): conv costs
/// out_ch*in_ch*kt*kh*kw per output position, fc costs in*out, attention adds
/// its two position-pair matrix products, pooling/BN/activations cost zero.
/// Layers with an individually normalized big view list the convolution
/// twice (once per view); single-BN layers once. Shared tensors are counted
/// once: the second use site reports zero parameters.
struct CountReport {
  std::vector<CountRow> rows;
  int64_t total_params = 0;
  int64_t total_flops = 0;  // per clip
  Shape5 input{};
  nlohmann::json config;

  /// Sum of `params` over rows whose layer name contains `needle`.
  int64_t params_matching(const std::string& needle) const {
    int64_t n = 0;
    for (const auto& r : rows)
      if (r.name.find(needle) != std::string::npos) n += r.params;
    return n;
  }
  int64_t flops_matching(const std::string& needle) const {
    int64_t n = 0;
    for (const auto& r : rows)
      if (r.name.find(needle) != std::string::npos) n += r.flops;
    return n;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "# flop unit: 1 MAC = 1 FLOP; per-clip cost for input " << input.str()
       << "\n";
    os << "layer,kind,params,flops\n";
    for (const auto& r : rows)
      os << r.name << ',' << r.kind << ',' << r.params << ',' << r.flops << '\n';
    os << "TOTAL,," << total_params << ',' << total_flops << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["flop_unit"] = "1 MAC = 1 FLOP";
    j["input"] = {input.n, input.c, input.t, input.h, input.w};
    j["config"] = config;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
      j["rows"].push_back({{"layer", r.name},
                           {"kind", r.kind},
                           {"params", r.params},
                           {"flops", r.flops}});
    j["total_params"] = total_params;
    j["total_flops"] = total_flops;
    return j;
  }
};

/// Walk the graph once, propagating shapes at batch 1, and collect per-layer
/// rows. Totals are the column sums.
template <class T>
CountReport analyze(const Network<T>& net, int64_t in_t, int64_t in_h,
                    int64_t in_w) {
  CountReport rep;
  rep.input = {1, net.spec.in_channels, in_t, in_h, in_w};
  rep.config = net.spec.to_json();
  Shape5 s = rep.input;
  for (const auto& node : net.nodes()) {
    node->count(s, rep.rows);
    s = node->out_shape(s);
  }
  for (const auto& r : rep.rows) {
    rep.total_params += r.params;
    rep.total_flops += r.flops;
  }
  return rep;
}

template <class T>
CountReport analyze(const Network<T>& net) {
  return analyze(net, net.spec.in_t, net.spec.in_h, net.spec.in_w);
}

}  // namespace smallbig
