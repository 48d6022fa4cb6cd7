// SPDX-License-Identifier: Apache-2.0
#include "mosa/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "mosa/errors.hpp"

namespace mosa {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <class E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<E> all) {
  std::string names;
  for (E e : all) {
    if (to_string(e) == v) return e;
    names += (names.empty() ? "" : ", ") + to_string(e);
  }
  throw ConfigError(key + ": unknown value '" + v + "' (expected one of " + names + ")");
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field size_field(T RunConfig::*section, std::size_t T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = parse_u64(k, v);
          },
          [=](const RunConfig& c) { return std::to_string((c.*section).*member); }};
}

template <class T>
Field double_field(T RunConfig::*section, double T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = parse_double(k, v);
          },
          [=](const RunConfig& c) { return fmt_double((c.*section).*member); }};
}

template <class T>
Field bool_field(T RunConfig::*section, bool T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = parse_bool(k, v);
          },
          [=](const RunConfig& c) { return fmt_bool((c.*section).*member); }};
}

template <class T, class E>
Field enum_field(T RunConfig::*section, E T::*member, std::initializer_list<E> all) {
  std::vector<E> values(all);
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            std::string names;
            for (E e : values) {
              if (to_string(e) == v) {
                (c.*section).*member = e;
                return;
              }
              names += (names.empty() ? "" : ", ") + to_string(e);
            }
            throw ConfigError(k + ": unknown value '" + v + "' (expected one of " + names + ")");
          },
          [=](const RunConfig& c) { return to_string((c.*section).*member); }};
}

Field string_field(std::string RunConfig::*member) {
  return {[=](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [=](const RunConfig& c) { return c.*member; }};
}

Field flag_field(bool RunConfig::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_bool(k, v);
          },
          [=](const RunConfig& c) { return fmt_bool(c.*member); }};
}

const std::map<std::string, Field>& fields() {
  using B = BackboneConfig;
  using A = AdapterConfig;
  using P = TrainPlan;
  constexpr auto bb = &RunConfig::backbone;
  constexpr auto ad = &RunConfig::adapter;
  constexpr auto pl = &RunConfig::plan;
  static const std::map<std::string, Field> table = {
      {"image_size", size_field(bb, &B::image_size)},
      {"patch_size", size_field(bb, &B::patch_size)},
      {"channels", size_field(bb, &B::channels)},
      {"embed_dim", size_field(bb, &B::embed_dim)},
      {"num_layers", size_field(bb, &B::num_layers)},
      {"num_heads", size_field(bb, &B::num_heads)},
      {"mlp_ratio", double_field(bb, &B::mlp_ratio)},
      {"num_classes", size_field(bb, &B::num_classes)},
      {"use_cls_token", bool_field(bb, &B::use_cls_token)},
      {"backbone_seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.backbone_seed = parse_u64(k, v);
        },
        [](const RunConfig& c) { return std::to_string(c.backbone_seed); }}},
      {"tuning",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.tuning = parse_enum(k, v, {Tuning::kAdapter, Tuning::kLinearProbe, Tuning::kBitfit});
        },
        [](const RunConfig& c) { return to_string(c.tuning); }}},
      {"adapter_kind", enum_field(ad, &A::kind, {AdapterKind::kAdapter, AdapterKind::kLora})},
      {"bottleneck_dim", size_field(ad, &A::bottleneck_dim)},
      {"num_experts", size_field(ad, &A::num_experts)},
      {"hierarchical", bool_field(ad, &A::hierarchical)},
      {"sparsify_down", bool_field(ad, &A::sparsify_down)},
      {"sparsify_up", bool_field(ad, &A::sparsify_up)},
      {"insertion", enum_field(ad, &A::insertion,
                               {Insertion::kParallelFfn, Insertion::kPfeiffer, Insertion::kHoulsby})},
      {"activation", enum_field(ad, &A::activation, {Activation::kRelu, Activation::kGelu})},
      {"adapter_scale", double_field(ad, &A::scale)},
      {"use_bias", bool_field(ad, &A::use_bias)},
      {"retain_fraction", double_field(ad, &A::retain_fraction)},
      {"expert_pairing",
       enum_field(ad, &A::pairing, {ExpertPairing::kIndependent, ExpertPairing::kTied})},
      {"lora_targets",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          std::vector<LoraTarget> targets;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) {
            const auto t = parse_enum(k, trim(item), {LoraTarget::kQuery, LoraTarget::kKey,
                                                      LoraTarget::kValue, LoraTarget::kOutput});
            if (std::find(targets.begin(), targets.end(), t) != targets.end()) {
              throw ConfigError(k + ": '" + trim(item) + "' listed twice");
            }
            targets.push_back(t);
          }
          c.adapter.lora_targets = targets;
        },
        [](const RunConfig& c) {
          std::string out;
          for (auto t : c.adapter.lora_targets) out += (out.empty() ? "" : ",") + to_string(t);
          return out;
        }}},
      {"epochs", size_field(pl, &P::epochs)},
      {"warmup_epochs", size_field(pl, &P::warmup_epochs)},
      {"batch_size", size_field(pl, &P::batch_size)},
      {"base_lr", double_field(pl, &P::base_lr)},
      {"weight_decay", double_field(pl, &P::weight_decay)},
      {"alpha", double_field(pl, &P::alpha)},
      {"beta", double_field(pl, &P::beta)},
      {"alignment", enum_field(pl, &P::alignment,
                               {Alignment::kNone, Alignment::kShallow, Alignment::kDeep,
                                Alignment::kAll})},
      {"two_pass_distinct", bool_field(pl, &P::two_pass_distinct)},
      {"seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.plan.seed = parse_u64(k, v);
        },
        [](const RunConfig& c) { return std::to_string(c.plan.seed); }}},
      {"adam_beta1", double_field(pl, &P::adam_beta1)},
      {"adam_beta2", double_field(pl, &P::adam_beta2)},
      {"adam_eps", double_field(pl, &P::adam_eps)},
      {"augment",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.plan.augment.crop = parse_bool(k, v);
        },
        [](const RunConfig& c) { return fmt_bool(c.plan.augment.crop); }}},
      {"hflip",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.plan.augment.hflip = parse_bool(k, v);
        },
        [](const RunConfig& c) { return fmt_bool(c.plan.augment.hflip); }}},
      {"crop_min_scale",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.plan.augment.min_scale = parse_double(k, v);
        },
        [](const RunConfig& c) { return fmt_double(c.plan.augment.min_scale); }}},
      {"eval_every", size_field(pl, &P::eval_every)},
      {"log_steps", flag_field(&RunConfig::log_steps)},
      {"train_data", string_field(&RunConfig::train_data)},
      {"val_data", string_field(&RunConfig::val_data)},
      {"out_dir", string_field(&RunConfig::out_dir)},
      {"merged", flag_field(&RunConfig::merged)},
  };
  return table;
}

const Field& field(const std::string& key) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

}  // namespace

void RunConfig::validate() const {
  backbone.validate();
  if (tuning == Tuning::kAdapter) adapter.validate(backbone.embed_dim);
  plan.validate();
}

ParsedConfig parse_config(std::string_view text) {
  ParsedConfig out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    const std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + key + "' repeated");
    }
    try {
      field(key).set(out.config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& [key, f] : fields()) {
    if (!seen.count(key)) {
      out.notices.push_back("config: " + key + " not set, using default " + f.get(out.config));
    }
  }
  return out;
}

ParsedConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  field(key).set(cfg, key, trim(assignment.substr(eq + 1)));
}

std::string config_value(const RunConfig& cfg, const std::string& key) {
  return field(key).get(cfg);
}

std::string config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, f] : fields()) out += key + "=" + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, f] : fields()) keys.push_back(key);
  return keys;
}

std::string to_string(Tuning t) {
  switch (t) {
    case Tuning::kAdapter: return "adapter";
    case Tuning::kLinearProbe: return "linear_probe";
    case Tuning::kBitfit: return "bitfit";
  }
  return "?";
}

}  // namespace mosa
