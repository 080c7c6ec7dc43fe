#pragma once

// JSON conversions for degradation samples and manifests. Key order is fixed
// (ordered_json) and 64-bit seeds travel as decimal strings, so serialized
// documents are byte-stable.

#include <string>

#include <json.hpp>

#include "dgdf/degrade.hpp"

namespace dgdf {

using ojson = nlohmann::ordered_json;

inline std::string u64_str(std::uint64_t v) { return std::to_string(v); }
inline std::uint64_t u64_parse(const std::string& s) { return std::stoull(s); }

inline ojson stage_to_json(const StageSpec& st) {
  ojson j;
  if (const auto* b = std::get_if<BlurStage>(&st)) {
    j["type"] = "blur";
    j["sigma_x"] = b->sigma_x;
    j["sigma_y"] = b->sigma_y;
    j["theta"] = b->theta;
    j["size"] = b->size;
  } else if (const auto* r = std::get_if<ResizeStage>(&st)) {
    j["type"] = "resize";
    j["scale"] = r->scale;
    j["filter"] = filter_name(r->filter);
  } else if (const auto* n = std::get_if<NoiseStage>(&st)) {
    j["type"] = "noise";
    j["sigma"] = n->sigma;
    j["gray"] = n->gray;
  } else if (const auto* q = std::get_if<JpegStage>(&st)) {
    j["type"] = "jpeg";
    j["quality"] = q->quality;
  }
  return j;
}

inline StageSpec stage_from_json(const ojson& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "blur")
    return BlurStage{j.at("sigma_x").get<double>(), j.at("sigma_y").get<double>(),
                     j.at("theta").get<double>(), j.at("size").get<int>()};
  if (type == "resize")
    return ResizeStage{j.at("scale").get<double>(),
                       filter_from_name(j.at("filter").get<std::string>())};
  if (type == "noise") return NoiseStage{j.at("sigma").get<double>(), j.at("gray").get<bool>()};
  if (type == "jpeg") return JpegStage{j.at("quality").get<int>()};
  throw value_error("unknown stage type: " + type);
}

inline ojson sample_to_json(const DegradationSample& s) {
  ojson j;
  j["kind"] = kind_name(s.kind);
  j["seed"] = u64_str(s.seed);
  j["in_size"] = s.in_size;
  j["out_size"] = s.out_size;
  j["stages"] = ojson::array();
  for (const auto& st : s.stages) j["stages"].push_back(stage_to_json(st));
  return j;
}

inline DegradationSample sample_from_json(const ojson& j) {
  DegradationSample s;
  s.kind = kind_from_name(j.at("kind").get<std::string>());
  s.seed = u64_parse(j.at("seed").get<std::string>());
  s.in_size = j.at("in_size").get<int>();
  s.out_size = j.at("out_size").get<int>();
  for (const auto& st : j.at("stages")) s.stages.push_back(stage_from_json(st));
  return s;
}

inline ojson ranges_to_json(const DegradationRanges& r) {
  ojson j;
  j["blur_sigma_min"] = r.blur_sigma_min;
  j["blur_sigma_max"] = r.blur_sigma_max;
  j["kernel_min"] = r.kernel_min;
  j["kernel_max"] = r.kernel_max;
  j["theta_max"] = r.theta_max;
  j["down_min"] = r.down_min;
  j["down_max"] = r.down_max;
  j["noise_min"] = r.noise_min;
  j["noise_max"] = r.noise_max;
  j["gray_prob"] = r.gray_prob;
  j["jpeg_min"] = r.jpeg_min;
  j["jpeg_max"] = r.jpeg_max;
  j["second_round_prob"] = r.second_round_prob;
  j["second_round_atten"] = r.second_round_atten;
  j["hq_size"] = r.hq_size;
  j["lq_size"] = r.lq_size;
  return j;
}

inline DegradationRanges ranges_from_json(const ojson& j) {
  DegradationRanges r;
  r.blur_sigma_min = j.at("blur_sigma_min").get<double>();
  r.blur_sigma_max = j.at("blur_sigma_max").get<double>();
  r.kernel_min = j.at("kernel_min").get<int>();
  r.kernel_max = j.at("kernel_max").get<int>();
  r.theta_max = j.at("theta_max").get<double>();
  r.down_min = j.at("down_min").get<double>();
  r.down_max = j.at("down_max").get<double>();
  r.noise_min = j.at("noise_min").get<double>();
  r.noise_max = j.at("noise_max").get<double>();
  r.gray_prob = j.at("gray_prob").get<double>();
  r.jpeg_min = j.at("jpeg_min").get<int>();
  r.jpeg_max = j.at("jpeg_max").get<int>();
  r.second_round_prob = j.at("second_round_prob").get<double>();
  r.second_round_atten = j.at("second_round_atten").get<double>();
  r.hq_size = j.at("hq_size").get<int>();
  r.lq_size = j.at("lq_size").get<int>();
  return r;
}

}  // namespace dgdf
