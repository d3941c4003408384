#include "adasim/config_io.hpp"

#include "adasim/error.hpp"

namespace adasim {

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(c.pair_mode);
  j["loss"] = to_string(c.loss);
  j["tau"] = c.tau;
  j["window"] = c.window;
  j["topk"] = c.topk;
  j["shards"] = c.shards;
  j["normalize_cache"] = c.normalize_cache;
  j["cache_source"] = to_string(c.cache_source);
  j["epochs"] = c.epochs;
  j["batch"] = c.batch_size;
  j["lr"] = c.lr;
  j["lr_warmup_epochs"] = c.lr_warmup_epochs;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["ema"] = c.ema;
  j["oracle_p"] = c.oracle_p_final;
  j["oracle_exclude_self"] = c.oracle_exclude_self;
  j["seed"] = c.seed;
  j["hidden"] = c.hidden;
  j["embed_dim"] = c.embed_dim;
  j["predictor_hidden"] = c.predictor_hidden;
  j["symmetric"] = c.symmetric;
  j["dino_student_temp"] = c.dino_student_temp;
  j["dino_teacher_temp"] = c.dino_teacher_temp;
  j["dino_warmup_teacher_temp"] = c.dino_warmup_teacher_temp;
  j["dino_warmup_epochs"] = c.dino_warmup_epochs;
  j["dino_centering"] = c.dino_centering;
  j["dino_center_momentum"] = c.dino_center_momentum;
  j["infonce_temp"] = c.infonce_temp;
  j["aug_noise"] = c.augmentation.noise_sigma;
  j["aug_mask"] = c.augmentation.mask_fraction;
  j["aug_scale_min"] = c.augmentation.scale_min;
  j["aug_scale_max"] = c.augmentation.scale_max;
  j["probe_size"] = c.probe_size;
  return j;
}

TrainConfig apply_json(const TrainConfig& base, const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::kConfig, "config document must be a JSON object");
  TrainConfig c = base;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const auto& v = it.value();
    try {
      if (key == "mode") c.pair_mode = pair_mode_from_string(v.get<std::string>());
      else if (key == "loss") c.loss = loss_kind_from_string(v.get<std::string>());
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "window") c.window = v.get<int>();
      else if (key == "topk") c.topk = v.get<int>();
      else if (key == "shards") c.shards = v.get<int>();
      else if (key == "normalize_cache") c.normalize_cache = v.get<bool>();
      else if (key == "cache_source") c.cache_source = cache_source_from_string(v.get<std::string>());
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "batch") c.batch_size = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "lr_warmup_epochs") c.lr_warmup_epochs = v.get<int>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "ema") c.ema = v.get<double>();
      else if (key == "oracle_p") c.oracle_p_final = v.get<double>();
      else if (key == "oracle_exclude_self") c.oracle_exclude_self = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "hidden") c.hidden = v.get<std::vector<int>>();
      else if (key == "embed_dim") c.embed_dim = v.get<int>();
      else if (key == "predictor_hidden") c.predictor_hidden = v.get<int>();
      else if (key == "symmetric") c.symmetric = v.get<bool>();
      else if (key == "dino_student_temp") c.dino_student_temp = v.get<double>();
      else if (key == "dino_teacher_temp") c.dino_teacher_temp = v.get<double>();
      else if (key == "dino_warmup_teacher_temp") c.dino_warmup_teacher_temp = v.get<double>();
      else if (key == "dino_warmup_epochs") c.dino_warmup_epochs = v.get<int>();
      else if (key == "dino_centering") c.dino_centering = v.get<bool>();
      else if (key == "dino_center_momentum") c.dino_center_momentum = v.get<double>();
      else if (key == "infonce_temp") c.infonce_temp = v.get<double>();
      else if (key == "aug_noise") c.augmentation.noise_sigma = v.get<double>();
      else if (key == "aug_mask") c.augmentation.mask_fraction = v.get<double>();
      else if (key == "aug_scale_min") c.augmentation.scale_min = v.get<double>();
      else if (key == "aug_scale_max") c.augmentation.scale_max = v.get<double>();
      else if (key == "probe_size") c.probe_size = v.get<int>();
      else fail(ErrorKind::kConfig, key + ": unknown config field");
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, key + ": wrong type (" + e.what() + ")");
    }
  }
  return c;
}

}  // namespace adasim
