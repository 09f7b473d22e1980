#include "asvr/config.hpp"

#include <fstream>
#include <set>

namespace asvr {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + " must be an object");
  }

  void get(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0)
        throw ConfigError(where(key) + " must be a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void get(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  template <class Parse>
  bool get_enum(const char* key, Parse parse) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
      try {
        parse(v->get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(where(key) + ": " + e.what());
      }
      return true;
    }
    return false;
  }
  const json* array(const char* key) {
    const json* v = find(key);
    if (v && !v->is_array()) throw ConfigError(where(key) + " must be an array");
    return v;
  }
  const json* object(const char* key) { return find(key); }
  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError("unknown config key '" + where(k.c_str()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
  const json* find(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_stage(Section s, train::StageConfig& st) {
  s.get("lr", st.lr);
  s.get("lr_multiplier", st.lr_multiplier);
  s.get("warmup_ratio", st.warmup_ratio);
  s.get("epochs", st.epochs);
  s.get("batch_size", st.batch_size);
  s.get("weight_decay", st.weight_decay);
  s.get("clip_norm", st.clip_norm);
  s.get("train_encoder", st.train_encoder);
  s.get("max_examples", st.max_examples);
  s.finish();
}

ojson stage_json(const train::StageConfig& st) {
  return ojson{{"lr", st.lr},
               {"lr_multiplier", st.lr_multiplier},
               {"warmup_ratio", st.warmup_ratio},
               {"epochs", st.epochs},
               {"batch_size", st.batch_size},
               {"weight_decay", st.weight_decay},
               {"clip_norm", st.clip_norm},
               {"train_encoder", st.train_encoder},
               {"max_examples", st.max_examples}};
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section top(j, "");
  top.get("seed", c.seed);
  if (const json* v = top.object("data")) {
    Section s(*v, "data");
    s.get("seed", c.data.seed);
    s.get("n_train", c.data.n_train);
    s.get("n_eval", c.data.n_eval);
    s.get("image_px", c.data.image_px);
    s.get("patch_px", c.patch_px);
    s.finish();
  }
  if (const json* v = top.object("tokenizer")) {
    Section s(*v, "tokenizer");
    s.get("K", c.tokenizer.codebook_size);
    s.get("D", c.tokenizer.depth);
    s.get("d_c", c.tokenizer.code_dim);
    s.get("hidden", c.tokenizer.hidden);
    s.get("steps", c.tokenizer.steps);
    s.get("batch_size", c.tokenizer.batch_size);
    s.get("lr", c.tokenizer.lr);
    s.get("beta", c.tokenizer.beta);
    s.get("ema_decay", c.tokenizer.ema_decay);
    s.get("temperature", c.tokenizer.temperature);
    s.get("restart_every", c.tokenizer.restart_every);
    s.get_enum("kind", [&](const std::string& k) { c.tokenizer_kind = vq::parse_kind(k); });
    s.finish();
  }
  bool encoder_width_set = false;
  if (const json* v = top.object("encoder")) {
    Section s(*v, "encoder");
    encoder_width_set = v->is_object() && v->contains("d_v");
    s.get("d_v", c.encoder.width);
    s.get("layers", c.encoder.layers);
    s.get("heads", c.encoder.heads);
    s.get("steps", c.encoder.steps);
    s.get("batch_size", c.encoder.batch_size);
    s.get("lr", c.encoder.lr);
    s.get("temperature", c.encoder.temperature);
    s.finish();
  }
  bool lvlm_width_set = false;
  if (const json* v = top.object("lvlm")) {
    Section s(*v, "lvlm");
    lvlm_width_set = v->is_object() && v->contains("d_v");
    s.get("d", c.lvlm.width);
    s.get("d_v", c.lvlm.feature_width);
    s.get("layers", c.lvlm.layers);
    s.get("heads", c.lvlm.heads);
    s.get("max_positions", c.lvlm.max_positions);
    s.get_enum("features", [&](const std::string& k) { c.lvlm.features = parse_source(k); });
    s.finish();
  }
  if (encoder_width_set && lvlm_width_set && c.encoder.width != c.lvlm.feature_width) {
    throw ConfigError("encoder.d_v and lvlm.d_v disagree");
  }
  if (encoder_width_set && !lvlm_width_set) c.lvlm.feature_width = c.encoder.width;
  if (lvlm_width_set && !encoder_width_set) c.encoder.width = c.lvlm.feature_width;
  if (const json* v = top.object("visual_head")) {
    Section s(*v, "visual_head");
    s.get("d_h", c.visual_head.width);
    s.get("layers", c.visual_head.layers);
    s.get("heads", c.visual_head.heads);
    s.finish();
  }
  if (const json* v = top.object("loss")) {
    Section s(*v, "loss");
    s.get_enum("mode", [&](const std::string& k) { c.loss.mode = train::parse_mode(k); });
    s.get("lambda_vision", c.loss.lambda_vision);
    s.get("average_over_depth", c.loss.average_over_depth);
    s.get("same_position", c.loss.same_position);
    s.get("caption_free", c.loss.caption_free);
    s.finish();
  }
  if (const json* v = top.object("stage1")) read_stage(Section(*v, "stage1"), c.stage1);
  if (const json* v = top.object("stage2")) read_stage(Section(*v, "stage2"), c.stage2);
  if (const json* v = top.object("eval")) {
    Section s(*v, "eval");
    s.get("max_answer_len", c.eval.max_answer_len);
    int layer = -1;
    s.get("attention_layer", layer);
    if (layer >= 0) c.eval.attention_layer = static_cast<std::size_t>(layer);
    s.get("max_samples", c.eval.max_samples);
    s.finish();
  }
  if (const json* v = top.object("ablate")) {
    Section s(*v, "ablate");
    if (const json* a = s.array("modes")) {
      c.ablate.modes.clear();
      for (const auto& m : *a) {
        if (!m.is_string()) throw ConfigError("ablate.modes entries must be strings");
        try {
          c.ablate.modes.push_back(train::parse_mode(m.get<std::string>()));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("ablate.modes: ") + e.what());
        }
      }
    }
    if (const json* a = s.array("seeds")) {
      c.ablate.seeds.clear();
      for (const auto& m : *a) {
        if (!m.is_number_integer() || m.get<std::int64_t>() < 0) throw ConfigError("ablate.seeds entries must be non-negative integers");
        c.ablate.seeds.push_back(m.get<std::uint64_t>());
      }
    }
    if (const json* a = s.array("sources")) {
      c.ablate.sources.clear();
      for (const auto& m : *a) {
        if (!m.is_string()) throw ConfigError("ablate.sources entries must be strings");
        try {
          c.ablate.sources.push_back(parse_source(m.get<std::string>()));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("ablate.sources: ") + e.what());
        }
      }
    }
    s.get("it_only", c.ablate.it_only);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::validate() const {
  require(data.n_train > 0 && data.n_eval > 0, "data.n_train and data.n_eval must be positive");
  require(patch_px > 0 && data.image_px % patch_px == 0, "data.image_px must be a multiple of data.patch_px");
  require(data.image_px % data::kGrid == 0 && data.image_px / data::kGrid >= 8,
          "data.image_px must be a multiple of 3 with cells of at least 8 px");
  require(tokenizer.codebook_size >= 2, "tokenizer.K must be at least 2");
  require(tokenizer.depth >= 1, "tokenizer.D must be at least 1");
  require(tokenizer.code_dim >= 1 && tokenizer.hidden >= 1, "tokenizer widths must be positive");
  require(tokenizer.lr > 0.0 && encoder.lr > 0.0, "learning rates must be positive");
  require(tokenizer.batch_size >= 2 && encoder.batch_size >= 2,
          "contrastive training needs batch_size >= 2");
  require(encoder.heads > 0 && encoder.width % encoder.heads == 0, "encoder.d_v must divide into encoder.heads");
  require(encoder.width == lvlm.feature_width, "encoder.d_v and lvlm.d_v disagree");
  require(lvlm.heads > 0 && lvlm.width % lvlm.heads == 0, "lvlm.d must divide into lvlm.heads");
  require(visual_head.heads > 0 && visual_head.width % visual_head.heads == 0,
          "visual_head.d_h must divide into visual_head.heads");
  const std::size_t m = (data.image_px / patch_px) * (data.image_px / patch_px);
  // Longest caption: three objects of six words, two "and", then <eos>.
  require(lvlm.max_positions >= m + 3 + 21, "lvlm.max_positions too small for the longest caption");
  require(loss.lambda_vision >= 0.0, "loss.lambda_vision must be >= 0");
  for (const auto* st : {&stage1, &stage2}) {
    require(st->peak_lr() > 0.0, "stage learning rates must be positive");
    require(st->batch_size > 0 && st->epochs > 0, "stage batch_size and epochs must be positive");
    require(st->warmup_ratio >= 0.0 && st->warmup_ratio < 1.0, "warmup_ratio must be in [0, 1)");
  }
  require(eval.max_answer_len > 0, "eval.max_answer_len must be positive");
  require(!ablate.seeds.empty(), "ablate.seeds must not be empty");
  require(!ablate.modes.empty() && !ablate.sources.empty(), "ablate.modes and ablate.sources must not be empty");
}

ojson RunConfig::to_json() const {
  ojson modes = ojson::array(), seeds = ojson::array(), sources = ojson::array();
  for (auto m : ablate.modes) modes.push_back(train::mode_name(m));
  for (auto s : ablate.seeds) seeds.push_back(s);
  for (auto s : ablate.sources) sources.push_back(source_name(s));
  const int layer = eval.attention_layer == std::numeric_limits<std::size_t>::max()
                        ? -1
                        : static_cast<int>(eval.attention_layer);
  return ojson{
      {"seed", seed},
      {"data", {{"seed", data.seed}, {"n_train", data.n_train}, {"n_eval", data.n_eval},
                {"image_px", data.image_px}, {"patch_px", patch_px}}},
      {"tokenizer", {{"K", tokenizer.codebook_size}, {"D", tokenizer.depth}, {"d_c", tokenizer.code_dim},
                     {"hidden", tokenizer.hidden}, {"steps", tokenizer.steps},
                     {"batch_size", tokenizer.batch_size}, {"lr", tokenizer.lr}, {"beta", tokenizer.beta},
                     {"ema_decay", tokenizer.ema_decay}, {"temperature", tokenizer.temperature},
                     {"restart_every", tokenizer.restart_every}, {"kind", vq::kind_name(tokenizer_kind)}}},
      {"encoder", {{"d_v", encoder.width}, {"layers", encoder.layers}, {"heads", encoder.heads},
                   {"steps", encoder.steps}, {"batch_size", encoder.batch_size}, {"lr", encoder.lr},
                   {"temperature", encoder.temperature}}},
      {"lvlm", {{"d", lvlm.width}, {"d_v", lvlm.feature_width}, {"layers", lvlm.layers},
                {"heads", lvlm.heads}, {"max_positions", lvlm.max_positions},
                {"features", source_name(lvlm.features)}}},
      {"visual_head", {{"d_h", visual_head.width}, {"layers", visual_head.layers}, {"heads", visual_head.heads}}},
      {"loss", {{"mode", train::mode_name(loss.mode)}, {"lambda_vision", loss.lambda_vision},
                {"average_over_depth", loss.average_over_depth}, {"same_position", loss.same_position},
                {"caption_free", loss.caption_free}}},
      {"stage1", stage_json(stage1)},
      {"stage2", stage_json(stage2)},
      {"eval", {{"max_answer_len", eval.max_answer_len}, {"attention_layer", layer},
                {"max_samples", eval.max_samples}}},
      {"ablate", {{"modes", modes}, {"seeds", seeds}, {"sources", sources}, {"it_only", ablate.it_only}}}};
}

void write_json(const ojson& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace asvr
