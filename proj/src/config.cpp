#include "hybrid/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hybrid {

namespace {

using Json = nlohmann::ordered_json;

Json encoder_json(const EncoderConfig& e) {
  Json j;
  j["kind"] = to_string(e.kind);
  j["recurrent_layers"] = e.recurrent_layers;
  j["attention_layers"] = e.attention_layers;
  j["dim"] = e.dim;
  j["heads"] = e.heads;
  j["ff_dim"] = e.ff_dim;
  j["chunk"] = e.chunk;
  j["dropout"] = e.dropout;
  j["use_positional"] = e.use_positional;
  j["use_short_cut"] = e.use_short_cut;
  j["vocab_size"] = e.vocab_size;
  j["reverse_cascade"] = e.reverse_cascade;
  j["recurrent_cell"] = e.recurrent_cell == CellKind::lstm ? "lstm" : "onlstm";
  j["recurrent_residual"] = e.recurrent_residual;
  j["reversed_master_input"] = e.reversed_master_input;
  j["post_norm"] = e.post_norm;
  j["final_norm"] = e.final_norm;
  return j;
}

Json model_json(const ModelConfig& m) {
  Json j;
  j["classifier_hidden"] = m.classifier_hidden;
  j["keep_parentheses"] = m.keep_parentheses;
  return j;
}

Json train_json(const TrainConfig& t) {
  Json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["clip_norm"] = t.clip_norm;
  j["seed"] = t.seed;
  j["train_max_ops"] = t.train_max_ops;
  j["train_limit"] = t.train_limit;
  j["bucket_by_length"] = t.bucket_by_length;
  j["eval_batch_size"] = t.eval_batch_size;
  return j;
}

/// Reads the keys of one section, rejecting anything it does not consume.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be an object");
  }

  void size(const char* key, std::size_t& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void integer(const char* key, int& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }
  void u64(const char* key, std::uint64_t& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void real(const char* key, double& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void flag(const char* key, bool& out) {
    if (const Json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  const Json* string(const char* key) {
    const Json* v = take(key);
    if (v && !v->is_string()) fail(key, "a string");
    return v;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + name_ + "." + key + "'");
    }
  }

 private:
  const Json* take(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw ConfigError("'" + name_ + "." + key + "' must be " + expected);
  }

  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_encoder(const Json& j, EncoderConfig& e) {
  Section s(j, "encoder");
  if (const Json* v = s.string("kind")) e.kind = encoder_kind_from_string(v->get<std::string>());
  s.size("recurrent_layers", e.recurrent_layers);
  s.size("attention_layers", e.attention_layers);
  s.size("dim", e.dim);
  s.size("heads", e.heads);
  s.size("ff_dim", e.ff_dim);
  s.size("chunk", e.chunk);
  s.real("dropout", e.dropout);
  s.flag("use_positional", e.use_positional);
  s.flag("use_short_cut", e.use_short_cut);
  s.size("vocab_size", e.vocab_size);
  s.flag("reverse_cascade", e.reverse_cascade);
  if (const Json* v = s.string("recurrent_cell")) {
    const auto name = v->get<std::string>();
    if (name == "lstm") e.recurrent_cell = CellKind::lstm;
    else if (name == "onlstm") e.recurrent_cell = CellKind::onlstm;
    else throw ConfigError("'encoder.recurrent_cell' must be lstm or onlstm, got '" + name + "'");
  }
  s.flag("recurrent_residual", e.recurrent_residual);
  s.flag("reversed_master_input", e.reversed_master_input);
  s.flag("post_norm", e.post_norm);
  s.flag("final_norm", e.final_norm);
  s.finish();
}

void read_model(const Json& j, ModelConfig& m) {
  Section s(j, "model");
  s.size("classifier_hidden", m.classifier_hidden);
  s.flag("keep_parentheses", m.keep_parentheses);
  s.finish();
}

void read_train(const Json& j, TrainConfig& t) {
  Section s(j, "train");
  s.size("epochs", t.epochs);
  s.size("batch_size", t.batch_size);
  s.real("learning_rate", t.learning_rate);
  s.real("clip_norm", t.clip_norm);
  s.u64("seed", t.seed);
  s.integer("train_max_ops", t.train_max_ops);
  s.size("train_limit", t.train_limit);
  s.flag("bucket_by_length", t.bucket_by_length);
  s.size("eval_batch_size", t.eval_batch_size);
  s.finish();
}

}  // namespace

std::string to_json(const RunConfig& config) {
  Json j;
  j["encoder"] = encoder_json(config.model.encoder);
  j["model"] = model_json(config.model);
  j["train"] = train_json(config.train);
  return j.dump(2) + "\n";
}

RunConfig merge_run_config(const RunConfig& base, const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig out = base;
  for (const auto& [key, value] : j.items()) {
    if (key == "encoder") read_encoder(value, out.model.encoder);
    else if (key == "model") read_model(value, out.model);
    else if (key == "train") read_train(value, out.train);
    else throw ConfigError("unknown section '" + key + "'");
  }
  out.model.encoder.validate();
  out.train.validate();
  return out;
}

RunConfig run_config_from_json(const std::string& text) { return merge_run_config(RunConfig{}, text); }

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return run_config_from_json(buf.str());
}

std::vector<std::string> preset_names() { return {"san", "lstm", "onlstm", "hybrid", "hybrid-shortcut", "hybrid-3l3l"}; }

RunConfig preset(const std::string& name) {
  RunConfig c;
  EncoderConfig& e = c.model.encoder;
  if (name == "san") {
    e.kind = EncoderKind::san;
    e.recurrent_layers = 0;
    e.attention_layers = 2;
    e.use_positional = true;
    e.use_short_cut = false;
  } else if (name == "lstm" || name == "onlstm") {
    e.kind = name == "lstm" ? EncoderKind::lstm : EncoderKind::onlstm;
    e.recurrent_layers = 2;
    e.attention_layers = 0;
    e.use_short_cut = false;
  } else if (name == "hybrid" || name == "hybrid-shortcut") {
    e.kind = EncoderKind::hybrid;
    e.use_short_cut = name == "hybrid-shortcut";
  } else if (name == "hybrid-3l3l") {
    e.kind = EncoderKind::hybrid;
    e.recurrent_layers = 3;
    e.attention_layers = 3;
    e.use_short_cut = false;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
  }
  e.validate();
  return c;
}

void apply_tiny(RunConfig& config) {
  EncoderConfig& e = config.model.encoder;
  e.dim = 64;
  e.ff_dim = 256;
  e.chunk = 0;
  e.dropout = 0.1;
  config.model.classifier_hidden = 128;
  config.train.epochs = 10;
  config.train.batch_size = 32;
  config.train.learning_rate = 1e-3;
}

}  // namespace hybrid
