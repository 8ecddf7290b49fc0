#include "mtm/artifact.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "mtm/errors.hpp"

namespace mtm {

using nlohmann::json;

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t hash) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class PayloadWriter {
 public:
  void add(const std::string& name, std::vector<std::size_t> shape, std::span<const double> values) {
    const std::size_t offset = bytes_.size();
    for (double v : values) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) bytes_.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
    dir_.push_back({{"name", name},
                    {"offset", offset},
                    {"shape", shape},
                    {"checksum", hex64(fnv1a64(bytes_.data() + offset, bytes_.size() - offset))}});
  }
  void add(const std::string& name, const Matrix& m) { add(name, {m.rows(), m.cols()}, m.data()); }

  void finish(json& manifest, std::ostream& out) const {
    manifest["arrays"] = dir_;
    manifest["payload_bytes"] = bytes_.size();
    manifest["checksum"] = hex64(fnv1a64(bytes_.data(), bytes_.size()));
    out << manifest.dump() << '\n';
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw IoError("artifact: write failed");
  }

 private:
  std::string bytes_;
  json dir_ = json::array();
};

class PayloadReader {
 public:
  explicit PayloadReader(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) throw IoError("artifact: missing manifest line");
    try {
      manifest_ = json::parse(header);
    } catch (const json::exception& e) {
      throw IoError(std::string("artifact: malformed manifest: ") + e.what());
    }
    const std::string version = manifest_.value("format_version", "");
    const int major = std::atoi(version.c_str());
    if (version.empty() || major < 1) throw IoError("artifact: missing or invalid format_version");
    if (major > kArtifactMajorVersion) {
      throw IoError("artifact: format version " + version + " is newer than supported major version " +
                    std::to_string(kArtifactMajorVersion));
    }
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    const std::size_t expected = manifest_.at("payload_bytes").get<std::size_t>();
    if (bytes_.size() < expected) {
      throw ChecksumError(bytes_.size(), "payload truncated: " + std::to_string(bytes_.size()) + " of " +
                                             std::to_string(expected) + " bytes present");
    }
    if (bytes_.size() > expected) {
      throw ChecksumError(expected, "unexpected bytes after the payload end");
    }

    std::size_t cursor = 0;
    for (const auto& entry : manifest_.at("arrays")) {
      Entry e;
      e.offset = entry.at("offset").get<std::size_t>();
      e.shape = entry.at("shape").get<std::vector<std::size_t>>();
      e.count = 1;
      for (std::size_t s : e.shape) e.count *= s;
      if (e.offset != cursor) throw ChecksumError(e.offset, "array directory leaves a gap or overlap");
      cursor += 8 * e.count;
      if (cursor > bytes_.size()) throw ChecksumError(e.offset, "array extends past the payload");
      if (hex64(fnv1a64(bytes_.data() + e.offset, 8 * e.count)) != entry.at("checksum").get<std::string>()) {
        throw ChecksumError(e.offset, "checksum mismatch in array '" + entry.at("name").get<std::string>() + "'");
      }
      entries_[entry.at("name").get<std::string>()] = e;
    }
    if (cursor != bytes_.size()) throw ChecksumError(cursor, "arrays do not cover the payload");
    if (hex64(fnv1a64(bytes_.data(), bytes_.size())) != manifest_.at("checksum").get<std::string>()) {
      throw ChecksumError(0, "payload checksum mismatch");
    }
  }

  const json& manifest() const { return manifest_; }
  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  std::vector<double> values(const std::string& name, std::vector<std::size_t>* shape = nullptr) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("artifact: missing array '" + name + "'");
    const Entry& e = it->second;
    if (shape != nullptr) *shape = e.shape;
    std::vector<double> out(e.count);
    for (std::size_t i = 0; i < e.count; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[e.offset + 8 * i + b])) << (8 * b);
      }
      out[i] = std::bit_cast<double>(bits);
    }
    return out;
  }

  Matrix matrix(const std::string& name) const {
    std::vector<std::size_t> shape;
    auto v = values(name, &shape);
    if (shape.size() != 2) throw IoError("artifact: array '" + name + "' is not two-dimensional");
    Matrix m(shape[0], shape[1]);
    std::copy(v.begin(), v.end(), m.data().begin());
    return m;
  }

 private:
  struct Entry {
    std::size_t offset = 0;
    std::size_t count = 0;
    std::vector<std::size_t> shape;
  };
  json manifest_;
  std::string bytes_;
  std::map<std::string, Entry> entries_;
};

json base_manifest(const std::string& kind) {
  return {{"format_version", std::to_string(kArtifactMajorVersion) + "." + std::to_string(kArtifactMinorVersion)},
          {"kind", kind}};
}

void expect_kind(const json& manifest, const std::string& kind) {
  if (manifest.value("kind", "") != kind) {
    throw IoError("artifact: expected a '" + kind + "' artifact, found '" + manifest.value("kind", "") + "'");
  }
}

json config_json(const ModelConfig& c) {
  return {{"num_topics", c.num_topics},
          {"rate_form", to_string(c.rate_form)},
          {"prior", to_string(c.prior.variant)},
          {"normal_sigma", c.prior.normal_sigma},
          {"ard_a", c.prior.ard_a},
          {"ard_b", c.prior.ard_b},
          {"hs_tau", c.prior.hs_tau},
          {"hs_init", c.prior.hs_init},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"eb_steps_per_model_step", c.eb_steps_per_model_step},
          {"seed", c.seed},
          {"hidden_units", c.hidden_units},
          {"hidden_layers", c.hidden_layers}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.num_topics = j.at("num_topics").get<std::size_t>();
  c.rate_form = parse_rate_form(j.at("rate_form").get<std::string>());
  c.prior.variant = parse_prior_variant(j.at("prior").get<std::string>());
  c.prior.normal_sigma = j.at("normal_sigma").get<double>();
  c.prior.ard_a = j.at("ard_a").get<double>();
  c.prior.ard_b = j.at("ard_b").get<double>();
  c.prior.hs_tau = j.at("hs_tau").get<double>();
  c.prior.hs_init = j.at("hs_init").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.eb_steps_per_model_step = j.at("eb_steps_per_model_step").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.hidden_units = j.at("hidden_units").get<std::size_t>();
  c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  return c;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

// Writes to a sibling temporary file and renames it into place.
template <typename Writer>
void write_atomically(const std::filesystem::path& path, Writer&& write) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out = open_for_write(tmp);
    write(out);
    out.close();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_model(const TrainedModel& model, std::ostream& out) {
  json m = base_manifest("model");
  m["K"] = model.num_topics();
  m["V"] = model.vocab_size();
  m["E"] = model.num_envs();
  m["env_names"] = model.env_names;
  m["config"] = config_json(model.config);
  m["vocabulary"] = model.vocab.terms();
  const Encoder& enc = model.encoder;
  m["encoder"] = {{"vocab_size", enc.vocab_size()},
                  {"num_topics", enc.num_topics()},
                  {"hidden_units", enc.hidden_units()},
                  {"hidden_layers", enc.hidden_layers()}};
  m["has_gamma"] = model.has_gamma();

  PayloadWriter w;
  w.add("beta", model.beta_hat);
  for (std::size_t e = 0; e < model.gamma_hat.size(); ++e) w.add("gamma/" + std::to_string(e), model.gamma_hat[e]);
  if (!model.config.prior.hs_lambda.empty()) w.add("hs_lambda", model.config.prior.hs_lambda);
  w.add("encoder/params", {enc.num_params()}, enc.params());
  for (std::size_t l = 0; l < enc.hidden_layers(); ++l) {
    w.add("encoder/running_mean/" + std::to_string(l), {enc.hidden_units()}, enc.running_mean(l));
    w.add("encoder/running_var/" + std::to_string(l), {enc.hidden_units()}, enc.running_var(l));
  }
  w.add("training_log", {model.training_log.size()}, model.training_log);
  w.finish(m, out);
}

TrainedModel read_model(std::istream& in) {
  PayloadReader r(in);
  const json& m = r.manifest();
  expect_kind(m, "model");
  TrainedModel model;
  model.config = config_from_json(m.at("config"));
  model.vocab = Vocabulary(m.at("vocabulary").get<std::vector<std::string>>());
  model.env_names = m.at("env_names").get<std::vector<std::string>>();
  model.beta_hat = r.matrix("beta");
  if (m.at("has_gamma").get<bool>()) {
    for (std::size_t e = 0; e < model.env_names.size(); ++e) model.gamma_hat.push_back(r.matrix("gamma/" + std::to_string(e)));
  }
  if (r.has("hs_lambda")) model.config.prior.hs_lambda = r.matrix("hs_lambda");
  const json& ej = m.at("encoder");
  model.encoder = Encoder(ej.at("vocab_size").get<std::size_t>(), ej.at("num_topics").get<std::size_t>(),
                          ej.at("hidden_units").get<std::size_t>(), ej.at("hidden_layers").get<std::size_t>());
  const auto params = r.values("encoder/params");
  if (params.size() != model.encoder.num_params()) throw IoError("artifact: encoder parameter count mismatch");
  std::copy(params.begin(), params.end(), model.encoder.params().begin());
  for (std::size_t l = 0; l < model.encoder.hidden_layers(); ++l) {
    model.encoder.running_mean(l) = r.values("encoder/running_mean/" + std::to_string(l));
    model.encoder.running_var(l) = r.values("encoder/running_var/" + std::to_string(l));
  }
  model.training_log = r.values("training_log");
  if (model.beta_hat.rows() != m.at("K").get<std::size_t>() || model.beta_hat.cols() != m.at("V").get<std::size_t>() ||
      model.vocab.size() != model.beta_hat.cols()) {
    throw IoError("artifact: manifest dimensions disagree with the arrays");
  }
  return model;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& out) { write_model(model, out); });
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in = open_for_read(path);
  return read_model(in);
}

void write_truth(const GroundTruth& truth, std::ostream& out) {
  const TrueParams& p = truth.params;
  json m = base_manifest("ground_truth");
  m["K"] = p.beta.rows();
  m["V"] = p.beta.cols();
  m["E"] = p.gamma.size();
  m["D"] = p.doc_thetas.rows();
  m["env_names"] = truth.env_names;
  m["spec"] = {{"num_docs", truth.spec.num_docs},
               {"vocab_size", truth.spec.vocab_size},
               {"num_topics", truth.spec.num_topics},
               {"num_envs", truth.spec.num_envs},
               {"tokens_per_doc", truth.spec.tokens_per_doc},
               {"gamma_sparsity", truth.spec.gamma_sparsity},
               {"gamma_scale", truth.spec.gamma_scale},
               {"seed", truth.spec.seed}};
  PayloadWriter w;
  w.add("beta", p.beta);
  for (std::size_t e = 0; e < p.gamma.size(); ++e) w.add("gamma/" + std::to_string(e), p.gamma[e]);
  w.add("doc_thetas", p.doc_thetas);
  std::vector<double> mask(p.support_mask.begin(), p.support_mask.end());
  w.add("support_mask", {p.gamma.size(), p.beta.rows(), p.beta.cols()}, mask);
  w.finish(m, out);
}

GroundTruth read_truth(std::istream& in) {
  PayloadReader r(in);
  const json& m = r.manifest();
  expect_kind(m, "ground_truth");
  GroundTruth t;
  const json& s = m.at("spec");
  t.spec.num_docs = s.at("num_docs").get<std::size_t>();
  t.spec.vocab_size = s.at("vocab_size").get<std::size_t>();
  t.spec.num_topics = s.at("num_topics").get<std::size_t>();
  t.spec.num_envs = s.at("num_envs").get<std::size_t>();
  t.spec.tokens_per_doc = s.at("tokens_per_doc").get<std::size_t>();
  t.spec.gamma_sparsity = s.at("gamma_sparsity").get<double>();
  t.spec.gamma_scale = s.at("gamma_scale").get<double>();
  t.spec.seed = s.at("seed").get<std::uint64_t>();
  t.env_names = m.at("env_names").get<std::vector<std::string>>();
  t.params.beta = r.matrix("beta");
  const std::size_t E = m.at("E").get<std::size_t>();
  for (std::size_t e = 0; e < E; ++e) t.params.gamma.push_back(r.matrix("gamma/" + std::to_string(e)));
  t.params.doc_thetas = r.matrix("doc_thetas");
  for (double x : r.values("support_mask")) t.params.support_mask.push_back(x != 0.0 ? 1 : 0);
  return t;
}

void save_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& out) { write_truth(truth, out); });
}

GroundTruth load_truth(const std::filesystem::path& path) {
  std::ifstream in = open_for_read(path);
  return read_truth(in);
}

}  // namespace mtm
