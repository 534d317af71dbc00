#include "moldiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace moldiff::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'D', 'C', 'K'};

template <typename U>
void put_le(std::string& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const char* p) {
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return bits;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json config_to_json(const train::TrainConfig& c) {
  return {{"direction", train::to_string(c.direction)},
          {"schedule", train::to_string(c.schedule)},
          {"mapping", sched::to_string(c.mapping)},
          {"tokenizer", tok::to_string(c.tokenizer)},
          {"T", c.T},
          {"steps", c.steps},
          {"batch", c.batch},
          {"lr", c.lr},
          {"K", c.K},
          {"seed", c.seed},
          {"d", c.d},
          {"heads", c.heads},
          {"enc_layers", c.enc_layers},
          {"dec_layers", c.dec_layers},
          {"ff", c.ff},
          {"max_target", c.max_target},
          {"max_cond", c.max_cond},
          {"sigma0", c.sigma0},
          {"clip", c.clip},
          {"stride", c.stride},
          {"clamp", c.clamp}};
}

train::TrainConfig config_from_json(const json& j) {
  train::TrainConfig c;
  c.direction = train::parse_direction(j.at("direction").get<std::string>());
  c.schedule = train::parse_schedule_kind(j.at("schedule").get<std::string>());
  c.mapping = sched::parse_mapping(j.at("mapping").get<std::string>());
  c.tokenizer = tok::parse_tokenizer_kind(j.at("tokenizer").get<std::string>());
  j.at("T").get_to(c.T);
  j.at("steps").get_to(c.steps);
  j.at("batch").get_to(c.batch);
  j.at("lr").get_to(c.lr);
  j.at("K").get_to(c.K);
  j.at("seed").get_to(c.seed);
  j.at("d").get_to(c.d);
  j.at("heads").get_to(c.heads);
  j.at("enc_layers").get_to(c.enc_layers);
  j.at("dec_layers").get_to(c.dec_layers);
  j.at("ff").get_to(c.ff);
  j.at("max_target").get_to(c.max_target);
  j.at("max_cond").get_to(c.max_cond);
  j.at("sigma0").get_to(c.sigma0);
  j.at("clip").get_to(c.clip);
  j.at("stride").get_to(c.stride);
  j.at("clamp").get_to(c.clamp);
  return c;
}

void read_array(const json& entry, const std::string& blob, Eigen::Ref<ag::Mat> dst_row_major, Eigen::MatrixXd* dst_col_major) {
  const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
  const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
  const auto dtype = entry.at("dtype").get<std::string>();
  const auto offset = entry.at("offset").get<std::size_t>();
  const std::size_t width = dtype == "f4" ? 4 : dtype == "f8" ? 8 : 0;
  const std::string name = entry.at("name").get<std::string>();
  if (width == 0) throw CheckpointError("array " + name + " has unknown dtype " + dtype);
  const Eigen::Index want_rows = dst_col_major ? dst_col_major->rows() : dst_row_major.rows();
  const Eigen::Index want_cols = dst_col_major ? dst_col_major->cols() : dst_row_major.cols();
  if (rows != want_rows || cols != want_cols) {
    throw CheckpointError("array " + name + " is " + std::to_string(rows) + "x" + std::to_string(cols) + " but the config implies " +
                          std::to_string(want_rows) + "x" + std::to_string(want_cols));
  }
  const auto count = static_cast<std::size_t>(rows * cols);
  if (offset + count * width > blob.size()) throw CheckpointError("array " + name + " runs past the end of the archive");
  const char* p = blob.data() + offset;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, p += width) {
      const double v = width == 4 ? static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p))) : std::bit_cast<double>(get_le<std::uint64_t>(p));
      if (dst_col_major) {
        (*dst_col_major)(r, c) = v;
      } else {
        dst_row_major(r, c) = v;
      }
    }
  }
}

}  // namespace

void save(const std::string& dir, const train::TrainConfig& cfg, long step, const model::ModelParams& params,
          const sched::TokenSchedule& schedule, const tok::Vocab& target_vocab, const tok::Vocab& cond_vocab) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CheckpointError("cannot create " + dir + ": " + ec.message());

  std::string blob;
  json arrays = json::array();
  for (const auto& p : params.params()) {
    arrays.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"dtype", "f4"}, {"offset", blob.size()}});
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) put_le(blob, std::bit_cast<std::uint32_t>(static_cast<float>(p.value(r, c))));
    }
  }
  const Eigen::MatrixXd& a = schedule.matrix();
  arrays.push_back({{"name", "schedule.alpha_bar"}, {"shape", {a.rows(), a.cols()}}, {"dtype", "f8"}, {"offset", blob.size()}});
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) put_le(blob, std::bit_cast<std::uint64_t>(a(r, c)));
  }

  const json manifest = {{"version", kFormatVersion},
                         {"step", step},
                         {"config", config_to_json(cfg)},
                         {"target_vocab", {{"size", target_vocab.size()}, {"fnv1a64", hex(target_vocab.fingerprint())}}},
                         {"cond_vocab", {{"size", cond_vocab.size()}, {"fnv1a64", hex(cond_vocab.fingerprint())}}},
                         {"arrays", arrays}};
  const std::string text = manifest.dump();

  std::string out(kMagic, 4);
  put_le(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += blob;

  const fs::path base(dir);
  std::ofstream f(base / "model.bin", std::ios::binary);
  if (!f.write(out.data(), static_cast<std::streamsize>(out.size()))) throw CheckpointError("cannot write " + (base / "model.bin").string());
  target_vocab.save((base / "target.vocab").string());
  cond_vocab.save((base / "cond.vocab").string());
}

Checkpoint load(const std::string& dir) {
  const fs::path base(dir);
  std::ifstream f(base / "model.bin", std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + (base / "model.bin").string());
  const std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (raw.size() < 8 || std::memcmp(raw.data(), kMagic, 4) != 0) throw CheckpointError((base / "model.bin").string() + " is not a checkpoint");
  const auto len = get_le<std::uint32_t>(raw.data() + 4);
  if (8 + static_cast<std::size_t>(len) > raw.size()) throw CheckpointError("truncated checkpoint manifest");

  json manifest;
  try {
    manifest = json::parse(raw.substr(8, len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }
  const std::string blob = raw.substr(8 + len);

  try {
    if (manifest.at("version").get<std::uint32_t>() != kFormatVersion) {
      throw CheckpointError("unsupported checkpoint version " + manifest.at("version").dump());
    }
    tok::Vocab target = tok::Vocab::load((base / "target.vocab").string());
    tok::Vocab cond = tok::Vocab::load((base / "cond.vocab").string());
    if (manifest.at("target_vocab").at("fnv1a64").get<std::string>() != hex(target.fingerprint()) ||
        manifest.at("cond_vocab").at("fnv1a64").get<std::string>() != hex(cond.fingerprint())) {
      throw CheckpointError("vocab files in " + dir + " do not match the checkpoint hashes");
    }

    const train::TrainConfig cfg = config_from_json(manifest.at("config"));
    const model::ModelConfig mcfg = cfg.model_config(static_cast<int>(target.size()), static_cast<int>(cond.size()));
    mcfg.validate();
    model::ModelParams params = model::ModelParams::zeros(mcfg);
    Eigen::MatrixXd alpha(cfg.max_target, cfg.T);

    std::size_t seen = 0;
    bool have_schedule = false;
    for (const auto& entry : manifest.at("arrays")) {
      const auto name = entry.at("name").get<std::string>();
      if (name == "schedule.alpha_bar") {
        read_array(entry, blob, params.params().front().value, &alpha);
        have_schedule = true;
        continue;
      }
      model::Param* p = nullptr;
      try {
        p = &params.get(name);
      } catch (const model::ModelError&) {
        throw CheckpointError("checkpoint array " + name + " is not a parameter of the configured model");
      }
      read_array(entry, blob, p->value, nullptr);
      ++seen;
    }
    if (seen != params.params().size() || !have_schedule) throw CheckpointError("checkpoint is missing arrays");
    return Checkpoint{cfg, manifest.at("step").get<long>(), std::move(params), sched::TokenSchedule(std::move(alpha)), std::move(target), std::move(cond)};
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
}

}  // namespace moldiff::ckpt
