// SPDX-License-Identifier: Apache-2.0
#include "qcomm/agents.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "qcomm/errors.hpp"

namespace qcomm {
namespace {

constexpr char kCheckpointMagic[8] = {'Q', 'C', 'K', 'P', 'T', '0', '0', '1'};

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
    return out;
  }
}

void write_u64(std::ostream& out, std::uint64_t v) {
  v = to_little_endian(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return to_little_endian(v);
}

ScoreBatch make_scores(Var logits) {
  ScoreBatch s{logits, row_argmax(logits.value())};
  return s;
}

}  // namespace

Tensor ScoreBatch::probabilities() const { return softmax_rows(logits.value()); }

std::vector<std::size_t> row_argmax(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) out[r] = argmax(logits.row(r));
  return out;
}

std::size_t default_hidden(const ChannelSpec& spec, std::size_t recurrent_hidden) {
  return spec.architecture == Architecture::instant ? spec.word_length : recurrent_hidden;
}

AgentPair::AgentPair(const AgentShape& shape, const ChannelSpec& spec, Rng& init) : shape_(shape), spec_(spec) {
  spec_.validate();
  if (shape.sender_input == 0 || shape.receiver_input == 0 || shape.hidden == 0) {
    throw ConfigError("agent sizes must be positive");
  }
  if (spec.architecture == Architecture::recurrent && shape.embedding == 0) {
    throw ConfigError("recurrent channel needs a positive embedding size");
  }
  sender_encoder_ = Linear(params_, "sender.encoder", shape.sender_input, shape.hidden, init);
  sender_channel_ = SenderChannel(params_, "sender.channel", spec_, shape.hidden, shape.embedding, init);
  receiver_encoder_ = Linear(params_, "receiver.encoder", shape.receiver_input, shape.hidden, init);
  receiver_channel_ = ReceiverChannel(params_, "receiver.channel", spec_, shape.hidden, shape.embedding, init);
}

MessageBatch AgentPair::sender_forward(Tape& tape, const Tensor& targets, Rng* noise, bool training) const {
  if (targets.rank() != 2 || targets.cols() != shape_.sender_input) {
    throw DimensionError("sender_forward: expected [b x " + std::to_string(shape_.sender_input) + "] targets, got " +
                         shape_string(targets.shape()));
  }
  Var encoded = sender_encoder_(tape, tape.constant(targets));
  return send(tape, encoded, sender_channel_, spec_, noise, training);
}

Var AgentPair::encode_candidates(Tape& tape, const Tensor& candidates) const {
  if (candidates.rank() != 2 || candidates.cols() != shape_.receiver_input) {
    throw DimensionError("encode_candidates: expected [m x " + std::to_string(shape_.receiver_input) + "], got " +
                         shape_string(candidates.shape()));
  }
  return receiver_encoder_(tape, tape.constant(candidates));
}

Var AgentPair::receiver_state(Tape& tape, const MessageBatch& msg) const {
  return receive(tape, msg, receiver_channel_, spec_);
}

ScoreBatch AgentPair::receiver_forward(Tape& tape, const MessageBatch& msg, Var encoded_pool,
                                       std::span<const std::size_t> index, std::size_t n) const {
  Var z = receiver_state(tape, msg);
  return make_scores(gather_scores(z, encoded_pool, index, n));
}

ScoreBatch AgentPair::receiver_forward_all(Tape& tape, const MessageBatch& msg, Var encoded_pool) const {
  Var z = receiver_state(tape, msg);
  return make_scores(matmul_nt(z, encoded_pool));
}

ScoreBatch AgentPair::receiver_forward(Tape& tape, const MessageBatch& msg, const Tensor& candidates) const {
  if (candidates.rank() != 3 || candidates.dim(0) != msg.batch) {
    throw DimensionError("receiver_forward: expected [b x n x d] candidates, got " + shape_string(candidates.shape()));
  }
  const std::size_t b = candidates.dim(0);
  const std::size_t n = candidates.dim(1);
  Var pool = encode_candidates(tape, candidates.reshaped({b * n, candidates.dim(2)}));
  std::vector<std::size_t> index(b * n);
  std::iota(index.begin(), index.end(), std::size_t{0});
  return receiver_forward(tape, msg, pool, index, n);
}

Var game_loss(const ScoreBatch& scores, std::span<const std::size_t> target_positions) {
  return softmax_cross_entropy(scores.logits, target_positions);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const nlohmann::json& meta) {
  nlohmann::json header;
  header["format"] = "qcomm-checkpoint";
  header["version"] = 1;
  header["dtype"] = "float64-le";
  header["meta"] = meta;
  auto& tensors = header["tensors"];
  tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    tensors.push_back({{"name", p->name()}, {"shape", p->value.shape()}, {"offset", offset}});
    offset += p->value.size();
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    for (double v : p->value.data()) write_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("failed while writing checkpoint " + path.string());
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw IoError(path.string() + " is not a checkpoint file");
  }
  const std::uint64_t header_len = read_u64(in);
  if (!in || header_len > (std::uint64_t{1} << 30)) throw IoError("corrupt checkpoint header in " + path.string());
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (!header.is_object() || !header.contains("tensors") || !header.at("tensors").is_array()) {
    throw IoError("checkpoint header in " + path.string() + " has no tensor table");
  }
  return header;
}

std::ifstream open_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return in;
}

}  // namespace

nlohmann::json checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream in = open_checkpoint(path);
  const nlohmann::json header = read_header(in, path);
  return header.value("meta", nlohmann::json::object());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in = open_checkpoint(path);
  const nlohmann::json header = read_header(in, path);
  ParamSet params;
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    for (double& v : t.data()) v = std::bit_cast<double>(read_u64(in));
    if (!in) throw IoError("truncated checkpoint " + path.string());
    params.add(entry.at("name").get<std::string>(), std::move(t));
  }
  return params;
}

void load_checkpoint_into(const std::filesystem::path& path, ParamSet& params) {
  ParamSet loaded = load_checkpoint(path);
  auto it = loaded.begin();
  for (const auto& p : params) {
    if (it == loaded.end()) throw ConfigError("checkpoint is missing tensor '" + p->name() + "'");
    const Parameter& src = **it;
    if (src.name() != p->name() || src.value.shape() != p->value.shape()) {
      throw ConfigError("checkpoint tensor mismatch: expected '" + p->name() + "' " + shape_string(p->value.shape()) +
                        ", found '" + src.name() + "' " + shape_string(src.value.shape()));
    }
    ++it;
  }
  if (it != loaded.end()) throw ConfigError("checkpoint has unexpected tensor '" + (*it)->name() + "'");
  params.assign_values(loaded);
}

}  // namespace qcomm
