#pragma once

#include <array>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedalv/errors.hpp"
#include "fedalv/numcore.hpp"

namespace fedalv {

// Everything that may cross the client/server boundary. Raw features and
// labels have no kind, so they cannot be described as a message.
enum class MessageKind : std::uint8_t {
  ParamVector,
  GradVector,
  EnergyScalars,
  LatentVectors,
  ClassPredictions,
  SampleIndices,
  DatasetSize,
};

inline constexpr std::array<MessageKind, 7> kAllowedKinds{
    MessageKind::ParamVector,   MessageKind::GradVector,       MessageKind::EnergyScalars,
    MessageKind::LatentVectors, MessageKind::ClassPredictions, MessageKind::SampleIndices,
    MessageKind::DatasetSize,
};

inline constexpr std::string_view kind_name(MessageKind k) noexcept {
  switch (k) {
    case MessageKind::ParamVector: return "ParamVector";
    case MessageKind::GradVector: return "GradVector";
    case MessageKind::EnergyScalars: return "EnergyScalars";
    case MessageKind::LatentVectors: return "LatentVectors";
    case MessageKind::ClassPredictions: return "ClassPredictions";
    case MessageKind::SampleIndices: return "SampleIndices";
    case MessageKind::DatasetSize: return "DatasetSize";
  }
  return "?";
}

// Boundary decoding of a kind name (e.g. from a recorded log). Unknown names,
// including "RawFeatures" and "Labels", are rejected.
inline MessageKind parse_kind(std::string_view name) {
  for (auto k : kAllowedKinds) {
    if (kind_name(k) == name) return k;
  }
  throw ArgumentError("message kind '" + std::string(name) + "' may not cross the boundary");
}

enum class Direction : std::uint8_t { ClientToServer, ServerToClient };

// Server-side stand-in for the target client in the ledger.
inline constexpr std::size_t kTargetClient = static_cast<std::size_t>(-1);

struct Message {
  Direction direction = Direction::ClientToServer;
  MessageKind kind = MessageKind::ParamVector;
  std::size_t client = 0;
  std::size_t round = 0;
  std::size_t payload_size = 0;

  friend bool operator==(const Message&, const Message&) = default;
};

// Append-only record of every boundary transfer in a run.
class Ledger {
 public:
  void record(const Message& m) { entries_.push_back(m); }
  void append(const Ledger& other) {
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
  }

  const std::vector<Message>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t count(Direction d, MessageKind k) const {
    std::size_t n = 0;
    for (const auto& m : entries_) n += (m.direction == d && m.kind == k) ? 1 : 0;
    return n;
  }

  // First server-bound entry whose kind lies outside the allowed set.
  std::optional<Message> first_violation() const {
    for (const auto& m : entries_) {
      if (m.direction != Direction::ClientToServer) continue;
      bool ok = false;
      for (auto k : kAllowedKinds) ok = ok || (k == m.kind);
      if (!ok) return m;
    }
    return std::nullopt;
  }

  std::string to_csv() const {
    std::string out = "round,direction,client,kind,payload_size\n";
    for (const auto& m : entries_) {
      out += std::to_string(m.round);
      out += m.direction == Direction::ClientToServer ? ",up," : ",down,";
      out += m.client == kTargetClient ? std::string("target") : std::to_string(m.client);
      out += ',';
      out += kind_name(m.kind);
      out += ',';
      out += std::to_string(m.payload_size);
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<Message> entries_;
};

// Typed payloads. Only these can be sent through a Channel.
struct ParamPayload {
  static constexpr MessageKind kind = MessageKind::ParamVector;
  ParamVector params;
  std::size_t size() const { return params.size(); }
};

struct GradPayload {
  static constexpr MessageKind kind = MessageKind::GradVector;
  ParamVector grad;
  std::size_t size() const { return grad.size(); }
};

struct EnergyPayload {
  static constexpr MessageKind kind = MessageKind::EnergyScalars;
  std::vector<double> energies;
  std::size_t size() const { return energies.size(); }
};

struct LatentPayload {
  static constexpr MessageKind kind = MessageKind::LatentVectors;
  Matrix latents;
  std::vector<std::size_t> indices;  // client-local sample ids, opaque to the server
  std::size_t size() const { return latents.size(); }
};

struct PredictionPayload {
  static constexpr MessageKind kind = MessageKind::ClassPredictions;
  std::vector<std::size_t> predicted;
  std::size_t size() const { return predicted.size(); }
};

struct IndexPayload {
  static constexpr MessageKind kind = MessageKind::SampleIndices;
  std::vector<std::size_t> indices;
  std::size_t size() const { return indices.size(); }
};

struct SizePayload {
  static constexpr MessageKind kind = MessageKind::DatasetSize;
  std::size_t count = 0;
  std::size_t size() const { return 1; }
};

template <typename P>
concept BoundaryPayload = requires(const P& p) {
  { P::kind } -> std::convertible_to<MessageKind>;
  { p.size() } -> std::convertible_to<std::size_t>;
} && (std::same_as<P, ParamPayload> || std::same_as<P, GradPayload> ||
      std::same_as<P, EnergyPayload> || std::same_as<P, LatentPayload> ||
      std::same_as<P, PredictionPayload> || std::same_as<P, IndexPayload> ||
      std::same_as<P, SizePayload>);

// The only path between clients and the server. Every transfer is logged.
class Channel {
 public:
  explicit Channel(Ledger& ledger) : ledger_(&ledger) {}

  void set_round(std::size_t round) noexcept { round_ = round; }
  std::size_t round() const noexcept { return round_; }

  template <BoundaryPayload P>
  P upload(std::size_t client, P payload) {
    ledger_->record({Direction::ClientToServer, P::kind, client, round_, payload.size()});
    return payload;
  }

  template <BoundaryPayload P>
  P download(std::size_t client, P payload) {
    ledger_->record({Direction::ServerToClient, P::kind, client, round_, payload.size()});
    return payload;
  }

 private:
  Ledger* ledger_;
  std::size_t round_ = 0;
};

}  // namespace fedalv
