#include <gtest/gtest.h>

#include "fedalv/datagen.hpp"
#include "fedalv/fdg.hpp"
#include "fedalv/protocol.hpp"

using namespace fedalv;

static_assert(BoundaryPayload<ParamPayload>);
static_assert(BoundaryPayload<GradPayload>);
static_assert(BoundaryPayload<EnergyPayload>);
static_assert(BoundaryPayload<LatentPayload>);
static_assert(BoundaryPayload<PredictionPayload>);
static_assert(BoundaryPayload<IndexPayload>);
static_assert(BoundaryPayload<SizePayload>);
static_assert(!BoundaryPayload<Matrix>);
static_assert(!BoundaryPayload<ClientDataset>);
static_assert(!BoundaryPayload<std::vector<double>>);

namespace {

// Looks like a payload but is not one of the whitelisted types.
struct RawFeaturePayload {
  static constexpr MessageKind kind = MessageKind::LatentVectors;
  Matrix features;
  std::size_t size() const { return features.size(); }
};
static_assert(!BoundaryPayload<RawFeaturePayload>);

}  // namespace

TEST(Protocol, KindNamesRoundTrip) {
  for (auto k : kAllowedKinds) EXPECT_EQ(parse_kind(kind_name(k)), k);
}

TEST(Protocol, RawFeaturesAndLabelsRejected) {
  EXPECT_THROW(parse_kind("RawFeatures"), ArgumentError);
  EXPECT_THROW(parse_kind("Labels"), ArgumentError);
  EXPECT_THROW(parse_kind(""), ArgumentError);
  EXPECT_THROW(parse_kind("paramvector"), ArgumentError);
}

TEST(Protocol, ChannelLogsEveryTransfer) {
  Ledger ledger;
  Channel ch(ledger);
  ch.set_round(5);
  const auto p = ch.upload(2, ParamPayload{ParamVector(std::vector<double>{1, 2, 3})});
  EXPECT_EQ(p.params.size(), 3u);
  ch.download(2, ParamPayload{ParamVector(std::vector<double>{0})});
  ch.upload(kTargetClient, EnergyPayload{{1.0, 2.0}});
  ASSERT_EQ(ledger.size(), 3u);
  EXPECT_EQ(ledger.entries()[0], (Message{Direction::ClientToServer, MessageKind::ParamVector, 2, 5, 3}));
  EXPECT_EQ(ledger.count(Direction::ClientToServer, MessageKind::ParamVector), 1u);
  EXPECT_EQ(ledger.count(Direction::ServerToClient, MessageKind::ParamVector), 1u);
  EXPECT_EQ(ledger.count(Direction::ClientToServer, MessageKind::EnergyScalars), 1u);
  EXPECT_FALSE(ledger.first_violation());
  EXPECT_EQ(ledger.to_csv(),
            "round,direction,client,kind,payload_size\n"
            "5,up,2,ParamVector,3\n"
            "5,down,2,ParamVector,1\n"
            "5,up,target,EnergyScalars,2\n");
}

TEST(Protocol, ViolationDetectedOnForgedEntry) {
  Ledger ledger;
  ledger.record({Direction::ClientToServer, MessageKind::ParamVector, 0, 1, 4});
  ledger.record({Direction::ClientToServer, static_cast<MessageKind>(99), 1, 2, 8});
  const auto bad = ledger.first_violation();
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->client, 1u);
  EXPECT_EQ(bad->round, 2u);
}

TEST(Protocol, TrainingRunUsesOnlyAllowedKinds) {
  DatasetConfig dc;
  dc.samples_per_domain = 60;
  std::vector<DomainSpec> specs(4);
  const auto fed = make_federation(dc, specs, 0);
  FedConfig cfg;
  cfg.rounds = 10;
  cfg.comm_every = 5;
  cfg.target_batch = 16;
  const auto res = run_fdg(cfg, fed);
  EXPECT_FALSE(res.ledger.first_violation());
  // per communication round: one ParamVector and one DatasetSize per source,
  // energies from every source and the target, one hinge gradient after the first round
  EXPECT_EQ(res.ledger.count(Direction::ClientToServer, MessageKind::ParamVector), 6u);
  EXPECT_EQ(res.ledger.count(Direction::ClientToServer, MessageKind::DatasetSize), 6u);
  EXPECT_EQ(res.ledger.count(Direction::ClientToServer, MessageKind::EnergyScalars), 8u);
  EXPECT_EQ(res.ledger.count(Direction::ClientToServer, MessageKind::GradVector), 1u);
  for (const auto& m : res.ledger.entries()) {
    EXPECT_NE(m.kind, MessageKind::LatentVectors);
    EXPECT_NE(m.kind, MessageKind::SampleIndices);
  }
}
