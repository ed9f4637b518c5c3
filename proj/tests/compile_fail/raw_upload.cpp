// Must not compile: raw features have no message kind and cannot cross the boundary.
// With PAYLOAD_CONTROL the same call site sends a typed payload and compiles.
#include "fedalv/datagen.hpp"
#include "fedalv/protocol.hpp"

int main() {
  fedalv::Ledger ledger;
  fedalv::Channel channel(ledger);
  fedalv::ClientDataset ds;
#ifdef PAYLOAD_CONTROL
  channel.upload(0, fedalv::SizePayload{ds.size()});
#else
  channel.upload(0, ds.features);
#endif
  return 0;
}
