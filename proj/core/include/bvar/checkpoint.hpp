#pragma once

// Versioned binary persistence for trained networks: architecture, every
// variational parameter block, the training configuration that produced the
// model and the pipeline seed. Little-endian 64-bit floats, length-prefixed
// sections, CRC32 trailer.

#include <cstdint>
#include <string>
#include <vector>

#include "bvar/network.hpp"
#include "bvar/training.hpp"

namespace bvar {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    NetworkSpec spec;
    std::vector<Network::Block> blocks;  // mu then rho inside each block, layer order
    TrainingConfig config;               // snapshot of the run that produced the model
    std::uint64_t seed = 0;              // pipeline seed (data split and training)
};

Checkpoint make_checkpoint(const Network& net, const TrainingConfig& cfg, std::uint64_t seed);

// Rebuilds a live network from the stored spec and parameter blocks.
Network restore_network(const Checkpoint& c);

void save_checkpoint(const Checkpoint& c, const std::string& path);

// Throws InputError when the file cannot be read at all, CheckpointError
// naming the defect (magic, version, truncation, checksum) otherwise.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bvar
