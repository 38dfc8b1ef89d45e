#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "evonas/pipeline.hpp"

namespace evonas {

std::uint64_t fnv1a64(std::string_view data);

// Saved at the end of supernet training; reloads bit-exactly.
struct TrainCheckpoint {
    SearchSpace space;
    SupernetParams params;
    int schedule_cursor = 0; // completed iterations per stage
    std::string rng_state;   // finetune stream at completion
    std::uint64_t config_hash = 0;
};

// Saved after every completed search generation; resuming reproduces the
// uninterrupted trajectory bit for bit.
struct SearchCheckpoint {
    SearchSpace space;
    SupernetParams params;
    SearchState state;
    std::uint64_t config_hash = 0;
};

void save_train_checkpoint(const std::string& path, const TrainCheckpoint& ckpt);
TrainCheckpoint load_train_checkpoint(const std::string& path);

void save_search_checkpoint(const std::string& path, const SearchCheckpoint& ckpt);
SearchCheckpoint load_search_checkpoint(const std::string& path);

} // namespace evonas
