// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-tokenized corpus files:
//
//   "MTOK"  u32 vocab_size  u32 id  u32 id ...      (all little-endian)
//
// A zero-byte file is accepted as an empty corpus with vocab_size 0.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "moelab/ops.hpp"

namespace moelab {

struct Corpus {
  std::uint32_t vocab_size = 0;
  std::vector<TokenId> tokens;
};

/// Throws ParseError with the byte offset of the first malformed field.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

/// First-order Markov text: each token has 2 to 4 successors with random
/// transition weights, so the achievable cross-entropy is well below ln V.
Corpus synthetic_markov_corpus(std::uint32_t vocab_size, std::size_t n_tokens, std::uint64_t seed);

}  // namespace moelab
