// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/corpus.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "moelab/errors.hpp"
#include "moelab/random.hpp"

namespace moelab {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Corpus c;
  if (buf.empty()) return c;
  const std::string where = path.string() + ": ";
  if (buf.size() < 4 || std::memcmp(buf.data(), "MTOK", 4) != 0) {
    throw ParseError(where + "bad magic at byte 0, expected \"MTOK\"", 0);
  }
  if (buf.size() < 8) throw ParseError(where + "truncated header at byte 4", 4);
  c.vocab_size = read_u32(buf.data() + 4);
  const std::size_t body = buf.size() - 8;
  if (body % 4 != 0) {
    const std::size_t off = 8 + body / 4 * 4;
    throw ParseError(where + "truncated token id at byte " + std::to_string(off), off);
  }
  c.tokens.resize(body / 4);
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    const std::size_t off = 8 + 4 * i;
    const std::uint32_t id = read_u32(buf.data() + off);
    if (id >= c.vocab_size) {
      throw ParseError(where + "token id " + std::to_string(id) + " at byte " + std::to_string(off) +
                           " is outside vocab_size " + std::to_string(c.vocab_size),
                       off);
    }
    c.tokens[i] = id;
  }
  return c;
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::vector<char> out;
  out.reserve(8 + 4 * corpus.tokens.size());
  out.insert(out.end(), {'M', 'T', 'O', 'K'});
  put_u32(out, corpus.vocab_size);
  for (TokenId t : corpus.tokens) {
    if (t >= corpus.vocab_size) throw IndexError("save_corpus: token " + std::to_string(t) + " >= vocab_size");
    put_u32(out, t);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write corpus " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

Corpus synthetic_markov_corpus(std::uint32_t vocab_size, std::size_t n_tokens, std::uint64_t seed) {
  if (vocab_size < 2) throw ContractError("synthetic corpus needs vocab_size >= 2");
  Rng rng(derive_seed("corpus", seed));
  std::vector<std::vector<TokenId>> next(vocab_size);
  std::vector<std::vector<double>> cdf(vocab_size);
  for (std::uint32_t v = 0; v < vocab_size; ++v) {
    const std::size_t fan = std::min<std::size_t>(2 + rng.below(3), vocab_size);
    double total = 0;
    for (std::size_t i = 0; i < fan; ++i) {
      next[v].push_back(static_cast<TokenId>(rng.below(vocab_size)));
      total += 0.2 + rng.uniform();
      cdf[v].push_back(total);
    }
    for (double& c : cdf[v]) c /= total;
  }
  Corpus c;
  c.vocab_size = vocab_size;
  c.tokens.reserve(n_tokens);
  TokenId cur = static_cast<TokenId>(rng.below(vocab_size));
  for (std::size_t i = 0; i < n_tokens; ++i) {
    c.tokens.push_back(cur);
    const double u = rng.uniform();
    std::size_t j = 0;
    while (j + 1 < cdf[cur].size() && u >= cdf[cur][j]) ++j;
    cur = next[cur][j];
  }
  return c;
}

}  // namespace moelab
