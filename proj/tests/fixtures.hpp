#pragma once

#include "asvr/training.hpp"

namespace asvr::testing {

// Small enough for finite differences over every parameter group.
inline train::ModelBundle tiny_bundle(const data::Corpus& corpus, std::uint64_t seed = 1,
                                      FeatureSource source = FeatureSource::continuous) {
  train::ModelBundle b;
  vq::TokenizerConfig tc;
  tc.codebook_size = 5;
  tc.depth = 2;
  tc.code_dim = 3;
  tc.hidden = 6;
  tc.steps = 0;
  tc.seed = seed;
  b.semantic_tokenizer = vq::TokenizerModel(vq::TokenizerKind::semantic, tc, corpus.image_px);
  b.appearance_tokenizer = vq::TokenizerModel(vq::TokenizerKind::appearance, tc, corpus.image_px);
  // Spread the codebooks so that codes vary across positions.
  for (auto* tok : {&b.semantic_tokenizer, &b.appearance_tokenizer}) {
    nn::Rng rng(seed, "fixture/codebook");
    for (std::size_t k = 1; k < tc.codebook_size; ++k) {
      std::vector<double> e(tc.code_dim);
      for (auto& v : e) v = rng.normal(0.5);
      tok->codebook().set_entry(k, e);
    }
  }
  encoder::EncoderConfig ec;
  ec.width = 4;
  ec.layers = 1;
  ec.heads = 1;
  ec.steps = 0;
  ec.seed = seed;
  b.encoder = encoder::EncoderModel(ec, corpus.image_px);
  LvlmConfig lc;
  lc.width = 8;
  lc.feature_width = 4;
  lc.code_width = 3;
  lc.layers = 1;
  lc.heads = 2;
  lc.vocab_size = static_cast<std::size_t>(corpus.vocab.size());
  lc.vocab_fingerprint = corpus.vocab.fingerprint();
  lc.features = source;
  lc.seed = seed;
  b.lvlm = LvlmModel(lc);
  VisualHeadConfig hc;
  hc.input_width = 8;
  hc.width = 4;
  hc.layers = 1;
  hc.codebook_size = 5;
  hc.depth = 2;
  hc.seed = seed;
  b.semantic_head = VisualHead(hc, "semantic");
  b.appearance_head = VisualHead(hc, "appearance");
  return b;
}

}  // namespace asvr::testing
