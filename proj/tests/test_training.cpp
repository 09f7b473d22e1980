#include <cmath>
#include <numbers>

#include "asvr/checkpoint.hpp"
#include "asvr/eval.hpp"
#include "asvr/training.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace asvr;
using namespace asvr::train;

namespace {

// Row [0, log(e^k - 1)] puts probability e^-k on token 0.
std::vector<double> row_with_nll(double k, std::size_t vocab) {
  std::vector<double> r(vocab, -1e300);
  r[0] = 0.0;
  r[1] = std::log(std::exp(k) - 1.0);
  return r;
}

Tensor logits_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from({rows.size(), rows.front().size()}, flat);
}

// Head whose depth-d logits are the constant row `rows[d]`.
VisualHead constant_head(const std::vector<std::vector<double>>& rows, std::size_t input_width) {
  VisualHeadConfig c;
  c.input_width = input_width;
  c.width = 4;
  c.layers = 1;
  c.codebook_size = rows.front().size();
  c.depth = rows.size();
  VisualHead h(c, "constant");
  for (std::size_t d = 0; d < rows.size(); ++d) {
    auto w = h.heads[d].weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    auto b = h.heads[d].bias.mutable_data();
    std::copy(rows[d].begin(), rows[d].end(), b.begin());
  }
  return h;
}

ForwardOutput hidden_only(std::size_t rows, std::size_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ForwardOutput out;
  out.hidden = asvr::testing::random_tensor({rows, width}, rng);
  return out;
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

}  // namespace

TEST_CASE("text loss hand example is exactly 1.5") {
  SequenceLayout l;
  l.prompt_len = 3;
  l.input_ids = {6, 7, 8, 0, 0};
  l.targets_text = l.input_ids;
  ForwardOutput out;
  std::vector<std::vector<double>> rows(6, std::vector<double>(4, 0.0));
  rows[3] = row_with_nll(1.0, 4);
  rows[4] = row_with_nll(2.0, 4);
  out.slot_logits = logits_rows(rows);
  CHECK(text_loss(out, l).item() == 1.5);

  // Prompt targets are never read.
  SequenceLayout m = l;
  m.targets_text[0] = 3;
  m.targets_text[2] = 1;
  CHECK(same_bits(text_loss(out, m).item(), text_loss(out, l).item()));

  l.prompt_len = 5;
  CHECK_THROWS_AS(text_loss(out, l), std::invalid_argument);
}

TEST_CASE("perfect logits give vanishing text loss") {
  SequenceLayout l;
  l.prompt_len = 0;
  l.input_ids = {1, 2};
  l.targets_text = l.input_ids;
  ForwardOutput out;
  out.slot_logits = logits_rows({{0, 30, 0}, {0, 0, 30}, {0, 0, 0}});
  CHECK(text_loss(out, l).item() <= 1e-6);
}

TEST_CASE("vision loss hand examples") {
  SequenceLayout l;
  l.visual_len = 2;
  ForwardOutput out = hidden_only(8, 6, 1);
  VisualHead uniform = constant_head({{0.0, 0.0}}, 6);
  vq::VisualCodes codes{2, 1, {0, 1}};
  LossConfig cfg;
  CHECK(std::abs(vision_loss(out, l, uniform, codes, cfg).item() - std::numbers::ln2) < 1e-12);

  SequenceLayout one;
  one.visual_len = 1;
  VisualHead two_depth = constant_head({row_with_nll(1.0, 3), row_with_nll(3.0, 3)}, 6);
  vq::VisualCodes c2{1, 2, {0, 0}};
  CHECK(vision_loss(out, one, two_depth, c2, cfg).item() == doctest::Approx(2.0).epsilon(1e-14));
  cfg.average_over_depth = false;
  CHECK(vision_loss(out, one, two_depth, c2, cfg).item() == doctest::Approx(4.0).epsilon(1e-14));
  CHECK_THROWS(vision_loss(out, l, uniform, vq::VisualCodes{1, 1, {0}}, cfg));
}

TEST_CASE("vision loss reads exactly the shifted predictor slots") {
  const std::size_t m = 3;
  SequenceLayout l;
  l.visual_len = m;
  l.input_ids = {7};
  const std::size_t len = l.length();
  VisualHeadConfig hc;
  hc.input_width = 6;
  hc.width = 4;
  hc.codebook_size = 5;
  hc.depth = 2;
  VisualHead head(hc, "shift");
  vq::VisualCodes codes{m, 2, {1, 2, 3, 4, 0, 1}};
  for (bool same : {false, true}) {
    LossConfig cfg;
    cfg.same_position = same;
    ForwardOutput base = hidden_only(len, 6, 3);
    const double ref = vision_loss(base, l, head, codes, cfg).item();
    for (std::size_t slot = 0; slot < len; ++slot) {
      std::vector<double> h = base.hidden.to_vector();
      for (std::size_t j = 0; j < 6; ++j) h[slot * 6 + j] += 0.5;
      ForwardOutput p = base;
      p.hidden = Tensor::from({len, 6}, h);
      const bool changed = !same_bits(vision_loss(p, l, head, codes, cfg).item(), ref);
      const std::size_t first = same ? SequenceLayout::kVisualStart : SequenceLayout::kBoi;
      CHECK(changed == (slot >= first && slot < first + m));
    }
  }
}

TEST_CASE("total loss mode table") {
  Tensor t = Tensor::scalar(0.5), s = Tensor::scalar(1.5), a = Tensor::scalar(0.75);
  LossConfig cfg;
  cfg.mode = Mode::semantic;
  CHECK(total_loss(t, s, a, cfg).item() == 2.0);
  cfg.mode = Mode::appearance;
  CHECK(total_loss(t, s, a, cfg).item() == 1.25);
  cfg.mode = Mode::text_only;
  CHECK(total_loss(t, s, a, cfg).item() == 0.5);
  CHECK(total_loss(t, Tensor(), Tensor(), cfg).item() == 0.5);
  cfg.mode = Mode::dual;
  CHECK(total_loss(Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1), cfg).item() == 3.0);
  cfg.mode = Mode::semantic;
  cfg.lambda_vision = 0.0;
  CHECK(same_bits(total_loss(t, s, a, cfg).item(), 0.5));
  cfg.lambda_vision = -1.0;
  CHECK_THROWS(total_loss(t, s, a, cfg));
}

TEST_CASE("mode names") {
  for (Mode m : {Mode::text_only, Mode::semantic, Mode::appearance, Mode::dual})
    CHECK(parse_mode(mode_name(m)) == m);
  CHECK(parse_mode("text_only") == Mode::text_only);
  CHECK_THROWS(parse_mode("pixels"));
}

TEST_CASE("visual head gradients vanish without vision supervision") {
  data::Corpus c = data::generate({7, 4, 2, 48});
  for (auto mode_lambda : {std::pair{Mode::text_only, 1.0}, std::pair{Mode::semantic, 0.0}}) {
    ModelBundle b = asvr::testing::tiny_bundle(c);
    LossConfig cfg;
    cfg.mode = mode_lambda.first;
    cfg.lambda_vision = mode_lambda.second;
    const auto& s = c.train[0];
    SequenceLayout l = b.lvlm.assemble(b.lvlm.visual_embeddings(b.encoder.encode_image(s.image)),
                                       s.qa_ids[0].question, s.qa_ids[0].answer);
    l.semantic_codes = b.semantic_tokenizer.encode(s.image);
    compute_losses(b, l, b.lvlm.forward(l), cfg).total.backward();
    for (const auto& p : b.semantic_head.params(""))
      if (p.tensor.has_grad())
        for (double g : p.tensor.grad()) CHECK(g == 0.0);
  }
}

TEST_CASE("caption-free layouts need the flag and a vision loss") {
  data::Corpus c = data::generate({7, 4, 2, 48});
  ModelBundle b = asvr::testing::tiny_bundle(c);
  const auto& s = c.train[0];
  SequenceLayout l = b.lvlm.assemble(b.lvlm.visual_embeddings(b.encoder.encode_image(s.image)), {6}, {});
  l.semantic_codes = b.semantic_tokenizer.encode(s.image);
  ForwardOutput out = b.lvlm.forward(l);
  LossConfig cfg;
  CHECK_THROWS(compute_losses(b, l, out, cfg));
  cfg.caption_free = true;
  LossTerms t = compute_losses(b, l, out, cfg);
  CHECK(t.text.item() == 0.0);
  CHECK(t.total.item() == t.vision_sem.item());
  cfg.mode = Mode::text_only;
  CHECK_THROWS(compute_losses(b, l, out, cfg));
}

TEST_CASE("stage examples") {
  data::Corpus c = data::generate({7, 5, 2, 48});
  auto s1 = stage_examples(c.train, 1);
  CHECK(s1.size() == 5);
  CHECK(s1[0].prompt.empty());
  CHECK(s1[0].response.back() == data::Vocab::kEos);
  std::size_t qa = 0;
  for (const auto& s : c.train) qa += s.qa.size();
  auto s2 = stage_examples(c.train, 2);
  CHECK(s2.size() == qa);
  CHECK(!s2[0].prompt.empty());
}

TEST_CASE("stage 1 freezes the backbone; runs are reproducible") {
  data::Corpus c = data::generate({7, 12, 4, 48});
  StageConfig st = StageConfig::defaults(1);
  st.batch_size = 4;
  LossConfig loss;
  loss.mode = Mode::dual;

  ModelBundle a = asvr::testing::tiny_bundle(c);
  const std::string backbone_before = encode_checkpoint(a.lvlm.backbone_params());
  const std::string lm_before = encode_checkpoint(a.lvlm.lm_head_params());
  const std::string proj_before = encode_checkpoint(a.lvlm.projector_params());
  TrainLog log = run_stage(c, a, st, loss, 3);
  CHECK(encode_checkpoint(a.lvlm.backbone_params()) == backbone_before);
  CHECK(encode_checkpoint(a.lvlm.lm_head_params()) == lm_before);
  CHECK(encode_checkpoint(a.lvlm.projector_params()) != proj_before);
  CHECK(log.steps.size() == 3);
  for (const auto& r : log.steps) CHECK(std::abs(r.l_total - (r.l_text + r.l_vision)) < 1e-12);

  ModelBundle b = asvr::testing::tiny_bundle(c);
  run_stage(c, b, st, loss, 3);
  CHECK(encode_checkpoint(a.lvlm_state()) == encode_checkpoint(b.lvlm_state()));

  StageConfig s2 = StageConfig::defaults(2);
  s2.batch_size = 8;
  s2.max_examples = 16;
  run_stage(c, a, s2, loss, 3);
  CHECK(encode_checkpoint(a.lvlm.backbone_params()) != backbone_before);
  CHECK(a.completed_stage == 2);
}

TEST_CASE("stage preconditions") {
  data::Corpus c = data::generate({7, 4, 2, 48});
  ModelBundle b = asvr::testing::tiny_bundle(c);
  StageConfig s2 = StageConfig::defaults(2);
  CHECK_THROWS_AS(run_stage(c, b, s2, LossConfig{}, 1), std::invalid_argument);
  StageConfig bad = StageConfig::defaults(1);
  bad.lr = 0.0;
  CHECK_THROWS_AS(run_stage(c, b, bad, LossConfig{}, 1), std::invalid_argument);
  s2.from_scratch = true;
  s2.max_examples = 4;
  s2.batch_size = 4;
  CHECK_NOTHROW(run_stage(c, b, s2, LossConfig{}, 1));
}

TEST_CASE("diverging run stops before updating") {
  data::Corpus c = data::generate({7, 4, 2, 48});
  ModelBundle b = asvr::testing::tiny_bundle(c);
  auto w = b.lvlm.proj1.weight.mutable_data();
  w[0] = std::numeric_limits<double>::quiet_NaN();
  const std::string before = encode_checkpoint(b.lvlm.projector_params());
  StageConfig st = StageConfig::defaults(1);
  st.batch_size = 2;
  CHECK_THROWS_AS(run_stage(c, b, st, LossConfig{}, 1), DivergenceError);
  CHECK(encode_checkpoint(b.lvlm.projector_params()) == before);
}

TEST_CASE("jointly fine-tuned encoder is saved with the stage") {
  data::Corpus c = data::generate({7, 4, 2, 48});
  ModelBundle b = asvr::testing::tiny_bundle(c);
  StageConfig st = StageConfig::defaults(1);
  st.batch_size = 2;
  st.train_encoder = true;
  const std::string enc_before = encode_checkpoint(b.encoder.params());
  run_stage(c, b, st, LossConfig{}, 1);
  CHECK(encode_checkpoint(b.encoder.params()) != enc_before);
  ModelBundle r = asvr::testing::tiny_bundle(c);
  r.load_lvlm_state(b.lvlm_state());
  CHECK(encode_checkpoint(r.encoder.params()) == encode_checkpoint(b.encoder.params()));
}

TEST_CASE("evaluation: oracle answers, untrained model near chance, determinism") {
  data::Corpus c = data::generate({7, 8, 30, 48});
  auto oracle = eval::score_qa(c.eval, c.vocab, [&](std::size_t i, const std::vector<int>& q) {
    for (const auto& qa : c.eval[i].qa_ids)
      if (qa.question == q) return qa.answer;
    return std::vector<int>{};
  });
  CHECK(oracle.qa_exact_match == 1.0);
  CHECK(oracle.existence_acc == 1.0);
  CHECK(oracle.yes_bias == 0.5);

  ModelBundle b = asvr::testing::tiny_bundle(c);
  eval::MetricReport r = eval::evaluate(b, c);
  CHECK(r.qa_exact_match >= 0.0);
  CHECK(r.qa_exact_match <= 0.2);
  CHECK(r == eval::evaluate(b, c));
  for (double v : {r.caption_token_acc, r.count_acc, r.color_acc, r.existence_acc, r.yes_bias, r.attn_localization}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  data::Corpus other = c;
  other.vocab = data::Vocab({"<pad>", "<bos>", "<eos>", "<boi>", "<eoi>", "<sep>", "x"});
  CHECK_THROWS_AS(eval::evaluate(b, other), std::invalid_argument);
}
