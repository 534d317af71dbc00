#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"
#include "moldiff/diffusion.hpp"
#include "moldiff/tokenizer.hpp"

using namespace moldiff;
using namespace moldiff::model;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.target_vocab = 20;
  c.cond_vocab = 20;
  c.d = 8;
  c.heads = 2;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.ff = 16;
  c.max_target = 8;
  c.max_cond = 8;
  c.T = 10;
  return c;
}

Mat decode_once(const ModelParams& p, const Mat& z, int t, const std::vector<int>& cond) {
  Tape tape(false);
  const Bound b(tape, p);
  return denoise(b, tape.constant(z), t, encode(b, cond), cond).value();
}

Mat gaussian(int r, int c, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("embedding lookup") {
  Rng rng(1);
  const ModelParams p = ModelParams::init(tiny(), rng);
  Tape tape(false);
  const Bound b(tape, p);
  const std::vector<int> pads(5, tok::kPad);
  CHECK(embed(b, pads).value().isZero(0));
  const std::vector<int> same{9, 9};
  const Mat e = embed(b, same).value();
  CHECK(e.row(0) == e.row(1));
  CHECK_THROWS_AS(embed(b, std::vector<int>{20}), ModelError);

  std::vector<int> all(20);
  for (int k = 0; k < 20; ++k) all[static_cast<std::size_t>(k)] = k;
  std::vector<int> ids;
  const Mat table = embed(b, all).value();
  CHECK(clamp_to_table(p.embedding(), table, &ids) == table);
  CHECK(ids == all);
}

TEST_CASE("clamp ties go to the lowest id") {
  Mat table(3, 2);
  table << 0, 0, 1, 0, -1, 0;
  CHECK(nearest_row(table, Eigen::RowVector2d(0.5, 0)) == 0);
  CHECK(nearest_row(table, Eigen::RowVector2d(0.9, 0.1)) == 1);
}

TEST_CASE("denoise output is finite and deterministic") {
  Rng rng(2);
  const ModelParams p = ModelParams::init(tiny(), rng);
  const Mat z = gaussian(6, 8, rng);
  const std::vector<int> cond{5, 6, 7, 0, 0};
  const Mat a = decode_once(p, z, 4, cond);
  CHECK(a.rows() == 6);
  CHECK(a.cols() == 8);
  CHECK(a.allFinite());
  CHECK(decode_once(p, z, 4, cond) == a);
  CHECK_THROWS_AS(decode_once(p, gaussian(6, 7, rng), 4, cond), ModelError);
}

TEST_CASE("padded condition positions do not influence the output") {
  Rng rng(3);
  ModelParams p = ModelParams::init(tiny(), rng);
  // a nonzero PAD row would leak into the pad positions' own encodings
  p.get("cond_embed").value.row(0).setConstant(3.0);
  const Mat z = gaussian(6, 8, rng);
  const Mat a = decode_once(p, z, 3, {4, 9, 2, 0, 0, 0});
  p.get("enc_pos").value.row(4).setConstant(-7.0);
  p.get("enc_pos").value.row(5).setRandom();
  CHECK((decode_once(p, z, 3, {4, 9, 2, 0, 0, 0}) - a).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("examples are processed independently") {
  Rng rng(4);
  const ModelParams p = ModelParams::init(tiny(), rng);
  const Mat z = gaussian(5, 8, rng);
  const std::vector<int> cond{3, 4};
  Tape tape(false);
  const Bound b(tape, p);
  const Var m1 = encode(b, cond);
  const Mat first = denoise(b, tape.constant(z), 2, m1, cond).value();
  const Mat second = denoise(b, tape.constant(z), 2, encode(b, cond), cond).value();
  CHECK(first == second);
}

TEST_CASE("rounding logits") {
  Mat table = Mat::Zero(4, 4);
  table(1, 0) = 1;
  table(2, 1) = 1;
  table(3, 2) = 1;
  ModelConfig c = tiny();
  c.target_vocab = 4;
  c.d = 4;
  ModelParams p = ModelParams::zeros(c);
  p.get("tgt_embed").value = table;
  Tape tape(false);
  const Bound b(tape, p);
  Mat z(2, 4);
  z << 0, 2.5, 0, 0, 0, 0, 0, 0;
  const Mat logits = rounding_logits(b, tape.constant(z)).value();
  CHECK(logits.rows() == 2);
  CHECK(logits.cols() == 4);
  Eigen::Index k;
  logits.row(0).maxCoeff(&k);
  CHECK(k == 2);
  CHECK(logits.row(1).isZero(0));
}

TEST_CASE("initialization and first loss are reproducible from the seed") {
  Rng a(7), b(7);
  const ModelParams pa = ModelParams::init(tiny(), a);
  const ModelParams pb = ModelParams::init(tiny(), b);
  for (std::size_t k = 0; k < pa.params().size(); ++k) CHECK(pa.params()[k].value == pb.params()[k].value);
  CHECK(pa.embedding().row(0).isZero(0));
}

TEST_CASE("composite loss gradients match central differences") {
  Rng rng(11);
  ModelParams params = ModelParams::init(tiny(), rng);
  const auto sched = sched::TokenSchedule::uniform(sched::sqrt_schedule(10), 8);
  const diff::Example ex{{8, 9, 12, 2, 2, 2}, {5, 6, 7, 0, 0}};
  const diff::LossDraws draws = diff::draw_loss(6, 8, 10, rng);

  auto loss = [&](const ModelParams& p) {
    Tape tape(false);
    const Bound b(tape, p);
    return diff::training_loss(b, ex, sched, draws).terms.total;
  };
  auto analytic = [&](ModelParams& p) {
    Tape tape;
    const Bound b(tape, p);
    const auto g = diff::training_loss(b, ex, sched, draws);
    tape.backward(g.total);
    b.accumulate(p);
  };
  const auto report = test::finite_difference_check(params, loss, analytic);
  MESSAGE("checked " << report.checked << " entries, worst relative error " << report.worst << " at " << report.worst_param);
  CHECK(report.worst <= 1e-3);
}

TEST_CASE("gradients scale linearly with the loss and vanish with it") {
  Rng rng(12);
  ModelParams params = ModelParams::init(tiny(), rng);
  const auto sched = sched::TokenSchedule::uniform(sched::sqrt_schedule(10), 8);
  const diff::Example ex{{8, 9, 2}, {5, 6}};
  const diff::LossDraws draws = diff::draw_loss(3, 8, 10, rng);
  auto grads = [&](double scale) {
    params.zero_grad();
    Tape tape;
    const Bound b(tape, params);
    tape.backward(diff::training_loss(b, ex, sched, draws).total, scale);
    b.accumulate(params);
    std::vector<Mat> out;
    for (const auto& p : params.params()) out.push_back(p.grad);
    return out;
  };
  const auto g1 = grads(1.0);
  const auto g2 = grads(2.0);
  const auto g0 = grads(0.0);
  for (std::size_t k = 0; k < g1.size(); ++k) {
    CHECK((g2[k] - 2.0 * g1[k]).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, g1[k].cwiseAbs().maxCoeff()));
    CHECK(g0[k].isZero(0));
  }
}

TEST_CASE("adam rejects non-finite gradients and keeps PAD rows at zero") {
  Rng rng(5);
  ModelParams p = ModelParams::init(tiny(), rng);
  Adam opt(AdamConfig{1e-2});
  for (auto& q : p.params()) q.grad.setConstant(0.5);
  opt.step(p);
  CHECK(p.embedding().row(0).isZero(0));
  CHECK(p.get("cond_embed").value.row(0).isZero(0));
  const Mat before = p.get("in.w").value;
  p.get("out.b").grad(0, 0) = std::nan("");
  try {
    opt.step(p);
    FAIL("expected NonFiniteGradient");
  } catch (const ModelError& e) {
    CHECK(e.code() == ErrorCode::NonFiniteGradient);
  }
  CHECK(p.get("in.w").value == before);
}
