#include "reptrfd/errors.hpp"
#include "reptrfd/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace reptrfd {
namespace {

std::vector<double> flat_parameters(FactorModel const &m)
{
  std::vector<double> out;
  for (auto const &p : m.parameters()) { out.insert(out.end(), p.value->data().begin(), p.value->data().end()); }
  return out;
}

ModelConfig tiny_model()
{
  ModelConfig c;
  c.dims = {6, 6, 3};
  c.ranks = {2, 2, 2};
  c.layers = {1, 1, 1};
  c.beta = 2;
  c.omega0 = 10.0;
  c.hidden = 8;
  c.seed = 5;
  return c;
}

RecoveryTask denoise_task(Index iterations)
{
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RecoveryTask task;
  task.kind = TaskKind::Denoise;
  task.observation = DenseTensor({6, 6, 3});
  for (double &v : task.observation.data()) { v = u(rng); }
  task.grids = normalized_grids({6, 6, 3});
  task.iterations = iterations;
  task.eval_every = 4;
  task.learning_rate = 1e-2;
  task.reg = {1e-3, 1e-3};
  task.ground_truth = task.observation;
  return task;
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged)
{
  DenseTensor p({3}, std::vector<double>{1.0, -2.0, 0.5});
  auto const before = p;
  AdamState adam({}, {p.shape()});
  ParameterRef const refs[] = {{"p", &p, true}};
  DenseTensor const grads[] = {DenseTensor({3}, 0.0)};
  adam.step(refs, grads);
  EXPECT_EQ(p, before);
  EXPECT_EQ(adam.step_count(), 1);
}

TEST(Adam, FirstStepWithUnitGradient)
{
  DenseTensor p({1}, 0.0);
  AdamState adam({}, {p.shape()});
  ParameterRef const refs[] = {{"p", &p, true}};
  DenseTensor const grads[] = {DenseTensor({1}, 1.0)};
  adam.step(refs, grads);
  EXPECT_NEAR(p[0], -3e-4 / (1.0 + 1e-8), 1e-18);
  EXPECT_NEAR(p[0], -2.99999997e-4, 1e-13);
  EXPECT_NEAR(adam.first_moment(0)[0], 0.1, 1e-15);
  EXPECT_NEAR(adam.second_moment(0)[0], 0.001, 1e-15);
}

TEST(Adam, NonFiniteGradientNamesParameterAndMutatesNothing)
{
  DenseTensor a({2}, 1.0), b({2}, 2.0);
  AdamState adam({}, {a.shape(), b.shape()});
  ParameterRef const refs[] = {{"first", &a, true}, {"branch0.weight", &b, true}};
  DenseTensor const grads[] = {DenseTensor({2}, 1.0), DenseTensor({2}, std::vector<double>{0.0, std::nan("")})};
  try {
    adam.step(refs, grads);
    FAIL() << "expected NumericError";
  } catch (NumericError const &e) {
    EXPECT_NE(std::string(e.what()).find("branch0.weight"), std::string::npos);
  }
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(adam.step_count(), 0);
  EXPECT_EQ(adam.first_moment(0)[0], 0.0);
}

TEST(Adam, RejectsMismatchedInputs)
{
  DenseTensor a({2}, 1.0);
  AdamState adam({}, {a.shape()});
  ParameterRef const refs[] = {{"a", &a, true}};
  DenseTensor const wrong[] = {DenseTensor({3}, 1.0)};
  EXPECT_THROW(adam.step(refs, wrong), ShapeError);
  EXPECT_THROW(AdamState(AdamOptions{.beta1 = 1.0}, {}), ConfigError);
}

TEST(Adam, QuadraticDecreasesMonotonically)
{
  DenseTensor p({1}, 0.0);
  double const target = 5.0;
  AdamState adam(AdamOptions{.learning_rate = 0.01}, {p.shape()});
  ParameterRef const refs[] = {{"p", &p, true}};
  double prev = (p[0] - target) * (p[0] - target);
  for (int i = 0; i < 100; ++i) {
    DenseTensor const grads[] = {DenseTensor({1}, 2.0 * (p[0] - target))};
    adam.step(refs, grads);
    double const loss = (p[0] - target) * (p[0] - target);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
}

TEST(Train, ZeroIterationsReturnsModelUnchanged)
{
  auto const model = FactorModel::init(tiny_model());
  auto const r = train(denoise_task(0), model);
  EXPECT_FALSE(r.aborted);
  EXPECT_EQ(flat_parameters(r.model), flat_parameters(model));
  ASSERT_EQ(r.trace.rows.size(), 1u);
  EXPECT_EQ(r.trace.rows[0].iteration, 0);
}

TEST(Train, FirstLossIsFreshModelLoss)
{
  auto const model = FactorModel::init(tiny_model());
  auto const task = denoise_task(3);
  ad::Tape tape;
  ModelGraph graph(tape, model, false);
  double const fresh = task_loss(graph, task).loss.value()[0];
  auto const r = train(task, model);
  EXPECT_EQ(r.trace.rows.front().loss, fresh);
}

TEST(Train, ZeroLearningRateKeepsParameters)
{
  auto const model = FactorModel::init(tiny_model());
  auto task = denoise_task(5);
  task.learning_rate = 0.0;
  auto const r = train(task, model);
  EXPECT_EQ(flat_parameters(r.model), flat_parameters(model));
}

TEST(Train, DeterministicTraceAndReconstruction)
{
  auto const task = denoise_task(10);
  auto const a = train(task, FactorModel::init(tiny_model()));
  auto const b = train(task, FactorModel::init(tiny_model()));
  EXPECT_EQ(a.trace.to_csv(), b.trace.to_csv());
  EXPECT_EQ(a.reconstruction, b.reconstruction);
  EXPECT_EQ(flat_parameters(a.model), flat_parameters(b.model));
}

TEST(Train, LossDecreasesAndTraceIsOrdered)
{
  auto const r = train(denoise_task(30), FactorModel::init(tiny_model()));
  ASSERT_FALSE(r.aborted);
  auto const &rows = r.trace.rows;
  ASSERT_GE(rows.size(), 2u);
  for (std::size_t i = 1; i < rows.size(); ++i) { EXPECT_GT(rows[i].iteration, rows[i - 1].iteration); }
  EXPECT_EQ(rows.back().iteration, 30);
  EXPECT_LT(rows.back().loss, rows.front().loss);
  for (auto const &row : rows) {
    EXPECT_TRUE(std::isfinite(row.loss));
    ASSERT_TRUE(row.psnr.has_value());
  }
}

TEST(Train, CallbackSeesEveryLoggedRow)
{
  std::vector<Index> seen;
  auto const r = train(denoise_task(9), FactorModel::init(tiny_model()),
                       [&](TraceRow const &row) { seen.push_back(row.iteration); });
  EXPECT_EQ(seen, (std::vector<Index>{0, 4, 8, 9}));
  EXPECT_EQ(seen.size(), r.trace.rows.size());
}

TEST(Train, NonFiniteLossAbortsWithLastGoodModel)
{
  auto const model = FactorModel::init(tiny_model());
  auto task = denoise_task(5);
  task.observation[0] = 1e200;
  task.ground_truth.reset();
  auto const r = train(task, model);
  EXPECT_TRUE(r.aborted);
  EXPECT_NE(r.diagnostic.find("iteration 0"), std::string::npos);
  EXPECT_EQ(flat_parameters(r.model), flat_parameters(model));
  EXPECT_TRUE(r.trace.rows.empty());
}

TEST(Train, RejectsMismatchedTask)
{
  auto task = denoise_task(1);
  task.observation = DenseTensor({5, 6, 3});
  EXPECT_THROW(train(task, FactorModel::init(tiny_model())), ConfigError);
}

TEST(TrainTrace, CsvFormat)
{
  TrainTrace trace;
  trace.rows.push_back({0, 2.5, std::nullopt});
  trace.rows.push_back({10, 0.125, 31.5});
  trace.rows.push_back({20, 0.0, std::numeric_limits<double>::infinity()});
  EXPECT_EQ(trace.to_csv(), "iter,loss,psnr\n0,2.5,\n10,0.125,31.5\n20,0,inf\n");

  auto const path = std::filesystem::temp_directory_path() / "reptrfd_trace_test.csv";
  trace.write_csv(path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), trace.to_csv());
  std::filesystem::remove(path);
}

} // namespace
} // namespace reptrfd
