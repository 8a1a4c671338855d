// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "biascope/biascope.hpp"

namespace fs = std::filesystem;
using namespace biascope;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << std::fixed << v;
  return os.str();
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char ch : s) q += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return q + "'";
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = quote(BIASCOPE_CLI_PATH) + " " + args + " > " + quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Vector random_unit(Rng& rng, std::size_t d) {
  Vector v(d);
  for (double& x : v) x = rng.normal();
  return normalize_embedding(v);
}

struct Batch {
  std::deque<Vector> storage;
  std::vector<Example> rows;
};

Batch random_batch(Rng& rng, std::size_t n, std::size_t d, std::size_t C, std::size_t G) {
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(d);
    for (double& v : x) v = rng.normal();
    b.storage.push_back(std::move(x));
    b.rows.push_back({b.storage.back(), static_cast<int>(rng.below(C)), static_cast<int>(rng.below(G))});
  }
  return b;
}

void randomize(LinearModel& m, Rng& rng, double scale) {
  for (double& w : m.weights) w = scale * rng.normal();
  for (double& v : m.bias) v = scale * rng.normal();
}

Outcome balancing() {
  Outcome o;
  const auto t0 = Clock::now();
  const BalancePlan waterbirds = generation_targets({{1057, 56}, {184, 3498}}, BalanceMode::UniformWithinClass);
  o.check(waterbirds.deltas.at(0, 1) == 1001, "waterbird-land delta " + std::to_string(waterbirds.deltas.at(0, 1)));
  o.check(waterbirds.deltas.at(1, 0) == 3314, "landbird-water delta " + std::to_string(waterbirds.deltas.at(1, 0)));
  o.check(waterbirds.total() == 1001 + 3314, "waterbirds plan has extra deltas");
  const BalancePlan celeba =
      generation_targets({{1387, 22880}, {66874, 71629}}, BalanceMode::MatchReferenceClass, 1);
  o.check(celeba.deltas.at(0, 0) == 19975, "blonde-male delta " + std::to_string(celeba.deltas.at(0, 0)));
  o.check(celeba.total() == 19975, "celeba plan has extra deltas");
  const BalancePlan cmnist = generation_targets({{57000, 3000}}, BalanceMode::UniformWithinClass);
  o.check(cmnist.deltas.at(0, 1) == 54000, "conflict delta " + std::to_string(cmnist.deltas.at(0, 1)));
  const double secs = seconds_since(t0);
  o.check(secs < 1.0, "took " + fmt(secs) + " s");
  if (o.pass) o.detail = "1001 / 3314 / 19975 / 54000 in " + fmt(secs * 1e3, 2) + " ms";
  return o;
}

Outcome zero_sum() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  const int instances = 5000;
  for (int trial = 0; trial < instances; ++trial) {
    const std::size_t C = 2 + rng.below(4), d = 2 + rng.below(31);
    const Vector w = random_unit(rng, d);
    std::vector<std::vector<Vector>> subsets(C);
    for (auto& s : subsets) {
      for (std::size_t i = 0, n = 1 + rng.below(40); i < n; ++i) s.push_back(random_unit(rng, d));
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += s_specific(w, subsets, c);
    worst = std::max(worst, std::abs(sum));
  }
  const double secs = seconds_since(t0);
  o.check(worst <= 1e-9, "max |sum| " + std::to_string(worst));
  o.check(secs < 5.0, "took " + fmt(secs) + " s");
  if (o.pass) {
    std::ostringstream os;
    os << instances << " instances, max |sum| " << worst << ", " << fmt(secs) << " s";
    o.detail = os.str();
  }
  return o;
}

Outcome dro_properties() {
  Outcome o;
  Rng rng(7);
  {
    DROState s = make_dro_state(3, 4, 5, 0);
    TrainConfig cfg;
    double worst = 0.0;
    bool nonneg = true;
    for (int step = 0; step < 10000; ++step) {
      randomize(s.model, rng, 0.1 + 5.0 * rng.uniform());
      cfg.eta_q = 2.0 * rng.uniform();
      const Batch b = random_batch(rng, 1 + rng.below(12), 4, 3, 5);
      dro_step(s, b.rows, cfg);
      double sum = 0.0;
      for (double q : s.q) {
        nonneg = nonneg && q >= 0.0;
        sum += q;
      }
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    o.check(nonneg && worst <= 1e-9, "simplex drift " + std::to_string(worst));
  }
  {
    const Batch train = random_batch(rng, 400, 6, 3, 1);
    const Batch val = random_batch(rng, 60, 6, 3, 1);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.eta_q = 0.5;
    cfg.seed = 99;
    std::vector<LinearModel> dro_path, erm_path;
    TrainOptions dro_opts, erm_opts;
    erm_opts.objective = Objective::ERM;
    dro_opts.on_epoch = [&](int, const DROState& s) { dro_path.push_back(s.model); };
    erm_opts.on_epoch = [&](int, const DROState& s) { erm_path.push_back(s.model); };
    const TrainResult a = train_linear(3, 6, train.rows, 1, val.rows, cfg, dro_opts);
    const TrainResult b = train_linear(3, 6, train.rows, 1, val.rows, cfg, erm_opts);
    o.check(dro_path.size() == 10 && dro_path == erm_path && a.model == b.model,
            "single-group DRO trajectory differs from ERM");
  }
  {
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t d = 1 + rng.below(8), C = 2 + rng.below(3), G = 1 + rng.below(4);
      LinearModel m(C, d);
      randomize(m, rng, 1.0);
      const Batch b = random_batch(rng, 3 + rng.below(10), d, C, G);
      std::vector<double> q(G);
      double z = 0.0;
      for (double& v : q) z += (v = 0.05 + rng.uniform());
      for (double& v : q) v /= z;
      const Gradient g = weighted_loss_gradient(m, b.rows, q);
      const double h = 1e-5;
      auto fd = [&](std::vector<double> LinearModel::*field, std::size_t i) {
        LinearModel up = m, down = m;
        (up.*field)[i] += h;
        (down.*field)[i] -= h;
        return (weighted_loss_gradient(up, b.rows, q).loss - weighted_loss_gradient(down, b.rows, q).loss) / (2 * h);
      };
      auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); };
      for (std::size_t i = 0; i < m.weights.size(); ++i) {
        worst = std::max(worst, rel(g.weights[i], fd(&LinearModel::weights, i)));
      }
      for (std::size_t k = 0; k < C; ++k) worst = std::max(worst, rel(g.bias[k], fd(&LinearModel::bias, k)));
    }
    o.check(worst <= 1e-4, "finite-difference relative error " + std::to_string(worst));
    if (o.pass) {
      std::ostringstream os;
      os << "simplex over 1e4 steps, G=1 equals ERM bit for bit, max FD rel err " << worst;
      o.detail = os.str();
    }
  }
  return o;
}

Outcome end_to_end(const fs::path& root) {
  Outcome o;
  const auto t0 = Clock::now();
  double min_lift_dro = 1e9, min_lift_aug = 1e9, min_ann = 1e9, max_gap = 0.0;
  for (int seed = 1; seed <= 5; ++seed) {
    const fs::path dir = root / ("seed" + std::to_string(seed));
    const std::string tag = "seed " + std::to_string(seed) + ": ";
    if (run_cli("synth --out " + quote(dir.string()) + " --seed " + std::to_string(seed) +
                    " --correlation 0.95 --n 1000",
                root / "synth.log") != 0) {
      o.check(false, tag + "synth failed: " + slurp(root / "synth.log"));
      break;
    }
    const fs::path log = dir / "pipeline.log";
    if (run_cli("pipeline -c " + quote((dir / "config.json").string()), log) != 0) {
      o.check(false, tag + "pipeline failed: " + slurp(log));
      break;
    }
    const Json world = io::read_json(dir / "world.json");
    const Json keywords = io::read_json(dir / "out/keywords.json");
    for (const Json& cls : keywords.at("classes")) {
      const std::size_t c = cls.at("class");
      const bool top1 = !cls.at("keywords").empty() && cls["keywords"][0].at("text") == world["attribute_tokens"][c];
      o.check(top1, tag + "class " + std::to_string(c) + " top-1 keyword is not the planted token");
    }
    const Json s = io::read_json(dir / "out/summary.json");
    const double ann = s.at("annotation_accuracy");
    const double erm_bc = s["erm"]["bc"], erm_ua = s["erm"]["ua"];
    const double dro_bc = s["lgdro"]["bc"], dro_ua = s["lgdro"]["ua"];
    const double aug_bc = s["lgaug"]["bc"];
    const double gap = s.at("independence_gap");
    o.check(ann >= 0.90, tag + "annotation accuracy " + fmt(ann));
    o.check(dro_bc - erm_bc >= 0.15, tag + "BC(Lg-DRO) - BC(ERM) = " + fmt(dro_bc - erm_bc));
    o.check(dro_ua >= erm_ua, tag + "UA(Lg-DRO) " + fmt(dro_ua) + " < UA(ERM) " + fmt(erm_ua));
    o.check(gap <= 0.01, tag + "independence gap " + fmt(gap, 4));
    o.check(aug_bc - erm_bc >= 0.10, tag + "BC(Lg-Aug) - BC(ERM) = " + fmt(aug_bc - erm_bc));
    min_ann = std::min(min_ann, ann);
    min_lift_dro = std::min(min_lift_dro, dro_bc - erm_bc);
    min_lift_aug = std::min(min_lift_aug, aug_bc - erm_bc);
    max_gap = std::max(max_gap, gap);
  }
  const double secs = seconds_since(t0);
  o.check(secs < 120.0, "took " + fmt(secs, 1) + " s");
  if (o.pass) {
    o.detail = "seeds 1..5: planted top-1, annotation >= " + fmt(min_ann) + ", DRO BC lift >= " + fmt(min_lift_dro) +
               ", aug BC lift >= " + fmt(min_lift_aug) + ", gap <= " + fmt(max_gap, 4) + ", " + fmt(secs, 1) + " s";
  }
  return o;
}

Outcome determinism(const fs::path& root) {
  Outcome o;
  const fs::path data = root / "determinism";
  if (run_cli("synth --out " + quote(data.string()) + " --seed 3", root / "det.log") != 0) {
    o.check(false, "synth failed");
    return o;
  }
  const std::string cfg = " -c " + quote((data / "config.json").string());
  for (const char* out : {"run-a", "run-b"}) {
    if (run_cli("pipeline" + cfg + " -o " + quote((data / out).string()), root / "det.log") != 0) {
      o.check(false, std::string(out) + " failed: " + slurp(root / "det.log"));
      return o;
    }
  }
  int compared = 0;
  for (const char* rel : {"keywords.json", "groups.jsonl", "erm/model.json", "erm/metrics.json", "lgdro/model.json",
                          "lgdro/metrics.json", "lgaug/model.json", "lgaug/metrics.json"}) {
    const std::string a = slurp(data / "run-a" / rel), b = slurp(data / "run-b" / rel);
    o.check(!a.empty() && a == b, std::string(rel) + " differs between runs");
    ++compared;
  }
  if (o.pass) o.detail = std::to_string(compared) + " artifacts byte-identical across two runs";
  return o;
}

Outcome metric_identities() {
  Outcome o;
  Rng rng(11);
  int vectors = 0, splits = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    const std::size_t G = 1 + rng.below(16);
    std::vector<double> v(G);
    const double shared = rng.uniform();
    for (double& x : v) x = rng.below(3) == 0 ? shared : rng.uniform();
    if (trial % 5 == 0) std::fill(v.begin(), v.end(), static_cast<double>(rng.below(9)) / 9.0);
    o.check(bias_conflict(v) <= unbiased_accuracy(v), "BC > UA on trial " + std::to_string(trial));
    ++vectors;
  }
  for (int trial = 0; trial < 20000; ++trial) {
    const std::size_t G = 1 + rng.below(12), n = 1 + rng.below(60);
    std::vector<int> preds, targets, labels;
    std::vector<GroupKey> keys;
    for (std::size_t g = 0; g < G; ++g) {
      keys.push_back({static_cast<int>(g), 0});
      const double p = rng.uniform();
      for (std::size_t k = 0; k < n; ++k) {
        targets.push_back(0);
        preds.push_back(rng.uniform() < p ? 0 : 1);
        labels.push_back(static_cast<int>(g));
      }
    }
    const GroupMetrics m = summarize(group_accuracies(preds, targets, labels, keys), GroupSource::Truth);
    o.check(m.ua == m.overall, "UA != overall on equal-size split, trial " + std::to_string(trial));
    o.check(m.bc <= m.ua, "BC > UA on split trial " + std::to_string(trial));
    ++splits;
  }
  if (o.pass) {
    o.detail = "BC <= UA on " + std::to_string(vectors + splits) + " vectors, UA == overall on " +
               std::to_string(splits) + " equal-size splits";
  }
  return o;
}

}  // namespace

int main() {
  log::threshold() = log::Level::Error;
  const fs::path root = fs::temp_directory_path() / ("biascope-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"balancing-arithmetic", balancing},
      {"s-specific-zero-sum", zero_sum},
      {"group-dro-properties", dro_properties},
      {"end-to-end-synthetic", [&] { return end_to_end(root); }},
      {"pipeline-determinism", [&] { return determinism(root); }},
      {"metric-identities", metric_identities},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  fs::remove_all(root);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
