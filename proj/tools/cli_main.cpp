// ttalab command-line front end. Every subcommand reads a key=value config
// file (schema-versioned) plus repeatable --set overrides; a few flags that
// scripts commonly toggle (--method, --eps, --kind, --severity) are exposed
// directly and win over the file. Errors leave on stderr as one line,
// `error: <category>: <message>`; exit codes: 0 success, 2 usage/config/io,
// 3 failed invariant.
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ttalab/config.hpp"
#include "ttalab/corrupt.hpp"
#include "ttalab/report.hpp"
#include "ttalab/train.hpp"

using namespace ttalab;

namespace {

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_hash(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

// Typed view over a KvConfig that records every key it hands out together
// with the effective (possibly defaulted) value. The record becomes the
// resolved-config block of the run summary, so provenance covers defaults.
struct Resolved {
  const KvConfig& cfg;
  std::map<std::string, std::string> used;

  std::string str(const std::string& key, const std::string& fb) {
    const std::string v = cfg.get_str(key, fb);
    used[key] = v;
    return v;
  }
  int integer(const std::string& key, int fb) {
    const int v = cfg.get_int(key, fb);
    used[key] = std::to_string(v);
    return v;
  }
  double real(const std::string& key, double fb) {
    const double v = cfg.get_double(key, fb);
    used[key] = fmt_g17(v);
    return v;
  }
  std::uint64_t uint(const std::string& key, std::uint64_t fb) {
    const std::uint64_t v = cfg.get_u64(key, fb);
    used[key] = std::to_string(v);
    return v;
  }
  bool boolean(const std::string& key, bool fb) {
    const bool v = cfg.get_bool(key, fb);
    used[key] = v ? "true" : "false";
    return v;
  }
};

std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    char* end = nullptr;
    const long v = std::strtol(cur.c_str(), &end, 10);
    if (end == cur.c_str() || *end != '\0')
      throw ConfigError("key '" + key + "' holds a bad integer: " + cur);
    out.push_back(static_cast<int>(v));
    cur.clear();
  };
  for (char c : s) {
    if (c == ',')
      flush();
    else if (c != ' ')
      cur += c;
  }
  flush();
  return out;
}

// Datasets are named by a key prefix: `<p>_data` selects the source
// (synthetic | container | cifar), the rest parameterize it.
LabeledDataset load_data(Resolved& r, const std::string& p) {
  const std::string kind = r.str(p + "_data", "synthetic");
  if (kind == "synthetic") {
    SyntheticSpec s;
    s.num_classes = r.integer(p + "_classes", 10);
    s.size = r.integer(p + "_image_size", 32);
    s.class_separation = r.real(p + "_separation", 1.0);
    s.shift = r.real(p + "_shift", 0.0);
    s.seed = r.uint(p + "_seed", 0);
    return make_synthetic(s, r.integer(p + "_count", 512));
  }
  if (kind == "container") return load_dataset(r.str(p + "_path", p + ".bin"));
  if (kind == "cifar") {
    std::vector<std::string> files;
    std::string cur;
    const std::string paths = r.str(p + "_path", "");
    for (char c : paths + ";") {
      if (c == ';') {
        if (!cur.empty()) files.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (files.empty())
      throw ConfigError("key '" + p + "_path' must list cifar batch files");
    LabeledDataset ds = load_cifar10(files);
    const int count = r.integer(p + "_count", 0);
    if (count > 0 && count < ds.size()) {
      std::vector<int> idx(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
      ds = subset(ds, idx);
    }
    return ds;
  }
  throw ConfigError("key '" + p + "_data' must be synthetic, container or cifar");
}

ArchSpec arch_from(Resolved& r, const std::string& default_kind) {
  ArchSpec a;
  a.kind = r.str("arch", default_kind);
  a.widths = parse_int_list(r.str("widths", "16,32,64,64"), "widths");
  a.num_classes = r.integer("num_classes", 10);
  a.split_point = r.integer("split_point", 3);
  a.gn_groups = r.integer("gn_groups", 8);
  a.validate();
  return a;
}

TrainConfig train_config_from(Resolved& r) {
  TrainConfig tc;
  tc.epochs = r.integer("epochs", 10);
  tc.batch_size = r.integer("batch_size", 64);
  tc.lr = r.real("lr", 0.05);
  tc.momentum = r.real("momentum", 0.9);
  tc.seed = r.uint("train_seed", 0);
  tc.augment = r.boolean("augment", true);
  return tc;
}

Tensor image_row(const Tensor& t, int n) {
  Shape s = t.shape();
  s[0] = 1;
  Tensor out(s, 0.0f);
  const std::size_t per = out.numel();
  std::copy(t.vec().begin() + per * static_cast<std::size_t>(n),
            t.vec().begin() + per * static_cast<std::size_t>(n + 1),
            out.vec().begin());
  return out;
}

int cmd_train(Resolved& r, const std::string& default_arch,
              const std::string& default_out) {
  const ArchSpec arch = arch_from(r, default_arch);
  const LabeledDataset train = load_data(r, "train");
  Model m(arch, r.uint("model_seed", 1));
  const TrainConfig tc = train_config_from(r);
  const double loss = arch.kind == "y" ? train_joint(m, train, tc)
                                       : train_plain(m, train, tc);
  const std::string out = r.str("out", default_out);
  const Checkpoint ck = Checkpoint::capture(m);
  ck.save_file(out);
  std::cout << "wrote " << out << " hash=" << fmt_hash(ck.content_hash())
            << " final_loss=" << loss << "\n";
  return 0;
}

int cmd_gen_corrupt(Resolved& r) {
  const LabeledDataset src = load_data(r, "in");
  CorruptionSpec cs;
  cs.kind = corruption_from_name(r.str("kind", "gauss-noise"));
  cs.severity = r.integer("severity", 5);
  cs.seed = r.uint("corrupt_seed", 0);
  cs.validate();
  const LabeledDataset out_ds = corrupt_dataset(src, cs);
  const std::string out = r.str("out", "corrupt.bin");
  save_dataset(out_ds, out);
  std::cout << "wrote " << out << " count=" << out_ds.size() << "\n";
  return 0;
}

int cmd_gen_poison(Resolved& r) {
  const LabeledDataset pool = load_data(r, "in");
  const TtaMethod method = tta_method_from_name(r.str("method", "ttt"));
  AttackConfig ac = AttackConfig::for_method(method);
  ac.eps = r.real("eps", ac.eps);
  ac.i_adv = r.integer("i_adv", ac.i_adv);
  ac.i_iter = r.integer("i_iter", ac.i_iter);
  ac.p = r.real("p", ac.p);
  ac.mu = r.real("mu", ac.mu);
  ac.literal_step = r.boolean("literal_step", false);
  ac.seed = r.uint("attack_seed", 0);
  ac.validate();

  std::optional<Model> surrogate;
  std::string surrogate_hash = "none";
  const std::string spath = r.str("surrogate", "");
  if (method != TtaMethod::kDua) {
    if (spath.empty())
      throw ConfigError("gen-poison: this method needs a 'surrogate' checkpoint");
    const Checkpoint sc = Checkpoint::load_file(spath);
    surrogate_hash = fmt_hash(sc.content_hash());
    surrogate.emplace(sc.build_model());
  }

  Tensor out_images(pool.images.shape(), 0.0f);
  const std::size_t per =
      out_images.numel() / static_cast<std::size_t>(pool.size());
  for (int n = 0; n < pool.size(); ++n) {
    const Tensor xi = image_row(pool.images, n);
    const Tensor xp = poigen(method, xi, surrogate ? &*surrogate : nullptr, ac,
                             static_cast<std::uint64_t>(n));
    std::copy(xp.vec().begin(), xp.vec().end(),
              out_images.vec().begin() + per * static_cast<std::size_t>(n));
  }

  const std::string out = r.str("out", "poison.bin");
  save_dataset({out_images, pool.labels}, out);

  nlohmann::json meta;
  meta["schema"] = 1;
  meta["method"] = tta_method_name(method);
  meta["eps"] = ac.eps;
  meta["i_adv"] = ac.i_adv;
  meta["i_iter"] = ac.i_iter;
  meta["p"] = ac.p;
  meta["mu"] = ac.mu;
  meta["literal_step"] = ac.literal_step;
  meta["seed"] = ac.seed;
  meta["count"] = pool.size();
  meta["surrogate_hash"] = surrogate_hash;
  const std::string sidecar = out + ".json";
  {
    std::ofstream f(sidecar, std::ios::binary);
    if (!f) throw IoError("gen-poison: cannot write " + sidecar);
    f << meta.dump(2) << '\n';
  }
  std::cout << "wrote " << out << " sidecar=" << sidecar
            << " count=" << pool.size() << "\n";
  return 0;
}

int cmd_run(Resolved& r) {
  const Checkpoint tc = Checkpoint::load_file(r.str("target", "target.ckpt"));
  Model target = tc.build_model();
  r.used["target_hash"] = fmt_hash(tc.content_hash());

  RunConfig rc;
  rc.tta.method = tta_method_from_name(r.str("method", "tent"));
  rc.tta.ttt_lr = r.real("ttt_lr", rc.tta.ttt_lr);
  rc.tta.ttt_momentum = r.real("ttt_momentum", rc.tta.ttt_momentum);
  rc.tta.dua_w = r.real("dua_w", rc.tta.dua_w);
  rc.tta.dua_xi = r.real("dua_xi", rc.tta.dua_xi);
  rc.tta.dua_rho0 = r.real("dua_rho0", rc.tta.dua_rho0);
  rc.tta.dua_copies = r.integer("dua_copies", rc.tta.dua_copies);
  rc.tta.lr = r.real("lr", rc.tta.lr);
  rc.tta.momentum = r.real("momentum", rc.tta.momentum);
  rc.tta.q = r.real("q", rc.tta.q);
  rc.tta.eval_batch = r.integer("eval_batch", rc.tta.eval_batch);
  rc.tta.seed = r.uint("tta_seed", 0);
  rc.tta.validate();

  rc.schedule.mode = schedule_mode_from_name(r.str("schedule", "uniform"));
  rc.schedule.p = r.real("p", 0.0);
  rc.schedule.events = r.integer("events", 0);
  rc.schedule.benign = r.integer("benign", 0);
  rc.schedule.poison = r.integer("poison", 0);
  rc.schedule.batch = r.integer("batch", 1);
  rc.schedule.per_batch = r.boolean("per_batch", false);
  rc.schedule.seed = r.uint("schedule_seed", 0);
  rc.schedule.validate();

  rc.defense.kind = defense_from_name(r.str("defense", "none"));
  rc.defense.bdr_bits = r.integer("bdr_bits", rc.defense.bdr_bits);
  rc.defense.jc_quality = r.integer("jc_quality", rc.defense.jc_quality);
  rc.defense.rrp_canvas = r.integer("rrp_canvas", rc.defense.rrp_canvas);
  rc.defense.seed = r.uint("defense_seed", 0);
  rc.defense.validate();

  rc.benign_iid = r.boolean("benign_iid", true);
  const std::string marks = r.str("acc_checkpoints", "");
  if (!marks.empty())
    rc.acc_checkpoints = parse_int_list(marks, "acc_checkpoints");

  const Tensor benign_pool = load_data(r, "benign").images;
  Tensor poison_pool;
  const std::string ppath = r.str("poison_path", "");
  if (!ppath.empty()) poison_pool = load_dataset(ppath).images;
  const LabeledDataset eval_set = load_data(r, "eval");

  const RunResult res =
      run_experiment(target, rc, benign_pool, poison_pool, eval_set);

  const std::string out_csv = r.str("out_csv", "run.csv");
  const std::string out_json = r.str("out_json", "run.json");
  write_run_csv(res, out_csv);
  write_summary_json(res, r.used, out_json);
  std::cout << "wrote " << out_csv << " " << out_json
            << " baseline=" << res.baseline_acc << " final=" << res.final_acc
            << " events=" << res.events.size() << "\n";
  return 0;
}

int cmd_defend(Resolved& r) {
  const DefenseKind kind = defense_from_name(r.str("defense", "bdr"));
  if (kind == DefenseKind::kNone)
    throw ConfigError("defend: defense 'none' produces nothing");

  if (kind == DefenseKind::kAt) {
    ArchSpec arch = arch_from(r, "y");
    if (arch.kind != "y")
      throw ConfigError("defend: adversarial training needs the rotation arch");
    const LabeledDataset train = load_data(r, "train");
    Model m(arch, r.uint("model_seed", 1));
    const TrainConfig tc = train_config_from(r);
    const double eps_at = r.real("at_eps", 32.0 / 255.0);
    const int i_iter = r.integer("at_i_iter", 2);
    const int i_adv = r.integer("at_i_adv", 5);
    const double loss = adversarial_train(m, train, tc, eps_at, i_iter, i_adv);
    const std::string out = r.str("out", "target_at.ckpt");
    const Checkpoint ck = Checkpoint::capture(m);
    ck.save_file(out);
    std::cout << "wrote " << out << " hash=" << fmt_hash(ck.content_hash())
              << " final_loss=" << loss << "\n";
    return 0;
  }

  DefenseSpec spec;
  spec.kind = kind;
  spec.bdr_bits = r.integer("bdr_bits", spec.bdr_bits);
  spec.jc_quality = r.integer("jc_quality", spec.jc_quality);
  spec.rrp_canvas = r.integer("rrp_canvas", spec.rrp_canvas);
  spec.seed = r.uint("defense_seed", 0);
  spec.validate();
  const LabeledDataset src = load_data(r, "in");
  Preprocessor pp(spec);
  const Tensor shielded = pp.apply(src.images);
  const std::string out = r.str("out", "defended.bin");
  save_dataset({shielded, src.labels}, out);
  std::cout << "wrote " << out << " count=" << src.size() << "\n";
  return 0;
}

int cmd_report(Resolved& r) {
  const std::string in_csv = r.str("in_csv", "run.csv");
  const RunResult res = parse_run_csv(in_csv);
  const std::string out_json = r.str("out_json", "summary.json");
  write_summary_json(res, r.used, out_json);

  const std::string fmodel = r.str("features_model", "");
  if (!fmodel.empty()) {
    Model m = Checkpoint::load_file(fmodel).build_model();
    const LabeledDataset ds = load_data(r, "features");
    write_feature_csv(m, ds, r.str("features_out", "features.csv"));
  }
  std::cout << "wrote " << out_json << " events=" << res.events.size() << "\n";
  return 0;
}

struct SubArgs {
  std::string config;
  std::vector<std::string> sets;
  CLI::App* app = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ttalab: a desk-scale lab for poisoning test-time adaptation"};
  app.require_subcommand(1);

  std::map<std::string, SubArgs> subs;
  for (const char* name : {"train-target", "train-surrogate", "gen-corrupt",
                           "gen-poison", "run", "defend", "report"}) {
    SubArgs& sa = subs[name];
    sa.app = app.add_subcommand(name);
    sa.app->add_option("-c,--config", sa.config, "key=value config file");
    sa.app->add_option("-s,--set", sa.sets, "override, key=value (repeatable)");
  }
  subs["train-target"].app->description("train a target model, write a checkpoint");
  subs["train-surrogate"].app->description("train an attacker-side rotation model");
  subs["gen-corrupt"].app->description("corrupt a dataset at a chosen severity");
  subs["gen-poison"].app->description("generate a poisoned-sample pool");
  subs["run"].app->description("stream events into an adaptation engine, record metrics");
  subs["defend"].app->description("preprocess a dataset or adversarially train");
  subs["report"].app->description("rebuild the JSON summary from a run CSV");

  // spec'd script ergonomics: the common knobs double as flags
  std::string flag_method, flag_kind;
  double flag_eps = -1.0;
  int flag_severity = -1;
  subs["gen-poison"].app->add_option("--method", flag_method,
                                     "ttt | dua | tent | rpl");
  subs["gen-poison"].app->add_option("--eps", flag_eps, "l-inf budget");
  subs["gen-corrupt"].app->add_option("--kind", flag_kind, "corruption kind");
  subs["gen-corrupt"].app->add_option("--severity", flag_severity, "1..5");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    SubArgs& sa = subs[name];
    KvConfig cfg;
    if (!sa.config.empty()) cfg = KvConfig::parse_file(sa.config);
    for (const auto& kv : sa.sets) cfg.apply_override(kv);
    if (!flag_method.empty()) cfg.apply_override("method=" + flag_method);
    if (flag_eps >= 0.0) cfg.apply_override("eps=" + fmt_g17(flag_eps));
    if (!flag_kind.empty()) cfg.apply_override("kind=" + flag_kind);
    if (flag_severity >= 0)
      cfg.apply_override("severity=" + std::to_string(flag_severity));

    Resolved r{cfg, {}};
    if (name == "train-target") return cmd_train(r, "plain", "target.ckpt");
    if (name == "train-surrogate") return cmd_train(r, "y", "surrogate.ckpt");
    if (name == "gen-corrupt") return cmd_gen_corrupt(r);
    if (name == "gen-poison") return cmd_gen_poison(r);
    if (name == "run") return cmd_run(r);
    if (name == "defend") return cmd_defend(r);
    if (name == "report") return cmd_report(r);
    throw ConfigError("unknown subcommand " + name);
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 3;
  } catch (const DegenerateBatchError& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 3;
  } catch (const UnsupportedError& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    // config, io, version, dependency: operator-fixable inputs
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
