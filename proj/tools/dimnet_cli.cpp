// dimnet: synthetic corpus generation, disjoint-mapping training, the full
// cross-modal evaluation suite, covariate-baseline oracles and MDS export,
// all deterministic per config. Exit codes: 0 success, 2 config error,
// 3 I/O error, 4 numerical divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dimnet/checkpoint.hpp"
#include "dimnet/data.hpp"
#include "dimnet/eval.hpp"
#include "dimnet/forward.hpp"
#include "dimnet/mds.hpp"
#include "dimnet/net.hpp"
#include "dimnet/oracle.hpp"
#include "dimnet/rng.hpp"
#include "dimnet/synthgen.hpp"
#include "dimnet/train.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitIoError = 3;
constexpr int kExitDivergence = 4;

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(std::stod(item));
  return out;
}

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  for (const auto& item : split_list(text)) out.push_back(std::stoi(item));
  return out;
}

// "16x4" -> {16, 4}
std::vector<std::size_t> parse_shape(const std::string& text) {
  std::vector<std::size_t> shape;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, 'x')) shape.push_back(std::stoul(item));
  if (shape.empty()) throw dimnet::config_error("empty shape '" + text + "'");
  return shape;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw dimnet::io_error("cannot open '" + path + "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw dimnet::io_error("write failed for '" + path + "'");
}

// --- gen -------------------------------------------------------------------

struct GenOptions {
  std::string out_dir;
  std::uint64_t seed = 7;
  int n_ids = 300;
  int latent_dim = 8;
  double gender_balance = 0.5;
  int nationalities = 8;
  std::string nat_weights;  // empty -> 0.65-skew default
  int a_count = 10;
  int b_count = 10;
  double noise_sigma = 0.6;
  double gain_identity = 1.0;
  double gain_gender = 3.0;
  double gain_nationality = 0.5;
  std::string a_shape = "32";
  std::string b_shape = "32";
  std::string ratios = "0.7,0.1,0.2";
};

int cmd_gen(const GenOptions& opt) {
  dimnet::CovariateSchema schema;
  schema.covariates.push_back({"identity", opt.n_ids});
  schema.covariates.push_back({"gender", 2});
  std::vector<double> gains = {opt.gain_identity, opt.gain_gender};
  std::vector<double> nat_weights;
  if (opt.nationalities > 0) {
    schema.covariates.push_back({"nationality", opt.nationalities});
    gains.push_back(opt.gain_nationality);
    nat_weights = opt.nat_weights.empty()
                      ? dimnet::default_nationality_weights(opt.nationalities)
                      : parse_doubles(opt.nat_weights);
  }

  const auto pop = dimnet::sample_population(schema, opt.n_ids, opt.gender_balance, nat_weights,
                                             opt.latent_dim, opt.seed);
  dimnet::ModalityShapes shapes{parse_shape(opt.a_shape), parse_shape(opt.b_shape)};
  const auto maps = dimnet::make_modality_maps(schema, opt.latent_dim, shapes, opt.seed);
  const auto full = dimnet::generate_samples(pop, {opt.a_count, opt.b_count}, maps,
                                             opt.noise_sigma, gains, opt.seed);
  const auto r = parse_doubles(opt.ratios);
  if (r.size() != 3) throw dimnet::config_error("--ratios needs three values");
  const auto splits = dimnet::split_by_identity(full, {r[0], r[1], r[2]}, opt.seed);

  std::filesystem::create_directories(opt.out_dir);
  std::string manifest = "split,file,samples,identities,a_samples,b_samples\n";
  for (const dimnet::Dataset* ds : {&splits.train, &splits.val, &splits.test}) {
    const std::string name = std::string(dimnet::split_name(ds->split_tag)) + ".dimset";
    dimnet::write_dataset(*ds, opt.out_dir + "/" + name);
    manifest += std::string(dimnet::split_name(ds->split_tag)) + "," + name + "," +
                std::to_string(ds->samples.size()) + "," +
                std::to_string(ds->identity_set().size()) + "," +
                std::to_string(ds->count(dimnet::Modality::A)) + "," +
                std::to_string(ds->count(dimnet::Modality::B)) + "\n";
  }
  write_text_file(opt.out_dir + "/manifest.csv", manifest);
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainOptions {
  std::string data_dir;
  std::string out_path;
  std::string history_path;
  std::string arch = "auto";  // auto | mlp | conv
  std::string hidden = "64,64";
  std::size_t embed_dim = 64;
  std::map<std::string, std::string> config_kv;  // raw TrainConfig keys
};

dimnet::NetworkSpec build_spec(const TrainOptions& opt, const dimnet::Dataset& train_set) {
  std::string arch = opt.arch;
  if (arch == "auto")
    arch = (train_set.shapes.a_shape.size() == 1 && train_set.shapes.b_shape.size() == 1)
               ? "mlp"
               : "conv";
  if (arch == "mlp") {
    std::vector<std::size_t> hidden;
    for (int h : parse_ints(opt.hidden)) hidden.push_back(static_cast<std::size_t>(h));
    return dimnet::mlp_spec(train_set.schema, train_set.shapes, hidden, opt.embed_dim);
  }
  if (arch == "conv")
    return dimnet::desk_conv_spec(train_set.schema, train_set.shapes, opt.embed_dim);
  throw dimnet::config_error("unknown --arch '" + opt.arch + "'");
}

int cmd_train(const TrainOptions& opt) {
  if (!opt.history_path.empty() && opt.history_path == opt.out_path)
    throw dimnet::config_error("--out and --history must be distinct paths");
  const auto train_set = dimnet::read_dataset(opt.data_dir + "/train.dimset");
  const auto val_set = dimnet::read_dataset(opt.data_dir + "/val.dimset");
  const auto spec = build_spec(opt, train_set);
  const auto config = dimnet::train_config_from_map(opt.config_kv, train_set.schema);
  const auto result = dimnet::train(spec, train_set, val_set, config);
  dimnet::save_checkpoint(spec, result.params, opt.out_path);
  const std::string history_path =
      opt.history_path.empty() ? opt.out_path + ".history.csv" : opt.history_path;
  write_text_file(history_path, dimnet::history_csv(spec.schema, result.history));
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string data_path;
  std::string out_path;
  std::uint64_t seed = 7;
  std::string protocols = "match2,matchN,verify,retrieval,covacc";
  std::string strata = "U";
  std::string n_list = "4,6,8,10";
  std::string directions = "a2b,b2a";
  std::string mds_out;
  std::size_t mds_dims = 2;
  std::size_t mds_max_rows = 256;
  int threads = 1;
};

dimnet::Stratification strat_from_name(const std::string& s) {
  if (s == "U") return dimnet::Stratification::U;
  if (s == "G") return dimnet::Stratification::G;
  if (s == "N") return dimnet::Stratification::N;
  if (s == "GN") return dimnet::Stratification::GN;
  throw dimnet::config_error("unknown stratum '" + s + "'");
}

std::uint64_t trial_stream(dimnet::Direction dir, dimnet::Stratification strat, std::size_t n) {
  return (static_cast<std::uint64_t>(dir) << 24) | (static_cast<std::uint64_t>(strat) << 16) |
         static_cast<std::uint64_t>(n);
}

std::string mds_csv(const dimnet::EmbeddingTable& table, const std::vector<std::size_t>& rows,
                    const std::vector<std::vector<double>>& coords) {
  std::string out = "sample_ref,modality,id";
  if (coords.empty() || coords[0].size() == 2) {
    out += ",x,y";
  } else {
    for (std::size_t k = 0; k < coords[0].size(); ++k) out += ",c" + std::to_string(k);
  }
  out += '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = table.rows[rows[i]];
    out += std::to_string(row.sample_index);
    out += ',';
    out += dimnet::modality_char(row.modality);
    out += ',' + std::to_string(row.id_index);
    for (double c : coords[i]) out += ',' + fmt_real(c);
    out += '\n';
  }
  return out;
}

std::vector<std::size_t> mds_row_subset(const dimnet::EmbeddingTable& table,
                                        std::size_t max_rows, std::uint64_t seed) {
  std::vector<std::size_t> rows(table.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  if (rows.size() <= max_rows) return rows;
  dimnet::Rng rng(dimnet::derive_seed(seed, 0x3D5));
  auto picks = rng.sample_without_replacement(rows.size(), max_rows);
  std::sort(picks.begin(), picks.end());
  return picks;
}

int cmd_eval(const EvalOptions& opt) {
  if (!opt.mds_out.empty() && opt.mds_out == opt.out_path)
    throw dimnet::config_error("--out and --mds-out must be distinct paths");
  const auto ck = dimnet::load_checkpoint(opt.checkpoint);
  const auto test_set = dimnet::read_dataset(opt.data_path);
  const auto table = dimnet::embed_all(ck.spec, ck.params, test_set, opt.threads);

  std::vector<dimnet::Direction> directions;
  for (const auto& d : split_list(opt.directions)) {
    if (d == "a2b")
      directions.push_back(dimnet::Direction::A2B);
    else if (d == "b2a")
      directions.push_back(dimnet::Direction::B2A);
    else
      throw dimnet::config_error("unknown direction '" + d + "'");
  }
  std::vector<dimnet::Stratification> strata;
  for (const auto& s : split_list(opt.strata)) strata.push_back(strat_from_name(s));
  const auto protocols = split_list(opt.protocols);
  auto wants = [&](const char* name) {
    for (const auto& p : protocols)
      if (p == name) return true;
    return false;
  };

  std::string csv = "protocol,direction,stratification,N,value,count,skipped\n";
  auto add_row = [&](const std::string& protocol, const std::string& direction,
                     const std::string& strat, std::size_t n, double value, std::size_t count,
                     std::size_t skipped) {
    csv += protocol + ',' + direction + ',' + strat + ',' + std::to_string(n) + ',' +
           fmt_real(value) + ',' + std::to_string(count) + ',' + std::to_string(skipped) + '\n';
  };

  for (const auto dir : directions) {
    for (const auto strat : strata) {
      try {
        dimnet::strata_covariates(strat, test_set.schema);
      } catch (const std::invalid_argument& e) {
        std::cerr << "eval: skipping stratum " << dimnet::stratification_name(strat) << ": "
                  << e.what() << "\n";
        continue;
      }
      if (wants("match2") || wants("verify")) {
        const auto trials = dimnet::build_match_trials(
            test_set, dir, 2, strat, dimnet::derive_seed(opt.seed, trial_stream(dir, strat, 2)));
        if (wants("match2"))
          add_row("match2", dimnet::direction_name(dir), dimnet::stratification_name(strat), 2,
                  dimnet::match_accuracy(table, trials, opt.threads), trials.match_trials.size(),
                  trials.skipped);
        if (wants("verify")) {
          const auto pairs = dimnet::build_verification_pairs(trials);
          const auto r = dimnet::verification_eer(table, pairs, opt.threads);
          add_row("verify", dimnet::direction_name(dir), dimnet::stratification_name(strat), 2,
                  r.eer, pairs.pairs.size(), pairs.skipped);
          add_row("verify_granularity", dimnet::direction_name(dir),
                  dimnet::stratification_name(strat), 2, r.granularity, pairs.pairs.size(),
                  pairs.skipped);
        }
      }
      if (wants("matchN")) {
        for (int n : parse_ints(opt.n_list)) {
          const auto trials = dimnet::build_match_trials(
              test_set, dir, static_cast<std::size_t>(n), strat,
              dimnet::derive_seed(opt.seed, trial_stream(dir, strat, static_cast<std::size_t>(n))));
          add_row("matchN", dimnet::direction_name(dir), dimnet::stratification_name(strat),
                  static_cast<std::size_t>(n), dimnet::match_accuracy(table, trials, opt.threads),
                  trials.match_trials.size(), trials.skipped);
        }
      }
    }
    if (wants("retrieval")) {
      std::vector<std::size_t> queries, gallery;
      const auto probe_mod =
          dir == dimnet::Direction::A2B ? dimnet::Modality::A : dimnet::Modality::B;
      for (std::size_t i = 0; i < table.rows.size(); ++i)
        (table.rows[i].modality == probe_mod ? queries : gallery).push_back(i);
      std::vector<std::string> relevance = {"identity"};
      for (const auto& c : test_set.schema.covariates)
        if (c.name != "identity") relevance.push_back(c.name);
      for (const auto& name : relevance) {
        const auto r = dimnet::retrieval_map(table, queries, gallery, name, opt.threads);
        add_row("retrieval", dimnet::direction_name(dir), name, 0, r.map, r.included, r.excluded);
      }
    }
  }
  if (wants("covacc")) {
    for (std::size_t c = 0; c < test_set.schema.size(); ++c) {
      const auto acc = dimnet::covariate_accuracy(ck.spec, ck.params, test_set, c);
      add_row("covacc", "a", test_set.schema.covariates[c].name, 0, acc.acc_a, acc.total_a, 0);
      add_row("covacc", "b", test_set.schema.covariates[c].name, 0, acc.acc_b, acc.total_b, 0);
    }
  }
  write_text_file(opt.out_path, csv);

  if (!opt.mds_out.empty()) {
    const auto rows = mds_row_subset(table, opt.mds_max_rows, opt.seed);
    const auto coords = dimnet::mds_embed(table, rows, opt.mds_dims);
    write_text_file(opt.mds_out, mds_csv(table, rows, coords));
  }
  return 0;
}

// --- oracle / simulate -------------------------------------------------------

struct OracleOptions {
  std::string out_path;
  std::string rates = "0,0.1,0.3,0.5";
  std::string n_list = "2,5,10";
  std::uint64_t trials = 1000000;
  std::uint64_t seed = 7;
  int threads = 1;
};

std::string oracle_csv_header() {
  return "quantity,e_f,e_v,N,P,Q,alpha,closed_form,monte_carlo,trials,abs_diff\n";
}

std::string oracle_row(const std::string& quantity, dimnet::GenderErrorRates e, int n, double p,
                       double q, double a, double closed, bool with_mc, double mc,
                       std::uint64_t trials) {
  std::string row = quantity + ',' + fmt_real(e.e_f) + ',' + fmt_real(e.e_v) + ',' +
                    std::to_string(n) + ',' + fmt_real(p) + ',' + fmt_real(q) + ',' + fmt_real(a) +
                    ',' + fmt_real(closed) + ',';
  if (with_mc)
    row += fmt_real(mc) + ',' + std::to_string(trials) + ',' + fmt_real(std::abs(mc - closed));
  else
    row += ",0,";
  return row + '\n';
}

int cmd_oracle(const OracleOptions& opt) {
  const auto rates = parse_doubles(opt.rates);
  const auto n_values = parse_ints(opt.n_list);
  const bool mc = opt.trials > 0;
  std::string csv = oracle_csv_header();
  std::uint64_t stream = 0;
  for (double ef : rates)
    for (double ev : rates) {
      const dimnet::GenderErrorRates e{ef, ev};
      const auto m2 = dimnet::match2_error_imperfect(e);
      double sim = 0.0;
      if (mc)
        sim = dimnet::simulate_match2(e, m2.optimal_strategy.P, opt.trials,
                                      dimnet::derive_seed(opt.seed, ++stream), opt.threads);
      csv += oracle_row("match2", e, 2, m2.optimal_strategy.P, 0.0, m2.alpha, m2.error, mc, sim,
                        opt.trials);
      for (int n : n_values) {
        const auto mn = dimnet::matchN_error_imperfect(e, n);
        if (mc)
          sim = dimnet::simulate_matchN(e, mn.optimal_strategy.P, n, opt.trials,
                                        dimnet::derive_seed(opt.seed, ++stream), opt.threads);
        csv += oracle_row("matchN", e, n, mn.optimal_strategy.P, 0.0, mn.alpha, mn.error, mc, sim,
                          opt.trials);
      }
      const auto ve = dimnet::verify_eer_imperfect(e);
      dimnet::VerifySimResult vsim;
      if (mc)
        vsim = dimnet::simulate_verification(e, ve.optimal_strategy.P, ve.optimal_strategy.Q,
                                             opt.trials, dimnet::derive_seed(opt.seed, ++stream),
                                             opt.threads);
      csv += oracle_row("verify_fa", e, 2, ve.optimal_strategy.P, ve.optimal_strategy.Q, ve.alpha,
                        ve.error, mc, vsim.f_a, opt.trials);
      csv += oracle_row("verify_fr", e, 2, ve.optimal_strategy.P, ve.optimal_strategy.Q, ve.alpha,
                        ve.error, mc, vsim.f_r, opt.trials);
    }
  write_text_file(opt.out_path, csv);
  return 0;
}

struct SimulateOptions {
  std::string out_path;
  std::string sim = "match2";
  double e_f = 0.0;
  double e_v = 0.0;
  double p = 1.0;
  double q = 0.0;
  int n = 2;
  std::uint64_t trials = 1000000;
  std::uint64_t seed = 7;
  int threads = 1;
};

int cmd_simulate(const SimulateOptions& opt) {
  const dimnet::GenderErrorRates e{opt.e_f, opt.e_v};
  std::string csv = oracle_csv_header();
  const double a = dimnet::alpha(e);
  if (opt.sim == "match2") {
    const double closed = dimnet::match2_error_at(e, opt.p);
    const double sim = dimnet::simulate_match2(e, opt.p, opt.trials, opt.seed, opt.threads);
    csv += oracle_row("match2", e, 2, opt.p, 0.0, a, closed, true, sim, opt.trials);
  } else if (opt.sim == "matchN") {
    const double closed = dimnet::matchN_error_at(e, opt.p, opt.n);
    const double sim = dimnet::simulate_matchN(e, opt.p, opt.n, opt.trials, opt.seed, opt.threads);
    csv += oracle_row("matchN", e, opt.n, opt.p, 0.0, a, closed, true, sim, opt.trials);
  } else if (opt.sim == "verify") {
    const auto closed = dimnet::verify_rates_at(e, opt.p, opt.q);
    const auto sim =
        dimnet::simulate_verification(e, opt.p, opt.q, opt.trials, opt.seed, opt.threads);
    csv += oracle_row("verify_fa", e, 2, opt.p, opt.q, a, closed.f_a, true, sim.f_a, opt.trials);
    csv += oracle_row("verify_fr", e, 2, opt.p, opt.q, a, closed.f_r, true, sim.f_r, opt.trials);
  } else {
    throw dimnet::config_error("unknown --sim '" + opt.sim + "'");
  }
  write_text_file(opt.out_path, csv);
  return 0;
}

// --- mds ---------------------------------------------------------------------

struct MdsOptions {
  std::string checkpoint;
  std::string data_path;
  std::string out_path;
  std::size_t dims = 2;
  std::size_t max_rows = 256;
  std::uint64_t seed = 7;
  int threads = 1;
};

int cmd_mds(const MdsOptions& opt) {
  const auto ck = dimnet::load_checkpoint(opt.checkpoint);
  const auto ds = dimnet::read_dataset(opt.data_path);
  const auto table = dimnet::embed_all(ck.spec, ck.params, ds, opt.threads);
  const auto rows = mds_row_subset(table, opt.max_rows, opt.seed);
  const auto coords = dimnet::mds_embed(table, rows, opt.dims);
  write_text_file(opt.out_path, mds_csv(table, rows, coords));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dimnet: cross-modal embedding training and evaluation"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic two-modality corpus");
  gen_cmd->set_config("--config");
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--n-ids", gen.n_ids);
  gen_cmd->add_option("--latent-dim", gen.latent_dim);
  gen_cmd->add_option("--gender-balance", gen.gender_balance);
  gen_cmd->add_option("--nationalities", gen.nationalities, "cardinality; 0 disables");
  gen_cmd->add_option("--nat-weights", gen.nat_weights, "comma list; default 0.65-skew");
  gen_cmd->add_option("--a-count", gen.a_count);
  gen_cmd->add_option("--b-count", gen.b_count);
  gen_cmd->add_option("--noise-sigma", gen.noise_sigma);
  gen_cmd->add_option("--gain-identity", gen.gain_identity);
  gen_cmd->add_option("--gain-gender", gen.gain_gender);
  gen_cmd->add_option("--gain-nationality", gen.gain_nationality);
  gen_cmd->add_option("--a-shape", gen.a_shape, "e.g. 32 (flat) or 16x4");
  gen_cmd->add_option("--b-shape", gen.b_shape, "e.g. 32 (flat) or 8x8x2");
  gen_cmd->add_option("--ratios", gen.ratios, "train,val,test");

  TrainOptions tr;
  std::map<std::string, std::string> train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model on a generated corpus");
  train_cmd->add_option("--data", tr.data_dir, "directory with train.dimset/val.dimset")
      ->required();
  train_cmd->add_option("--out", tr.out_path, "checkpoint output path")->required();
  train_cmd->add_option("--history", tr.history_path, "history CSV (default <out>.history.csv)");
  train_cmd->add_option("--arch", tr.arch, "auto|mlp|conv");
  train_cmd->add_option("--hidden", tr.hidden, "mlp hidden sizes");
  train_cmd->add_option("--embed-dim", tr.embed_dim);
  std::string train_config_path;
  train_cmd->add_option("--config", train_config_path, "key=value TrainConfig file");
  for (const char* key : {"batch_size", "modality_mix", "lambda", "lr_initial", "lr_drops",
                          "total_iters", "momentum", "weight_decay", "seed", "val_cadence"})
    train_cmd->add_option(std::string("--") + key, train_flags[key]);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "run evaluation protocols on a checkpoint");
  eval_cmd->set_config("--config");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data_path, "test .dimset file")->required();
  eval_cmd->add_option("--out", ev.out_path, "metrics CSV path")->required();
  eval_cmd->add_option("--seed", ev.seed);
  eval_cmd->add_option("--protocols", ev.protocols, "match2,matchN,verify,retrieval,covacc");
  eval_cmd->add_option("--strata", ev.strata, "U,G,N,GN");
  eval_cmd->add_option("--N", ev.n_list, "gallery sizes for matchN");
  eval_cmd->add_option("--direction", ev.directions, "a2b,b2a");
  eval_cmd->add_option("--mds-out", ev.mds_out, "also write MDS coordinates CSV");
  eval_cmd->add_option("--mds-dims", ev.mds_dims);
  eval_cmd->add_option("--mds-max-rows", ev.mds_max_rows);
  eval_cmd->add_option("--threads", ev.threads, "worker cap; default 1 for bit-reproducibility");

  OracleOptions orc;
  auto* oracle_cmd = app.add_subcommand("oracle", "covariate-baseline closed forms + Monte Carlo");
  oracle_cmd->set_config("--config");
  oracle_cmd->add_option("--out", orc.out_path)->required();
  oracle_cmd->add_option("--rates", orc.rates, "error-rate grid for e_f and e_v");
  oracle_cmd->add_option("--N", orc.n_list, "gallery sizes for 1:N");
  oracle_cmd->add_option("--trials", orc.trials, "Monte Carlo trials per cell; 0 disables");
  oracle_cmd->add_option("--seed", orc.seed);
  oracle_cmd->add_option("--threads", orc.threads);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "run one strategy simulation");
  sim_cmd->set_config("--config");
  sim_cmd->add_option("--out", sim.out_path)->required();
  sim_cmd->add_option("--sim", sim.sim, "match2|matchN|verify");
  sim_cmd->add_option("--e_f", sim.e_f);
  sim_cmd->add_option("--e_v", sim.e_v);
  sim_cmd->add_option("--P", sim.p);
  sim_cmd->add_option("--Q", sim.q);
  sim_cmd->add_option("--N", sim.n);
  sim_cmd->add_option("--trials", sim.trials);
  sim_cmd->add_option("--seed", sim.seed);
  sim_cmd->add_option("--threads", sim.threads);

  MdsOptions mds;
  auto* mds_cmd = app.add_subcommand("mds", "export MDS coordinates for a dataset");
  mds_cmd->set_config("--config");
  mds_cmd->add_option("--checkpoint", mds.checkpoint)->required();
  mds_cmd->add_option("--data", mds.data_path)->required();
  mds_cmd->add_option("--out", mds.out_path)->required();
  mds_cmd->add_option("--dims", mds.dims);
  mds_cmd->add_option("--max-rows", mds.max_rows);
  mds_cmd->add_option("--seed", mds.seed);
  mds_cmd->add_option("--threads", mds.threads);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfigError;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*train_cmd) {
      // config file first, command-line flags override
      if (!train_config_path.empty()) {
        std::ifstream f(train_config_path);
        if (!f) throw dimnet::io_error("cannot open '" + train_config_path + "'");
        tr.config_kv = dimnet::parse_key_value_file(f);
      }
      for (const auto& [key, value] : train_flags)
        if (!value.empty()) tr.config_kv[key] = value;
      return cmd_train(tr);
    }
    if (*eval_cmd) return cmd_eval(ev);
    if (*oracle_cmd) return cmd_oracle(orc);
    if (*sim_cmd) return cmd_simulate(sim);
    if (*mds_cmd) return cmd_mds(mds);
  } catch (const dimnet::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const dimnet::io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIoError;
  } catch (const dimnet::numeric_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
