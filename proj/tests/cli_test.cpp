// End-to-end checks of the command-line runner: exit codes, stdout shapes,
// artifact files, manifest headers and rerun determinism.
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dpgrad/accountant.hpp"
#include "dpgrad/version.hpp"
#include "support.hpp"

namespace {

using nlohmann::json;
using testsupport::CliResult;
using testsupport::read_file;
using testsupport::run_cli;
using testsupport::TempDir;

std::string cli() { return std::string(DPGRAD_CLI_PATH); }

CliResult run(const std::string& args, const TempDir& capture) {
  return run_cli(cli() + " " + args, capture.path());
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

std::vector<std::string> tokens_of(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

// stdout summaries are "key value" lines; collect them for lookup.
std::map<std::string, std::string> kv_lines(const std::string& text) {
  std::map<std::string, std::string> out;
  for (const auto& line : lines_of(text)) {
    const auto toks = tokens_of(line);
    if (toks.size() >= 2) out[toks[0]] = toks[1];
  }
  return out;
}

// Pulls <hash> out of a leading "# dpgrad <version> config=<hash> seed=<n>".
std::string manifest_hash(const std::string& file_text) {
  const auto nl = file_text.find('\n');
  const std::string first = file_text.substr(0, nl);
  const std::string key = "config=";
  const auto at = first.find(key);
  if (at == std::string::npos) return "";
  const auto end = first.find(' ', at);
  return first.substr(at + key.size(), end - at - key.size());
}

bool starts_with(const std::string& text, const std::string& prefix) {
  return text.rfind(prefix, 0) == 0;
}

const std::string kManifestPrefix = std::string("# dpgrad ") + dpgrad::kToolkitVersion + " config=";

TEST(CliTest, VersionFlagPrintsToolkitVersion) {
  TempDir td("cli_version");
  const CliResult r = run("--version", td);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find(dpgrad::kToolkitVersion), std::string::npos);
}

TEST(CliTest, NoSubcommandFailsWithUsage) {
  TempDir td("cli_nosub");
  const CliResult r = run("", td);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("accountant"), std::string::npos);
}

TEST(CliTest, AccountantAffordableRoundsNearPublishedValue) {
  TempDir td("cli_acct_target");
  const CliResult r = run("accountant --k 200 --sigma 5000 --delta 1e-5 --epsilon-target 1", td);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto out_lines = lines_of(r.out);
  ASSERT_EQ(out_lines.size(), 1u);
  const long long rounds = std::stoll(out_lines[0]);
  EXPECT_LE(std::llabs(rounds - 1301), 1) << rounds;
  EXPECT_EQ(static_cast<uint64_t>(rounds), dpgrad::budget_schedule(200, 5000.0, 1e-5, 1.0));
}

TEST(CliTest, AccountantCompositionPrintsBothTracksPerRound) {
  TempDir td("cli_acct_rounds");
  const CliResult r = run("accountant --k 200 --sigma 5000 --delta 1e-5 --rounds 3", td);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto out_lines = lines_of(r.out);
  ASSERT_EQ(out_lines.size(), 3u);
  double prev = 0.0;
  for (size_t i = 0; i < out_lines.size(); ++i) {
    const auto toks = tokens_of(out_lines[i]);
    ASSERT_EQ(toks.size(), 3u) << out_lines[i];
    EXPECT_EQ(toks[0], std::to_string(i + 1));
    const double indep = std::stod(toks[1]);
    const double dep = std::stod(toks[2]);
    // No vote outcomes are recorded in this mode, so the data-dependent
    // track coincides with the independent one.
    EXPECT_DOUBLE_EQ(indep, dep);
    EXPECT_GT(indep, prev);
    prev = indep;
  }
  // Single-round epsilon for k=200, sigma=5000, delta=1e-5 (10 printed digits).
  const double first = std::stod(tokens_of(out_lines[0])[1]);
  EXPECT_NEAR(first, 0.027298333070365357, 1e-11);
}

TEST(CliTest, AccountantJsonCarriesManifestFields) {
  TempDir td("cli_acct_json");
  const CliResult r =
      run("accountant --k 200 --sigma 5000 --delta 1e-5 --epsilon-target 1 --format json", td);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j.at("type"), "budget_schedule");
  EXPECT_EQ(j.at("version"), dpgrad::kToolkitVersion);
  EXPECT_EQ(j.at("seed"), 0);
  EXPECT_EQ(j.at("config_hash").get<std::string>().size(), 16u);
  const long long rounds = j.at("rounds").get<long long>();
  EXPECT_LE(std::llabs(rounds - 1301), 1);

  const CliResult r2 =
      run("accountant --k 200 --sigma 5000 --delta 1e-5 --rounds 2 --format json", td);
  ASSERT_EQ(r2.exit_code, 0) << r2.err;
  const json j2 = json::parse(r2.out);
  EXPECT_EQ(j2.at("type"), "composition");
  ASSERT_EQ(j2.at("rounds").size(), 2u);
  for (const auto& row : j2.at("rounds")) {
    EXPECT_TRUE(row.contains("round"));
    EXPECT_TRUE(row.contains("epsilon_indep"));
    EXPECT_TRUE(row.contains("epsilon_dep"));
    EXPECT_TRUE(row.contains("lambda"));
  }
}

TEST(CliTest, AccountantUsageErrorsExitTwo) {
  TempDir td("cli_acct_usage");
  // Required option missing.
  CliResult r = run("accountant --k 200 --sigma 5000 --epsilon-target 1", td);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  // Both mode options at once.
  r = run("accountant --k 1 --sigma 50 --delta 1e-5 --rounds 1 --epsilon-target 1", td);
  EXPECT_EQ(r.exit_code, 2);
  // Neither mode option.
  r = run("accountant --k 1 --sigma 50 --delta 1e-5", td);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("exactly one"), std::string::npos);
  // Unknown subcommand and unknown flag.
  r = run("frobnicate", td);
  EXPECT_EQ(r.exit_code, 2);
  r = run("accountant --k 1 --sigma 50 --delta 1e-5 --rounds 1 --bogus 3", td);
  EXPECT_EQ(r.exit_code, 2);
  // Unsupported output format.
  r = run("accountant --k 1 --sigma 50 --delta 1e-5 --rounds 1 --format xml", td);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("text or json"), std::string::npos);
  // Invalid parameter values surface as configuration errors.
  r = run("accountant --k 1 --sigma 50 --delta 2 --rounds 1", td);
  EXPECT_EQ(r.exit_code, 2);
  // sigma == 0 means the budget can never be met.
  r = run("accountant --k 1 --sigma 0 --delta 1e-5 --rounds 1", td);
  EXPECT_EQ(r.exit_code, 3);
}

TEST(CliTest, PateDefaultRunWritesAllArtifacts) {
  TempDir td("cli_pate_run");
  TempDir out("cli_pate_out");
  const CliResult r = run("pate --seed 7 --out " + out.str(), td);
  ASSERT_EQ(r.exit_code, 0) << r.err;

  const auto kv = kv_lines(r.out);
  ASSERT_TRUE(kv.count("aggregations"));
  // Defaults (k=1, sigma=50, delta=1e-5, target=1) afford exactly this many
  // vote aggregations.
  EXPECT_EQ(kv.at("aggregations"), "26");
  EXPECT_EQ(std::stoull(kv.at("aggregations")), dpgrad::budget_schedule(1, 50.0, 1e-5, 1.0));
  EXPECT_LE(std::stod(kv.at("epsilon_indep")), 1.0 + 1e-9);
  EXPECT_EQ(kv.at("foreign_accesses"), "0");

  const std::string rounds_csv = read_file(out.path() / "pate_rounds.csv");
  const std::string ledger_jsonl = read_file(out.path() / "pate_ledger.jsonl");
  const std::string synth_csv = read_file(out.path() / "pate_synthetic.csv");
  ASSERT_FALSE(rounds_csv.empty());
  ASSERT_FALSE(ledger_jsonl.empty());
  ASSERT_FALSE(synth_csv.empty());

  EXPECT_TRUE(starts_with(rounds_csv, kManifestPrefix)) << rounds_csv.substr(0, 60);
  const auto rows = lines_of(rounds_csv);
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[1], "round,epsilon_indep,epsilon_dep_uncapped,q_tilde,probe_accuracy");
  EXPECT_EQ(rows.size(), 2u + 26u);

  // The three artifacts agree on the configuration hash.
  const std::string hash = manifest_hash(rounds_csv);
  EXPECT_EQ(hash.size(), 16u);
  const json manifest = json::parse(lines_of(ledger_jsonl)[0]);
  EXPECT_EQ(manifest.at("type"), "manifest");
  EXPECT_EQ(manifest.at("config_hash"), hash);
  EXPECT_EQ(manifest.at("seed"), 7);
  EXPECT_EQ(manifest_hash(synth_csv), hash);

  // One ledger entry per aggregation, after the manifest line.
  EXPECT_EQ(lines_of(ledger_jsonl).size(), 1u + 26u);
  const json entry = json::parse(lines_of(ledger_jsonl)[1]);
  EXPECT_TRUE(entry.contains("round"));
  EXPECT_TRUE(entry.contains("epsilon_indep"));
  EXPECT_TRUE(entry.contains("epsilon_dep_uncapped"));

  // Synthetic output: header plus one row per record, two features each.
  const auto synth_rows = lines_of(synth_csv);
  ASSERT_GE(synth_rows.size(), 2u);
  EXPECT_EQ(synth_rows[1], "label,x0,x1");
  EXPECT_EQ(synth_rows.size(), 2u + 32u);
}

TEST(CliTest, PateJsonSummaryParses) {
  TempDir td("cli_pate_json");
  TempDir out("cli_pate_json_out");
  const CliResult r = run("pate --seed 3 --out " + out.str() + " --format json", td);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j.at("type"), "pate_summary");
  EXPECT_EQ(j.at("aggregations"), 26);
  EXPECT_EQ(j.at("foreign_accesses"), 0);
  EXPECT_TRUE(j.contains("epsilon_indep"));
  EXPECT_TRUE(j.contains("epsilon_dep_uncapped"));
  EXPECT_TRUE(j.contains("probe_accuracy"));
}

TEST(CliTest, PateImpossibleBudgetExitsThreeButStillWritesFiles) {
  TempDir td("cli_pate_zero");
  TempDir out("cli_pate_zero_out");
  const CliResult r =
      run("pate --seed 5 --dataset blobs8x8 --epsilon-target 1e-9 --out " + out.str(), td);
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  const auto kv = kv_lines(r.out);
  ASSERT_TRUE(kv.count("aggregations"));
  EXPECT_EQ(kv.at("aggregations"), "0");

  const std::string rounds_csv = read_file(out.path() / "pate_rounds.csv");
  const std::string synth_csv = read_file(out.path() / "pate_synthetic.csv");
  ASSERT_FALSE(rounds_csv.empty());
  ASSERT_FALSE(synth_csv.empty());
  // No aggregations happened: manifest comment plus header only.
  EXPECT_EQ(lines_of(rounds_csv).size(), 2u);
  // The --dataset flag reached the run: 64 features per record.
  const auto synth_rows = lines_of(synth_csv);
  ASSERT_GE(synth_rows.size(), 2u);
  EXPECT_TRUE(starts_with(synth_rows[1], "label,x0,"));
  EXPECT_NE(synth_rows[1].find(",x63"), std::string::npos);
  EXPECT_EQ(synth_rows[1].find(",x64"), std::string::npos);
}

TEST(CliTest, PateBadModeFailsBeforeWriting) {
  TempDir td("cli_pate_badmode");
  TempDir out("cli_pate_badmode_out");
  const CliResult r = run("pate --mode nonsense --out " + out.str(), td);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(out.path() / "pate_rounds.csv"));
}

TEST(CliTest, PateRerunsAndThreadCountsAreByteIdentical) {
  TempDir td("cli_pate_det");
  TempDir out1("cli_pate_det1");
  TempDir out2("cli_pate_det2");
  TempDir out3("cli_pate_det3");
  const auto cfg_path = td.path() / "pate.cfg";
  {
    std::ofstream f(cfg_path);
    f << "sigma=50\nk=1\nrecords=8\nprobe_every=1000000\nepsilon_target=0.5\n";
  }
  const std::string base = "pate --config " + cfg_path.string() + " --seed 9 --out ";
  ASSERT_EQ(run(base + out1.str(), td).exit_code, 0);
  ASSERT_EQ(run(base + out2.str(), td).exit_code, 0);
  ASSERT_EQ(run(base + out3.str() + " --threads 4", td).exit_code, 0);
  for (const char* name : {"pate_rounds.csv", "pate_ledger.jsonl", "pate_synthetic.csv"}) {
    const std::string a = read_file(out1.path() / name);
    ASSERT_FALSE(a.empty()) << name;
    EXPECT_EQ(a, read_file(out2.path() / name)) << name;
    // Thread count is an execution detail: same bytes, same config hash.
    EXPECT_EQ(a, read_file(out3.path() / name)) << name;
  }
}

TEST(CliTest, DpsgdSingleScenarioWritesControlTable) {
  TempDir td("cli_dpsgd");
  TempDir out("cli_dpsgd_out");
  const CliResult r = run(
      "dpsgd --seeds 2 --scenario ClippedSGD --train-n 64 --test-n 64 --feature-dim 5 --out " +
          out.str(),
      td);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto out_lines = lines_of(r.out);
  ASSERT_EQ(out_lines.size(), 1u);
  const auto toks = tokens_of(out_lines[0]);
  ASSERT_GE(toks.size(), 7u);
  EXPECT_EQ(toks[0], "ClippedSGD");
  EXPECT_EQ(toks[1], "mean_loss");
  EXPECT_EQ(toks[3], "std_loss");
  EXPECT_EQ(toks[5], "mean_accuracy");
  EXPECT_GT(std::stod(toks[2]), 0.0);

  const std::string csv = read_file(out.path() / "dpsgd_control.csv");
  ASSERT_FALSE(csv.empty());
  EXPECT_TRUE(starts_with(csv, kManifestPrefix));
  const auto rows = lines_of(csv);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1], "scenario,seed,final_loss,accuracy,epsilon,sigma,C,k,B,lr");
  EXPECT_TRUE(starts_with(rows[2], "ClippedSGD,1,"));
  EXPECT_TRUE(starts_with(rows[3], "ClippedSGD,2,"));
  // Non-private scenario: the epsilon column is infinite.
  EXPECT_NE(rows[2].find(",inf,"), std::string::npos);

  const std::string jsonl = read_file(out.path() / "dpsgd_control.jsonl");
  const auto jrows = lines_of(jsonl);
  ASSERT_EQ(jrows.size(), 3u);
  EXPECT_EQ(json::parse(jrows[0]).at("type"), "manifest");
  EXPECT_EQ(json::parse(jrows[0]).at("config_hash"), manifest_hash(csv));
  const json cell = json::parse(jrows[1]);
  EXPECT_EQ(cell.at("scenario"), "ClippedSGD");
  EXPECT_TRUE(cell.at("epsilon").is_null());
  EXPECT_TRUE(cell.at("final_loss").is_number());
}

TEST(CliTest, DpsgdPrivateScenarioReportsFiniteEpsilon) {
  TempDir td("cli_dpsgd_eps");
  TempDir out("cli_dpsgd_eps_out");
  const CliResult r = run(
      "dpsgd --seeds 1 --scenario GM_DP --train-n 64 --test-n 64 --feature-dim 5 --out " +
          out.str(),
      td);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto jrows = lines_of(read_file(out.path() / "dpsgd_control.jsonl"));
  ASSERT_EQ(jrows.size(), 2u);
  const json cell = json::parse(jrows[1]);
  EXPECT_EQ(cell.at("scenario"), "GM_DP");
  ASSERT_TRUE(cell.at("epsilon").is_number());
  EXPECT_GT(cell.at("epsilon").get<double>(), 0.0);
}

TEST(CliTest, DpsgdUsageErrorsExitTwo) {
  TempDir td("cli_dpsgd_usage");
  CliResult r = run("dpsgd --scenario Adam --seeds 1", td);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  // Training set size not divisible by the expected batch size.
  r = run("dpsgd --seeds 1 --scenario ClippedSGD --train-n 50 --test-n 32 --feature-dim 4", td);
  EXPECT_EQ(r.exit_code, 2);
  // Unknown key inside a config file.
  const auto cfg_path = td.path() / "bad.cfg";
  {
    std::ofstream f(cfg_path);
    f << "learning_rate=0.5\n";
  }
  r = run("dpsgd --config " + cfg_path.string() + " --seeds 1", td);
  EXPECT_EQ(r.exit_code, 2);
}

TEST(CliTest, ConvergenceDefaultsSatisfyBound) {
  TempDir td("cli_conv");
  TempDir out("cli_conv_out");
  const CliResult r = run("convergence --seeds 2 --out " + out.str(), td);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto kv = kv_lines(r.out);
  ASSERT_TRUE(kv.count("bound_passes"));
  EXPECT_EQ(kv.at("bound_passes"), "2/2");
  EXPECT_EQ(kv.at("aggregate_pass"), "true");
  EXPECT_GT(std::stod(kv.at("aggregate_rhs")), 0.0);

  const auto report = lines_of(read_file(out.path() / "convergence_report.jsonl"));
  ASSERT_EQ(report.size(), 4u);  // manifest, two seeds, aggregate
  EXPECT_EQ(json::parse(report[0]).at("type"), "manifest");
  for (size_t i = 1; i <= 2; ++i) {
    const json j = json::parse(report[i]);
    EXPECT_TRUE(j.at("pass").get<bool>());
    EXPECT_TRUE(j.at("complete").get<bool>());
    EXPECT_EQ(j.at("seed"), 1 + (i - 1));
    EXPECT_LE(j.at("lhs").get<double>(), j.at("rhs").get<double>());
  }
  const json agg = json::parse(report[3]);
  EXPECT_TRUE(agg.at("aggregate").get<bool>());
  EXPECT_TRUE(agg.at("pass").get<bool>());

  const auto summary = lines_of(read_file(out.path() / "convergence_summary.csv"));
  ASSERT_GE(summary.size(), 3u);
  EXPECT_TRUE(starts_with(summary[0], kManifestPrefix));
  EXPECT_EQ(summary[1], "k,term_noise,term_compression,lhs,rhs,pass");
  // Default dimension 50 sweeps k in {50,40,30,20,10,5}; every row passes.
  ASSERT_EQ(summary.size(), 2u + 6u);
  EXPECT_TRUE(starts_with(summary[2], "50,"));
  EXPECT_TRUE(starts_with(summary[7], "5,"));
  for (size_t i = 2; i < summary.size(); ++i) {
    EXPECT_EQ(summary[i].substr(summary[i].size() - 2), ",1") << summary[i];
  }

  const auto tau = lines_of(read_file(out.path() / "convergence_tau.csv"));
  ASSERT_GE(tau.size(), 12u);
  EXPECT_EQ(tau[1], "k,mean_tau,reference");
  EXPECT_TRUE(starts_with(tau.back(), "1000,"));
}

TEST(CliTest, CompressBenchSurveyAndRerunDeterminism) {
  TempDir td("cli_bench");
  TempDir out1("cli_bench_out1");
  TempDir out2("cli_bench_out2");
  const CliResult r = run("compress-bench --seed 3 --dims 64,256 --out " + out1.str(), td);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(lines_of(r.out).at(0), "rows 8");

  const std::string csv = read_file(out1.path() / "compress_bench.csv");
  ASSERT_FALSE(csv.empty());
  EXPECT_TRUE(starts_with(csv, kManifestPrefix));
  const auto rows = lines_of(csv);
  ASSERT_EQ(rows.size(), 2u + 8u);
  EXPECT_EQ(rows[1], "dim,method,bytes,relative_error");
  for (const char* method :
       {"topk_sto_sign", "sto_klevel_m2", "sto_klevel_m16", "count_sketch_r5"}) {
    EXPECT_NE(csv.find(std::string("64,") + method + ","), std::string::npos) << method;
    EXPECT_NE(csv.find(std::string("256,") + method + ","), std::string::npos) << method;
  }

  const auto jrows = lines_of(read_file(out1.path() / "compress_bench.jsonl"));
  ASSERT_EQ(jrows.size(), 1u + 8u);
  for (size_t i = 1; i < jrows.size(); ++i) {
    const json j = json::parse(jrows[i]);
    EXPECT_GT(j.at("bytes").get<uint64_t>(), 0u);
    EXPECT_GE(j.at("error").get<double>(), 0.0);
    EXPECT_TRUE(std::isfinite(j.at("error").get<double>()));
  }

  ASSERT_EQ(run("compress-bench --seed 3 --dims 64,256 --out " + out2.str(), td).exit_code, 0);
  EXPECT_EQ(csv, read_file(out2.path() / "compress_bench.csv"));
  EXPECT_EQ(read_file(out1.path() / "compress_bench.jsonl"),
            read_file(out2.path() / "compress_bench.jsonl"));
}

TEST(CliTest, CompressBenchRejectsBadDims) {
  TempDir td("cli_bench_bad");
  const CliResult r = run("compress-bench --dims 64,1", td);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(CliTest, OutputDirectoryFlagBeatsEnvironment) {
  TempDir td("cli_outdir");
  TempDir env_dir("cli_outdir_env");
  TempDir flag_dir("cli_outdir_flag");
  // Environment fallback applies when no flag is given.
  CliResult r = run_cli("DPGRAD_OUT_DIR=" + env_dir.str() + " " + cli() +
                            " compress-bench --seed 1 --dims 16",
                        td.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(env_dir.path() / "compress_bench.csv"));

  // An explicit --out wins over the environment.
  r = run_cli("DPGRAD_OUT_DIR=" + env_dir.str() + " " + cli() +
                  " compress-bench --seed 2 --dims 16 --out " + flag_dir.str(),
              td.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(flag_dir.path() / "compress_bench.csv"));
  // The env-dir copy still carries seed 1: the second run did not touch it.
  const std::string env_csv = read_file(env_dir.path() / "compress_bench.csv");
  EXPECT_NE(env_csv.find("seed=1"), std::string::npos);
}

}  // namespace
