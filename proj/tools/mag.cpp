// mag: dataset, train, generate, evaluate and bench subcommands.
//
// Exit status: 0 success, 1 usage error, 2 validation error, 3 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mag/pipeline.hpp"

namespace {

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw mag::ValidationError("cannot open '" + path + "' for writing");
  os << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale autoregressive graph generation"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run configuration file");
    cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "Random seed");
    cmd->add_option("--out", out, "Output path");
  };

  auto* dataset = app.add_subcommand("dataset", "Build a dataset file");
  add_common(dataset);
  std::string dataset_name = "community_small", dataset_input;
  dataset->add_option("--name", dataset_name, "community_small or from_file")->check(CLI::IsMember({"community_small", "from_file"}));
  dataset->add_option("--input", dataset_input, "Source JSON-Lines file for from_file");

  auto* train = app.add_subcommand("train", "Train the tokenizer or the transformer");
  add_common(train);
  std::string stage, data_path, log_path, tokenizer_ckpt;
  bool resume = false, quiet = false;
  train->add_option("--stage", stage, "tokenizer or transformer")->required()->check(CLI::IsMember({"tokenizer", "transformer"}));
  train->add_option("--data", data_path, "Training graphs (default: rebuild the configured dataset)");
  train->add_option("--log", log_path, "Per-epoch metrics CSV (default: <out>.metrics.csv)");
  train->add_option("--tokenizer", tokenizer_ckpt, "Tokenizer checkpoint (transformer stage)");
  train->add_flag("--resume", resume, "Continue from the checkpoint at --out");
  train->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  auto* generate = app.add_subcommand("generate", "Sample graphs");
  add_common(generate);
  std::size_t count = 50, nodes = 0;
  int class_label = 0;
  std::string transformer_ckpt;
  generate->add_option("--count", count, "Number of graphs")->check(CLI::PositiveNumber);
  generate->add_option("--class", class_label, "Class label");
  generate->add_option("--nodes", nodes, "Fixed node count (default: training size histogram)");
  generate->add_option("--tokenizer", tokenizer_ckpt, "Tokenizer checkpoint");
  generate->add_option("--transformer", transformer_ckpt, "Transformer checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "Compare generated graphs with a reference set");
  add_common(evaluate);
  std::string generated_path, reference_path, csv_path;
  evaluate->add_option("generated", generated_path, "Generated graphs")->required();
  evaluate->add_option("reference", reference_path, "Reference graphs")->required();
  evaluate->add_option("--csv", csv_path, "Per-graph statistics CSV");

  auto* bench = app.add_subcommand("bench", "Attention cost curve");
  add_common(bench);
  std::size_t max_n = 256;
  bench->add_option("--max-n", max_n, "Largest N")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    mag::RunConfig cfg = config_path.empty() ? mag::RunConfig{} : mag::load_config(config_path);
    if (seed_given) cfg.seed = seed;

    if (dataset->parsed()) {
      cfg.dataset = dataset_name;
      if (out.empty()) {
        std::filesystem::create_directories(mag::default_data_dir());
        out = (std::filesystem::path(mag::default_data_dir()) / (dataset_name + ".jsonl")).string();
      }
      const auto graphs = mag::build_dataset(cfg, cfg.seed, dataset_name == "from_file" ? dataset_input : "");
      mag::save_graph_file(out, graphs);
      std::cerr << "wrote " << graphs.size() << " graphs to " << out << '\n';
    } else if (train->parsed()) {
      mag::StageOptions opt;
      opt.data_path = data_path;
      opt.metrics_log = log_path;
      opt.resume = resume;
      opt.progress = quiet ? nullptr : &std::cerr;
      if (stage == "tokenizer") {
        opt.checkpoint = out.empty() ? cfg.tokenizer_checkpoint : out;
        const auto s = mag::train_tokenizer_stage(cfg, opt);
        std::cout << "epochs = " << s.epochs_done << "\nfinal_loss = " << s.final_loss
                  << "\ntrain_edge_accuracy = " << s.final_accuracy << "\ntest_edge_accuracy = " << s.test_edge_accuracy
                  << "\ntest_node_accuracy = " << s.test_node_accuracy << '\n';
      } else {
        opt.checkpoint = out.empty() ? cfg.transformer_checkpoint : out;
        opt.tokenizer_checkpoint = tokenizer_ckpt.empty() ? cfg.tokenizer_checkpoint : tokenizer_ckpt;
        const auto s = mag::train_transformer_stage(cfg, opt);
        std::cout << "epochs = " << s.epochs_done << "\nfinal_loss = " << s.final_loss
                  << "\ntrain_token_accuracy = " << s.final_accuracy << "\ntest_token_accuracy = " << s.test_token_accuracy
                  << '\n';
      }
    } else if (generate->parsed()) {
      mag::GenerateOptions opt;
      opt.tokenizer_checkpoint = tokenizer_ckpt.empty() ? cfg.tokenizer_checkpoint : tokenizer_ckpt;
      opt.transformer_checkpoint = transformer_ckpt.empty() ? cfg.transformer_checkpoint : transformer_ckpt;
      opt.count = count;
      opt.class_label = class_label;
      opt.seed = cfg.seed;
      opt.nodes = nodes;
      const auto set = mag::generate_samples(cfg, opt);
      if (out.empty() || out == "-") mag::write_graph_stream(std::cout, set.graphs, set.meta);
      else mag::save_graph_file(out, set.graphs, set.meta);
    } else if (evaluate->parsed()) {
      const auto gen = mag::load_graph_file(generated_path).graphs;
      const auto ref = mag::load_graph_file(reference_path).graphs;
      if (gen.empty() || ref.empty()) throw mag::ValidationError("evaluate: both files must contain graphs");
      const auto report = mag::evaluate_sets(gen, ref, cfg);
      write_text(out, report.text());
      if (!csv_path.empty()) write_text(csv_path, report.per_graph_csv);
    } else if (bench->parsed()) {
      write_text(out, mag::bench_csv(max_n));
      const auto fit = mag::bench_fit_sizes(max_n);
      if (fit.size() >= 4) {
        const auto [node, scale] = mag::fit_scaling_exponents(mag::cost_curve(fit));
        std::cerr << "node_wise_slope = " << node << "\nscale_wise_slope = " << scale << '\n';
      }
    }
  } catch (const mag::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const mag::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const mag::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const mag::DimensionError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
