// Writes a self-contained working example: a small planted-circuit model whose
// best omission set depends on the prompt's task, per-task calibration and
// held-out datasets, a prompt file, and a config.toml wired for the `pudding`
// CLI. Everything is deterministic for a fixed seed.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pudding/data.hpp"
#include "pudding/error.hpp"
#include "pudding/fixtures.hpp"
#include "pudding/model_io.hpp"

namespace {

using namespace pudding;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out << text;
  require(out.good(), ErrorKind::Io, "failed writing '" + path.string() + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"generate a planted-task fixture for the pudding CLI"};
  std::string out_dir = "fixture";
  PlantedSpec spec;
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--seed", spec.seed, "fixture seed")->capture_default_str();
  app.add_option("--tasks", spec.n_tasks, "number of planted tasks (1-3)")
      ->capture_default_str();
  app.add_option("--pairs", spec.pairs_per_task, "calibration pairs per task")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const PlantedFixture fixture = make_planted_fixture(spec);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);

    save_model(fixture.model, (dir / "model.pudw").string());

    std::string dataset_entries;
    for (std::size_t t = 0; t < fixture.calibration.size(); ++t) {
      const std::string name = fixture.calibration[t].name;
      save_pairs_jsonl(fixture.calibration[t].pairs, (dir / (name + ".jsonl")).string());
      save_pairs_jsonl(fixture.heldout[t].pairs, (dir / (name + "_heldout.jsonl")).string());
      if (t) dataset_entries += ", ";
      dataset_entries += "\"" + name + "=" + name + ".jsonl\"";
    }

    // Held-out prompts as whitespace-separated token ids, one per line.
    std::string prompts;
    for (const auto& dataset : fixture.heldout) {
      for (const auto& pair : dataset.pairs) {
        const TokenSequence prompt = pair.prompt();
        for (std::size_t i = 0; i < prompt.tokens.size(); ++i) {
          prompts += (i ? " " : "") + std::to_string(prompt.tokens[i]);
        }
        prompts += '\n';
      }
    }
    write_text(dir / "prompts.txt", prompts);

    write_text(dir / "config.toml",
               "model = \"model.pudw\"\n"
               "tokenizer = \"ids\"\n"
               "criterion = \"tl\"\n"
               "k = " + std::to_string(fixture.k) + "\n"
               "dataset = [" + dataset_entries + "]\n");

    std::cout << "fixture in " << out_dir << ": model.pudw, " << fixture.calibration.size()
              << " task datasets (+held-out), prompts.txt, config.toml\n"
              << "planted optima:";
    for (const auto& set : fixture.optimal_sets) {
      std::cout << " {";
      for (std::size_t i = 0; i < set.indices.size(); ++i) {
        std::cout << (i ? "," : "") << set.indices[i];
      }
      std::cout << "}";
    }
    std::cout << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
