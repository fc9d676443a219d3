#include "sfnmt/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "sfnmt/analysis.hpp"
#include "sfnmt/bpe.hpp"
#include "sfnmt/corpus.hpp"
#include "sfnmt/encoding.hpp"
#include "sfnmt/io.hpp"
#include "sfnmt/neural/decode.hpp"
#include "sfnmt/neural/gradcheck.hpp"
#include "sfnmt/neural/train.hpp"
#include "sfnmt/synth.hpp"
#include "sfnmt/vocab.hpp"

namespace sfnmt::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  return json::parse(in);
}

// Every run records its resolved configuration next to its outputs, so a
// run can be reproduced from the artifact alone.
void write_run_config(const fs::path& path, const std::string& subcommand, json options) {
  json run = {{"tool", "sfnmt"}, {"subcommand", subcommand}, {"options", std::move(options)}};
  write_file(path, run.dump(2) + "\n");
}

std::unordered_map<std::string, std::uint64_t> collect_word_frequencies(
    const std::vector<std::string>& inputs, const std::string& format) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& input : inputs) {
    if (format == "annotated") {
      for (const auto& sentence : load_annotated_corpus(input))
        for (const auto& token : sentence.tokens) ++counts[token.surface];
    } else {
      for (const auto& line : read_lines(input)) {
        std::istringstream words(line);
        std::string word;
        while (words >> word) ++counts[word];
      }
    }
  }
  return counts;
}

std::unordered_map<std::string, std::uint64_t> collect_target_counts(
    const std::vector<std::string>& lines) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& line : lines) {
    std::istringstream words(line);
    std::string word;
    while (words >> word) ++counts[word];
  }
  return counts;
}

neural::Scheme parse_scheme(const std::string& name) {
  auto scheme = neural::scheme_from_string(name);
  if (!scheme) throw CLI::ValidationError("--scheme", "unknown scheme '" + name + "'");
  return *scheme;
}

struct VocabSet {
  std::optional<Vocabulary> lemma, feature, subword, combination, target;
};

VocabSet load_vocabs(const fs::path& dir, neural::Scheme scheme, bool need_target) {
  VocabSet v;
  v.subword = load_vocab(dir / "subword.vocab");
  if (scheme == neural::Scheme::sparse) {
    v.lemma = load_vocab(dir / "lemma.vocab");
    v.feature = load_vocab(dir / "feature.vocab");
  }
  if (scheme == neural::Scheme::factored) v.combination = load_vocab(dir / "combination.vocab");
  if (need_target) v.target = load_vocab(dir / "target.vocab");
  return v;
}

// Eval-time encoding (linguistic dropout disabled for sparse).
neural::SourceInput encode_for_eval(const AnnotatedSentence& sentence, neural::Scheme scheme,
                                    const VocabSet& vocabs, const MergeTable& merges,
                                    std::size_t sentence_index) {
  neural::SourceInput input;
  input.scheme = scheme;
  switch (scheme) {
    case neural::Scheme::sparse: {
      LinguisticDropoutConfig off{0.0, 0};
      input.tokens = encode_sentence_sparse(sentence, *vocabs.lemma, *vocabs.feature,
                                            *vocabs.subword, merges, off, 0, sentence_index);
      break;
    }
    case neural::Scheme::bpe:
      input.tokens = encode_sentence_bpe(sentence, *vocabs.subword, merges);
      break;
    case neural::Scheme::factored:
      input.factored =
          encode_sentence_factored_baseline(sentence, *vocabs.subword, *vocabs.combination, merges);
      break;
  }
  return input;
}

neural::ModelConfig preset_config(const std::string& name) {
  if (name == "desk") return neural::desk_preset();
  if (name == "paper-de-en") return neural::paper_de_en_preset();
  if (name == "paper-eu-es") return neural::paper_eu_es_preset();
  throw CLI::ValidationError("--preset", "unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

void setup_learn_bpe(CLI::App& app) {
  auto* sub = app.add_subcommand("learn-bpe", "Learn byte-pair-encoding merge operations");
  auto inputs = std::make_shared<std::vector<std::string>>();
  auto format = std::make_shared<std::string>("text");
  auto merges = std::make_shared<int>(-1);
  auto marker = std::make_shared<std::string>("@@");
  auto output = std::make_shared<std::string>();
  sub->add_option("--input", *inputs, "Input file(s); two files learn one joint table")
      ->required();
  sub->add_option("--format", *format, "Input format")
      ->check(CLI::IsMember({"text", "annotated"}))
      ->capture_default_str();
  sub->add_option("--merges", *merges, "Number of merge operations")->required();
  sub->add_option("--marker", *marker, "Continuation marker")->capture_default_str();
  sub->add_option("--output", *output, "Merge table file to write")->required();
  sub->callback([=] {
    if (*merges < 0) throw CLI::ValidationError("--merges", "must be non-negative");
    auto counts = collect_word_frequencies(*inputs, *format);
    MergeTable table = learn_bpe(counts, static_cast<std::size_t>(*merges), *marker);
    save_merge_table(table, fs::path(*output));
    write_run_config(*output + ".run.json", "learn-bpe",
                     {{"input", *inputs},
                      {"format", *format},
                      {"merges", *merges},
                      {"marker", *marker},
                      {"output", *output},
                      {"learned_merges", table.merges.size()}});
  });
}

void setup_build_vocabs(CLI::App& app) {
  auto* sub = app.add_subcommand("build-vocabs", "Build lemma/feature/subword/combination vocabularies");
  auto annotated = std::make_shared<std::string>();
  auto merges_path = std::make_shared<std::string>();
  auto out_dir = std::make_shared<std::string>();
  auto lemma_min_freq = std::make_shared<std::uint64_t>(2);
  auto subword_min_freq = std::make_shared<std::uint64_t>(1);
  auto lemma_max_size = std::make_shared<std::int64_t>(0);
  auto target_text = std::make_shared<std::string>();
  auto target_merges = std::make_shared<std::string>();
  sub->add_option("--annotated", *annotated, "Annotated source corpus")->required();
  sub->add_option("--merges", *merges_path, "Source merge table")->required();
  sub->add_option("--out-dir", *out_dir, "Output directory")->required();
  sub->add_option("--min-freq", *lemma_min_freq, "Lemma frequency cutoff")->capture_default_str();
  sub->add_option("--subword-min-freq", *subword_min_freq, "Subword frequency cutoff")
      ->capture_default_str();
  sub->add_option("--lemma-max-size", *lemma_max_size, "Lemma vocabulary size cap (0 = none)")
      ->capture_default_str();
  sub->add_option("--target-text", *target_text, "Plain target corpus for target.vocab");
  sub->add_option("--target-merges", *target_merges, "Target merge table");
  sub->callback([=] {
    AnnotatedCorpus corpus = load_annotated_corpus(*annotated);
    MergeTable merges = load_merge_table(fs::path(*merges_path));
    fs::create_directories(*out_dir);
    std::optional<std::size_t> max_size;
    if (*lemma_max_size > 0) max_size = static_cast<std::size_t>(*lemma_max_size);
    save_vocab(build_lemma_vocab(corpus, *lemma_min_freq, max_size),
               fs::path(*out_dir) / "lemma.vocab");
    save_vocab(build_feature_vocab(corpus), fs::path(*out_dir) / "feature.vocab");
    save_vocab(build_subword_vocab(corpus, merges, *subword_min_freq),
               fs::path(*out_dir) / "subword.vocab");
    save_vocab(build_combination_vocab(corpus), fs::path(*out_dir) / "combination.vocab");
    if (!target_text->empty()) {
      if (target_merges->empty())
        throw CLI::ValidationError("--target-merges", "required with --target-text");
      MergeTable tmerges = load_merge_table(fs::path(*target_merges));
      auto lines = read_lines(*target_text);
      save_vocab(build_subword_vocab_text(lines, tmerges, 1),
                 fs::path(*out_dir) / "target.vocab");
    }
    write_run_config(fs::path(*out_dir) / "run.json", "build-vocabs",
                     {{"annotated", *annotated},
                      {"merges", *merges_path},
                      {"out_dir", *out_dir},
                      {"min_freq", *lemma_min_freq},
                      {"subword_min_freq", *subword_min_freq},
                      {"lemma_max_size", *lemma_max_size},
                      {"target_text", *target_text},
                      {"target_merges", *target_merges}});
  });
}

void setup_encode(CLI::App& app) {
  auto* sub = app.add_subcommand("encode", "Encode an annotated corpus to id sequences");
  auto scheme_name = std::make_shared<std::string>("sparse");
  auto annotated = std::make_shared<std::string>();
  auto merges_path = std::make_shared<std::string>();
  auto vocab_dir = std::make_shared<std::string>();
  auto ld_p = std::make_shared<double>(-1.0);
  auto seed = std::make_shared<std::uint64_t>(0);
  auto epoch = std::make_shared<std::uint64_t>(0);
  auto output = std::make_shared<std::string>();
  sub->add_option("--scheme", *scheme_name, "Encoding scheme: sparse|bpe|factored")
      ->check(CLI::IsMember({"sparse", "bpe", "factored"}))
      ->capture_default_str();
  sub->add_option("--annotated", *annotated, "Annotated source corpus")->required();
  sub->add_option("--merges", *merges_path, "Merge table")->required();
  sub->add_option("--vocab-dir", *vocab_dir, "Directory with .vocab files")->required();
  sub->add_option("--ld-p", *ld_p, "Linguistic dropout probability (sparse; default 0.25)");
  sub->add_option("--seed", *seed, "Linguistic dropout seed")->capture_default_str();
  sub->add_option("--epoch", *epoch, "Epoch index for the dropout counter")
      ->capture_default_str();
  sub->add_option("--output", *output, "Encoded corpus file")->required();
  sub->callback([=] {
    const neural::Scheme scheme = parse_scheme(*scheme_name);
    const double p = (*ld_p < 0.0) ? 0.25 : *ld_p;
    if (p < 0.0 || p > 1.0) throw CLI::ValidationError("--ld-p", "must be in [0, 1]");
    AnnotatedCorpus corpus = load_annotated_corpus(*annotated);
    MergeTable merges = load_merge_table(fs::path(*merges_path));
    VocabSet vocabs = load_vocabs(*vocab_dir, scheme, /*need_target=*/false);

    std::ofstream out(*output, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write output: " + *output);
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      switch (scheme) {
        case neural::Scheme::sparse: {
          LinguisticDropoutConfig ld{p, *seed};
          out << render_encoded_sentence(encode_sentence_sparse(
                     corpus[s], *vocabs.lemma, *vocabs.feature, *vocabs.subword, merges, ld,
                     *epoch, s))
              << '\n';
          break;
        }
        case neural::Scheme::bpe:
          out << render_encoded_sentence(encode_sentence_bpe(corpus[s], *vocabs.subword, merges))
              << '\n';
          break;
        case neural::Scheme::factored:
          out << render_factored_sentence(encode_sentence_factored_baseline(
                     corpus[s], *vocabs.subword, *vocabs.combination, merges))
              << '\n';
          break;
      }
    }
    out.close();
    write_run_config(*output + ".run.json", "encode",
                     {{"scheme", *scheme_name},
                      {"annotated", *annotated},
                      {"merges", *merges_path},
                      {"vocab_dir", *vocab_dir},
                      {"ld_p", p},
                      {"seed", *seed},
                      {"epoch", *epoch},
                      {"output", *output}});
  });
}

void setup_analyze(CLI::App& app) {
  auto* sub = app.add_subcommand("analyze", "Combination vs feature sparsity statistics");
  auto annotated = std::make_shared<std::string>();
  auto out_dir = std::make_shared<std::string>();
  sub->add_option("--annotated", *annotated, "Annotated corpus")->required();
  sub->add_option("--out-dir", *out_dir, "Directory for the CSV files")->required();
  sub->callback([=] {
    AnnotatedCorpus corpus = load_annotated_corpus(*annotated);
    SparsityReport report = sparsity_report(corpus);
    export_report(report, *out_dir);
    std::cout << "distinct combinations: " << report.distinct_combinations << '\n'
              << "distinct features:     " << report.distinct_features << '\n';
    write_run_config(fs::path(*out_dir) / "run.json", "analyze",
                     {{"annotated", *annotated},
                      {"out_dir", *out_dir},
                      {"distinct_combinations", report.distinct_combinations},
                      {"distinct_features", report.distinct_features}});
  });
}

void setup_synth(CLI::App& app) {
  auto* sub = app.add_subcommand("synth", "Generate a synthetic parallel corpus");
  auto out_dir = std::make_shared<std::string>();
  auto config_path = std::make_shared<std::string>();
  auto seed = std::make_shared<std::int64_t>(-1);
  auto train_sentences = std::make_shared<int>(-1);
  auto coverage = std::make_shared<double>(-1.0);
  sub->add_option("--out-dir", *out_dir, "Output directory")->required();
  sub->add_option("--config", *config_path, "Synth config JSON");
  sub->add_option("--seed", *seed, "Generator seed override");
  sub->add_option("--train-sentences", *train_sentences, "Train split size override");
  sub->add_option("--coverage", *coverage, "Train combination coverage override");
  sub->callback([=] {
    SynthConfig cfg;
    if (!config_path->empty()) cfg = synth_config_from_json(load_json_file(*config_path));
    if (*seed >= 0) cfg.seed = static_cast<std::uint64_t>(*seed);
    if (*train_sentences >= 0) cfg.train_sentences = *train_sentences;
    if (*coverage >= 0.0) cfg.train_combination_coverage = *coverage;
    SynthDataset dataset = generate(cfg);
    write_dataset(dataset, *out_dir);
    write_run_config(fs::path(*out_dir) / "run.json", "synth",
                     {{"out_dir", *out_dir}, {"config", synth_config_to_json(cfg)}});
  });
}

void setup_train(CLI::App& app) {
  auto* sub = app.add_subcommand("train", "Train a translation model");
  struct Opts {
    std::string scheme = "sparse";
    std::string train_src, train_tgt, merges, target_merges, vocab_dir, out_dir;
    std::string preset = "desk";
    std::string config_path, resume;
    int epochs = 20;
    double ld_p = 0.25;
    std::uint64_t ld_seed = 0;
    std::int64_t seed = -1;
    int batch_tokens = -1;
    double dropout = -1.0;
    double lr_factor = -1.0;
    int warmup_steps = -1;
    double label_smoothing = -1.0;
    double clip_norm = -1.0;
    int layers = -1, heads = -1, dim = -1, ffn_dim = -1, max_positions = -1;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--scheme", o->scheme, "Encoding scheme")
      ->check(CLI::IsMember({"sparse", "bpe", "factored"}))
      ->capture_default_str();
  sub->add_option("--train-src", o->train_src, "Annotated source corpus")->required();
  sub->add_option("--train-tgt", o->train_tgt, "Plain target corpus")->required();
  sub->add_option("--merges", o->merges, "Source merge table")->required();
  sub->add_option("--target-merges", o->target_merges, "Target merge table (default: --merges)");
  sub->add_option("--vocab-dir", o->vocab_dir, "Directory with .vocab files")->required();
  sub->add_option("--out-dir", o->out_dir, "Output directory")->required();
  sub->add_option("--preset", o->preset, "Config preset: desk|paper-de-en|paper-eu-es")
      ->capture_default_str();
  sub->add_option("--config", o->config_path, "Model config JSON overlay");
  sub->add_option("--resume", o->resume, "Checkpoint to continue from");
  sub->add_option("--epochs", o->epochs, "Training epochs")->capture_default_str();
  sub->add_option("--ld-p", o->ld_p, "Linguistic dropout probability")->capture_default_str();
  sub->add_option("--ld-seed", o->ld_seed, "Linguistic dropout seed")->capture_default_str();
  sub->add_option("--seed", o->seed, "Model/init seed");
  sub->add_option("--batch-tokens", o->batch_tokens, "Token budget per batch");
  sub->add_option("--dropout", o->dropout, "Dropout rate");
  sub->add_option("--lr-factor", o->lr_factor, "Learning-rate factor");
  sub->add_option("--warmup-steps", o->warmup_steps, "Warmup steps");
  sub->add_option("--label-smoothing", o->label_smoothing, "Label smoothing");
  sub->add_option("--clip-norm", o->clip_norm, "Gradient clip norm (0 disables)");
  sub->add_option("--layers", o->layers, "Encoder/decoder layers");
  sub->add_option("--heads", o->heads, "Attention heads");
  sub->add_option("--dim", o->dim, "Model dimension");
  sub->add_option("--ffn-dim", o->ffn_dim, "Feedforward dimension");
  sub->add_option("--max-positions", o->max_positions, "Maximum sequence length");
  sub->callback([=] {
    const neural::Scheme scheme = parse_scheme(o->scheme);
    fs::create_directories(o->out_dir);

    AnnotatedCorpus source = load_annotated_corpus(o->train_src);
    auto target_lines = read_lines(o->train_tgt);
    if (source.size() != target_lines.size())
      throw std::runtime_error("train: source/target line counts differ");
    MergeTable merges = load_merge_table(fs::path(o->merges));
    MergeTable tmerges = o->target_merges.empty() ? merges
                                                  : load_merge_table(fs::path(o->target_merges));
    VocabSet vocabs = load_vocabs(o->vocab_dir, scheme, /*need_target=*/true);

    neural::TrainingData data;
    data.source = &source;
    data.target_ids = neural::encode_target_lines(target_lines, *vocabs.target, tmerges);
    data.subword_vocab = &*vocabs.subword;
    if (vocabs.lemma) data.lemma_vocab = &*vocabs.lemma;
    if (vocabs.feature) data.feature_vocab = &*vocabs.feature;
    if (vocabs.combination) data.combination_vocab = &*vocabs.combination;
    data.merges = &merges;

    neural::TrainOptions options;
    options.epochs = o->epochs;
    options.ld = {o->ld_p, o->ld_seed};

    std::optional<neural::Model> model;
    neural::AdamState state;
    if (!o->resume.empty()) {
      auto loaded = neural::load_checkpoint(o->resume);
      model.emplace(std::move(loaded.model));
      state = std::move(loaded.state);
      options.start_epoch = loaded.epoch;
    } else {
      neural::ModelConfig cfg = preset_config(o->preset);
      if (!o->config_path.empty()) {
        json merged = cfg.to_json();
        merged.update(load_json_file(o->config_path));
        cfg = neural::ModelConfig::from_json(merged);
      }
      if (o->seed >= 0) cfg.seed = static_cast<std::uint64_t>(o->seed);
      if (o->batch_tokens > 0) cfg.batch_tokens = o->batch_tokens;
      if (o->dropout >= 0.0) cfg.dropout = o->dropout;
      if (o->lr_factor >= 0.0) cfg.lr_factor = o->lr_factor;
      if (o->warmup_steps > 0) cfg.warmup_steps = o->warmup_steps;
      if (o->label_smoothing >= 0.0) cfg.label_smoothing = o->label_smoothing;
      if (o->clip_norm >= 0.0) cfg.clip_norm = o->clip_norm;
      if (o->layers > 0) cfg.layers = o->layers;
      if (o->heads > 0) cfg.heads = o->heads;
      if (o->dim > 0) cfg.dim = o->dim;
      if (o->ffn_dim > 0) cfg.ffn_dim = o->ffn_dim;
      if (o->max_positions > 0) cfg.max_positions = o->max_positions;
      cfg.scheme = scheme;
      cfg.subword_vocab = vocabs.subword->size();
      if (vocabs.lemma) cfg.lemma_vocab = vocabs.lemma->size();
      if (vocabs.feature) cfg.feature_vocab = vocabs.feature->size();
      if (vocabs.combination) cfg.combination_vocab = vocabs.combination->size();
      cfg.target_vocab = vocabs.target->size();
      model.emplace(neural::Model::init(cfg));
      state = neural::AdamState::like(cfg);
    }

    std::ofstream log(fs::path(o->out_dir) / "train.log",
                      o->resume.empty() ? std::ios::trunc : std::ios::app);
    options.log = &log;
    auto stats = neural::train(*model, state, data, options);

    const fs::path ckpt = fs::path(o->out_dir) / "model.ckpt";
    neural::save_checkpoint(ckpt, *model, state, options.start_epoch + options.epochs);

    write_run_config(fs::path(o->out_dir) / "run.json", "train",
                     {{"scheme", o->scheme},
                      {"train_src", o->train_src},
                      {"train_tgt", o->train_tgt},
                      {"merges", o->merges},
                      {"target_merges", o->target_merges},
                      {"vocab_dir", o->vocab_dir},
                      {"out_dir", o->out_dir},
                      {"epochs", o->epochs},
                      {"start_epoch", options.start_epoch},
                      {"ld_p", o->ld_p},
                      {"ld_seed", o->ld_seed},
                      {"model", model->config().to_json()},
                      {"final_loss", stats.empty() ? 0.0 : stats.back().loss},
                      {"final_token_accuracy",
                       stats.empty() ? 0.0 : stats.back().token_accuracy}});
    std::cout << "trained " << options.epochs << " epochs; final loss "
              << (stats.empty() ? 0.0 : stats.back().loss) << ", checkpoint " << ckpt.string()
              << '\n';
  });
}

void setup_decode(CLI::App& app) {
  auto* sub = app.add_subcommand("decode", "Greedy-decode an annotated corpus");
  struct Opts {
    std::string checkpoint, input, vocab_dir, merges, target_merges, output, reference;
    int max_len = 256;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--checkpoint", o->checkpoint, "Model checkpoint")->required();
  sub->add_option("--input", o->input, "Annotated source corpus")->required();
  sub->add_option("--vocab-dir", o->vocab_dir, "Directory with .vocab files")->required();
  sub->add_option("--merges", o->merges, "Source merge table")->required();
  sub->add_option("--target-merges", o->target_merges,
                  "Target merge table (for --reference scoring; default: --merges)");
  sub->add_option("--output", o->output, "Decoded text output")->required();
  sub->add_option("--reference", o->reference, "Reference target text to score against");
  sub->add_option("--max-len", o->max_len, "Maximum decode length")->capture_default_str();
  sub->callback([=] {
    auto loaded = neural::load_checkpoint(o->checkpoint);
    const neural::Scheme scheme = loaded.model.config().scheme;
    AnnotatedCorpus corpus = load_annotated_corpus(o->input);
    MergeTable merges = load_merge_table(fs::path(o->merges));
    VocabSet vocabs = load_vocabs(o->vocab_dir, scheme, /*need_target=*/true);

    std::vector<std::vector<std::int32_t>> hyps;
    hyps.reserve(corpus.size());
    std::ofstream out(o->output, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write output: " + o->output);
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      auto src = encode_for_eval(corpus[s], scheme, vocabs, merges, s);
      auto ids = neural::greedy_decode(loaded.model, src, o->max_len);
      out << neural::detokenize_subwords(ids, *vocabs.target, merges.marker) << '\n';
      hyps.push_back(std::move(ids));
    }
    out.close();

    json run = {{"checkpoint", o->checkpoint}, {"input", o->input},
                {"vocab_dir", o->vocab_dir},   {"merges", o->merges},
                {"output", o->output},         {"max_len", o->max_len}};
    if (!o->reference.empty()) {
      MergeTable tmerges = o->target_merges.empty()
                               ? merges
                               : load_merge_table(fs::path(o->target_merges));
      auto refs = neural::encode_target_lines(read_lines(o->reference), *vocabs.target, tmerges);
      if (refs.size() != hyps.size())
        throw std::runtime_error("decode: reference line count differs from input");
      const double tok = neural::token_accuracy(hyps, refs);
      const double seq = neural::sequence_accuracy(hyps, refs);
      std::cout << "token_accuracy\t" << tok << "\nsequence_accuracy\t" << seq << '\n';
      run["reference"] = o->reference;
      run["token_accuracy"] = tok;
      run["sequence_accuracy"] = seq;
    }
    write_run_config(o->output + ".run.json", "decode", run);
  });
}

void setup_grad_check(CLI::App& app) {
  auto* sub = app.add_subcommand("grad-check",
                                 "Finite-difference verification of the backward pass");
  struct Opts {
    std::string scheme = "sparse";
    std::string preset = "desk";
    std::uint64_t seed = 0;
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    std::size_t coords = 200;
    int sentences = 4;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--scheme", o->scheme, "Encoding scheme")
      ->check(CLI::IsMember({"sparse", "bpe", "factored"}))
      ->capture_default_str();
  sub->add_option("--preset", o->preset, "Config preset")->capture_default_str();
  sub->add_option("--seed", o->seed, "Seed")->capture_default_str();
  sub->add_option("--epsilon", o->epsilon, "Finite-difference step")->capture_default_str();
  sub->add_option("--tolerance", o->tolerance, "Relative-error tolerance")
      ->capture_default_str();
  sub->add_option("--coords", o->coords, "Minimum coordinates to check")->capture_default_str();
  sub->add_option("--sentences", o->sentences, "Batch sentences")->capture_default_str();
  sub->callback([=] {
    const neural::Scheme scheme = parse_scheme(o->scheme);

    // Self-contained setup on a small deterministic synthetic corpus.
    SynthConfig synth_cfg;
    synth_cfg.lemma_count = 8;
    synth_cfg.slot_value_counts = {3, 3};
    synth_cfg.train_sentences = 40;
    synth_cfg.valid_sentences = 0;
    synth_cfg.test_in_sentences = 0;
    synth_cfg.test_out_sentences = 0;
    synth_cfg.seed = o->seed + 17;
    SynthDataset dataset = generate(synth_cfg);

    std::unordered_map<std::string, std::uint64_t> src_counts;
    for (const auto& sentence : dataset.train.source)
      for (const auto& token : sentence.tokens) ++src_counts[token.surface];
    MergeTable merges = learn_bpe(src_counts, 40);
    Vocabulary lemma_vocab = build_lemma_vocab(dataset.train.source, 1);
    Vocabulary feature_vocab = build_feature_vocab(dataset.train.source);
    Vocabulary subword_vocab = build_subword_vocab(dataset.train.source, merges);
    Vocabulary combination_vocab = build_combination_vocab(dataset.train.source);
    MergeTable tmerges =
        learn_bpe(collect_target_counts(dataset.train.target_lines), 30);
    Vocabulary target_vocab = build_subword_vocab_text(dataset.train.target_lines, tmerges, 1);

    neural::ModelConfig cfg = preset_config(o->preset);
    cfg.scheme = scheme;
    cfg.dropout = 0.0;
    cfg.seed = o->seed + 1;
    cfg.lemma_vocab = lemma_vocab.size();
    cfg.feature_vocab = feature_vocab.size();
    cfg.subword_vocab = subword_vocab.size();
    cfg.combination_vocab = combination_vocab.size();
    cfg.target_vocab = target_vocab.size();
    neural::Model model = neural::Model::init(cfg);

    neural::GradCheckBatch batch;
    auto targets = neural::encode_target_lines(dataset.train.target_lines, target_vocab, tmerges);
    const int n = std::min<int>(o->sentences, static_cast<int>(dataset.train.source.size()));
    for (int s = 0; s < n; ++s) {
      neural::SourceInput input;
      input.scheme = scheme;
      if (scheme == neural::Scheme::factored) {
        input.factored = encode_sentence_factored_baseline(dataset.train.source[s], subword_vocab,
                                                           combination_vocab, merges);
      } else if (scheme == neural::Scheme::bpe) {
        input.tokens = encode_sentence_bpe(dataset.train.source[s], subword_vocab, merges);
      } else {
        LinguisticDropoutConfig ld{0.3, o->seed};  // mix lemma and subword paths
        input.tokens = encode_sentence_sparse(dataset.train.source[s], lemma_vocab, feature_vocab,
                                              subword_vocab, merges, ld, 0, s);
      }
      batch.sources.push_back(std::move(input));
      batch.targets.push_back(targets[s]);
    }

    auto report = neural::grad_check(model, batch, o->epsilon, o->tolerance, o->coords, o->seed);
    std::cout << "coordinates checked: " << report.coords_checked << '\n'
              << "max relative error:  " << report.max_rel_error << " (tolerance "
              << report.tolerance << ")\n";
    if (report.sum_identity_checked)
      std::cout << "sum-aggregation gradient identity: "
                << (report.sum_identity_ok ? "exact" : "VIOLATED") << '\n';
    for (const auto& w : report.worst)
      std::cout << "  " << w.tensor << "(" << w.row << "," << w.col << ") analytic " << w.analytic
                << " numeric " << w.numeric << " rel " << w.rel_error << '\n';
    std::cout << (report.passed() ? "grad-check PASSED" : "grad-check FAILED") << '\n';
  });
}

}  // namespace

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Sparsely factored NMT toolkit: BPE, vocabularies, source encodings, "
               "sparsity analytics, synthetic corpora and a desk-scale transformer",
               "sfnmt"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads,
                 "Accepted for interface stability; computation is single-threaded and "
                 "bitwise deterministic")
      ->check(CLI::PositiveNumber);

  setup_learn_bpe(app);
  setup_build_vocabs(app);
  setup_encode(app);
  setup_analyze(app);
  setup_synth(app);
  setup_train(app);
  setup_decode(app);
  setup_grad_check(app);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace sfnmt::cli
