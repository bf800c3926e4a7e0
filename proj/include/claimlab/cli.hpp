#pragma once

// Command-line front end. Every verb goes through the same Engine calls as the
// HTTP service, so both produce identical payloads for identical inputs.

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "claimlab/engine.hpp"
#include "claimlab/server.hpp"

namespace claimlab {

namespace detail {

inline std::vector<ChoiceObservation> read_observations(std::istream& in) {
  std::vector<ChoiceObservation> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      if (!j.contains("set")) continue;  // study header
      ChoiceObservation o;
      o.set.set_index = out.size();
      o.set.item_ids = j.at("set").get<std::vector<std::string>>();
      o.response = {o.set.set_index, j.at("best").get<std::string>(), j.at("worst").get<std::string>()};
      validate_response(o.set, o.response);
      out.push_back(std::move(o));
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(n) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::map<std::string, double> read_id_values(const std::filesystem::path& path, const char* value_key) {
  auto in = open_for_reading(path);
  std::map<std::string, double> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      if (!out.emplace(j.at("claim_id").get<std::string>(), j.at(value_key).get<double>()).second)
        throw ValidationError("repeated claim id");
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + " line " + std::to_string(n) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::string fixed(double x, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

inline void print_simulation_table(std::ostream& out, const SimulationResult& r) {
  out << std::left << std::setw(5) << "rank" << std::setw(16) << "claim" << std::right << std::setw(9) << "score"
      << std::setw(6) << "best" << std::setw(7) << "worst" << std::setw(7) << "shown" << std::setw(9) << "pref"
      << std::setw(10) << "utility" << "  region\n";
  for (std::size_t i = 0; i < r.ranking.size(); ++i) {
    const auto& c = r.ranking[i];
    out << std::left << std::setw(5) << i + 1 << std::setw(16) << c.claim_id << std::right << std::setw(9)
        << fixed(c.score) << std::setw(6) << c.counts.best_count << std::setw(7) << c.counts.worst_count
        << std::setw(7) << c.counts.appearances << std::setw(9) << fixed(r.likelihood.at(c.claim_id))
        << std::setw(10) << fixed(r.normalized.at(c.claim_id), 2) << "  "
        << to_string(r.regions.at(c.claim_id)) << '\n';
  }
  out << "MNL " << r.utilities.status << " after " << r.utilities.iterations << " iterations, loglik "
      << fixed(r.utilities.final_loglik) << '\n';
}

inline std::vector<std::size_t> parse_top_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw ValidationError("bad --top entry '" + item + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"claimlab: claim search, MaxDiff simulation, utility estimation and ranking evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  std::optional<std::string> store_dir;
  std::string format = "table";
  app.add_option("--config", config_path, "JSON config file (default: $CLAIMLAB_CONFIG)");
  app.add_option("--store", store_dir, "store directory (claims.jsonl + studies/)");
  app.add_option("--format", format, "output format")->check(CLI::IsMember({"table", "json"}));

  // ingest
  auto* ingest = app.add_subcommand("ingest", "add claim or study records to the store");
  std::string ingest_input, ingest_format = "claims";
  ingest->add_option("--input", ingest_input, "record file")->required();
  ingest->add_option("--type", ingest_format, "record type")->check(CLI::IsMember({"claims", "study"}));

  // search
  auto* search = app.add_subcommand("search", "semantic search over stored claims");
  std::optional<std::string> search_text, search_image_ref, search_source;
  std::optional<double> search_weight;
  std::size_t search_k = 5;
  std::vector<std::string> search_filters;
  std::string search_target = "text";
  search->add_option("--text", search_text, "query text");
  search->add_option("--image-ref", search_image_ref, "claim id whose imported image embedding is the image query");
  search->add_option("--weight,-w", search_weight, "image weight W in [0,1]");
  search->add_option("-k", search_k, "number of hits")->check(CLI::PositiveNumber);
  search->add_option("--filter", search_filters, "tag filter key=value (repeatable)");
  search->add_option("--source", search_source, "claim_log | maxdiff_study | generated | manual");
  search->add_option("--target", search_target, "compare against claim text or image embeddings")
      ->check(CLI::IsMember({"text", "image"}));

  // simulate
  auto* simulate = app.add_subcommand("simulate", "run a synthetic MaxDiff study over claims");
  std::optional<std::string> sim_claims, sim_utilities, sim_profile;
  std::vector<std::string> sim_ids;
  std::optional<std::size_t> sim_rounds, sim_set_size;
  std::optional<std::uint64_t> sim_seed;
  std::optional<double> sim_alpha, sim_temperature;
  std::optional<std::string> sim_respondent;
  bool stub_llm = false;
  simulate->add_option("--claims", sim_claims, "claim file to simulate (default: the store)");
  simulate->add_option("--ids", sim_ids, "claim ids (default: all loaded claims)")->delimiter(',');
  simulate->add_option("--rounds", sim_rounds, "number of choice sets");
  simulate->add_option("--set-size", sim_set_size, "claims per set");
  simulate->add_option("--seed", sim_seed, "random seed");
  simulate->add_option("--alpha", sim_alpha, "count-score smoothing");
  simulate->add_option("--respondent", sim_respondent, "utility | llm")->check(CLI::IsMember({"utility", "llm"}));
  simulate->add_option("--temperature", sim_temperature, "utility respondent temperature");
  simulate->add_option("--utilities", sim_utilities, "JSONL of {claim_id, utility} for the utility respondent");
  simulate->add_option("--profile", sim_profile, "consumer profile JSON (LLM respondent)");
  simulate->add_flag("--stub-llm", stub_llm, "answer LLM prompts with the offline stub");

  // estimate
  auto* estimate = app.add_subcommand("estimate", "fit MNL utilities to best-worst observations");
  std::string est_input;
  std::optional<std::string> est_out;
  std::optional<double> est_ridge;
  estimate->add_option("--observations", est_input, "study file or {set,best,worst} lines")->required();
  estimate->add_option("--out", est_out, "write utilities JSONL here");
  estimate->add_option("--ridge", est_ridge, "ridge penalty");

  // icl-build
  auto* icl = app.add_subcommand("icl-build", "build ICL examples or fine-tuning records from stored studies");
  std::string icl_method = "both", icl_out;
  std::size_t icl_samples = 1;
  std::uint64_t icl_seed = 0;
  icl->add_option("--method", icl_method, "example construction")
      ->check(CLI::IsMember({"performance", "semantic", "both", "finetune"}));
  icl->add_option("--out", icl_out, "dataset path")->required();
  icl->add_option("--samples", icl_samples, "fine-tuning records per study");
  icl->add_option("--seed", icl_seed, "fine-tuning sampling seed");

  // eval
  auto* eval = app.add_subcommand("eval", "compare a predicted ranking with the true one");
  std::string eval_pred, eval_truth, eval_top = "3,5";
  eval->add_option("--predicted", eval_pred, "JSONL of {claim_id, score}")->required();
  eval->add_option("--truth", eval_truth, "JSONL of {claim_id, score}")->required();
  eval->add_option("--top", eval_top, "comma-separated N values for top-N coverage");

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP API");
  std::optional<std::string> serve_host;
  std::optional<int> serve_port;
  serve->add_option("--host", serve_host, "bind address");
  serve->add_option("--port", serve_port, "bind port");
  serve->add_flag("--stub-llm", stub_llm, "answer LLM prompts with the offline stub");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    if (argc <= 1) err << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  const bool as_json = format == "json";
  try {
    AppConfig config = load_config(config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt);
    if (store_dir) config.store_dir = *store_dir;
    if (stub_llm) config.stub_llm = true;
    if (serve_host) config.host = *serve_host;
    if (serve_port) config.port = *serve_port;
    // simulate --claims works on a private in-memory store
    if (simulate->parsed() && sim_claims) config.store_dir.clear();

    if (estimate->parsed()) {
      auto in = open_for_reading(est_input);
      const auto data = detail::read_observations(in);
      EstimationSettings settings = config.estimation;
      if (est_ridge) settings.ridge = *est_ridge;
      const auto u = estimate_mnl(data, settings);
      if (est_out) write_file_atomically(*est_out, [&](std::ostream& o) { write_utilities(o, u); });
      if (as_json) {
        write_utilities(out, u);
      } else {
        const auto norm = normalize_utilities(u.utilities);
        for (const auto& [id, x] : u.utilities)
          out << std::left << std::setw(16) << id << std::right << std::setw(12) << detail::fixed(x, 6)
              << std::setw(10) << detail::fixed(norm.at(id), 2) << '\n';
        out << "status " << u.status << ", iterations " << u.iterations << ", loglik "
            << detail::fixed(u.final_loglik) << '\n';
      }
      return u.converged ? 0 : 3;
    }

    if (eval->parsed()) {
      const json report = evaluate_json(json{{"predicted", detail::read_id_values(eval_pred, "score")},
                                             {"truth", detail::read_id_values(eval_truth, "score")},
                                             {"top", detail::parse_top_list(eval_top)}});
      if (as_json) {
        out << report.dump() << '\n';
      } else {
        out << "n " << report["n"] << "  concordant " << report["concordant"] << "  discordant "
            << report["discordant"] << "  tau " << detail::fixed(report["tau"].get<double>()) << '\n';
        for (const auto& [n, c] : report["top_n_coverage"].items()) out << "top-" << n << " coverage " << c << '\n';
      }
      return 0;
    }

    Engine engine(config);

    if (ingest->parsed()) {
      const auto report =
          engine.ingest(ingest_input, ingest_format == "claims" ? RecordFormat::Claims : RecordFormat::Study);
      for (const auto& r : report.rejections) err << ingest_input << ":" << r.line << ": rejected: " << r.reason << '\n';
      if (as_json) {
        json rejected = json::array();
        for (const auto& r : report.rejections) rejected.push_back({{"line", r.line}, {"reason", r.reason}});
        out << json{{"loaded", report.loaded}, {"rejected", rejected}}.dump() << '\n';
      } else {
        out << "loaded " << report.loaded << ", rejected " << report.rejections.size() << '\n';
      }
      return 0;
    }

    if (search->parsed()) {
      SearchRequest req;
      req.text = search_text;
      req.image_ref = search_image_ref;
      req.weight = search_weight;
      req.k = search_k;
      for (const auto& f : search_filters) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) throw ValidationError("filter must be key=value: " + f);
        req.filters[f.substr(0, eq)] = f.substr(eq + 1);
      }
      if (search_source) req.source = parse_claim_source(*search_source);
      req.target = search_target == "image" ? SearchTarget::ClaimImage : SearchTarget::ClaimText;
      const auto hits = engine.search(req);
      if (as_json) {
        json j = json::array();
        for (const auto& h : hits) j.push_back(to_json(h));
        out << json{{"hits", j}}.dump() << '\n';
      } else {
        for (const auto& h : hits) {
          const auto claim = engine.store().find(h.claim_id);
          out << std::left << std::setw(16) << h.claim_id << std::right << std::setw(9) << detail::fixed(h.similarity)
              << "  " << std::left << std::setw(14) << to_string(h.source) << (claim ? claim->text : "") << '\n';
        }
      }
      return 0;
    }

    if (simulate->parsed()) {
      if (sim_claims) engine.ingest(*sim_claims, RecordFormat::Claims);
      SimulationRequest req;
      req.claim_ids = sim_ids;
      if (req.claim_ids.empty())
        for (const auto& c : engine.store().all()) req.claim_ids.push_back(c.id);
      req.rounds = sim_rounds;
      req.set_size = sim_set_size;
      req.seed = sim_seed;
      req.alpha = sim_alpha;
      if (sim_respondent) req.respondent = parse_respondent_kind(*sim_respondent);
      req.temperature = sim_temperature;
      if (sim_utilities) req.utilities = detail::read_id_values(*sim_utilities, "utility");
      if (sim_profile) {
        auto in = open_for_reading(*sim_profile);
        req.profile = profile_from_json(json::parse(in));
      }
      const auto result = engine.simulate(req);
      if (as_json) out << to_json(result).dump() << '\n';
      else detail::print_simulation_table(out, result);
      return 0;
    }

    if (icl->parsed()) {
      const auto studies = engine.store().studies();
      const auto texts = engine.claim_texts();
      std::size_t written = 0;
      std::vector<SkipReport> skipped;
      if (icl_method == "finetune") {
        std::vector<FinetuneRecord> records;
        for (const auto& s : studies) {
          auto b = build_finetune_records(s, texts, icl_samples, icl_seed);
          if (b.value) records.insert(records.end(), b.value->begin(), b.value->end());
          else skipped.push_back(*b.skipped);
        }
        written = export_dataset<FinetuneRecord>(records, icl_out);
      } else {
        const bool perf = icl_method != "semantic", sem = icl_method != "performance";
        std::map<std::string, EmbeddingVector> embeddings;
        if (sem) embeddings = engine.study_embeddings(studies, texts);
        auto corpus = build_corpus(studies, texts, perf, sem, &embeddings);
        skipped = corpus.skipped;
        written = export_dataset<IclExample>(corpus.examples, icl_out);
      }
      for (const auto& s : skipped) err << "skipped study " << s.study_id << ": " << s.reason << '\n';
      if (as_json) out << json{{"written", written}, {"skipped", skipped.size()}}.dump() << '\n';
      else out << "wrote " << written << " records to " << icl_out << ", skipped " << skipped.size() << " studies\n";
      return 0;
    }

    if (serve->parsed()) {
      Server server(engine);
      err << "listening on " << config.host << ":" << config.port << '\n';
      if (!server.listen(config.host, config.port)) {
        err << "error: cannot listen on " << config.host << ":" << config.port << '\n';
        return 1;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace claimlab
