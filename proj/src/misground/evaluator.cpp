#include "misground/evaluator.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "misground/embedded_data.hpp"
#include "semsam/rng.hpp"

namespace misground {

namespace {

char lower(char c) { return c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c; }

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = lower(c);
  return out;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fraction part of I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 100000; ++m) {
    double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

nlohmann::json stats_json(const CategoryStats& s, double mass) {
  return {{"n_items", s.n_items},
          {"n_scored", s.n_scored},
          {"n_omitted", s.n_omitted},
          {"n_missing", s.n_missing},
          {"n_correct", s.n_correct},
          {"accuracy", s.accuracy ? nlohmann::json(*s.accuracy) : nlohmann::json(nullptr)},
          {"posterior_mean", s.posterior_mean},
          {"credible_interval", {{"low", s.interval.low}, {"high", s.interval.high}, {"mass", mass}}}};
}

std::string prior_name(const BetaPrior& p) {
  if (p.alpha == 1.0 && p.beta == 1.0) return "uniform";
  if (p.alpha == 0.5 && p.beta == 0.5) return "jeffreys";
  return "custom";
}

}  // namespace

// ---------------------------------------------------------------------------
// Responses

std::string serialize_responses(const std::vector<ResponseRecord>& responses) {
  std::string out;
  for (const auto& r : responses) {
    out += nlohmann::json{{"question_id", r.question_id}, {"raw_text", r.raw_text}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<ResponseRecord> parse_responses(std::string_view jsonl) {
  std::vector<ResponseRecord> out;
  std::size_t line_no = 0;
  while (!jsonl.empty()) {
    ++line_no;
    auto nl = jsonl.find('\n');
    std::string_view line = jsonl.substr(0, nl);
    jsonl = nl == std::string_view::npos ? std::string_view{} : jsonl.substr(nl + 1);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("question_id") || !j["question_id"].is_string() ||
        !j.contains("raw_text") || !j["raw_text"].is_string())
      throw FormatError(fmt::format("responses line {}: expected {{\"question_id\": string, \"raw_text\": string}}", line_no));
    out.push_back({j["question_id"].get<std::string>(), j["raw_text"].get<std::string>()});
  }
  return out;
}

void write_responses(const std::vector<ResponseRecord>& responses, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << serialize_responses(responses);
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::vector<ResponseRecord> read_responses(const std::filesystem::path& path) { return parse_responses(read_file(path)); }

// ---------------------------------------------------------------------------
// Extraction and scoring

std::optional<std::string> extract_answer(std::string_view raw) {
  std::string folded = lowercase(raw);
  constexpr std::string_view open = "<answer>", close = "</answer>";
  auto start = folded.rfind(open);
  while (start != std::string::npos) {
    auto end = folded.find(close, start + open.size());
    if (end != std::string::npos) {
      auto body = raw.substr(start + open.size(), end - start - open.size());
      auto b = body.find_first_not_of(" \t\r\n");
      if (b == std::string_view::npos) return std::string();
      auto e = body.find_last_not_of(" \t\r\n");
      return std::string(body.substr(b, e - b + 1));
    }
    if (start == 0) break;
    start = folded.rfind(open, start - 1);
  }
  return std::nullopt;
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += lower(c);
  }
  auto strip = [](char c) { return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' || c == '"' || c == '\'' || c == ' '; };
  while (!out.empty() && strip(out.back())) out.pop_back();
  std::size_t lead = 0;
  while (lead < out.size() && (out[lead] == '"' || out[lead] == '\'' || out[lead] == ' ')) ++lead;
  return out.substr(lead);
}

std::string_view to_string(MatchMode m) { return m == MatchMode::exact ? "exact" : "synonym"; }

std::optional<MatchMode> parse_match_mode(std::string_view s) {
  if (s == "exact") return MatchMode::exact;
  if (s == "synonym") return MatchMode::synonym;
  return std::nullopt;
}

SynonymTable SynonymTable::defaults() {
  static const SynonymTable t = parse(embedded::synonyms_json);
  return t;
}

SynonymTable SynonymTable::parse(std::string_view json_text) {
  auto j = nlohmann::json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FormatError("synonym table must be a JSON object");
  SynonymTable t;
  for (const auto& [key, alts] : j.items()) {
    std::string canon = normalize_answer(key);
    t.to_canonical_[canon] = canon;
  }
  for (const auto& [key, alts] : j.items()) {
    if (!alts.is_array()) throw FormatError(fmt::format("synonyms for \"{}\" must be an array", key));
    std::string canon = normalize_answer(key);
    for (const auto& a : alts) {
      if (!a.is_string()) throw FormatError(fmt::format("synonyms for \"{}\" must be strings", key));
      std::string alt = normalize_answer(a.get<std::string>());
      auto [it, fresh] = t.to_canonical_.emplace(alt, canon);
      if (!fresh && it->second != canon)
        throw ValidationError(fmt::format("synonym \"{}\" is ambiguous between \"{}\" and \"{}\"", alt, it->second, canon));
    }
  }
  return t;
}

std::string SynonymTable::canonical(const std::string& normalized) const {
  auto it = to_canonical_.find(normalized);
  return it == to_canonical_.end() ? normalized : it->second;
}

bool score(const QAItem& item, std::string_view answer, const ScoreOptions& opts) {
  std::string got = normalize_answer(answer);
  std::string want = normalize_answer(item.answer_key);
  if (got == want) return true;
  if (opts.mode == MatchMode::exact) return false;
  return opts.synonyms.canonical(got) == opts.synonyms.canonical(want);
}

// ---------------------------------------------------------------------------
// Beta posterior

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("beta parameters must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double beta_quantile(double a, double b, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("quantile level must be in [0, 1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-12) {
    double mid = 0.5 * (lo + hi);
    if (regularized_incomplete_beta(a, b, mid) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

Interval credible_interval(std::size_t successes, std::size_t failures, const BetaPrior& prior, double mass) {
  if (!(mass > 0.0 && mass < 1.0)) throw ValidationError("interval mass must be in (0, 1)");
  if (!(prior.alpha > 0.0) || !(prior.beta > 0.0) || !std::isfinite(prior.alpha) || !std::isfinite(prior.beta))
    throw ValidationError("prior parameters must be positive");
  double a = prior.alpha + static_cast<double>(successes);
  double b = prior.beta + static_cast<double>(failures);
  double tail = (1.0 - mass) / 2.0;
  return {beta_quantile(a, b, tail), beta_quantile(a, b, 1.0 - tail)};
}

// ---------------------------------------------------------------------------
// Aggregation

nlohmann::json EvalReport::to_json() const {
  nlohmann::json tags = nlohmann::json::object();
  for (const auto& [t, s] : by_tag) tags[t] = stats_json(s, options.mass);
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [k, values] : by_param)
    for (const auto& [v, s] : values) params[k][v] = stats_json(s, options.mass);
  return {{"prior", {{"alpha", options.prior.alpha}, {"beta", options.prior.beta}, {"name", prior_name(options.prior)}}},
          {"interval", {{"mass", options.mass}, {"kind", "equal-tailed Beta posterior quantiles"}}},
          {"match_mode", to_string(options.scoring.mode)},
          {"synonym_entries", options.scoring.synonyms.size()},
          {"overall", stats_json(overall, options.mass)},
          {"by_tag", tags},
          {"by_param", params},
          {"unmatched", unmatched},
          {"n_unmatched", unmatched.size()},
          {"n_duplicates", n_duplicates}};
}

EvalReport aggregate(const std::vector<QAItem>& items, const std::vector<ResponseRecord>& responses,
                     const EvalOptions& opts) {
  if (!(opts.mass > 0.0 && opts.mass < 1.0)) throw ValidationError("interval mass must be in (0, 1)");
  EvalReport r;
  r.options = opts;

  std::map<std::string, const QAItem*> by_id;
  for (const auto& q : items)
    if (!by_id.emplace(q.id, &q).second) throw ValidationError(fmt::format("duplicate question id {}", q.id));

  std::map<std::string, const ResponseRecord*> latest;
  std::set<std::string> unmatched;
  for (const auto& resp : responses) {
    if (!by_id.count(resp.question_id)) {
      unmatched.insert(resp.question_id);
      continue;
    }
    auto [it, fresh] = latest.emplace(resp.question_id, &resp);
    if (!fresh) {
      ++r.n_duplicates;
      it->second = &resp;
    }
  }
  r.unmatched.assign(unmatched.begin(), unmatched.end());

  static const std::array<const char*, 8> kParamKeys{"media",     "slice_direction", "orientation_mode", "visual_prompt",
                                                     "text_ref",  "target_type",     "question_type",    "ablation"};
  for (const auto& q : items) {
    std::vector<CategoryStats*> buckets{&r.overall};
    for (const auto& t : q.category_tags) buckets.push_back(&r.by_tag[t]);
    for (const char* k : kParamKeys) {
      std::string v = "none";
      if (q.params.contains(k) && q.params[k].is_string()) v = q.params[k].get<std::string>();
      buckets.push_back(&r.by_param[k][v]);
    }

    auto it = latest.find(q.id);
    std::optional<std::string> answer;
    if (it != latest.end()) answer = extract_answer(it->second->raw_text);
    bool correct = answer && score(q, *answer, opts.scoring);
    for (auto* b : buckets) {
      ++b->n_items;
      if (it == latest.end())
        ++b->n_missing;
      else if (!answer)
        ++b->n_omitted;
      else {
        ++b->n_scored;
        if (correct) ++b->n_correct;
      }
    }
  }

  auto finish = [&](CategoryStats& s) {
    if (s.n_scored > 0) s.accuracy = static_cast<double>(s.n_correct) / static_cast<double>(s.n_scored);
    double a = opts.prior.alpha + static_cast<double>(s.n_correct);
    double b = opts.prior.beta + static_cast<double>(s.n_scored - s.n_correct);
    s.posterior_mean = a / (a + b);
    s.interval = credible_interval(s.n_correct, s.n_scored - s.n_correct, opts.prior, opts.mass);
  };
  finish(r.overall);
  for (auto& [_, s] : r.by_tag) finish(s);
  for (auto& [_, values] : r.by_param)
    for (auto& [__, s] : values) finish(s);
  return r;
}

std::vector<ResponseRecord> stub_respond(const std::vector<QAItem>& items, double error_rate, std::uint64_t seed) {
  if (!(error_rate >= 0.0 && error_rate <= 1.0)) throw ValidationError("error rate must be in [0, 1]");
  std::vector<ResponseRecord> out;
  out.reserve(items.size());
  for (const auto& q : items) {
    semsam::Xoshiro256 rng(seed ^ semsam::fnv1a64(q.id));
    std::string answer = q.answer_key;
    if (rng.uniform01() < error_rate) {
      if (q.distractors.empty()) throw ValidationError(fmt::format("item {} has no wrong answer to give", q.id));
      answer = q.distractors[static_cast<std::size_t>(rng.below(q.distractors.size()))];
    }
    out.push_back({q.id, fmt::format("Stub reasoning.\n<answer>{}</answer>", answer)});
  }
  return out;
}

}  // namespace misground
