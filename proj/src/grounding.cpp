#include "pathaudit/grounding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "pathaudit/digest.hpp"
#include "pathaudit/error.hpp"
#include "pathaudit/fsutil.hpp"

namespace pathaudit::grounding {

namespace {

constexpr std::string_view kEmbeddingCacheMagic = "pathaudit-name-embeddings v1\n";
constexpr std::size_t kEmbedBatch = 256;

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string_view to_string(MentionOrigin o) {
  switch (o) {
    case MentionOrigin::Question: return "Question";
    case MentionOrigin::Option: return "Option";
    case MentionOrigin::ModelPath: return "ModelPath";
  }
  return "";
}

std::string_view to_string(AlignMethod m) {
  switch (m) {
    case AlignMethod::Exact: return "Exact";
    case AlignMethod::Embedding: return "Embedding";
    case AlignMethod::Adjudicated: return "Adjudicated";
    case AlignMethod::Unaligned: return "Unaligned";
  }
  return "";
}

MentionOrigin parse_mention_origin(std::string_view s) {
  for (auto o : {MentionOrigin::Question, MentionOrigin::Option, MentionOrigin::ModelPath}) {
    if (to_string(o) == s) return o;
  }
  throw DataError("unknown mention origin: " + std::string(s));
}

AlignMethod parse_align_method(std::string_view s) {
  for (auto m : {AlignMethod::Exact, AlignMethod::Embedding, AlignMethod::Adjudicated, AlignMethod::Unaligned}) {
    if (to_string(m) == s) return m;
  }
  throw DataError("unknown alignment method: " + std::string(s));
}

std::vector<kg::EntityId> Case::question_entity_ids() const {
  std::vector<kg::EntityId> out;
  std::set<kg::EntityId> seen;
  for (const auto& a : question_entities) {
    if (a.entity && seen.insert(*a.entity).second) out.push_back(*a.entity);
  }
  return out;
}

std::string normalize_mention(std::string_view text) {
  std::size_t b = 0, e = text.size();
  while (b < e && (is_space(text[b]) || is_punct(text[b]))) ++b;
  while (e > b && (is_space(text[e - 1]) || is_punct(text[e - 1]))) --e;
  std::string out;
  out.reserve(e - b);
  bool pending_space = false;
  for (std::size_t i = b; i < e; ++i) {
    char c = text[i];
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// EntityAligner

EntityAligner::EntityAligner(const kg::KnowledgeGraph& graph, services::EmbeddingProvider& embedder,
                             services::Adjudicator& adjudicator, AlignerOptions options)
    : graph_(graph), embedder_(embedder), adjudicator_(adjudicator), options_(std::move(options)) {
  if (!(options_.tau > 0.0 && options_.tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
  if (options_.top_k == 0) throw ConfigError("top_k must be positive");

  const std::size_t n = graph_.entity_count();
  name_index_.reserve(n);
  for (kg::NodeIndex v = 0; v < n; ++v) name_index_.emplace_back(normalize_mention(graph_.entity(v).name), v);
  std::sort(name_index_.begin(), name_index_.end());

  dim_ = embedder_.dimension();
  std::filesystem::path cache_file;
  if (!options_.embedding_cache_dir.empty()) {
    cache_file = options_.embedding_cache_dir /
                 ("names-" + sha256_hex(graph_.digest() + "\n" + embedder_.identity()).substr(0, 32) + ".bin");
    std::ifstream in(cache_file, std::ios::binary);
    if (in) {
      std::string magic(kEmbeddingCacheMagic.size(), '\0');
      std::uint64_t rows = 0, cols = 0;
      in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
      in.read(reinterpret_cast<char*>(&rows), sizeof rows);
      in.read(reinterpret_cast<char*>(&cols), sizeof cols);
      if (in && magic == kEmbeddingCacheMagic && rows == n && cols == dim_) {
        name_vectors_.resize(n * dim_);
        in.read(reinterpret_cast<char*>(name_vectors_.data()),
                static_cast<std::streamsize>(name_vectors_.size() * sizeof(double)));
        from_cache_ = static_cast<bool>(in);
      }
    }
  }
  if (!from_cache_) {
    name_vectors_.assign(n * dim_, 0.0);
    std::vector<std::string> batch;
    for (std::size_t start = 0; start < n; start += kEmbedBatch) {
      batch.clear();
      const std::size_t end = std::min(n, start + kEmbedBatch);
      for (std::size_t v = start; v < end; ++v) batch.push_back(graph_.entity(static_cast<kg::NodeIndex>(v)).name);
      auto vecs = services::embed_batch(embedder_, batch);
      for (std::size_t i = 0; i < vecs.size(); ++i) {
        double norm = 0;
        for (double x : vecs[i]) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0) continue;
        double* row = &name_vectors_[(start + i) * dim_];
        for (std::size_t d = 0; d < dim_; ++d) row[d] = vecs[i][d] / norm;
      }
    }
    if (!cache_file.empty()) {
      std::string blob(kEmbeddingCacheMagic);
      const std::uint64_t rows = n, cols = dim_;
      blob.append(reinterpret_cast<const char*>(&rows), sizeof rows);
      blob.append(reinterpret_cast<const char*>(&cols), sizeof cols);
      blob.append(reinterpret_cast<const char*>(name_vectors_.data()), name_vectors_.size() * sizeof(double));
      write_file_atomic(cache_file, blob);
    }
  }
}

std::vector<double> EntityAligner::mention_vector(const std::string& text) const {
  const std::vector<std::string> one{text};
  auto v = services::embed_batch(embedder_, one).front();
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0) throw PreconditionError("embedder returned a zero vector for '" + text + "'");
  for (double& x : v) x /= norm;
  return v;
}

AlignmentResult EntityAligner::align(const Mention& mention, const AlignmentContext& context) const {
  AlignmentResult result{mention, std::nullopt, AlignMethod::Unaligned, std::nullopt};
  const std::string key = normalize_mention(mention.text);
  if (key.empty()) return result;

  // Stage 1: exact normalized name. Entries are sorted by (name, node), so the
  // first hit carries the smallest id.
  auto it = std::lower_bound(name_index_.begin(), name_index_.end(), std::make_pair(key, kg::NodeIndex{0}));
  if (it != name_index_.end() && it->first == key) {
    result.entity = graph_.entity(it->second).id;
    result.method = AlignMethod::Exact;
    return result;
  }
  if (graph_.entity_count() == 0) return result;

  // Stage 2: embedding nearest neighbour at or above tau.
  const auto q = mention_vector(mention.text);
  const std::size_t n = graph_.entity_count();
  std::vector<double> sims(n);
  for (std::size_t v = 0; v < n; ++v) {
    const double* row = &name_vectors_[v * dim_];
    double dot = 0;
    for (std::size_t d = 0; d < dim_; ++d) dot += row[d] * q[d];
    sims[v] = std::clamp(dot, -1.0, 1.0);
  }
  std::size_t best = 0;
  for (std::size_t v = 1; v < n; ++v) {
    if (sims[v] > sims[best]) best = v;
  }
  if (sims[best] >= options_.tau) {
    result.entity = graph_.entity(static_cast<kg::NodeIndex>(best)).id;
    result.method = AlignMethod::Embedding;
    result.similarity = sims[best];
    return result;
  }

  // Stage 3: adjudicated choice among the top-k.
  const std::size_t k = std::min(options_.top_k, n);
  std::vector<std::size_t> order(n);
  for (std::size_t v = 0; v < n; ++v) order[v] = v;
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return sims[a] != sims[b] ? sims[a] > sims[b] : a < b; });
  services::AlignChoiceRequest request;
  request.mention = mention.text;
  request.question = context.question;
  request.options = context.options;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& e = graph_.entity(static_cast<kg::NodeIndex>(order[i]));
    request.candidates.push_back({e.id, e.name, sims[order[i]]});
  }
  if (auto choice = services::choose_candidate(adjudicator_, request)) {
    result.entity = request.candidates[*choice].entity_id;
    result.method = AlignMethod::Adjudicated;
    result.similarity = request.candidates[*choice].similarity;
  }
  return result;
}

GroundedPath EntityAligner::ground_path(const RawPath& raw, const AlignmentContext& context) const {
  GroundedPath out;
  for (const auto& step : raw.steps) {
    auto a = align({step.entity_text, MentionOrigin::ModelPath}, context);
    if (!a.entity) {
      ++out.dropped_steps;
      continue;
    }
    out.steps.push_back({*a.entity, step.relation_text, std::move(a)});
  }
  return out;
}

// ---------------------------------------------------------------------------

Case align_case(const RawCase& raw, const EntityAligner& aligner, services::Adjudicator& adjudicator) {
  auto fail = [&](const std::string& what) { throw DataError("case " + raw.id + ": " + what); };
  if (raw.id.empty()) throw DataError("case with empty id");
  if (std::find(raw.options.begin(), raw.options.end(), raw.correct_answer) == raw.options.end()) {
    fail("correct answer '" + raw.correct_answer + "' is not among the options");
  }
  if (std::find(raw.options.begin(), raw.options.end(), raw.predicted_answer) == raw.options.end()) {
    fail("predicted answer '" + raw.predicted_answer + "' is not among the options");
  }
  const AlignmentContext ctx{raw.question, raw.options};

  Case c;
  c.id = raw.id;
  c.question = raw.question;
  c.options = raw.options;
  c.correct_answer = raw.correct_answer;
  c.predicted_answer = raw.predicted_answer;

  std::vector<std::string> mentions;
  if (raw.question_entities) {
    for (const auto& e : *raw.question_entities) mentions.push_back(e.text);
  } else {
    for (auto& m : services::extract_entities(adjudicator, {raw.question, raw.options})) mentions.push_back(m.text);
  }
  for (const auto& m : mentions) {
    if (normalize_mention(m).empty()) continue;
    c.question_entities.push_back(aligner.align({m, MentionOrigin::Question}, ctx));
  }

  auto answer = [&](const std::string& text, const char* which) {
    auto a = aligner.align({text, MentionOrigin::Option}, ctx);
    if (!a.entity) fail(std::string(which) + " answer '" + text + "' could not be aligned");
    return *a.entity;
  };
  c.correct_entity = answer(raw.correct_answer, "correct");
  c.predicted_entity = answer(raw.predicted_answer, "predicted");

  for (const auto& p : raw.model_paths) c.model_paths.push_back(aligner.ground_path(p, ctx));
  return c;
}

std::vector<kg::Path> build_reference_paths(const std::vector<kg::EntityId>& question_entities,
                                            const kg::EntityId& correct_entity, const kg::KnowledgeGraph& graph,
                                            services::Adjudicator& adjudicator, const AlignmentContext& context,
                                            std::size_t max_paths_per_entity) {
  std::vector<kg::Path> out;
  std::set<kg::Path> seen;
  for (const auto& x : question_entities) {
    auto candidates = graph.shortest_paths(x, correct_entity, max_paths_per_entity);
    if (candidates.empty()) continue;
    services::PruneRequest request;
    request.question = context.question;
    request.options = context.options;
    for (const auto& p : candidates) {
      services::NamedPath named;
      for (const auto& id : p.nodes) named.entity_names.push_back(graph.entity(graph.index_of(id)).name);
      named.relations = p.relations;
      request.paths.push_back(std::move(named));
    }
    for (std::size_t keep : services::prune_paths(adjudicator, request)) {
      if (seen.insert(candidates[keep]).second) out.push_back(candidates[keep]);
    }
  }
  return out;
}

}  // namespace pathaudit::grounding
