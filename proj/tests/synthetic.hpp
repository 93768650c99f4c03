#pragma once

// Synthetic knowledge graph and corpus at benchmark scale.
//
// Nodes are grouped in clusters of 100. Bidirectional relations stay inside a
// cluster; parent-of and causes only point from a lower cluster to a higher
// one, so reachability is far from trivial.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace synthetic {

struct Shape {
  std::size_t nodes = 100000;
  std::size_t edges = 500000;
  std::size_t cases = 1000;
  std::uint64_t seed = 7;
};

inline std::string node_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "e%06zu", i);
  return buf;
}

inline std::string node_name(std::size_t i) { return "entity " + std::to_string(i); }

struct Files {
  std::filesystem::path nodes, edges, policy, corpus;
};

inline Files write(const std::filesystem::path& dir, const Shape& shape) {
  std::filesystem::create_directories(dir);
  Files f{dir / "nodes.tsv", dir / "edges.tsv", dir / "policy.json", dir / "corpus.jsonl"};
  std::mt19937_64 rng(shape.seed);
  constexpr std::size_t kCluster = 100;
  const std::size_t n = shape.nodes;
  const std::size_t clusters = (n + kCluster - 1) / kCluster;
  auto in_cluster = [&](std::size_t c) {
    const std::size_t lo = c * kCluster;
    const std::size_t hi = std::min(n, lo + kCluster) - 1;
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  {
    std::ofstream out(f.nodes);
    out << "id\tname\ttype\n";
    for (std::size_t i = 0; i < n; ++i) {
      out << node_id(i) << '\t' << node_name(i) << '\t' << (i % 5 < 2 ? "Disease" : i % 5 < 4 ? "Symptom" : "Other")
          << '\n';
    }
  }
  {
    std::ofstream out(f.policy);
    out << R"({"directed_relations": ["parent-of", "causes"]})" << '\n';
  }
  {
    std::ofstream out(f.edges);
    out << "src\trelation\tdst\n";
    std::size_t written = 0;
    // hierarchy: every cluster hangs under an earlier one
    for (std::size_t c = 1; c < clusters && written < shape.edges; ++c, ++written) {
      const std::size_t parent = std::uniform_int_distribution<std::size_t>(0, c - 1)(rng);
      out << node_id(in_cluster(parent)) << "\tparent-of\t" << node_id(in_cluster(c)) << '\n';
    }
    // ring per cluster keeps each cluster strongly connected
    for (std::size_t i = 0; i < n && written < shape.edges; ++i, ++written) {
      const std::size_t c = i / kCluster;
      const std::size_t next = (i + 1 < std::min(n, (c + 1) * kCluster)) ? i + 1 : c * kCluster;
      out << node_id(i) << "\tpresent\t" << node_id(next) << '\n';
    }
    std::bernoulli_distribution forward(0.15);
    while (written < shape.edges) {
      const std::size_t c = std::uniform_int_distribution<std::size_t>(0, clusters - 1)(rng);
      if (forward(rng) && c + 1 < clusters) {
        const std::size_t d = std::uniform_int_distribution<std::size_t>(c + 1, std::min(clusters - 1, c + 20))(rng);
        out << node_id(in_cluster(c)) << "\tcauses\t" << node_id(in_cluster(d)) << '\n';
      } else {
        out << node_id(in_cluster(c)) << (written % 2 ? "\tresemble\t" : "\tpresent\t") << node_id(in_cluster(c))
            << '\n';
      }
      ++written;
    }
  }
  {
    std::ofstream out(f.corpus);
    std::uniform_int_distribution<std::size_t> any(0, n - 1);
    auto disease = [&] {
      std::size_t i;
      do i = any(rng);
      while (i % 5 >= 2);
      return i;
    };
    for (std::size_t k = 0; k < shape.cases; ++k) {
      const std::size_t correct = disease();
      const std::size_t predicted = std::bernoulli_distribution(0.3)(rng) ? correct : disease();
      const std::size_t c = correct / kCluster;
      const std::size_t q1 = in_cluster(c);
      const std::size_t q2 = in_cluster(c > 0 ? std::uniform_int_distribution<std::size_t>(0, c - 1)(rng) : 0);
      std::vector<std::string> options{node_name(correct), node_name(disease()), node_name(disease())};
      if (predicted != correct) options.push_back(node_name(predicted));
      nlohmann::json paths = nlohmann::json::array();
      for (int p = 0; p < 2; ++p) {
        nlohmann::json steps = nlohmann::json::array();
        steps.push_back({{"entity_text", node_name(p == 0 ? q1 : q2)}, {"relation_text", "present"}});
        steps.push_back({{"entity_text", node_name(in_cluster(std::uniform_int_distribution<std::size_t>(0, clusters - 1)(rng)))},
                         {"relation_text", "causes"}});
        steps.push_back({{"entity_text", node_name(predicted)}, {"relation_text", ""}});
        paths.push_back(steps);
      }
      nlohmann::json row = {{"id", "S" + std::to_string(100000 + k)},
                            {"question", "Synthetic case about " + node_name(q1) + " and " + node_name(q2) + "."},
                            {"options", options},
                            {"correct_answer", node_name(correct)},
                            {"predicted_answer", node_name(predicted)},
                            {"question_entities", {node_name(q1), node_name(q2)}},
                            {"model_paths", paths}};
      out << row.dump() << '\n';
    }
  }
  return f;
}

}  // namespace synthetic
