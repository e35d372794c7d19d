#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dress/nn.hpp"

namespace dress::data {

using nn::Tape;
using nn::Var;

/// Token id 0 is reserved for padding/unknown, so embedding inputs are
/// never empty.
inline constexpr int kPadToken = 0;

struct Query {
  std::vector<int> token_ids;
};

struct Product {
  int product_id = 0;
  std::vector<int> title_token_ids;
};

struct Story {
  int story_id = 0;
  std::vector<int> title_token_ids;
  std::vector<int> product_title_token_ids;  // tokens of products embedded in the story
  Vector dense_features;
};

struct Feedback {
  int story_clicked = 0;
  std::vector<int> product_clicked;  // per impressed product
  std::vector<int> product_ordered;
  std::vector<int> engaged_product_ids;  // ids of clicked products
  bool any_product_click() const {
    for (int c : product_clicked)
      if (c) return true;
    return false;
  }
  bool any_product_order() const {
    for (int o : product_ordered)
      if (o) return true;
    return false;
  }
};

struct Session {
  long long t = 0;
  Query query;
  Story story_shown;
  std::vector<int> candidate_ids;  // candidate story pool; contains story_shown
  std::vector<Product> impressed_products;
  Feedback feedback;
  std::optional<double> logged_propensity;

  /// Session reward: 1 iff any impressed product was clicked.
  int reward() const { return feedback.any_product_click() ? 1 : 0; }
  /// Position of the shown story in the candidate pool.
  int action_index() const;
};

struct Episode {
  long long user_id = 0;
  Vector user_profile;
  std::vector<Session> sessions;
};

struct FeatureConfig {
  int embedding_dim = 200;
  int dense_story_dim = 13;
  int vocab_size = 30;
  int candidate_pool_size = 20;

  int story_dim() const { return 2 * embedding_dim + dense_story_dim; }
  int feedback_dim() const { return 4 + embedding_dim; }
  int transition_input_dim() const {
    return story_dim() + embedding_dim + feedback_dim();
  }
};

/// All stories seen in a dataset, keyed by id; used to resolve candidate
/// pools to feature vectors.
struct StoryCatalog {
  std::map<int, Story> stories;
  const Story& at(int id) const;
  void put(const Story& s) { stories.emplace(s.story_id, s); }
};

struct Dataset {
  std::vector<Episode> episodes;
  StoryCatalog catalog;
};

// ---- featurization (tape path; differentiable w.r.t. the embedding table) ----

/// Mean of the embedding rows of token_ids.
Var embed_aggregate(Tape& t, const std::vector<int>& token_ids, Var table);
/// [title embedding | embedded-product-title embedding | dense features].
Var featurize_story(Tape& t, const Story& story, Var table, const FeatureConfig& cfg);
/// [story one-hot(2) | product one-hot(2) | mean embedding of engaged products].
Var featurize_feedback(Tape& t, const Feedback& fb, const std::vector<Product>& impressed,
                       Var table, const FeatureConfig& cfg);
Var featurize_query(Tape& t, const Query& q, Var table);
Var featurize_product(Tape& t, const Product& p, Var table);

// ---- featurization (plain path; frozen table) ----

Vector embed_aggregate(const std::vector<int>& token_ids, const Matrix& table);
Vector featurize_story(const Story& story, const Matrix& table, const FeatureConfig& cfg);
Vector featurize_feedback(const Feedback& fb, const std::vector<Product>& impressed,
                          const Matrix& table, const FeatureConfig& cfg);
Vector featurize_query(const Query& q, const Matrix& table);
Vector featurize_product(const Product& p, const Matrix& table);

// ---- dataset io (line-delimited JSON) ----

Dataset load_dataset(const std::string& path);
void save_dataset(const std::vector<Episode>& episodes, const std::string& path);
/// Dataset serialized to the on-disk format in memory (used for manifests
/// and byte-identity checks).
std::string dataset_to_string(const std::vector<Episode>& episodes);
/// Validates one episode's invariants; throws DataError naming the episode.
void validate_episode(const Episode& e);

// ---- splits ----

/// Random user-level partition into k folds whose sizes differ by at most
/// one episode. Deterministic given the seed.
std::vector<std::vector<Episode>> split_folds(const std::vector<Episode>& episodes, int k,
                                              uint64_t seed);

std::vector<Episode> filter_episodes(const std::vector<Episode>& episodes, int min_len,
                                     int max_len);

}  // namespace dress::data
