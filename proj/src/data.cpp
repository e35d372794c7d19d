#include "dress/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dress::data {

using nlohmann::json;
using nlohmann::ordered_json;

int Session::action_index() const {
  for (size_t i = 0; i < candidate_ids.size(); ++i)
    if (candidate_ids[i] == story_shown.story_id) return int(i);
  throw DataError("session at t=" + std::to_string(t) +
                  ": shown story " + std::to_string(story_shown.story_id) +
                  " is not in its candidate pool");
}

const Story& StoryCatalog::at(int id) const {
  auto it = stories.find(id);
  if (it == stories.end())
    throw DataError("story id " + std::to_string(id) + " not present in catalog");
  return it->second;
}

// ---- featurization, tape path ----

Var embed_aggregate(Tape& t, const std::vector<int>& token_ids, Var table) {
  if (token_ids.empty())
    throw ContractError("embed_aggregate: empty token list (use the padding token)");
  return t.rows_mean(table, token_ids);
}

Var featurize_story(Tape& t, const Story& story, Var table, const FeatureConfig& cfg) {
  if (int(story.dense_features.size()) != cfg.dense_story_dim)
    throw ContractError("featurize_story: dense feature length " +
                        std::to_string(story.dense_features.size()) + " != configured " +
                        std::to_string(cfg.dense_story_dim));
  Var title = embed_aggregate(t, story.title_token_ids, table);
  Var ptitle = embed_aggregate(t, story.product_title_token_ids, table);
  Var dense = t.constant(story.dense_features.transpose());
  return t.concat_cols({title, ptitle, dense});
}

Var featurize_feedback(Tape& t, const Feedback& fb, const std::vector<Product>& impressed,
                       Var table, const FeatureConfig& cfg) {
  Matrix onehot(1, 4);
  bool pclick = fb.any_product_click();
  onehot << (fb.story_clicked ? 0.0 : 1.0), (fb.story_clicked ? 1.0 : 0.0),
      (pclick ? 0.0 : 1.0), (pclick ? 1.0 : 0.0);
  Var head = t.constant(std::move(onehot));
  if (fb.engaged_product_ids.empty())
    return t.concat_cols({head, t.constant(Matrix::Zero(1, cfg.embedding_dim))});
  std::vector<int> tokens;
  for (int pid : fb.engaged_product_ids) {
    auto it = std::find_if(impressed.begin(), impressed.end(),
                           [pid](const Product& p) { return p.product_id == pid; });
    if (it == impressed.end())
      throw DataError("feedback references product " + std::to_string(pid) +
                      " that was not impressed");
    tokens.insert(tokens.end(), it->title_token_ids.begin(), it->title_token_ids.end());
  }
  return t.concat_cols({head, embed_aggregate(t, tokens, table)});
}

Var featurize_query(Tape& t, const Query& q, Var table) {
  return embed_aggregate(t, q.token_ids, table);
}

Var featurize_product(Tape& t, const Product& p, Var table) {
  return embed_aggregate(t, p.title_token_ids, table);
}

// ---- featurization, plain path ----

Vector embed_aggregate(const std::vector<int>& token_ids, const Matrix& table) {
  if (token_ids.empty())
    throw ContractError("embed_aggregate: empty token list (use the padding token)");
  Vector out = Vector::Zero(table.cols());
  for (int id : token_ids) {
    if (id < 0 || id >= table.rows())
      throw ContractError("embed_aggregate: token id " + std::to_string(id) +
                          " out of range for table " + shape_str(table));
    out += table.row(id).transpose();
  }
  return out / double(token_ids.size());
}

Vector featurize_story(const Story& story, const Matrix& table, const FeatureConfig& cfg) {
  if (int(story.dense_features.size()) != cfg.dense_story_dim)
    throw ContractError("featurize_story: dense feature length " +
                        std::to_string(story.dense_features.size()) + " != configured " +
                        std::to_string(cfg.dense_story_dim));
  Vector out(cfg.story_dim());
  out << embed_aggregate(story.title_token_ids, table),
      embed_aggregate(story.product_title_token_ids, table), story.dense_features;
  return out;
}

Vector featurize_feedback(const Feedback& fb, const std::vector<Product>& impressed,
                          const Matrix& table, const FeatureConfig& cfg) {
  Vector out = Vector::Zero(cfg.feedback_dim());
  bool pclick = fb.any_product_click();
  out[fb.story_clicked ? 1 : 0] = 1.0;
  out[pclick ? 3 : 2] = 1.0;
  if (!fb.engaged_product_ids.empty()) {
    std::vector<int> tokens;
    for (int pid : fb.engaged_product_ids) {
      auto it = std::find_if(impressed.begin(), impressed.end(),
                             [pid](const Product& p) { return p.product_id == pid; });
      if (it == impressed.end())
        throw DataError("feedback references product " + std::to_string(pid) +
                        " that was not impressed");
      tokens.insert(tokens.end(), it->title_token_ids.begin(), it->title_token_ids.end());
    }
    out.tail(cfg.embedding_dim) = embed_aggregate(tokens, table);
  }
  return out;
}

Vector featurize_query(const Query& q, const Matrix& table) {
  return embed_aggregate(q.token_ids, table);
}

Vector featurize_product(const Product& p, const Matrix& table) {
  return embed_aggregate(p.title_token_ids, table);
}

// ---- io ----

namespace {

ordered_json story_to_json(const Story& s) {
  ordered_json j;
  j["story_id"] = s.story_id;
  j["title_tokens"] = s.title_token_ids;
  j["product_title_tokens"] = s.product_title_token_ids;
  std::vector<double> dense(s.dense_features.data(),
                            s.dense_features.data() + s.dense_features.size());
  j["dense"] = dense;
  return j;
}

Story story_from_json(const json& j) {
  Story s;
  s.story_id = j.at("story_id").get<int>();
  s.title_token_ids = j.at("title_tokens").get<std::vector<int>>();
  s.product_title_token_ids = j.at("product_title_tokens").get<std::vector<int>>();
  auto dense = j.at("dense").get<std::vector<double>>();
  s.dense_features = Eigen::Map<const Vector>(dense.data(), Eigen::Index(dense.size()));
  return s;
}

ordered_json session_to_json(const Session& s) {
  ordered_json j;
  j["t"] = s.t;
  j["query_tokens"] = s.query.token_ids;
  j["story"] = story_to_json(s.story_shown);
  j["candidates"] = s.candidate_ids;
  ordered_json products = ordered_json::array();
  for (const Product& p : s.impressed_products) {
    ordered_json pj;
    pj["product_id"] = p.product_id;
    pj["title_tokens"] = p.title_token_ids;
    products.push_back(std::move(pj));
  }
  j["products"] = std::move(products);
  ordered_json fb;
  fb["story_clicked"] = s.feedback.story_clicked;
  fb["product_clicked"] = s.feedback.product_clicked;
  fb["product_ordered"] = s.feedback.product_ordered;
  fb["engaged_products"] = s.feedback.engaged_product_ids;
  j["feedback"] = std::move(fb);
  if (s.logged_propensity)
    j["propensity"] = *s.logged_propensity;
  else
    j["propensity"] = nullptr;
  return j;
}

Session session_from_json(const json& j) {
  Session s;
  s.t = j.at("t").get<long long>();
  s.query.token_ids = j.at("query_tokens").get<std::vector<int>>();
  s.story_shown = story_from_json(j.at("story"));
  s.candidate_ids = j.at("candidates").get<std::vector<int>>();
  for (const json& pj : j.at("products")) {
    Product p;
    p.product_id = pj.at("product_id").get<int>();
    p.title_token_ids = pj.at("title_tokens").get<std::vector<int>>();
    s.impressed_products.push_back(std::move(p));
  }
  const json& fb = j.at("feedback");
  s.feedback.story_clicked = fb.at("story_clicked").get<int>();
  s.feedback.product_clicked = fb.at("product_clicked").get<std::vector<int>>();
  s.feedback.product_ordered = fb.at("product_ordered").get<std::vector<int>>();
  s.feedback.engaged_product_ids = fb.at("engaged_products").get<std::vector<int>>();
  if (!j.at("propensity").is_null()) s.logged_propensity = j.at("propensity").get<double>();
  return s;
}

}  // namespace

void validate_episode(const Episode& e) {
  auto fail = [&](const std::string& why) {
    throw DataError("episode user_id=" + std::to_string(e.user_id) + ": " + why);
  };
  long long prev_t = -1;
  bool first = true;
  for (const Session& s : e.sessions) {
    if (!first && s.t <= prev_t) fail("timestamps not strictly increasing");
    prev_t = s.t;
    first = false;
    if (s.feedback.product_clicked.size() != s.impressed_products.size() ||
        s.feedback.product_ordered.size() != s.impressed_products.size())
      fail("feedback arity does not match impressed products");
    for (size_t i = 0; i < s.impressed_products.size(); ++i) {
      if (s.feedback.product_ordered[i] && !s.feedback.product_clicked[i])
        fail("product ordered without click");
    }
    for (int pid : s.feedback.engaged_product_ids) {
      bool found = false;
      for (size_t i = 0; i < s.impressed_products.size(); ++i)
        if (s.impressed_products[i].product_id == pid) {
          if (!s.feedback.product_clicked[i]) fail("engaged product was not clicked");
          found = true;
        }
      if (!found) fail("engaged product not among impressed products");
    }
    // engaged set must be exactly the clicked products
    size_t n_clicked = 0;
    for (size_t i = 0; i < s.impressed_products.size(); ++i)
      if (s.feedback.product_clicked[i]) ++n_clicked;
    if (n_clicked != s.feedback.engaged_product_ids.size())
      fail("engaged product list inconsistent with click flags");
    s.action_index();  // shown story must be a candidate
  }
}

std::string dataset_to_string(const std::vector<Episode>& episodes) {
  std::ostringstream out;
  for (const Episode& e : episodes) {
    ordered_json header;
    header["user_id"] = e.user_id;
    std::vector<double> profile(e.user_profile.data(),
                                e.user_profile.data() + e.user_profile.size());
    header["profile"] = profile;
    header["n_sessions"] = e.sessions.size();
    out << header.dump() << "\n";
    for (const Session& s : e.sessions) out << session_to_json(s).dump() << "\n";
  }
  return out.str();
}

void save_dataset(const std::vector<Episode>& episodes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open dataset for writing: " + path);
  out << dataset_to_string(episodes);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json header;
    try {
      header = json::parse(line);
    } catch (const json::exception& ex) {
      throw DataError("line " + std::to_string(line_no) + ": malformed record: " + ex.what());
    }
    if (!header.contains("user_id") || !header.contains("n_sessions"))
      throw DataError("line " + std::to_string(line_no) + ": expected an episode header");
    Episode e;
    e.user_id = header.at("user_id").get<long long>();
    auto profile = header.at("profile").get<std::vector<double>>();
    e.user_profile = Eigen::Map<const Vector>(profile.data(), Eigen::Index(profile.size()));
    size_t n = header.at("n_sessions").get<size_t>();
    for (size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line))
        throw DataError("line " + std::to_string(line_no) + ": truncated episode for user " +
                        std::to_string(e.user_id));
      ++line_no;
      try {
        e.sessions.push_back(session_from_json(json::parse(line)));
      } catch (const json::exception& ex) {
        throw DataError("line " + std::to_string(line_no) + ": malformed record: " +
                        ex.what());
      }
    }
    validate_episode(e);
    for (const Session& s : e.sessions) ds.catalog.put(s.story_shown);
    ds.episodes.push_back(std::move(e));
  }
  return ds;
}

std::vector<std::vector<Episode>> split_folds(const std::vector<Episode>& episodes, int k,
                                              uint64_t seed) {
  if (k < 2) throw ContractError("split_folds: k must be at least 2");
  if (size_t(k) > episodes.size())
    throw ContractError("split_folds: k=" + std::to_string(k) + " exceeds " +
                        std::to_string(episodes.size()) + " users");
  std::vector<int> order(episodes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<Episode>> folds(k);
  for (size_t i = 0; i < order.size(); ++i)
    folds[i % k].push_back(episodes[order[i]]);
  return folds;
}

std::vector<Episode> filter_episodes(const std::vector<Episode>& episodes, int min_len,
                                     int max_len) {
  if (min_len > max_len) throw ContractError("filter_episodes: min_len > max_len");
  std::vector<Episode> out;
  for (const Episode& e : episodes) {
    int n = int(e.sessions.size());
    if (n >= min_len && n <= max_len) out.push_back(e);
  }
  return out;
}

}  // namespace dress::data
