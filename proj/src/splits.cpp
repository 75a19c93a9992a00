#include "splits.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "error.hpp"

namespace dssc {

namespace {

using nlohmann::json;

void require_valid(const CorpusManifest& m) {
  const auto violations = manifest_violations(m);
  if (!violations.empty()) {
    throw Error(ErrorCode::format, "invalid manifest: " + violations[0]);
  }
}

std::string plan_name(Protocol p, std::size_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03zu", protocol_name(p), idx + 1);
  return buf;
}

// Pool members grouped by tier, ids sorted within each tier; tiers ascend.
std::map<Severity, std::vector<std::string>> tiers_of(
    const std::vector<const SpeakerEntry*>& pool) {
  std::map<Severity, std::vector<std::string>> tiers;
  for (const auto* s : pool) tiers[s->severity].push_back(s->speaker_id);
  for (auto& [sev, ids] : tiers) std::sort(ids.begin(), ids.end());
  return tiers;
}

}  // namespace

const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::osps: return "osps";
    case Protocol::loso: return "loso";
  }
  throw Error(ErrorCode::internal, "bad protocol value");
}

Protocol protocol_from_name(const std::string& name) {
  if (name == "osps") return Protocol::osps;
  if (name == "loso") return Protocol::loso;
  throw Error(ErrorCode::invalid_argument,
              "unknown protocol \"" + name + "\"; expected osps or loso");
}

std::vector<SplitPlan> generate_osps(const CorpusManifest& m) {
  require_valid(m);
  const auto pool = pool_speakers(m);
  auto tiers = tiers_of(pool);
  for (const auto& [sev, ids] : tiers) {
    if (ids.size() < 2) {
      throw Error(ErrorCode::invalid_argument,
                  std::string("severity tier \"") + severity_name(sev) +
                      "\" has only " + std::to_string(ids.size()) +
                      " eligible speaker(s); one-per-severity holdout needs "
                      "at least two");
    }
  }

  std::set<std::string> pool_ids;
  for (const auto* s : pool) pool_ids.insert(s->speaker_id);

  // Odometer over the tiers, last tier fastest: the severity-ordered test
  // tuples come out in lexicographic order.
  std::vector<const std::vector<std::string>*> lists;
  for (const auto& [sev, ids] : tiers) lists.push_back(&ids);
  std::vector<std::size_t> at(lists.size(), 0);

  std::vector<SplitPlan> plans;
  while (true) {
    SplitPlan p;
    p.protocol = Protocol::osps;
    for (std::size_t i = 0; i < lists.size(); ++i) {
      p.test.push_back((*lists[i])[at[i]]);
    }
    std::set<std::string> test_set(p.test.begin(), p.test.end());
    for (const auto& id : pool_ids) {
      if (test_set.find(id) == test_set.end()) p.train.push_back(id);
    }
    std::sort(p.test.begin(), p.test.end());
    p.plan_id = plan_name(Protocol::osps, plans.size());
    plans.push_back(std::move(p));

    std::size_t k = lists.size();
    while (k > 0) {
      --k;
      if (++at[k] < lists[k]->size()) break;
      at[k] = 0;
      if (k == 0) return plans;
    }
  }
}

std::vector<SplitPlan> generate_loso(const CorpusManifest& m) {
  require_valid(m);
  const auto pool = pool_speakers(m);
  if (pool.size() < 2) {
    throw Error(ErrorCode::invalid_argument,
                "leave-one-speaker-out needs at least two eligible speakers, "
                "got " + std::to_string(pool.size()));
  }
  std::vector<std::string> ids;
  for (const auto* s : pool) ids.push_back(s->speaker_id);
  std::sort(ids.begin(), ids.end());

  std::vector<SplitPlan> plans;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    SplitPlan p;
    p.protocol = Protocol::loso;
    p.plan_id = plan_name(Protocol::loso, i);
    p.test.push_back(ids[i]);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (k != i) p.train.push_back(ids[k]);
    }
    plans.push_back(std::move(p));
  }
  return plans;
}

std::vector<SplitPlan> generate_plans(const CorpusManifest& m, Protocol p) {
  return p == Protocol::osps ? generate_osps(m) : generate_loso(m);
}

std::vector<std::string> plan_violations(const SplitPlan& plan,
                                         const CorpusManifest& m) {
  std::vector<std::string> out;
  if (plan.plan_id.empty()) out.push_back("plan_id is empty");
  if (plan.train.empty()) out.push_back("train side is empty");
  if (plan.test.empty()) out.push_back("test side is empty");

  std::set<std::string> train(plan.train.begin(), plan.train.end());
  std::set<std::string> test(plan.test.begin(), plan.test.end());
  if (train.size() != plan.train.size()) {
    out.push_back("train side repeats a speaker");
  }
  if (test.size() != plan.test.size()) {
    out.push_back("test side repeats a speaker");
  }
  for (const auto& id : test) {
    if (train.count(id)) {
      out.push_back("speaker " + id + " appears in both train and test");
    }
  }
  for (const auto& id : plan.train) {
    if (!find_speaker(m, id)) out.push_back("unknown train speaker " + id);
  }
  for (const auto& id : plan.test) {
    if (!find_speaker(m, id)) out.push_back("unknown test speaker " + id);
  }

  if (plan.protocol == Protocol::loso) {
    if (plan.test.size() != 1) {
      out.push_back("leave-one-out plans hold out exactly one speaker, got " +
                    std::to_string(plan.test.size()));
    }
  } else {
    // One test speaker per severity tier present in the eligible pool.
    std::map<Severity, int> want;
    try {
      for (const auto* s : pool_speakers(m)) want[s->severity] = 0;
    } catch (const Error&) {
      out.push_back("manifest sid_pool is invalid");
      return out;
    }
    for (const auto& id : plan.test) {
      const SpeakerEntry* s = find_speaker(m, id);
      if (!s) continue;
      auto it = want.find(s->severity);
      if (it == want.end()) {
        out.push_back("test speaker " + id + " sits outside the pool tiers");
      } else {
        ++it->second;
      }
    }
    for (const auto& [sev, n] : want) {
      if (n != 1) {
        out.push_back(std::string("severity tier \"") + severity_name(sev) +
                      "\" has " + std::to_string(n) +
                      " test speakers, expected exactly 1");
      }
    }
  }
  return out;
}

std::string plan_to_json(const SplitPlan& plan) {
  json j;
  j["plan_id"] = plan.plan_id;
  j["protocol"] = protocol_name(plan.protocol);
  j["train"] = plan.train;
  j["test"] = plan.test;
  return j.dump();
}

SplitPlan plan_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format,
                std::string("plan is not valid JSON: ") + e.what());
  }
  SplitPlan p;
  try {
    p.plan_id = j.at("plan_id").get<std::string>();
    const auto proto = j.at("protocol").get<std::string>();
    if (proto == "osps") {
      p.protocol = Protocol::osps;
    } else if (proto == "loso") {
      p.protocol = Protocol::loso;
    } else {
      throw Error(ErrorCode::format, "unknown protocol \"" + proto + "\"");
    }
    p.train = j.at("train").get<std::vector<std::string>>();
    p.test = j.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format,
                std::string("plan structure is wrong: ") + e.what());
  }
  return p;
}

void save_plan(const std::string& path, const SplitPlan& plan) {
  std::ofstream f(path, std::ios::trunc);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  }
  f << plan_to_json(plan) << "\n";
  if (!f.good()) throw Error(ErrorCode::io, "short write to " + path);
}

SplitPlan load_plan(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw Error(ErrorCode::io, "cannot open plan " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return plan_from_json(ss.str());
}

}  // namespace dssc
