#include "manifest.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "error.hpp"
#include "hash.hpp"

namespace dssc {

namespace {

using nlohmann::json;

bool valid_utterance_path(const std::string& p) {
  if (p.empty() || p.front() == '/') return false;
  if (p.find('\\') != std::string::npos) return false;
  if (p.find(',') != std::string::npos) return false;
  // Reject any ".." segment so cache paths stay inside their root.
  std::stringstream ss(p);
  std::string seg;
  while (std::getline(ss, seg, '/')) {
    if (seg.empty() || seg == "..") return false;
  }
  return true;
}

}  // namespace

const char* severity_name(Severity s) {
  switch (s) {
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
    case Severity::very_high: return "very_high";
  }
  throw Error(ErrorCode::internal, "bad severity value");
}

Severity severity_from_name(const std::string& name) {
  if (name == "low") return Severity::low;
  if (name == "medium") return Severity::medium;
  if (name == "high") return Severity::high;
  if (name == "very_high") return Severity::very_high;
  throw Error(ErrorCode::format, "unknown severity \"" + name +
                                     "\"; expected low, medium, high, or "
                                     "very_high");
}

std::vector<std::string> manifest_violations(const CorpusManifest& m) {
  std::vector<std::string> out;
  if (m.version != 1) {
    out.push_back("version must be 1, got " + std::to_string(m.version));
  }
  if (m.corpus_id.empty()) out.push_back("corpus_id is empty");
  if (m.speakers.empty()) out.push_back("manifest lists no speakers");

  std::set<std::string> ids;
  std::set<std::string> paths;
  for (const auto& s : m.speakers) {
    if (s.speaker_id.empty()) {
      out.push_back("a speaker has an empty id");
      continue;
    }
    if (!ids.insert(s.speaker_id).second) {
      out.push_back("duplicate speaker id " + s.speaker_id);
    }
    if (s.utterance_count < 0) {
      out.push_back("speaker " + s.speaker_id +
                    " declares a negative utterance count");
    }
    if (!s.utterances.empty() &&
        static_cast<std::int64_t>(s.utterances.size()) != s.utterance_count) {
      out.push_back("speaker " + s.speaker_id + " declares " +
                    std::to_string(s.utterance_count) + " utterances but lists " +
                    std::to_string(s.utterances.size()));
    }
    for (const auto& u : s.utterances) {
      if (!valid_utterance_path(u)) {
        out.push_back("speaker " + s.speaker_id + " has invalid path \"" + u +
                      "\"");
        continue;
      }
      if (!paths.insert(u).second) {
        out.push_back("utterance \"" + u + "\" appears more than once");
      }
    }
  }

  std::set<std::string> pool_seen;
  for (const auto& p : m.sid_pool) {
    if (ids.find(p) == ids.end()) {
      out.push_back("sid_pool references unknown speaker " + p);
    }
    if (!pool_seen.insert(p).second) {
      out.push_back("sid_pool repeats speaker " + p);
    }
  }
  return out;
}

int manifest_n_classes(const CorpusManifest& m) {
  int top = 0;
  for (const auto& s : m.speakers) {
    top = std::max(top, static_cast<int>(s.severity));
  }
  return top + 1;
}

std::vector<const SpeakerEntry*> pool_speakers(const CorpusManifest& m) {
  std::vector<const SpeakerEntry*> out;
  if (m.sid_pool.empty()) {
    for (const auto& s : m.speakers) out.push_back(&s);
    return out;
  }
  for (const auto& id : m.sid_pool) {
    const SpeakerEntry* s = find_speaker(m, id);
    if (!s) {
      throw Error(ErrorCode::format, "sid_pool references unknown speaker " + id);
    }
    out.push_back(s);
  }
  return out;
}

const SpeakerEntry* find_speaker(const CorpusManifest& m,
                                 const std::string& speaker_id) {
  for (const auto& s : m.speakers) {
    if (s.speaker_id == speaker_id) return &s;
  }
  return nullptr;
}

std::string manifest_to_json(const CorpusManifest& m) {
  json j;
  j["version"] = m.version;
  j["corpus_id"] = m.corpus_id;
  j["sid_pool"] = m.sid_pool;
  json speakers = json::array();
  for (const auto& s : m.speakers) {
    json e;
    e["speaker_id"] = s.speaker_id;
    e["severity"] = severity_name(s.severity);
    e["utterance_count"] = s.utterance_count;
    e["utterances"] = s.utterances;
    speakers.push_back(std::move(e));
  }
  j["speakers"] = std::move(speakers);
  // nlohmann::json keeps object keys sorted; dump() is canonical.
  return j.dump();
}

CorpusManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, std::string("manifest is not valid JSON: ") +
                                       e.what());
  }
  CorpusManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != 1) {
      throw Error(ErrorCode::unsupported,
                  "manifest version " + std::to_string(m.version) +
                      " is not supported (expected 1)");
    }
    m.corpus_id = j.at("corpus_id").get<std::string>();
    if (j.contains("sid_pool")) {
      m.sid_pool = j.at("sid_pool").get<std::vector<std::string>>();
    }
    for (const auto& e : j.at("speakers")) {
      SpeakerEntry s;
      s.speaker_id = e.at("speaker_id").get<std::string>();
      s.severity = severity_from_name(e.at("severity").get<std::string>());
      s.utterance_count = e.at("utterance_count").get<std::int64_t>();
      if (e.contains("utterances")) {
        s.utterances = e.at("utterances").get<std::vector<std::string>>();
      }
      m.speakers.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format,
                std::string("manifest structure is wrong: ") + e.what());
  }
  const auto violations = manifest_violations(m);
  if (!violations.empty()) {
    std::string msg = "invalid manifest: " + violations[0];
    for (std::size_t i = 1; i < violations.size(); ++i) {
      msg += "; " + violations[i];
    }
    throw Error(ErrorCode::format, msg);
  }
  return m;
}

void save_manifest(const std::string& path, const CorpusManifest& m) {
  const auto violations = manifest_violations(m);
  if (!violations.empty()) {
    throw Error(ErrorCode::invalid_argument,
                "refusing to save invalid manifest: " + violations[0]);
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  }
  f << manifest_to_json(m) << "\n";
  if (!f.good()) throw Error(ErrorCode::io, "short write to " + path);
}

CorpusManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open manifest " + path);
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return manifest_from_json(ss.str());
}

std::string manifest_hash(const CorpusManifest& m) {
  return hex64(fnv1a64(manifest_to_json(m)));
}

}  // namespace dssc
