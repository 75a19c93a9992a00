#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dssc {

// Ordinal severity tiers. Three-class corpora use the first three; the
// four-class layout adds very_high.
enum class Severity : int {
  low = 0,
  medium = 1,
  high = 2,
  very_high = 3,
};

const char* severity_name(Severity s);
Severity severity_from_name(const std::string& name);

struct SpeakerEntry {
  std::string speaker_id;
  Severity severity = Severity::low;
  // Declared utterance total. Stands alone when the path list is empty
  // (corpus skeletons ship counts without audio); otherwise it must match.
  std::int64_t utterance_count = 0;
  std::vector<std::string> utterances;  // relative paths, unique corpus-wide
};

struct CorpusManifest {
  int version = 1;
  std::string corpus_id;
  std::vector<SpeakerEntry> speakers;
  // Speakers eligible for split generation. Empty means all speakers.
  std::vector<std::string> sid_pool;
};

// Structural problems, one message each; empty means well-formed.
std::vector<std::string> manifest_violations(const CorpusManifest& m);

// Smallest class count covering every severity present: max ordinal + 1.
int manifest_n_classes(const CorpusManifest& m);

// The speakers split generation draws from: the sid_pool subset in manifest
// order, or every speaker when the pool is empty.
std::vector<const SpeakerEntry*> pool_speakers(const CorpusManifest& m);

const SpeakerEntry* find_speaker(const CorpusManifest& m,
                                 const std::string& speaker_id);

// Canonical single-line JSON: object keys sorted, arrays in manifest order.
// Equal manifests serialize to equal bytes, so hashes of this text are
// platform-stable.
std::string manifest_to_json(const CorpusManifest& m);
CorpusManifest manifest_from_json(const std::string& text);

void save_manifest(const std::string& path, const CorpusManifest& m);
CorpusManifest load_manifest(const std::string& path);

// FNV-1a of the canonical JSON, as 16 hex digits.
std::string manifest_hash(const CorpusManifest& m);

}  // namespace dssc
