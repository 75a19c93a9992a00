#pragma once

#include <string>
#include <vector>

#include "manifest.hpp"

namespace dssc {

enum class Protocol { osps, loso };

const char* protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);

// One speaker-independent train/test partition. Speaker lists are sorted and
// disjoint by construction.
struct SplitPlan {
  std::string plan_id;  // "<protocol>_NNN", 1-based in generation order
  Protocol protocol = Protocol::osps;
  std::vector<std::string> train;
  std::vector<std::string> test;
};

// Every way of holding out exactly one pool speaker per severity tier; the
// rest of the pool trains. Plans are ordered lexicographically by the
// severity-ordered test tuple. A tier with fewer than two pool speakers
// cannot sit on both sides of the split and is an error.
std::vector<SplitPlan> generate_osps(const CorpusManifest& m);

// One plan per pool speaker, ordered by speaker id: that speaker tests,
// everyone else trains.
std::vector<SplitPlan> generate_loso(const CorpusManifest& m);

std::vector<SplitPlan> generate_plans(const CorpusManifest& m, Protocol p);

// Problems with a plan against a manifest (unknown speakers, overlap,
// protocol shape); empty means valid.
std::vector<std::string> plan_violations(const SplitPlan& plan,
                                         const CorpusManifest& m);

std::string plan_to_json(const SplitPlan& plan);
SplitPlan plan_from_json(const std::string& text);
void save_plan(const std::string& path, const SplitPlan& plan);
SplitPlan load_plan(const std::string& path);

}  // namespace dssc
