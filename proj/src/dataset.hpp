#pragma once

#include <string>
#include <vector>

#include "tensor.hpp"

namespace dssc {

// One preprocessed utterance ready for the network.
template <typename T>
struct Sample {
  TensorPtr<T> image;  // [3,S,S]
  int label = -1;      // severity ordinal
  std::string source_id;
  std::string speaker_id;
};

template <typename T>
using Dataset = std::vector<Sample<T>>;

}  // namespace dssc
