// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace timar {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Mat<double>;

/// FLAME head parameter layout: expression, jaw, pose.
inline constexpr int kHeadDim = 56;
inline constexpr int kExpDim = 50;
inline constexpr int kJawDim = 3;
inline constexpr int kPoseDim = 3;

struct ComponentRange {
  int begin;
  int end;
  const char* name;
  int size() const { return end - begin; }
};

inline constexpr std::array<ComponentRange, 3> kComponents{{
    {0, 50, "exp"},
    {50, 53, "jaw"},
    {53, 56, "pose"},
}};

/// Per-frame head parameters, [frames, 56].
struct HeadSequence {
  MatD frames;
  double rate = 25.0;
  int length() const { return static_cast<int>(frames.rows()); }
};

/// Mono waveform; amplitudes are kept in single precision.
struct Waveform {
  std::vector<float> samples;
  double rate = 16000.0;
  double duration() const { return static_cast<double>(samples.size()) / rate; }
};

/// Which partition a dialogue belongs to.
enum class Split { train, val, test };

/// An aligned two-party recording: both speakers' audio and head motion.
struct DialogueSample {
  std::string id;
  Split split = Split::train;
  std::uint64_t seed = 0;
  Waveform user_wave;
  Waveform agent_wave;
  HeadSequence user_head;
  HeadSequence agent_head;
};

}  // namespace timar
