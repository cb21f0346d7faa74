#pragma once

#include <cstddef>
#include <vector>

#include "m3lab/env.hpp"

namespace m3lab {

struct Transition {
    State s;
    int action = 0;
    double reward = 0.0;
    State next;
    bool done = false;
};

using Episode = std::vector<Transition>;

// A length-h training sample: origin state, the h actions taken from it, the
// state h steps later and the summed reward along the window.
struct SequenceSample {
    const State* origin = nullptr;
    std::vector<int> actions;
    const State* target = nullptr;
    double cum_reward = 0.0;
};

// Episodic replay storage plus an index of every (start, h) window with
// h <= horizon. Windows never span a terminal transition because episodes end
// at their terminal step.
class TransitionDataset {
public:
    TransitionDataset(int horizon, int num_actions);

    void add_episode(Episode episode);

    int horizon() const { return horizon_; }
    int num_actions() const { return num_actions_; }
    size_t num_episodes() const { return episodes_.size(); }
    const Episode& episode(size_t i) const { return episodes_.at(i); }
    size_t total_transitions() const { return total_transitions_; }

    // number of h-step samples, h in [1, horizon]
    size_t size(int h) const;
    SequenceSample get(int h, size_t i) const;

    struct Ref {
        int episode;
        int t;
    };
    const std::vector<Ref>& refs(int h) const;

private:
    void check_h(int h) const;

    int horizon_;
    int num_actions_;
    size_t total_transitions_ = 0;
    std::vector<Episode> episodes_;
    std::vector<std::vector<Ref>> by_h_;
};

TransitionDataset build_dataset(std::vector<Episode> episodes, int horizon, int num_actions);

}  // namespace m3lab
