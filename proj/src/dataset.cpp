#include "m3lab/dataset.hpp"

#include <stdexcept>

namespace m3lab {

TransitionDataset::TransitionDataset(int horizon, int num_actions)
    : horizon_(horizon), num_actions_(num_actions) {
    if (horizon < 1) throw std::invalid_argument("dataset: horizon must be at least 1");
    if (num_actions < 1) throw std::invalid_argument("dataset: num_actions must be at least 1");
    by_h_.resize(horizon);
}

void TransitionDataset::add_episode(Episode episode) {
    if (episode.empty()) throw std::invalid_argument("dataset: empty episode");
    size_t dim = episode.front().s.size();
    for (size_t t = 0; t < episode.size(); ++t) {
        const Transition& tr = episode[t];
        if (tr.s.size() != dim || tr.next.size() != dim)
            throw std::invalid_argument("dataset: inconsistent state dimensions");
        if (tr.action < 0 || tr.action >= num_actions_)
            throw std::invalid_argument("dataset: action out of range");
        if (tr.done && t + 1 != episode.size())
            throw std::invalid_argument("dataset: terminal transition before episode end");
        if (t > 0 && episode[t - 1].next != tr.s)
            throw std::invalid_argument("dataset: episode states do not chain");
    }
    int ep = static_cast<int>(episodes_.size());
    int len = static_cast<int>(episode.size());
    for (int h = 1; h <= horizon_; ++h)
        for (int t = 0; t + h <= len; ++t) by_h_[h - 1].push_back(Ref{ep, t});
    total_transitions_ += episode.size();
    episodes_.push_back(std::move(episode));
}

void TransitionDataset::check_h(int h) const {
    if (h < 1 || h > horizon_) throw std::invalid_argument("dataset: h out of range");
}

size_t TransitionDataset::size(int h) const {
    check_h(h);
    return by_h_[h - 1].size();
}

const std::vector<TransitionDataset::Ref>& TransitionDataset::refs(int h) const {
    check_h(h);
    return by_h_[h - 1];
}

SequenceSample TransitionDataset::get(int h, size_t i) const {
    check_h(h);
    const Ref& ref = by_h_[h - 1].at(i);
    const Episode& ep = episodes_[ref.episode];
    SequenceSample out;
    out.origin = &ep[ref.t].s;
    out.target = &ep[ref.t + h - 1].next;
    out.actions.resize(h);
    for (int k = 0; k < h; ++k) {
        out.actions[k] = ep[ref.t + k].action;
        out.cum_reward += ep[ref.t + k].reward;
    }
    return out;
}

TransitionDataset build_dataset(std::vector<Episode> episodes, int horizon, int num_actions) {
    TransitionDataset ds(horizon, num_actions);
    for (auto& ep : episodes) ds.add_episode(std::move(ep));
    return ds;
}

}  // namespace m3lab
