#include "mpvad/streaming.hpp"

#include <algorithm>

namespace mpvad {

StreamSession::StreamSession(const ScModel* sc, const McModel* mc, FusionConfig fusion,
                             const FrontEndConfig& fe)
    : sc_(sc), mc_(mc), fusion_(fusion), fe_(fe), mel_(mel_matrix(fe)) {
    if (!sc_ && !mc_) throw Error("stream session needs at least one model");
    const std::size_t cap = static_cast<std::size_t>(fe_.window_samples());
    for (auto& ch : buffer_) ch.resize(cap);
}

std::vector<StreamDecision> StreamSession::push(
    const std::array<std::span<const float>, 4>& chunk) {
    const std::size_t n = chunk[0].size();
    for (const auto& ch : chunk)
        if (ch.size() != n) throw ShapeError("push: channels of unequal length");

    std::vector<StreamDecision> emitted;
    const std::size_t window = static_cast<std::size_t>(fe_.window_samples());
    std::size_t consumed = 0;
    while (consumed < n) {
        const std::size_t take = std::min(window - fill_, n - consumed);
        for (int c = 0; c < 4; ++c)
            std::copy_n(chunk[c].data() + consumed, take, buffer_[c].data() + fill_);
        fill_ += take;
        consumed += take;

        if (fill_ < window) break;
        fill_ = 0;

        std::array<std::span<const float>, 4> spans;
        for (int c = 0; c < 4; ++c) spans[c] = std::span<const float>(buffer_[c]);
        const std::array<FeatureBlock, 4> blocks = featurize_window(spans, fe_, mel_);

        StreamDecision decision;
        decision.window_index = static_cast<std::int64_t>(log_.size());
        std::array<float, 4> probs{};
        if (sc_ && mc_) {
            probs = fuse(sc_forward(*sc_, blocks), mc_forward(*mc_, blocks), fusion_).prob;
        } else if (sc_) {
            probs = sc_forward(*sc_, blocks);
        } else {
            probs = mc_forward(*mc_, blocks);
        }
        for (int c = 0; c < 4; ++c) {
            decision.prob[c] = probs[c];
            decision.active[c] = probs[c] >= fusion_.threshold ? 1 : 0;
        }
        log_.push_back(decision);
        emitted.push_back(decision);
    }
    return emitted;
}

const StreamDecision& StreamSession::lookup(std::int64_t window_index) const {
    if (window_index < 0) throw Error("lookup: negative window index");
    if (window_index >= completed_windows())
        throw NotReadyError("window " + std::to_string(window_index) +
                            " not complete yet (completed: " +
                            std::to_string(completed_windows()) + ")");
    return log_[static_cast<std::size_t>(window_index)];
}

}  // namespace mpvad
