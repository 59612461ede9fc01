#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mpvad/features.hpp"
#include "mpvad/models.hpp"

namespace mpvad {

struct StreamDecision {
    std::int64_t window_index = 0;
    std::array<float, 4> prob{};
    std::array<std::uint8_t, 4> active{};
};

/// Incremental 4-channel inference: buffers at most one second of audio and
/// emits one decision per completed non-overlapping 1 s window. Any chunking
/// of the input yields identical decisions.
class StreamSession {
public:
    StreamSession(const ScModel* sc, const McModel* mc, FusionConfig fusion,
                  const FrontEndConfig& fe);

    /// Feeds N samples per channel; returns decisions completed by this call.
    std::vector<StreamDecision> push(const std::array<std::span<const float>, 4>& chunk);

    /// Decision for a completed window. Throws NotReadyError for windows the
    /// stream has not finished yet.
    const StreamDecision& lookup(std::int64_t window_index) const;

    std::int64_t completed_windows() const { return static_cast<std::int64_t>(log_.size()); }

private:
    const ScModel* sc_;
    const McModel* mc_;
    FusionConfig fusion_;
    FrontEndConfig fe_;
    MatD mel_;
    std::array<std::vector<float>, 4> buffer_;
    std::size_t fill_ = 0;
    std::vector<StreamDecision> log_;
};

}  // namespace mpvad
