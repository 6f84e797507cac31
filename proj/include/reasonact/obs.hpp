#pragma once

// Observation passed from the simulator to the policy: per-view CHW rasters
// in [0,1] plus a zero-padded proprioceptive vector.

#include <vector>

namespace reasonact {

struct MultiViewObservation {
    std::vector<std::vector<float>> views;  // each 3*S*S, channel-major
    std::vector<float> proprio;             // length d_p, padded with zeros
    int img = 0;                            // S
};

}  // namespace reasonact
