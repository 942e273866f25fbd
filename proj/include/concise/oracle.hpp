#pragma once

#include "concise/trajectory.hpp"

namespace concise {

// Ground-truth correctness: the response answers from the documents (or says
// the product is unavailable) and mentions no value or doc id outside them.
// Truncated or unterminated trajectories are never correct.
bool oracle_correct(const Episode& e, const Trajectory& t, const Vocabulary& vocab);

// Correct and volunteers at least one supporting fact besides the answer.
bool oracle_helpful(const Episode& e, const Trajectory& t, const Vocabulary& vocab);

}  // namespace concise
