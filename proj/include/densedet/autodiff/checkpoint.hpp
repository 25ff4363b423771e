#pragma once

#include <string>
#include <vector>

#include "densedet/autodiff/tensor.hpp"

namespace densedet::ad {

/// Writes `<stem>.bin` (every array as little-endian f64, store order) and
/// `<stem>.json` (name -> shape, offset, count).
void save_checkpoint(const ParamStore& store, const std::string& stem);

/// Loads every array of the checkpoint into `store`. Names absent from the
/// store are an error when `strict`; shapes must always match.
void load_checkpoint(ParamStore& store, const std::string& stem, bool strict = true);

/// Copies values for names present in both stores with equal shapes.
/// Returns the copied names.
std::vector<std::string> copy_matching(const ParamStore& from, ParamStore& to);

}  // namespace densedet::ad
