#pragma once

#include <vector>

#include "synthfed/core.hpp"
#include "synthfed/error.hpp"
#include "synthfed/segmenter.hpp"

namespace synthfed::detail {

// Training view of a dataset; every item must carry a mask.
inline std::vector<LabeledImage> labeled(const Dataset& d) {
  std::vector<LabeledImage> out;
  for (const Item* item : d.items()) {
    if (!item->mask) throw DataError("training image " + d.site_id + ":" + item->ref + " has no mask");
    out.push_back({&item->image, &*item->mask});
  }
  return out;
}

}  // namespace synthfed::detail
