// SPDX-License-Identifier: Apache-2.0
//
// Pieces of the command-line driver that are worth testing on their own:
// the key=value config format and the report table builder.
#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qsam/train.hpp"

namespace qsam::cli {

// One `key = value` per line; blank lines and text after '#' are ignored.
// Malformed lines and repeated keys throw InvalidArgument.
std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text);

struct TrainSettings {
  train::TrainConfig cfg;
  bool baseline = false;
};

// Known keys: alpha beta gamma ite1 ite2 batch weight_decay momentum
// dampening milestones lr_factor seed m strategy qac qac_normalizer
// second_order width1 width2 meta_hidden encoding activation baseline.
// Anything else throws InvalidArgument.
void apply_setting(TrainSettings& s, const std::string& key, const std::string& value);
std::vector<std::string> known_keys();

// Resolved settings as key=value lines, in known_keys() order.
std::string describe(const TrainSettings& s);

// Columns: qst, then one per run. Each run is either an eval table
// (qst,seen,correct,total,accuracy) or a metrics CSV, in which case its last
// row's acc_* cells are used. Rows follow first appearance; a QST missing
// from a run leaves a blank cell.
std::string build_report(const std::vector<std::pair<std::string, std::string>>& runs);

// Splits one CSV line on commas (no quoting; none of our files need it).
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace qsam::cli
