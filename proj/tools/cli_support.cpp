// SPDX-License-Identifier: Apache-2.0
#include "cli_support.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "qsam/error.hpp"

namespace qsam::cli {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    fail(ErrorCode::InvalidArgument, key + ": '" + v + "' is not a number");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    fail(ErrorCode::InvalidArgument, key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::InvalidArgument, key + ": '" + v + "' is not a boolean");
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::InvalidArgument, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) fail(ErrorCode::InvalidArgument, "config line " + std::to_string(line_no) + ": empty key");
    for (const auto& [k, v] : out) {
      if (k == key) fail(ErrorCode::InvalidArgument, "config key '" + key + "' given twice");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::string> known_keys() {
  return {"alpha",      "beta",     "gamma", "ite1",   "ite2",    "batch",          "weight_decay",
          "momentum",   "dampening", "milestones", "lr_factor", "seed", "m", "strategy",
          "qac",        "qac_normalizer", "second_order", "width1", "width2", "meta_hidden", "encoding",
          "activation", "baseline"};
}

void apply_setting(TrainSettings& s, const std::string& key, const std::string& value) {
  auto& c = s.cfg;
  if (key == "alpha") c.alpha = to_double(key, value);
  else if (key == "beta") c.beta = to_double(key, value);
  else if (key == "gamma") c.gamma = to_double(key, value);
  else if (key == "ite1") c.ite1 = to_uint(key, value);
  else if (key == "ite2") c.ite2 = to_uint(key, value);
  else if (key == "batch") c.batch = to_uint(key, value);
  else if (key == "weight_decay") c.weight_decay = to_double(key, value);
  else if (key == "momentum") c.momentum = to_double(key, value);
  else if (key == "dampening") c.dampening = to_double(key, value);
  else if (key == "milestones") {
    c.milestones.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!trim(item).empty()) c.milestones.push_back(to_double(key, trim(item)));
    }
  } else if (key == "lr_factor") c.lr_factor = to_double(key, value);
  else if (key == "seed") c.seed = to_uint(key, value);
  else if (key == "m") c.M = to_uint(key, value);
  else if (key == "strategy") {
    if (value == "spread") c.strategy = train::BasisStrategy::Spread;
    else if (value == "top_frequency") c.strategy = train::BasisStrategy::TopFrequency;
    else fail(ErrorCode::InvalidArgument, "strategy must be spread or top_frequency");
  } else if (key == "qac") c.qac.enabled = to_bool(key, value);
  else if (key == "qac_normalizer") c.qac.normalizer = to_double(key, value);
  else if (key == "second_order") c.second_order = to_bool(key, value);
  else if (key == "width1") c.width1 = to_uint(key, value);
  else if (key == "width2") c.width2 = to_uint(key, value);
  else if (key == "meta_hidden") c.meta_hidden = to_uint(key, value);
  else if (key == "encoding") {
    if (value == "reciprocal") c.encoding = qabn::FeatureEncoding::Reciprocal;
    else if (value == "raw") c.encoding = qabn::FeatureEncoding::Raw;
    else fail(ErrorCode::InvalidArgument, "encoding must be reciprocal or raw");
  } else if (key == "activation") {
    if (value == "softmax") c.activation = qabn::OutputActivation::Softmax;
    else if (value == "linear") c.activation = qabn::OutputActivation::Linear;
    else fail(ErrorCode::InvalidArgument, "activation must be softmax or linear");
  } else if (key == "baseline") s.baseline = to_bool(key, value);
  else fail(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
}

std::string describe(const TrainSettings& s) {
  const auto& c = s.cfg;
  std::ostringstream o;
  o << "alpha=" << fmt(c.alpha) << "\nbeta=" << fmt(c.beta) << "\ngamma=" << fmt(c.gamma) << "\nite1=" << c.ite1
    << "\nite2=" << c.ite2 << "\nbatch=" << c.batch << "\nweight_decay=" << fmt(c.weight_decay)
    << "\nmomentum=" << fmt(c.momentum) << "\ndampening=" << fmt(c.dampening)
    << "\nmilestones=" << join_doubles(c.milestones) << "\nlr_factor=" << fmt(c.lr_factor) << "\nseed=" << c.seed
    << "\nm=" << c.M << "\nstrategy=" << (c.strategy == train::BasisStrategy::Spread ? "spread" : "top_frequency")
    << "\nqac=" << (c.qac.enabled ? "true" : "false") << "\nqac_normalizer=" << fmt(c.qac.normalizer)
    << "\nsecond_order=" << (c.second_order ? "true" : "false") << "\nwidth1=" << c.width1
    << "\nwidth2=" << c.width2 << "\nmeta_hidden=" << c.meta_hidden
    << "\nencoding=" << (c.encoding == qabn::FeatureEncoding::Reciprocal ? "reciprocal" : "raw")
    << "\nactivation=" << (c.activation == qabn::OutputActivation::Softmax ? "softmax" : "linear")
    << "\nbaseline=" << (s.baseline ? "true" : "false") << "\n";
  return o.str();
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto c = line.find(',', pos);
    out.emplace_back(trim(line.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos)));
    if (c == std::string_view::npos) break;
    pos = c + 1;
  }
  return out;
}

std::string build_report(const std::vector<std::pair<std::string, std::string>>& runs) {
  if (runs.empty()) fail(ErrorCode::InvalidArgument, "report needs at least one run");
  std::vector<std::string> order;
  std::vector<std::map<std::string, std::string>> cells(runs.size());
  auto note = [&](const std::string& qst) {
    if (std::find(order.begin(), order.end(), qst) == order.end()) order.push_back(qst);
  };
  for (std::size_t r = 0; r < runs.size(); ++r) {
    std::vector<std::string> lines;
    std::stringstream ss(runs[r].second);
    std::string l;
    while (std::getline(ss, l)) {
      if (!trim(l).empty()) lines.push_back(l);
    }
    if (lines.empty()) fail(ErrorCode::InvalidArgument, "run '" + runs[r].first + "' is empty");
    const auto header = split_csv_line(lines[0]);
    if (header.size() == 5 && header[0] == "qst" && header[4] == "accuracy") {
      for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = split_csv_line(lines[i]);
        if (f.size() != 5) fail(ErrorCode::InvalidArgument, "run '" + runs[r].first + "': bad row");
        note(f[0]);
        cells[r][f[0]] = f[4];
      }
    } else if (header.size() >= 6 && header[0] == "epoch" && header[1] == "phase") {
      if (lines.size() < 2) fail(ErrorCode::InvalidArgument, "run '" + runs[r].first + "' has no epochs");
      const auto last = split_csv_line(lines.back());
      if (last.size() != header.size()) fail(ErrorCode::InvalidArgument, "run '" + runs[r].first + "': bad row");
      for (std::size_t i = 6; i < header.size(); ++i) {
        if (header[i].rfind("acc_", 0) != 0) continue;
        const std::string qst = header[i].substr(4);
        note(qst);
        if (!last[i].empty()) cells[r][qst] = last[i];
      }
    } else {
      fail(ErrorCode::InvalidArgument, "run '" + runs[r].first + "' is neither an eval table nor a metrics CSV");
    }
  }
  std::string out = "qst";
  for (const auto& [name, text] : runs) out += "," + name;
  out += "\n";
  for (const auto& q : order) {
    out += q;
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const auto it = cells[r].find(q);
      out += "," + (it == cells[r].end() ? std::string() : it->second);
    }
    out += "\n";
  }
  return out;
}

}  // namespace qsam::cli
