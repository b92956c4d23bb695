#include "perfid/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "perfid/error.hpp"
#include "perfid/io.hpp"

namespace perfid {

namespace {

using json = nlohmann::json;

// Shuffles `items` and moves the first `take` elements into the returned set.
std::vector<std::string> random_split(std::vector<std::string>& items, std::size_t take, Rng& rng) {
  rng.shuffle(std::span<std::string>(items));
  std::vector<std::string> picked(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(take));
  items.erase(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(take));
  return picked;
}

}  // namespace

std::vector<std::string> Registry::pianists() const {
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.pianist);
  return {names.begin(), names.end()};
}

void validate(const Registry& registry) {
  std::set<std::string> ids;
  for (const auto& r : registry.records) {
    if (r.id.empty()) throw Error(Errc::InvalidRegistry, "record with empty id");
    if (r.pianist.empty() || r.composition.empty()) {
      throw Error(Errc::InvalidRegistry, "record " + r.id + " has an empty pianist or composition");
    }
    if (!ids.insert(r.id).second) throw Error(Errc::InvalidRegistry, "duplicate id " + r.id);
  }
}

Registry load_registry(const std::filesystem::path& path) {
  Registry reg;
  try {
    const json doc = json::parse(io::read_text(path));
    reg.provenance = doc.value("provenance", "");
    for (const auto& r : doc.at("records")) {
      reg.records.push_back({r.at("id").get<std::string>(), r.at("pianist").get<std::string>(),
                             r.at("composition").get<std::string>(), r.value("perf_midi", ""),
                             r.value("score_midi", "")});
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidRegistry, path.string() + ": " + e.what());
  }
  reg.root = path.parent_path();
  validate(reg);
  return reg;
}

void save_registry(const std::filesystem::path& path, const Registry& registry) {
  validate(registry);
  json doc;
  doc["provenance"] = registry.provenance;
  doc["records"] = json::array();
  for (const auto& r : registry.records) {
    doc["records"].push_back({{"id", r.id},
                              {"pianist", r.pianist},
                              {"composition", r.composition},
                              {"perf_midi", r.perf_midi.generic_string()},
                              {"score_midi", r.score_midi.generic_string()}});
  }
  io::write_text(path, doc.dump(2) + "\n");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

Split SplitAssignment::at(const std::string& id) const {
  auto it = by_id.find(id);
  if (it == by_id.end()) throw Error(Errc::InvalidRegistry, "id " + id + " has no split assignment");
  return it->second;
}

std::vector<std::string> SplitAssignment::ids(Split s) const {
  std::vector<std::string> out;
  for (const auto& [id, which] : by_id) {
    if (which == s) out.push_back(id);
  }
  return out;
}

SplitAssignment split(std::span<const PerformanceRecord> records, std::uint64_t seed) {
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> groups;
  for (const auto& r : records) groups[{r.composition, r.pianist}].push_back(r.id);

  SplitAssignment out;
  out.seed = seed;
  Rng rng(seed);
  auto assign = [&](const std::vector<std::string>& ids, Split s) {
    for (const auto& id : ids) out.by_id[id] = s;
  };
  for (auto& [key, ids] : groups) {
    std::sort(ids.begin(), ids.end());
    const std::size_t n = ids.size();
    if (n <= 1) {
      assign(ids, Split::Train);
    } else if (n == 2) {
      auto a = random_split(ids, 1, rng);
      const double m = rng.uniform();
      assign(ids, Split::Train);
      assign(a, m <= 0.5 ? Split::Valid : Split::Test);
    } else if (n <= 9) {
      auto a = random_split(ids, 1, rng);
      auto b = random_split(ids, 1, rng);
      assign(a, Split::Valid);
      assign(b, Split::Test);
      assign(ids, Split::Train);
    } else {
      const std::size_t train = (8 * n + 5) / 10;  // round(4n/5)
      auto a = random_split(ids, train, rng);
      const std::size_t valid = (ids.size() + 1) / 2;
      auto b = random_split(ids, valid, rng);
      assign(a, Split::Train);
      assign(b, Split::Valid);
      assign(ids, Split::Test);
    }
  }
  return out;
}

std::string split_csv(const SplitAssignment& assignment, std::span<const PerformanceRecord> records) {
  std::string out = "id,pianist,composition,split\n";
  for (const auto& r : records) {
    out += r.id + ',' + r.pianist + ',' + r.composition + ',' + std::string(split_name(assignment.at(r.id))) + '\n';
  }
  return out;
}

SplitAssignment parse_split_csv(std::string_view csv) {
  SplitAssignment out;
  std::istringstream in{std::string(csv)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.starts_with("id,")) continue;
    }
    const auto first = line.find(',');
    const auto last = line.rfind(',');
    if (first == std::string::npos || first == last) throw Error(Errc::InvalidRegistry, "bad split row: " + line);
    const std::string id = line.substr(0, first);
    const std::string which = line.substr(last + 1);
    if (which == "train") {
      out.by_id[id] = Split::Train;
    } else if (which == "valid") {
      out.by_id[id] = Split::Valid;
    } else if (which == "test") {
      out.by_id[id] = Split::Test;
    } else {
      throw Error(Errc::InvalidRegistry, "unknown split '" + which + "'");
    }
  }
  return out;
}

SplitStats split_stats(const SplitAssignment& assignment, std::span<const PerformanceRecord> records) {
  SplitStats stats;
  for (const auto& r : records) {
    const auto s = static_cast<std::size_t>(assignment.at(r.id));
    ++stats.per_pianist[r.pianist][s];
    ++stats.totals[s];
  }
  return stats;
}

std::string format_split_stats(const SplitStats& stats) {
  std::string out = "pianist,train,valid,test,total\n";
  char buf[256];
  for (const auto& [name, c] : stats.per_pianist) {
    std::snprintf(buf, sizeof buf, ",%zu,%zu,%zu,%zu\n", c[0], c[1], c[2], c[0] + c[1] + c[2]);
    out += name + buf;
  }
  std::snprintf(buf, sizeof buf, "total,%zu,%zu,%zu,%zu\n", stats.totals[0], stats.totals[1], stats.totals[2],
                stats.total());
  out += buf;
  return out;
}

}  // namespace perfid
