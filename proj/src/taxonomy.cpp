#include "rfnet/taxonomy.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "rfnet/error.hpp"

namespace rfnet {

const std::string& LabelTaxonomy::standard_dataset() const {
  for (const auto& d : datasets) {
    if (d.standard) return d.id;
  }
  throw DataError("taxonomy has no standard dataset");
}

bool LabelTaxonomy::is_registered(const std::string& dataset) const {
  for (const auto& d : datasets) {
    if (d.id == dataset) return true;
  }
  return false;
}

ClassSet LabelTaxonomy::set_of(int class_id) const {
  if (class_id < 0 || class_id >= num_classes()) {
    throw DataError("class id " + std::to_string(class_id) + " outside taxonomy");
  }
  return classes[static_cast<std::size_t>(class_id)].set;
}

int LabelTaxonomy::class_id(const std::string& name) const {
  for (const auto& c : classes) {
    if (c.name == name) return c.id;
  }
  throw DataError("no class named '" + name + "'");
}

void LabelTaxonomy::validate() const {
  if (classes.size() < 2) throw DataError("taxonomy needs at least 2 classes");
  std::set<std::string> names;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].id != static_cast<int>(i)) {
      throw DataError("class ids must be listed as 0..K-1 in order");
    }
    if (!names.insert(classes[i].name).second) {
      throw DataError("duplicate class name '" + classes[i].name + "'");
    }
  }
  if (ignore_id >= 0 && ignore_id < num_classes()) {
    throw DataError("ignore id " + std::to_string(ignore_id) + " collides with a class id");
  }
  int standard = 0;
  std::set<std::string> ids;
  for (const auto& d : datasets) {
    if (!ids.insert(d.id).second) throw DataError("duplicate dataset '" + d.id + "'");
    standard += d.standard ? 1 : 0;
  }
  if (standard != 1) throw DataError("taxonomy needs exactly one standard dataset");
  for (const auto& [dataset, table] : remap) {
    if (!is_registered(dataset)) throw DataError("remap for unknown dataset '" + dataset + "'");
    for (const auto& [raw, unified] : table) {
      if (unified != ignore_id && (unified < 0 || unified >= num_classes())) {
        throw DataError("remap " + dataset + " " + std::to_string(raw) + " -> " +
                        std::to_string(unified) + " targets no class");
      }
    }
  }
  for (const auto& d : datasets) {
    if (!remap.count(d.id)) throw DataError("dataset '" + d.id + "' has no remap table");
  }
}

LabelTaxonomy LabelTaxonomy::parse(const std::string& text) {
  LabelTaxonomy t;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw DataError("taxonomy line " + std::to_string(lineno) + ": " + why);
  };
  std::vector<std::tuple<std::string, int, std::string>> pending_remaps;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    if (kind == "class") {
      int id;
      std::string name, set;
      if (!(ls >> id >> name >> set)) fail("expected 'class <id> <name> <A|B>'");
      if (set != "A" && set != "B") fail("class set must be A or B");
      t.classes.push_back({id, name, set == "A" ? ClassSet::kA : ClassSet::kB});
    } else if (kind == "dataset") {
      std::string id, role;
      if (!(ls >> id >> role)) fail("expected 'dataset <id> <standard|aux>'");
      if (role != "standard" && role != "aux") fail("dataset role must be standard or aux");
      t.datasets.push_back({id, role == "standard"});
    } else if (kind == "remap") {
      std::string dataset, target;
      int raw;
      if (!(ls >> dataset >> raw >> target)) fail("expected 'remap <dataset> <raw> <unified|ignore>'");
      pending_remaps.emplace_back(dataset, raw, target);
    } else if (kind == "ignore") {
      if (!(ls >> t.ignore_id)) fail("expected 'ignore <id>'");
    } else {
      fail("unknown directive '" + kind + "'");
    }
  }
  // Remap targets resolve after the whole file so `ignore` may appear anywhere.
  for (const auto& [dataset, raw, target] : pending_remaps) {
    int unified = 0;
    if (target == "ignore") {
      unified = t.ignore_id;
    } else {
      try {
        std::size_t used = 0;
        unified = std::stoi(target, &used);
        if (used != target.size()) throw DataError("");
      } catch (const std::exception&) {
        throw DataError("taxonomy remap target '" + target + "' is neither an id nor 'ignore'");
      }
    }
    if (!t.remap[dataset].emplace(raw, unified).second) {
      throw DataError("duplicate remap entry for " + dataset + " raw " + std::to_string(raw));
    }
  }
  t.validate();
  return t;
}

LabelTaxonomy LabelTaxonomy::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open taxonomy file " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse(os.str());
}

std::string LabelTaxonomy::serialize() const {
  std::ostringstream os;
  os << "ignore " << ignore_id << '\n';
  for (const auto& c : classes) {
    os << "class " << c.id << ' ' << c.name << ' ' << (c.set == ClassSet::kA ? 'A' : 'B') << '\n';
  }
  for (const auto& d : datasets) {
    os << "dataset " << d.id << ' ' << (d.standard ? "standard" : "aux") << '\n';
  }
  for (const auto& [dataset, table] : remap) {
    for (const auto& [raw, unified] : table) {
      os << "remap " << dataset << ' ' << raw << ' ';
      if (unified == ignore_id) {
        os << "ignore";
      } else {
        os << unified;
      }
      os << '\n';
    }
  }
  return os.str();
}

LabelTaxonomy LabelTaxonomy::synthetic(int num_classes, bool background_as_class) {
  if (num_classes < 4) throw ConfigError("synthetic taxonomy needs at least 4 classes");
  static const char* kObjectNames[] = {"vehicle", "pedestrian", "pole", "vegetation", "sign"};
  LabelTaxonomy t;
  t.classes.push_back({0, "road", ClassSet::kA});
  t.classes.push_back({1, "sky", ClassSet::kB});
  t.classes.push_back({2, "building", ClassSet::kB});
  for (int id = 3; id < num_classes - 1; ++id) {
    const int i = id - 3;
    std::string name = i < 5 ? kObjectNames[i] : "object" + std::to_string(i);
    t.classes.push_back({id, name, ClassSet::kB});
  }
  const int obstacle = num_classes - 1;
  t.classes.push_back({obstacle, "small_obstacle", ClassSet::kA});
  int background = t.ignore_id;
  if (background_as_class) {
    background = num_classes;
    t.classes.push_back({background, "background", ClassSet::kB});
  }
  t.datasets = {{"cityscapes_like", true}, {"lostfound_like", false}};
  for (int raw = 0; raw < num_classes - 1; ++raw) t.remap["cityscapes_like"][raw] = raw;
  t.remap["lostfound_like"] = {{0, background}, {1, 0}, {2, obstacle}};
  t.validate();
  return t;
}

int lambda_select(const std::string& sample_source, const LabelTaxonomy& taxonomy) {
  if (!taxonomy.is_registered(sample_source)) {
    throw DataError("unknown source dataset '" + sample_source + "'");
  }
  return sample_source == taxonomy.standard_dataset() ? 1 : 0;
}

LabelMap remap_labels(const LabelMap& raw, const std::string& source,
                      const LabelTaxonomy& taxonomy) {
  auto it = taxonomy.remap.find(source);
  if (it == taxonomy.remap.end()) throw DataError("no remap table for dataset '" + source + "'");
  const auto& table = it->second;
  LabelMap out(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto hit = table.find(raw.data[i]);
    if (hit == table.end()) {
      throw DataError("raw label " + std::to_string(raw.data[i]) + " absent from the '" + source +
                      "' remap table");
    }
    out.data[i] = hit->second;
  }
  return out;
}

}  // namespace rfnet
