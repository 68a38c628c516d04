#include "demure/data/interactions.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "demure/errors.hpp"

namespace demure::data {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view field, const std::string& where, const char* column) {
  T v{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw DataError(where + ": column '" + column + "' is not a valid number: '" +
                    std::string(field) + "'");
  }
  return v;
}

float parse_rating(std::string_view field, const std::string& where) {
  // from_chars for float is not available everywhere in libstdc++ 11; strtof is.
  std::string s(field);
  char* end = nullptr;
  const float v = std::strtof(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw DataError(where + ": column 'rating' is not a finite number: '" + s + "'");
  }
  return v;
}

}  // namespace

std::uint64_t IngestReport::get(const std::string& key) const {
  auto it = counts.find(key);
  return it == counts.end() ? 0 : it->second;
}

std::string IngestReport::to_jsonl(const std::string& stage) const {
  std::string out;
  for (const auto& [key, n] : counts) {
    out += nlohmann::json{{"stage", stage}, {"counter", key}, {"count", n}}.dump() + "\n";
  }
  return out;
}

bool InteractionLog::has_ratings() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(), [](const auto& r) { return r.rating.has_value(); });
}

InteractionLog parse_interactions(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty interaction file (header required)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  const std::vector<std::string_view> expected{"user_id", "item_id", "timestamp", "rating"};
  if (header.size() < 3 || header.size() > 4 ||
      !std::equal(header.begin(), header.end(), expected.begin())) {
    throw DataError(source + ": header must be 'user_id\\titem_id\\ttimestamp[\\trating]', got '" +
                    line + "'");
  }
  const bool with_rating = header.size() == 4;

  InteractionLog log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto fields = split_tabs(line);
    if (fields.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " columns, got " +
                      std::to_string(fields.size()));
    }
    Interaction r;
    r.user = parse_number<std::uint64_t>(fields[0], where, "user_id");
    r.item = parse_number<std::uint64_t>(fields[1], where, "item_id");
    r.timestamp = parse_number<std::int64_t>(fields[2], where, "timestamp");
    if (with_rating) r.rating = parse_rating(fields[3], where);
    log.records.push_back(r);
  }
  return log;
}

InteractionLog read_interactions(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open interaction file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_interactions(ss.str(), path.string());
}

std::string format_interactions(const InteractionLog& log) {
  const bool with_rating = log.has_ratings();
  std::ostringstream os;
  os << "user_id\titem_id\ttimestamp" << (with_rating ? "\trating" : "") << '\n';
  os.precision(std::numeric_limits<float>::max_digits10);
  for (const auto& r : log.records) {
    os << r.user << '\t' << r.item << '\t' << r.timestamp;
    if (with_rating) os << '\t' << *r.rating;
    os << '\n';
  }
  return os.str();
}

void write_interactions(const std::filesystem::path& path, const InteractionLog& log) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write interaction file " + path.string());
  f << format_interactions(log);
}

std::vector<UserTimeline> build_timelines(const InteractionLog& log, const FeatureStore& store,
                                          IngestReport& report) {
  std::map<UserId, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    if (!store.index_of(log.records[i].item)) {
      report.add("records_unknown_item");
      continue;
    }
    by_user[log.records[i].user].push_back(i);
  }
  std::vector<UserTimeline> out;
  out.reserve(by_user.size());
  for (auto& [user, idx] : by_user) {
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
      return log.records[a].timestamp < log.records[b].timestamp;
    });
    UserTimeline tl;
    tl.user = user;
    for (auto i : idx) {
      const auto& r = log.records[i];
      tl.items.push_back(store.require_index(r.item));
      tl.ratings.push_back(r.rating ? *r.rating : std::numeric_limits<float>::quiet_NaN());
      tl.timestamps.push_back(r.timestamp);
    }
    out.push_back(std::move(tl));
  }
  report.add("users", out.size());
  report.add("records", log.records.size() - report.get("records_unknown_item"));
  return out;
}

}  // namespace demure::data
