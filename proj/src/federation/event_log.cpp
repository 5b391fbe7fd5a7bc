#include "synthfed/event_log.hpp"

#include <fmt/format.h>

#include <array>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include "core/fs_util.hpp"
#include "synthfed/error.hpp"

namespace synthfed {

namespace {
constexpr std::array<std::string_view, 9> kPhaseNames = {
    "Idle",        "Fingerprinted", "Planned",         "GenTrained",
    "Synthesized", "Filtered",      "BundlePublished", "AwaitingGeneralModel",
    "FineTuned",
};
}  // namespace

std::string_view phase_name(SitePhase phase) { return kPhaseNames.at(static_cast<std::size_t>(phase)); }

std::optional<SitePhase> parse_phase(std::string_view name) {
  for (std::size_t i = 0; i < kPhaseNames.size(); ++i)
    if (kPhaseNames[i] == name) return static_cast<SitePhase>(i);
  return std::nullopt;
}

void SiteState::advance(SitePhase next) {
  if (static_cast<int>(next) != static_cast<int>(phase) + 1)
    throw DataError(
        fmt::format("site {}: illegal phase transition {} -> {}", site_id, phase_name(phase), phase_name(next)));
  phase = next;
}

std::string format_event(const Event& e) {
  return fmt::format("{}\t{}\t{}\t{}\t{}", e.step, e.site, e.phase, e.artifact_hash, e.timestamp);
}

std::vector<Event> parse_events(std::string_view text) {
  std::vector<Event> out;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5) throw DataError(fmt::format("events.log line {}: expected 5 fields", line_no));
    Event e;
    try {
      e.step = std::stoull(fields[0]);
    } catch (const std::exception&) {
      throw DataError(fmt::format("events.log line {}: bad step", line_no));
    }
    e.site = fields[1];
    e.phase = fields[2];
    e.artifact_hash = fields[3];
    e.timestamp = fields[4];
    out.push_back(std::move(e));
  }
  return out;
}

void check_event_order(std::span<const Event> events) {
  std::map<std::string, SitePhase> current;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (i > 0) {
      const Event& prev = events[i - 1];
      if (e.step < prev.step || (e.step == prev.step && e.site < prev.site))
        throw DataError(fmt::format("events.log: line {} is out of (step, site) order", i + 1));
    }
    const auto phase = parse_phase(e.phase);
    if (!phase) continue;
    SiteState state{e.site, current.count(e.site) ? current[e.site] : SitePhase::Idle};
    state.advance(*phase);
    current[e.site] = state.phase;
  }
}

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) {
    events_ = parse_events(fsutil::read_text(path_));
    check_event_order(events_);
  }
}

const Event* EventLog::find(std::string_view site, std::string_view phase) const {
  for (const auto& e : events_)
    if (e.site == site && e.phase == phase) return &e;
  return nullptr;
}

void EventLog::append(Event e) {
  if (e.timestamp.empty()) e.timestamp = utc_timestamp();
  if (!events_.empty()) {
    const Event& prev = events_.back();
    if (e.step < prev.step || (e.step == prev.step && e.site < prev.site))
      throw DataError(fmt::format("events.log: {} {} would be out of (step, site) order", e.site, e.phase));
  }
  if (auto phase = parse_phase(e.phase)) {
    SitePhase last = SitePhase::Idle;
    for (const auto& prev : events_)
      if (prev.site == e.site)
        if (auto p = parse_phase(prev.phase)) last = *p;
    SiteState{e.site, last}.advance(*phase);
  }
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw DataError("cannot append to " + path_.string());
  out << format_event(e) << '\n';
  out.flush();
  events_.push_back(std::move(e));
}

std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace synthfed
