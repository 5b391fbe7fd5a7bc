#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace synthfed {

enum class SitePhase {
  Idle,
  Fingerprinted,
  Planned,
  GenTrained,
  Synthesized,
  Filtered,
  BundlePublished,
  AwaitingGeneralModel,
  FineTuned,
};

std::string_view phase_name(SitePhase phase);
std::optional<SitePhase> parse_phase(std::string_view name);

/// Protocol position of one site. Phases only move forward one at a time.
struct SiteState {
  std::string site_id;
  SitePhase phase = SitePhase::Idle;

  /// Throws DataError unless `next` directly follows the current phase.
  void advance(SitePhase next);
};

/// One line of events.log. `phase` is a SitePhase name for site events and
/// a free label (e.g. "Merged", "arm:fedavg") for central and arm events.
struct Event {
  std::uint64_t step = 0;
  std::string site;
  std::string phase;
  std::string artifact_hash;
  std::string timestamp;  // UTC, ISO 8601; the only non-reproducible field
};

std::string format_event(const Event& e);
std::vector<Event> parse_events(std::string_view text);

/// Throws DataError when a site's phase sequence skips or regresses, or when
/// lines are not ordered by (step, site).
void check_event_order(std::span<const Event> events);

/// Append-only log file. Existing lines are loaded on open so completed
/// steps can be skipped when a run is resumed.
class EventLog {
 public:
  explicit EventLog(std::filesystem::path path);

  const std::vector<Event>& events() const noexcept { return events_; }
  const Event* find(std::string_view site, std::string_view phase) const;
  /// Stamps the current time when `e.timestamp` is empty and appends the
  /// line to disk before returning.
  void append(Event e);

 private:
  std::filesystem::path path_;
  std::vector<Event> events_;
};

std::string utc_timestamp();

}  // namespace synthfed
