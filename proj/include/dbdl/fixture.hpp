#pragma once

#include <optional>
#include <string>

namespace dbdl {

/// Synthetic dataset kinds with generator-documented ground-truth rules:
///  - kinship: pair classification decidable only via two-hop joins
///    (pair -> person -> generation)
///  - star_regression: target is a planted linear function of a child-row
///    aggregate (account <- transaction)
///  - flat_table: single relation, linearly separable labels
///  - weekday_events: label depends on the weekday of a timestamp column
///  - text_topics: label carried by a free-text column
enum class FixtureKind { Kinship, StarRegression, FlatTable, WeekdayEvents, TextTopics };

std::string_view fixture_name(FixtureKind k);
std::optional<FixtureKind> fixture_from_name(std::string_view name);

/// Writes a manifest dataset directory (CSV files, manifest.json and a
/// rule.json sidecar documenting the planted rule). Deterministic: the same
/// (kind, size, seed) reproduces the directory byte for byte.
void make_fixture(FixtureKind kind, size_t size, uint64_t seed,
                  const std::string& out_dir);

}  // namespace dbdl
