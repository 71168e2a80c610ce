#pragma once

#include <optional>
#include <string>

#include "causalstream/engine.hpp"
#include "causalstream/sequential.hpp"

namespace causalstream {

/// Reads one batch from CSV with header exactly `y,a,x1,...,xq`. The
/// intercept is not stored in files; it is prepended here, so the returned
/// batch has covariate dimension q+1. Malformed input reports the 1-based
/// line number (the header is line 1). When an outcome type is given, binary
/// outcomes are checked against {0,1}.
DataBatch read_batch_csv(const std::string& path,
                         std::optional<OutcomeType> outcome = std::nullopt,
                         long batch_index = 0);

/// Everything a resumed process needs: the renewable engine summaries plus
/// the optional monitoring plan. The file is the summary statistic; its size
/// does not grow with the number of observations absorbed.
struct PersistedState {
    int format_version = 1;
    OnlineState engine;
    std::optional<MonitorState> monitor;
};

/// Serializes to JSON with full-precision reals and a checksum over the
/// numeric payload, then writes atomically (temp file, fsync, rename), so a
/// crash mid-write leaves the previous file intact.
void save_state(const std::string& path, const OnlineState& engine,
                const std::optional<MonitorState>& monitor = std::nullopt);

/// Loads and verifies a state file; refuses checksum mismatches and unknown
/// format versions.
PersistedState load_state(const std::string& path);

/// Advisory exclusive lock guarding read-modify-write cycles on a state file.
/// The lock lives beside the state file as `<path>.lock`.
class FileLock {
public:
    explicit FileLock(const std::string& state_path);
    ~FileLock();
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

}  // namespace causalstream
