#pragma once

// Event simulator for full-streaming inference: a 30 Hz camera feeding a VLM
// stream, a high-rate action-expert (AE) stream consuming the freshest KV
// cache plus the freshest sensor sample, a 480 Hz trajectory buffer with
// commit semantics, and latency-loop measurement on the resulting trace.
//
// Concurrency between the two streams is modeled with a single interference
// parameter eta: when both streams are resident, each progresses at rate
// 1/(2-eta); alone, at rate 1. The closed form for one frame of work is
// concurrent_makespan() below, and eta is fitted from measured concurrent
// runs by calibrate_eta().

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rtvla {

// ---------------------------------------------------------------------------
// Interference model
// ---------------------------------------------------------------------------

// Time for two tasks of durations t_a and t_b sharing the device:
// max + (1-eta)*min. eta=0 is fully sequential, eta=1 perfect overlap.
double concurrent_makespan(double t_a, double t_b, double eta);

struct EtaPoint {
    double t_a = 0.0;      // duration of stream A alone
    double t_b = 0.0;      // duration of stream B alone
    double measured = 0.0; // measured concurrent makespan
};

struct EtaFit {
    double eta = 0.0;
    bool clamped = false; // true when the least-squares solution left [0,1]
};

// Least-squares fit of eta over measured concurrent runs. Throws
// std::invalid_argument when no point has min(t_a,t_b) > 0.
EtaFit calibrate_eta(const std::vector<EtaPoint>& points);

// The two concurrent measurements baked in as the default calibration:
// (VLM 16.562ms, 10 AE 11.001ms -> 26.3ms) and
// (VLM 16.562ms, 16 AE 17.6016ms -> 32.7ms), in seconds.
std::vector<EtaPoint> builtin_eta_points();
double default_overlap_eta();

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class KvPolicy {
    MostRecent,  // each AE pass takes the newest finished VLM KV at its start
    FrameSticky, // AE passes keep the KV that was newest at the most recent
                 // VLM start, switching at most once per frame window
};

std::string to_string(KvPolicy p);
KvPolicy kv_policy_from(const std::string& name); // throws std::invalid_argument

struct SimConfig {
    double frame_rate = 30.0;     // camera frames per second
    int camera_latency = 2;       // frames between capture and availability
    double sensor_rate = 2000.0;  // proprioceptive samples per second
    double ae_rate_target = 480.0; // target AE pass rate (0 disables AE/sensor)
    double vlm_time = 0.016562;   // seconds of VLM work per frame, unstretched
    double ae_time = 0.0011001;   // seconds of AE work per pass, unstretched
    double overlap_eta = default_overlap_eta();
    double actuation_time = 0.060; // gripper actuation latency, seconds
    double trajectory_rate = 480.0; // trajectory buffer slots per second (fixed)
    double horizon = 1.0;          // seconds of frame captures to simulate
    uint64_t seed = 1;             // payload seed (timing is seed-independent)
    KvPolicy kv_policy = KvPolicy::MostRecent;
    double inference_time = 0.0273; // sequential capture->action latency used
                                    // by the reaction-budget scenario
    double frame_period() const { return 1.0 / frame_rate; }
    // Throws std::invalid_argument on out-of-range fields.
    void validate() const;
};

std::string serialize_sim_config(const SimConfig& cfg);
SimConfig parse_sim_config(const std::string& json); // throws ParseError
SimConfig load_sim_config(const std::string& path);

// ---------------------------------------------------------------------------
// Trajectory buffer
// ---------------------------------------------------------------------------

// Fixed-rate grid of action slots. The commit cursor advances monotonically
// with simulated time; slots at or before the cursor are immutable. Writes
// land in windows of at most kMaxWriteWindow consecutive future slots and the
// last writer wins on uncommitted overlap.
class TrajectoryBuffer {
  public:
    static constexpr int kMaxWriteWindow = 64;

    struct Slot {
        int64_t writer = -1; // AE pass id that produced the committed value
        double value = 0.0;
    };

    explicit TrajectoryBuffer(double rate = 480.0);

    double rate() const { return rate_; }
    double slot_time(int64_t k) const { return double(k) / rate_; }
    // Smallest slot index with slot_time strictly greater than t.
    int64_t slot_after(double t) const;
    // Smallest slot index with slot_time at or after t.
    int64_t slot_at_or_after(double t) const;

    double commit_cursor() const { return cursor_; }
    void advance_cursor(double t); // never moves backward

    // False when the slot is already committed (slot_time <= cursor).
    bool write_slot(int64_t k, int64_t writer, double value);
    // Writes [first, first+count); count must be in [1, kMaxWriteWindow].
    // Returns the number of slots accepted.
    int write_window(int64_t first, int count, int64_t writer, uint64_t seed);

    const Slot* slot(int64_t k) const; // nullptr when never written
    size_t written_count() const { return slots_.size(); }
    int64_t min_written() const;
    int64_t max_written() const;

  private:
    double rate_;
    double cursor_; // time; starts before every slot
    std::map<int64_t, Slot> slots_;
};

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

enum class EventKind {
    FrameCapture,
    FrameAvailable,
    SensorSample,
    VlmStart,
    VlmEnd,
    AeStart,
    AeEnd,
    Commit,
    TextToken,
};

const char* to_string(EventKind k);

struct Event {
    EventKind kind = EventKind::FrameCapture;
    double time = 0.0;
    // Primary index: frame id, vlm pass id (== frame id), ae pass id,
    // sensor sample index, committed slot index, or token index.
    int64_t id = -1;
    int64_t kv = -1;     // AeStart/AeEnd: VLM pass whose KV is consumed
    int64_t sensor = -1; // AeStart: sensor sample index consumed
    int64_t slot = -1;   // AeEnd: first trajectory slot of the write window
    int64_t writer = -1; // Commit: AE pass whose value is committed
};

struct StreamTrace {
    SimConfig config;          // validated configuration the trace was run with
    std::vector<Event> events; // nondecreasing in time
    bool feasible = true;      // closed-form per-frame makespan fits the period
    double est_frame_makespan = 0.0; // concurrent_makespan estimate, seconds
    double first_kv_time = -1.0;     // first VlmEnd, -1 when no frame ran
    double last_vlm_end = -1.0;
};

// Runs the stream simulation. Frames are captured for t < horizon and every
// enqueued pass runs to completion, so the trace drains past the horizon.
// Infeasible configs still produce a trace with feasible=false.
StreamTrace simulate(const SimConfig& cfg);

// ---------------------------------------------------------------------------
// Loop measurement
// ---------------------------------------------------------------------------

struct LoopStat {
    bool present = false; // false when no qualifying pair exists
    double best = 0.0;
    double mean = 0.0;
    double worst = 0.0;
    int64_t count = 0;
};

struct LoopReport {
    // Sensor sample -> first commit of the consuming AE's write window.
    LoopStat quick;
    // Frame capture -> first commit influenced by that frame's KV
    // (the first frame is excluded as cold start).
    LoopStat slow;
    // Per frame window [VlmStart_f, VlmStart_f+1): last stream completion
    // relative to the window start; frames without a successor are excluded.
    LoopStat frame_makespan;
    double vlm_per_s = 0.0;
    double ae_per_s = 0.0;
    double text_rate = 0.0; // tokens per second (one token per VLM pass)
    bool feasible = true;
    double est_frame_makespan = 0.0;
    double utilization_margin = 0.0; // 1 - est/frame_period
};

LoopReport measure_loops(const StreamTrace& trace);
std::string loop_report_json(const LoopReport& r);
std::string loop_report_summary(const LoopReport& r);

// ---------------------------------------------------------------------------
// Trace export (Chrome trace-event format)
// ---------------------------------------------------------------------------

// JSON array of {name, ph:"X", ts, dur, pid, tid} with ts/dur in
// microseconds; lanes: 1 camera, 2 VLM, 3 AE, 4 sensor, 5 commits, 6 text.
std::string export_trace_json(const StreamTrace& trace);
void export_trace(const StreamTrace& trace, const std::string& path);

// ---------------------------------------------------------------------------
// Reaction-budget scenario
// ---------------------------------------------------------------------------

// Hard deadline for the grab-the-falling-pen scenario, seconds.
inline constexpr double kReactionBudget = 0.200;

struct PenTerm {
    std::string name;
    double seconds = 0.0;
};

struct PenReport {
    std::vector<PenTerm> terms;
    double total = 0.0;
    bool success = false; // total <= kReactionBudget
};

// Reaction chain for an event released release_offset seconds after the most
// recent frame capture (0 <= offset < frame period): wait for the next
// capture (zero when the release coincides with one), camera latency,
// inference, actuation.
PenReport pen_scenario(const SimConfig& cfg, double release_offset);
// Supremum of the wait term: release immediately after a capture.
PenReport pen_worst_case(const SimConfig& cfg);

} // namespace rtvla
