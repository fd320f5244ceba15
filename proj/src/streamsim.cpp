#include "rtvla/streamsim.hpp"

#include "rtvla/serialize.hpp"
#include "rtvla/tensor.hpp"

#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rtvla {

namespace {

using nlohmann::ordered_json;

// Tie tolerance on simulated clocks (seconds) and on remaining work.
constexpr double kTimeEps = 1e-12;
constexpr double kWorkEps = 1e-15;

constexpr double kInf = std::numeric_limits<double>::infinity();

} // namespace

// ---------------------------------------------------------------------------
// Interference model
// ---------------------------------------------------------------------------

double concurrent_makespan(double t_a, double t_b, double eta) {
    if (t_a < 0.0 || t_b < 0.0)
        throw std::invalid_argument("concurrent_makespan: durations must be nonnegative");
    if (!(eta >= 0.0 && eta <= 1.0))
        throw std::invalid_argument("concurrent_makespan: eta must lie in [0,1]");
    return std::max(t_a, t_b) + (1.0 - eta) * std::min(t_a, t_b);
}

EtaFit calibrate_eta(const std::vector<EtaPoint>& points) {
    // measured = max + (1-eta)*min  =>  eta*min = max + min - measured.
    // Least squares over all points with min > 0.
    double num = 0.0;
    double den = 0.0;
    for (const EtaPoint& p : points) {
        if (p.t_a < 0.0 || p.t_b < 0.0)
            throw std::invalid_argument("calibrate_eta: durations must be nonnegative");
        double lo = std::min(p.t_a, p.t_b);
        double hi = std::max(p.t_a, p.t_b);
        if (lo <= 0.0) continue; // nothing overlaps; the point carries no signal
        num += lo * (hi + lo - p.measured);
        den += lo * lo;
    }
    if (den == 0.0)
        throw std::invalid_argument(
            "calibrate_eta: all points are degenerate (min duration 0)");
    EtaFit fit;
    fit.eta = num / den;
    if (fit.eta < 0.0) {
        fit.eta = 0.0;
        fit.clamped = true;
    } else if (fit.eta > 1.0) {
        fit.eta = 1.0;
        fit.clamped = true;
    }
    return fit;
}

std::vector<EtaPoint> builtin_eta_points() {
    // Measured concurrent makespans for (VLM, 10 AE) and (VLM, 16 AE), seconds.
    return {
        {0.016562, 0.011001, 0.0263},
        {0.016562, 0.0176016, 0.0327},
    };
}

double default_overlap_eta() {
    static const double eta = calibrate_eta(builtin_eta_points()).eta;
    return eta;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::string to_string(KvPolicy p) {
    return p == KvPolicy::MostRecent ? "most_recent" : "frame_sticky";
}

KvPolicy kv_policy_from(const std::string& name) {
    if (name == "most_recent") return KvPolicy::MostRecent;
    if (name == "frame_sticky") return KvPolicy::FrameSticky;
    throw std::invalid_argument("unknown kv policy '" + name +
                                "' (expected most_recent or frame_sticky)");
}

void SimConfig::validate() const {
    if (!(frame_rate > 0.0)) throw std::invalid_argument("frame_rate must be positive");
    if (camera_latency < 0) throw std::invalid_argument("camera_latency must be >= 0");
    if (!(sensor_rate > 0.0)) throw std::invalid_argument("sensor_rate must be positive");
    if (ae_rate_target < 0.0) throw std::invalid_argument("ae_rate_target must be >= 0");
    if (!(vlm_time > 0.0)) throw std::invalid_argument("vlm_time must be positive");
    if (ae_time < 0.0) throw std::invalid_argument("ae_time must be >= 0");
    if (!(overlap_eta >= 0.0 && overlap_eta <= 1.0))
        throw std::invalid_argument("overlap_eta must lie in [0,1]");
    if (actuation_time < 0.0) throw std::invalid_argument("actuation_time must be >= 0");
    if (trajectory_rate != 480.0)
        throw std::invalid_argument("trajectory_rate is fixed at 480");
    if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
    if (inference_time < 0.0) throw std::invalid_argument("inference_time must be >= 0");
}

std::string serialize_sim_config(const SimConfig& cfg) {
    ordered_json j;
    j["schema_version"] = 1;
    j["frame_rate"] = cfg.frame_rate;
    j["camera_latency"] = cfg.camera_latency;
    j["sensor_rate"] = cfg.sensor_rate;
    j["ae_rate_target"] = cfg.ae_rate_target;
    j["vlm_time"] = cfg.vlm_time;
    j["ae_time"] = cfg.ae_time;
    j["overlap_eta"] = cfg.overlap_eta;
    j["actuation_time"] = cfg.actuation_time;
    j["trajectory_rate"] = cfg.trajectory_rate;
    j["horizon"] = cfg.horizon;
    j["seed"] = cfg.seed;
    j["kv_policy"] = to_string(cfg.kv_policy);
    j["inference_time"] = cfg.inference_time;
    return j.dump(2) + "\n";
}

SimConfig parse_sim_config(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        throw ParseError(std::string("sim config: ") + e.what());
    }
    jsonio::Obj o(j, "sim config");
    int version = o.num<int>("schema_version", 1);
    if (version != 1)
        throw ParseError("sim config: unsupported schema_version " + std::to_string(version));
    SimConfig cfg;
    cfg.frame_rate = o.num<double>("frame_rate", cfg.frame_rate);
    cfg.camera_latency = o.num<int>("camera_latency", cfg.camera_latency);
    cfg.sensor_rate = o.num<double>("sensor_rate", cfg.sensor_rate);
    cfg.ae_rate_target = o.num<double>("ae_rate_target", cfg.ae_rate_target);
    cfg.vlm_time = o.num<double>("vlm_time", cfg.vlm_time);
    cfg.ae_time = o.num<double>("ae_time", cfg.ae_time);
    cfg.overlap_eta = o.num<double>("overlap_eta", cfg.overlap_eta);
    cfg.actuation_time = o.num<double>("actuation_time", cfg.actuation_time);
    cfg.trajectory_rate = o.num<double>("trajectory_rate", cfg.trajectory_rate);
    cfg.horizon = o.num<double>("horizon", cfg.horizon);
    cfg.seed = o.num<uint64_t>("seed", cfg.seed);
    std::string policy = o.str("kv_policy", to_string(cfg.kv_policy));
    try {
        cfg.kv_policy = kv_policy_from(policy);
    } catch (const std::invalid_argument& e) {
        throw ParseError(std::string("sim config.kv_policy: ") + e.what());
    }
    cfg.inference_time = o.num<double>("inference_time", cfg.inference_time);
    o.finish();
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ParseError(std::string("sim config: ") + e.what());
    }
    return cfg;
}

SimConfig load_sim_config(const std::string& path) {
    try {
        return parse_sim_config(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Trajectory buffer
// ---------------------------------------------------------------------------

TrajectoryBuffer::TrajectoryBuffer(double rate)
    : rate_(rate), cursor_(-kInf) {
    if (!(rate > 0.0))
        throw std::invalid_argument("TrajectoryBuffer: rate must be positive");
}

int64_t TrajectoryBuffer::slot_after(double t) const {
    int64_t k = int64_t(std::floor(t * rate_)) + 1;
    while (slot_time(k) <= t) ++k;
    while (slot_time(k - 1) > t) --k;
    return k;
}

int64_t TrajectoryBuffer::slot_at_or_after(double t) const {
    int64_t k = int64_t(std::ceil(t * rate_));
    while (slot_time(k) < t) ++k;
    while (slot_time(k - 1) >= t) --k;
    return k;
}

void TrajectoryBuffer::advance_cursor(double t) {
    cursor_ = std::max(cursor_, t);
}

bool TrajectoryBuffer::write_slot(int64_t k, int64_t writer, double value) {
    if (slot_time(k) <= cursor_) return false; // committed slots are immutable
    slots_[k] = Slot{writer, value};
    return true;
}

int TrajectoryBuffer::write_window(int64_t first, int count, int64_t writer,
                                   uint64_t seed) {
    if (count < 1 || count > kMaxWriteWindow)
        throw std::invalid_argument("write_window: count must lie in [1, 64]");
    int accepted = 0;
    for (int i = 0; i < count; ++i) {
        int64_t k = first + i;
        double value = Rng(seed_hash(seed, "traj", uint64_t(writer), uint64_t(k)))
                           .next_unit();
        if (write_slot(k, writer, value)) ++accepted;
    }
    return accepted;
}

const TrajectoryBuffer::Slot* TrajectoryBuffer::slot(int64_t k) const {
    auto it = slots_.find(k);
    return it == slots_.end() ? nullptr : &it->second;
}

int64_t TrajectoryBuffer::min_written() const {
    return slots_.empty() ? -1 : slots_.begin()->first;
}

int64_t TrajectoryBuffer::max_written() const {
    return slots_.empty() ? -1 : slots_.rbegin()->first;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::FrameCapture: return "frame_capture";
        case EventKind::FrameAvailable: return "frame_available";
        case EventKind::SensorSample: return "sensor_sample";
        case EventKind::VlmStart: return "vlm_start";
        case EventKind::VlmEnd: return "vlm_end";
        case EventKind::AeStart: return "ae_start";
        case EventKind::AeEnd: return "ae_end";
        case EventKind::Commit: return "commit";
        case EventKind::TextToken: return "text_token";
    }
    return "?";
}

namespace {

struct VlmPass {
    int64_t id = 0; // == frame id
    double available = 0.0;
    double start = -1.0;
    double end = -1.0;
};

struct AePass {
    int64_t id = 0;
    double start = 0.0;
    double end = 0.0;
    int64_t kv = -1;
    int64_t sensor = -1;
    int64_t head = -1; // first trajectory slot of the write window
};

} // namespace

StreamTrace simulate(const SimConfig& cfg) {
    cfg.validate();
    StreamTrace tr;
    tr.config = cfg;

    const double period = cfg.frame_period();
    const double co_rate = 1.0 / (2.0 - cfg.overlap_eta);
    const bool ae_on = cfg.ae_rate_target > 0.0 && cfg.ae_time > 0.0;

    const double ae_per_frame = cfg.ae_rate_target / cfg.frame_rate;
    tr.est_frame_makespan =
        concurrent_makespan(cfg.vlm_time, ae_per_frame * cfg.ae_time, cfg.overlap_eta);
    tr.feasible = tr.est_frame_makespan <= period + kTimeEps;

    // One VLM job per frame captured strictly before the horizon. Every
    // enqueued job runs to completion, so the trace drains past the horizon.
    const int64_t frames = int64_t(std::ceil(cfg.horizon * cfg.frame_rate - 1e-9));
    std::vector<VlmPass> vlms(static_cast<size_t>(frames));
    for (int64_t f = 0; f < frames; ++f) {
        vlms[size_t(f)].id = f;
        vlms[size_t(f)].available = double(f + cfg.camera_latency) / cfg.frame_rate;
    }

    std::vector<AePass> aes;
    auto ae_grid_time = [&](int64_t k) { return double(k) / cfg.ae_rate_target; };

    // Fluid two-stream integration: each stream serves its queue in order,
    // progressing at rate 1 alone and co_rate while both are resident.
    double t = 0.0;
    size_t vq = 0;
    bool v_busy = false;
    double v_rem = 0.0;
    VlmPass* v_cur = nullptr;
    int64_t ae_next = -1; // next AE grid index; -1 until the first KV exists
    bool a_busy = false;
    double a_rem = 0.0;
    AePass a_cur;
    int64_t kv_latest = -1;
    int64_t kv_at_last_vlm_start = -1;

    auto vlm_pending = [&] { return vq < vlms.size(); };
    // While VLM work remains every grid point is admitted; afterwards the AE
    // stream drains for one extra frame period past the final KV update.
    auto ae_admissible = [&](int64_t k) {
        if (!ae_on || k < 0 || tr.first_kv_time < 0.0) return false;
        if (vlm_pending() || v_busy) return true;
        return ae_grid_time(k) <= tr.last_vlm_end + period + kTimeEps;
    };

    while (true) {
        if (!v_busy && vlm_pending() && vlms[vq].available <= t + kTimeEps) {
            v_cur = &vlms[vq];
            v_cur->start = t;
            v_rem = cfg.vlm_time;
            v_busy = true;
            kv_at_last_vlm_start = kv_latest;
            ++vq;
        }
        if (!a_busy && ae_admissible(ae_next) && ae_grid_time(ae_next) <= t + kTimeEps) {
            a_cur = AePass{};
            a_cur.id = int64_t(aes.size());
            a_cur.start = t;
            int64_t sticky = kv_at_last_vlm_start >= 0 ? kv_at_last_vlm_start : kv_latest;
            a_cur.kv = cfg.kv_policy == KvPolicy::MostRecent ? kv_latest : sticky;
            a_cur.sensor = int64_t(std::floor(t * cfg.sensor_rate + 1e-9));
            a_rem = cfg.ae_time;
            a_busy = true;
            ++ae_next;
        }

        double rv = v_busy ? (a_busy ? co_rate : 1.0) : 0.0;
        double ra = a_busy ? (v_busy ? co_rate : 1.0) : 0.0;

        double tn = kInf;
        if (v_busy) tn = std::min(tn, t + v_rem / rv);
        if (a_busy) tn = std::min(tn, t + a_rem / ra);
        if (!v_busy && vlm_pending()) tn = std::min(tn, std::max(t, vlms[vq].available));
        if (!a_busy && ae_admissible(ae_next))
            tn = std::min(tn, std::max(t, ae_grid_time(ae_next)));
        if (tn == kInf) break;

        double dt = tn - t;
        if (v_busy) v_rem -= dt * rv;
        if (a_busy) a_rem -= dt * ra;
        t = tn;

        if (v_busy && v_rem <= kWorkEps) {
            v_cur->end = t;
            v_busy = false;
            kv_latest = v_cur->id;
            tr.last_vlm_end = t;
            if (tr.first_kv_time < 0.0) {
                tr.first_kv_time = t;
                if (ae_on) {
                    // Grid points before the first KV are dropped outright.
                    ae_next = int64_t(std::ceil(t * cfg.ae_rate_target - 1e-9));
                }
            }
        }
        if (a_busy && a_rem <= kWorkEps) {
            a_cur.end = t;
            a_busy = false;
            aes.push_back(a_cur);
        }
    }

    // Trajectory writes and commits. Writes land when the producing AE ends;
    // each slot commits at its own timestamp with whatever was last written.
    TrajectoryBuffer buf(cfg.trajectory_rate);
    std::vector<Event> ev;
    ev.reserve(size_t(frames) * 4 + aes.size() * 3 + 64);

    for (const VlmPass& v : vlms) {
        Event cap;
        cap.kind = EventKind::FrameCapture;
        cap.time = double(v.id) / cfg.frame_rate;
        cap.id = v.id;
        ev.push_back(cap);
        Event avail = cap;
        avail.kind = EventKind::FrameAvailable;
        avail.time = v.available;
        ev.push_back(avail);
        Event vs = cap;
        vs.kind = EventKind::VlmStart;
        vs.time = v.start;
        ev.push_back(vs);
        Event vend = cap;
        vend.kind = EventKind::VlmEnd;
        vend.time = v.end;
        ev.push_back(vend);
        Event tok = cap;
        tok.kind = EventKind::TextToken;
        tok.time = v.end;
        ev.push_back(tok);
    }

    if (ae_on) {
        double last_start = aes.empty() ? 0.0 : aes.back().start;
        int64_t sensors =
            int64_t(std::floor(std::max(cfg.horizon, last_start) * cfg.sensor_rate + 1e-9));
        for (int64_t m = 0; m <= sensors; ++m) {
            Event e;
            e.kind = EventKind::SensorSample;
            e.time = double(m) / cfg.sensor_rate;
            e.id = m;
            ev.push_back(e);
        }
    }

    for (AePass& p : aes) {
        p.head = buf.slot_after(p.end);
        Event s;
        s.kind = EventKind::AeStart;
        s.time = p.start;
        s.id = p.id;
        s.kv = p.kv;
        s.sensor = p.sensor;
        ev.push_back(s);
        Event e = s;
        e.kind = EventKind::AeEnd;
        e.time = p.end;
        e.sensor = -1;
        e.slot = p.head;
        ev.push_back(e);
    }

    if (!aes.empty()) {
        int64_t first_slot = aes.front().head;
        int64_t last_slot = aes.back().head + TrajectoryBuffer::kMaxWriteWindow - 1;
        size_t wi = 0;
        for (int64_t k = first_slot; k <= last_slot; ++k) {
            double st = buf.slot_time(k);
            while (wi < aes.size() && aes[wi].end < st) {
                buf.write_window(aes[wi].head, TrajectoryBuffer::kMaxWriteWindow,
                                 aes[wi].id, cfg.seed);
                ++wi;
            }
            if (const TrajectoryBuffer::Slot* s = buf.slot(k)) {
                Event c;
                c.kind = EventKind::Commit;
                c.time = st;
                c.id = k;
                c.writer = s->writer;
                ev.push_back(c);
            }
            buf.advance_cursor(st);
        }
    }

    std::sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) {
        if (a.time != b.time) return a.time < b.time;
        if (a.kind != b.kind) return int(a.kind) < int(b.kind);
        return a.id < b.id;
    });
    tr.events = std::move(ev);
    return tr;
}

// ---------------------------------------------------------------------------
// Loop measurement
// ---------------------------------------------------------------------------

namespace {

struct StatAcc {
    double sum = 0.0;
    LoopStat s;

    void add(double v) {
        if (!s.present) {
            s.present = true;
            s.best = s.worst = v;
        } else {
            s.best = std::min(s.best, v);
            s.worst = std::max(s.worst, v);
        }
        sum += v;
        ++s.count;
    }
    LoopStat done() {
        if (s.present) s.mean = sum / double(s.count);
        return s;
    }
};

} // namespace

LoopReport measure_loops(const StreamTrace& tr) {
    const SimConfig& cfg = tr.config;
    LoopReport r;
    r.feasible = tr.feasible;
    r.est_frame_makespan = tr.est_frame_makespan;
    r.utilization_margin = 1.0 - tr.est_frame_makespan * cfg.frame_rate;

    struct AeInfo {
        double start = -1.0, end = -1.0, commit = -1.0;
        int64_t kv = -1, sensor = -1;
    };
    std::map<int64_t, double> vlm_start, vlm_end;
    std::map<int64_t, AeInfo> ae;
    int64_t vlm_count = 0, ae_count = 0, tokens = 0;

    for (const Event& e : tr.events) {
        switch (e.kind) {
            case EventKind::VlmStart:
                vlm_start[e.id] = e.time;
                ++vlm_count;
                break;
            case EventKind::VlmEnd:
                vlm_end[e.id] = e.time;
                break;
            case EventKind::AeStart: {
                AeInfo& a = ae[e.id];
                a.start = e.time;
                a.kv = e.kv;
                a.sensor = e.sensor;
                ++ae_count;
                break;
            }
            case EventKind::AeEnd:
                ae[e.id].end = e.time;
                break;
            case EventKind::Commit: {
                auto it = ae.find(e.writer);
                if (it != ae.end() && it->second.commit < 0.0) it->second.commit = e.time;
                break;
            }
            case EventKind::TextToken:
                ++tokens;
                break;
            default:
                break;
        }
    }

    r.vlm_per_s = double(vlm_count) / cfg.horizon;
    r.ae_per_s = double(ae_count) / cfg.horizon;
    r.text_rate = double(tokens) / cfg.horizon;

    // Quick loop: consumed sensor sample -> first commit of this pass's data.
    StatAcc quick;
    for (const auto& [id, a] : ae) {
        if (a.commit >= 0.0 && a.sensor >= 0)
            quick.add(a.commit - double(a.sensor) / cfg.sensor_rate);
    }
    r.quick = quick.done();

    // Slow loop: frame capture -> first commit influenced by that frame's KV.
    // Frame 0 is excluded as cold start (nothing contends with its VLM pass).
    std::map<int64_t, const AeInfo*> first_for_kv;
    for (const auto& [id, a] : ae) {
        if (a.kv >= 0 && !first_for_kv.count(a.kv)) first_for_kv[a.kv] = &a;
    }
    StatAcc slow;
    for (const auto& [f, a] : first_for_kv) {
        if (f < 1 || a->commit < 0.0) continue;
        slow.add(a->commit - double(f) / cfg.frame_rate);
    }
    r.slow = slow.done();

    // Per-frame makespan over windows [VlmStart_f, VlmStart_f+1).
    std::vector<std::pair<double, double>> spans; // (start, end), start-ordered
    spans.reserve(ae.size());
    for (const auto& [id, a] : ae)
        if (a.end >= 0.0) spans.emplace_back(a.start, a.end);
    StatAcc mk;
    size_t ai = 0;
    for (const auto& [f, s0] : vlm_start) {
        auto next = vlm_start.find(f + 1);
        if (next == vlm_start.end()) continue;
        double window_end = next->second;
        auto e = vlm_end.find(f);
        double m = e == vlm_end.end() ? 0.0 : e->second - s0;
        while (ai < spans.size() && spans[ai].first < s0) ++ai;
        size_t j = ai;
        for (; j < spans.size() && spans[j].first < window_end; ++j)
            m = std::max(m, spans[j].second - s0);
        ai = j;
        mk.add(m);
    }
    r.frame_makespan = mk.done();
    return r;
}

namespace {

ordered_json stat_json(const LoopStat& s) {
    ordered_json j;
    j["present"] = s.present;
    if (s.present) {
        j["best"] = s.best;
        j["mean"] = s.mean;
        j["worst"] = s.worst;
        j["count"] = s.count;
    }
    return j;
}

std::string stat_line(const char* label, const LoopStat& s) {
    char buf[160];
    if (!s.present) {
        std::snprintf(buf, sizeof buf, "%-15s none", label);
    } else {
        std::snprintf(buf, sizeof buf,
                      "%-15s best %8.3f ms  mean %8.3f ms  worst %8.3f ms  (n=%lld)",
                      label, s.best * 1e3, s.mean * 1e3, s.worst * 1e3,
                      (long long)s.count);
    }
    return buf;
}

} // namespace

std::string loop_report_json(const LoopReport& r) {
    ordered_json j;
    j["schema_version"] = 1;
    j["quick_loop"] = stat_json(r.quick);
    j["slow_loop"] = stat_json(r.slow);
    j["frame_makespan"] = stat_json(r.frame_makespan);
    j["vlm_per_s"] = r.vlm_per_s;
    j["ae_per_s"] = r.ae_per_s;
    j["text_rate"] = r.text_rate;
    j["feasible"] = r.feasible;
    j["est_frame_makespan_s"] = r.est_frame_makespan;
    j["utilization_margin"] = r.utilization_margin;
    return j.dump(2) + "\n";
}

std::string loop_report_summary(const LoopReport& r) {
    std::ostringstream ss;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "feasible: %s (est frame makespan %.3f ms, margin %.1f%%)",
                  r.feasible ? "yes" : "no", r.est_frame_makespan * 1e3,
                  r.utilization_margin * 100.0);
    ss << buf << "\n";
    std::snprintf(buf, sizeof buf,
                  "rates: %.1f VLM/s, %.1f AE/s, %.1f text tokens/s", r.vlm_per_s,
                  r.ae_per_s, r.text_rate);
    ss << buf << "\n";
    ss << stat_line("quick loop", r.quick) << "\n";
    ss << stat_line("slow loop", r.slow) << "\n";
    ss << stat_line("frame makespan", r.frame_makespan) << "\n";
    return ss.str();
}

// ---------------------------------------------------------------------------
// Trace export
// ---------------------------------------------------------------------------

std::string export_trace_json(const StreamTrace& tr) {
    // Pair up start/end kinds so each stream renders as duration slices.
    std::map<int64_t, double> frame_avail, vlm_ends, ae_ends;
    for (const Event& e : tr.events) {
        if (e.kind == EventKind::FrameAvailable) frame_avail[e.id] = e.time;
        if (e.kind == EventKind::VlmEnd) vlm_ends[e.id] = e.time;
        if (e.kind == EventKind::AeEnd) ae_ends[e.id] = e.time;
    }
    auto us = [](double s) { return s * 1e6; };
    ordered_json arr = ordered_json::array();
    auto emit = [&](const std::string& name, double ts, double dur, int tid) {
        ordered_json j;
        j["name"] = name;
        j["ph"] = "X";
        j["ts"] = us(ts);
        j["dur"] = us(dur);
        j["pid"] = 1;
        j["tid"] = tid;
        arr.push_back(std::move(j));
    };
    for (const Event& e : tr.events) {
        switch (e.kind) {
            case EventKind::FrameCapture: {
                auto it = frame_avail.find(e.id);
                double dur = it == frame_avail.end() ? 0.0 : it->second - e.time;
                emit("frame " + std::to_string(e.id), e.time, dur, 1);
                break;
            }
            case EventKind::VlmStart: {
                auto it = vlm_ends.find(e.id);
                double dur = it == vlm_ends.end() ? 0.0 : it->second - e.time;
                emit("vlm " + std::to_string(e.id), e.time, dur, 2);
                break;
            }
            case EventKind::AeStart: {
                auto it = ae_ends.find(e.id);
                double dur = it == ae_ends.end() ? 0.0 : it->second - e.time;
                emit("ae " + std::to_string(e.id), e.time, dur, 3);
                break;
            }
            case EventKind::SensorSample:
                emit("sensor " + std::to_string(e.id), e.time, 0.0, 4);
                break;
            case EventKind::Commit:
                emit("commit " + std::to_string(e.id), e.time, 0.0, 5);
                break;
            case EventKind::TextToken:
                emit("token " + std::to_string(e.id), e.time, 0.0, 6);
                break;
            default:
                break;
        }
    }
    return arr.dump() + "\n";
}

void export_trace(const StreamTrace& tr, const std::string& path) {
    write_text_file(path, export_trace_json(tr));
}

// ---------------------------------------------------------------------------
// Reaction-budget scenario
// ---------------------------------------------------------------------------

namespace {

PenReport pen_build(const SimConfig& cfg, double wait) {
    PenReport r;
    r.terms = {
        {"wait for next frame", wait},
        {"camera latency", double(cfg.camera_latency) / cfg.frame_rate},
        {"inference", cfg.inference_time},
        {"actuation", cfg.actuation_time},
    };
    for (const PenTerm& term : r.terms) r.total += term.seconds;
    r.success = r.total <= kReactionBudget + kTimeEps;
    return r;
}

} // namespace

PenReport pen_scenario(const SimConfig& cfg, double release_offset) {
    cfg.validate();
    if (!(release_offset >= 0.0 && release_offset < cfg.frame_period()))
        throw std::invalid_argument(
            "pen_scenario: release offset must lie in [0, frame period)");
    double wait = release_offset == 0.0 ? 0.0 : cfg.frame_period() - release_offset;
    return pen_build(cfg, wait);
}

PenReport pen_worst_case(const SimConfig& cfg) {
    cfg.validate();
    return pen_build(cfg, cfg.frame_period());
}

} // namespace rtvla
