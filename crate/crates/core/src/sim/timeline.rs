use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanes::{CostModel, Lane};
use crate::scheduler::{ActionKind, CompletionReport, Direction, Stream, UpdatePlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub action_id: usize,
    pub lane: Lane,
    pub kind: ActionKind,
    pub subgroups: Vec<usize>,
    pub start_ns: u64,
    pub end_ns: u64,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<Stream>,
    #[serde(default)]
    pub depends_on: Vec<usize>,
}

impl Event {
    fn queue(&self) -> Option<(Stream, Direction)> {
        Some((self.stream?, self.kind.direction()?))
    }
}

/// Interval during which a dynamic subgroup's FP32 state occupies the fast
/// tier: from its first prefetch start to its last flush end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidencyWindow {
    pub subgroup: usize,
    pub start_ns: u64,
    pub end_ns: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub events: Vec<Event>,
    /// Last end over everything the next iteration needs; FP32 state
    /// flushes may run past it.
    pub makespan_ns: u64,
    pub peak_fast_bytes: u64,
    /// How far state flushes run past the makespan.
    pub spillover_ns: u64,
    /// FP16 model and gradients, resident for the whole phase.
    pub baseline_fast_bytes: u64,
    /// Optimizer state of static residents.
    pub static_fast_bytes: u64,
    pub windows: Vec<ResidencyWindow>,
    pub staging_slots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancySample {
    pub t_ns: u64,
    pub bytes: u64,
}

impl Timeline {
    pub fn empty() -> Self {
        Timeline {
            events: Vec::new(),
            makespan_ns: 0,
            peak_fast_bytes: 0,
            spillover_ns: 0,
            baseline_fast_bytes: 0,
            static_fast_bytes: 0,
            windows: Vec::new(),
            staging_slots: 0,
        }
    }

    pub(crate) fn from_report(plan: &UpdatePlan, report: &CompletionReport, cost: &CostModel) -> Self {
        let sizes = cost.sizes();
        let events: Vec<Event> = plan
            .actions
            .iter()
            .map(|a| {
                let span = report.spans[a.id];
                Event {
                    action_id: a.id,
                    lane: Lane::of(a.kind),
                    kind: a.kind,
                    subgroups: a.subgroups.clone(),
                    start_ns: span.start_ns,
                    end_ns: span.end_ns,
                    bytes: cost.bytes(a),
                    stream: a.stream,
                    depends_on: report.dependencies[a.id].clone(),
                }
            })
            .collect();

        let makespan_ns = events
            .iter()
            .filter(|e| !e.kind.is_state_flush())
            .map(|e| e.end_ns)
            .max()
            .unwrap_or(0);
        let last_end = events.iter().map(|e| e.end_ns).max().unwrap_or(0);

        let mut spans: HashMap<usize, (u64, u64)> = HashMap::new();
        for e in &events {
            let s = e.subgroups[0];
            if plan.is_static(s) {
                continue;
            }
            if e.kind.is_prefetch() || e.kind.is_flush() {
                let w = spans.entry(s).or_insert((u64::MAX, 0));
                if e.kind.is_prefetch() {
                    w.0 = w.0.min(e.start_ns);
                }
                if e.kind.is_flush() {
                    w.1 = w.1.max(e.end_ns);
                }
            }
        }
        let mut windows: Vec<ResidencyWindow> = spans
            .into_iter()
            .map(|(s, (start, end))| ResidencyWindow {
                subgroup: s,
                start_ns: start,
                end_ns: end.max(start),
                bytes: 12 * sizes[s],
            })
            .collect();
        windows.sort_by_key(|w| (w.start_ns, w.subgroup));

        let total: u64 = sizes.iter().sum();
        let mut tl = Timeline {
            events,
            makespan_ns,
            peak_fast_bytes: 0,
            spillover_ns: last_end.saturating_sub(makespan_ns),
            baseline_fast_bytes: 4 * total,
            static_fast_bytes: plan.static_set.iter().map(|&s| 12 * sizes[s]).sum(),
            windows,
            staging_slots: report.staging_slots,
        };
        tl.peak_fast_bytes = tl.memory_trace().iter().map(|s| s.bytes).max().unwrap_or(0);
        tl
    }

    pub fn memory_trace(&self) -> Vec<OccupancySample> {
        memory_trace(self)
    }

    /// Structural checks: lane exclusivity, dependency order, stream FIFO,
    /// at most two (and at most `staging_slots`) dynamic subgroups on the
    /// fast tier, and consistency of the derived fields.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTimeline(m));
        let by_id: HashMap<usize, &Event> = self.events.iter().map(|e| (e.action_id, e)).collect();
        if by_id.len() != self.events.len() {
            return bad("duplicate action ids".into());
        }
        for e in &self.events {
            if e.end_ns < e.start_ns {
                return bad(format!("event {} ends before it starts", e.action_id));
            }
            for d in &e.depends_on {
                let Some(dep) = by_id.get(d) else {
                    return bad(format!("event {} depends on missing {d}", e.action_id));
                };
                if dep.end_ns > e.start_ns {
                    return bad(format!(
                        "event {} starts at {} before dependency {d} ends at {}",
                        e.action_id, e.start_ns, dep.end_ns
                    ));
                }
            }
        }
        check_lane_exclusive(self.events.iter().map(|e| (e.lane, e.start_ns, e.end_ns, e.action_id)))?;

        let mut queues: HashMap<(Stream, Direction), Vec<&Event>> = HashMap::new();
        for e in &self.events {
            if let Some(q) = e.queue() {
                queues.entry(q).or_default().push(e);
            }
        }
        for (q, mut evs) in queues {
            evs.sort_by_key(|e| e.action_id);
            for w in evs.windows(2) {
                if w[0].end_ns > w[1].start_ns {
                    return bad(format!(
                        "stream {q:?}: action {} overtakes action {}",
                        w[1].action_id, w[0].action_id
                    ));
                }
            }
        }

        let limit = self.staging_slots.min(2);
        let mut points: Vec<(u64, i64)> = Vec::new();
        for w in &self.windows {
            points.push((w.start_ns, 1));
            points.push((w.end_ns, -1));
        }
        // ends sort before starts at the same instant
        points.sort();
        let mut live = 0i64;
        for (_, d) in points {
            live += d;
            if live > limit as i64 {
                return bad(format!("{live} dynamic subgroups resident, limit {limit}"));
            }
        }

        let makespan = self
            .events
            .iter()
            .filter(|e| !e.kind.is_state_flush())
            .map(|e| e.end_ns)
            .max()
            .unwrap_or(0);
        if makespan != self.makespan_ns {
            return bad(format!("makespan {} != {makespan}", self.makespan_ns));
        }
        let last = self.events.iter().map(|e| e.end_ns).max().unwrap_or(0);
        if self.spillover_ns != last.saturating_sub(makespan) {
            return bad("spillover does not match the trailing flushes".into());
        }
        let peak = self.memory_trace().iter().map(|s| s.bytes).max().unwrap_or(0);
        if peak != self.peak_fast_bytes {
            return bad(format!("peak {} != traced {peak}", self.peak_fast_bytes));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.events {
            let sg: Vec<String> = e.subgroups.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.action_id,
                e.lane,
                e.kind,
                sg.join(";"),
                e.start_ns,
                e.end_ns,
                e.bytes
            );
        }
        out
    }
}

pub const CSV_HEADER: &str = "event_id,lane,kind,subgroup,start_ns,end_ns,bytes";

fn check_lane_exclusive(items: impl Iterator<Item = (Lane, u64, u64, usize)>) -> Result<()> {
    let mut per_lane: HashMap<Lane, Vec<(u64, u64, usize)>> = HashMap::new();
    for (lane, s, e, id) in items {
        per_lane.entry(lane).or_default().push((s, e, id));
    }
    for (lane, mut iv) in per_lane {
        iv.sort();
        for w in iv.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(Error::InvalidTimeline(format!(
                    "{lane}: events {} and {} overlap",
                    w[0].2, w[1].2
                )));
            }
        }
    }
    Ok(())
}

/// Piecewise-constant fast-tier occupancy: each sample holds from its time
/// until the next sample.
pub fn memory_trace(timeline: &Timeline) -> Vec<OccupancySample> {
    let base = timeline.baseline_fast_bytes + timeline.static_fast_bytes;
    let mut deltas: Vec<(u64, i64)> = Vec::with_capacity(2 * timeline.windows.len());
    for w in &timeline.windows {
        deltas.push((w.start_ns, w.bytes as i64));
        deltas.push((w.end_ns, -(w.bytes as i64)));
    }
    deltas.sort_by_key(|&(t, d)| (t, d));
    let mut out = vec![OccupancySample { t_ns: 0, bytes: base }];
    let mut cur = base as i64;
    let mut i = 0;
    while i < deltas.len() {
        let t = deltas[i].0;
        while i < deltas.len() && deltas[i].0 == t {
            cur += deltas[i].1;
            i += 1;
        }
        match out.last_mut() {
            Some(last) if last.t_ns == t => last.bytes = cur as u64,
            _ => out.push(OccupancySample {
                t_ns: t,
                bytes: cur as u64,
            }),
        }
    }
    out
}

/// One row of an exported trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvEvent {
    pub event_id: usize,
    pub lane: Lane,
    pub kind: ActionKind,
    pub subgroups: Vec<usize>,
    pub start_ns: u64,
    pub end_ns: u64,
    pub bytes: u64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvEvent>> {
    let bad = |line: usize, m: &str| Error::InvalidTimeline(format!("line {line}: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let ln = n + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(ln, "expected 7 fields"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(ln, "bad number"));
        out.push(CsvEvent {
            event_id: num(f[0])? as usize,
            lane: Lane::from_name(f[1]).ok_or_else(|| bad(ln, "unknown lane"))?,
            kind: ActionKind::from_name(f[2]).ok_or_else(|| bad(ln, "unknown kind"))?,
            subgroups: f[3]
                .split(';')
                .map(|s| num(s).map(|v| v as usize))
                .collect::<Result<_>>()?,
            start_ns: num(f[4])?,
            end_ns: num(f[5])?,
            bytes: num(f[6])?,
        });
    }
    Ok(out)
}

/// Checks an exported trace on its own: ids unique, intervals well formed,
/// kinds on their lanes, lanes exclusive.
pub fn validate_csv(text: &str) -> Result<Vec<CsvEvent>> {
    let events = parse_csv(text)?;
    let mut seen = std::collections::HashSet::new();
    for e in &events {
        if !seen.insert(e.event_id) {
            return Err(Error::InvalidTimeline(format!("duplicate event {}", e.event_id)));
        }
        if e.end_ns < e.start_ns {
            return Err(Error::InvalidTimeline(format!("event {} is inverted", e.event_id)));
        }
        if Lane::of(e.kind) != e.lane {
            return Err(Error::InvalidTimeline(format!(
                "event {} ({}) on lane {}",
                e.event_id, e.kind, e.lane
            )));
        }
    }
    check_lane_exclusive(events.iter().map(|e| (e.lane, e.start_ns, e.end_ns, e.event_id)))?;
    Ok(events)
}
