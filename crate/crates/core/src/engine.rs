//! Event-driven simulation of the spatial Λ-coalescent on a finite geography.
//!
//! The chain is simulated through its jump chain. With `b_i` blocks at site
//! `i`, site `i` carries rate `λ_{b_i} + b_i (1 - p(i,i)) [+ b_i]`: mergers,
//! effective migrations and (optionally) killing. A Fenwick tree over sites
//! picks the site, then the event type is chosen in proportion. A merger
//! draws its size `k` from the merge law at `b_i` and a uniform `k`-subset of
//! the site's blocks.
//!
//! Blocks have stable ids: initially the index in the starting partition
//! (ordered by least element), and a merged block keeps the smallest
//! participating id, which is also the one holding the least element.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fenwick::Fenwick;
use crate::geometry::GeographySpec;
use crate::math;
use crate::partition::{subset_ranks, Label, LabeledPartition};
use crate::rates::RateKernel;
use crate::seeding::{replica_rng, ReplicaRng};

/// One row of the merge law: total rate λ_b and the CDF of `k - 2`.
#[derive(Debug, Clone)]
struct LawRow {
    rate: f64,
    cdf: Vec<f64>,
}

/// Precomputed merger rates and merger-size laws for `b ≤ top`.
///
/// Building it once and sharing it across replicas avoids repeating the
/// quadratures in every run.
#[derive(Debug, Clone)]
pub struct MergeLaw {
    rows: Vec<LawRow>,
}

impl MergeLaw {
    pub fn new(kernel: &RateKernel, top: u64) -> Result<Self> {
        let table = kernel.merge_rate_table(top.max(2))?;
        let mut rows = vec![
            LawRow {
                rate: 0.0,
                cdf: Vec::new()
            };
            2
        ];
        for b in 2..=table.top() {
            let r = table.row(b);
            let rate: f64 = r.iter().sum();
            let mut acc = 0.0;
            let mut cdf: Vec<f64> = r
                .iter()
                .map(|v| {
                    acc += v;
                    acc / rate
                })
                .collect();
            if let Some(last) = cdf.last_mut() {
                *last = f64::INFINITY;
            }
            rows.push(LawRow { rate, cdf });
        }
        Ok(Self { rows })
    }

    pub fn top(&self) -> u64 {
        self.rows.len() as u64 - 1
    }

    /// λ_b as used by the simulator (0 for `b < 2`).
    pub fn rate(&self, b: u64) -> Option<f64> {
        self.rows.get(b as usize).map(|r| r.rate)
    }

    fn sample_k(&self, b: u64, u: f64) -> u64 {
        let cdf = &self.rows[b as usize].cdf;
        let mut i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        // skip zero-probability sizes that rounding might land on
        while i + 1 < cdf.len() && i > 0 && cdf[i] == cdf[i - 1] {
            i += 1;
        }
        i as u64 + 2
    }
}

/// When a run ends (besides the horizon).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopRule {
    /// Run to the horizon.
    Horizon,
    /// Stop once at most this many blocks are alive.
    BlocksAtMost(u32),
    /// Stop at one block left (no block left when killing is on).
    Absorbed,
}

/// Which events a [`TrajectoryRecord`] keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EventRecording {
    None,
    /// Mergers and kills only.
    Structural,
    #[default]
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordOptions {
    pub events: EventRecording,
    /// Keep `(time, alive block count)` after every count change.
    pub counts: bool,
    /// Track element sets so the final partition is available.
    pub elements: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            events: EventRecording::All,
            counts: true,
            elements: true,
        }
    }
}

impl RecordOptions {
    /// Nothing beyond the final counts.
    pub fn minimal() -> Self {
        Self {
            events: EventRecording::None,
            counts: false,
            elements: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimulationConfig<'a> {
    pub kernel: &'a RateKernel,
    pub geography: &'a GeographySpec,
    /// Shared precomputed merge law; extended locally when a site outgrows it.
    pub merge_law: Option<&'a MergeLaw>,
    /// Every block is killed (moved to ∂) at rate 1.
    pub killing: bool,
    pub horizon: f64,
    pub stop: StopRule,
    pub seed: u64,
    pub replica: u64,
    pub event_budget: Option<u64>,
    pub record: RecordOptions,
}

impl<'a> SimulationConfig<'a> {
    /// Runs to absorption with no horizon, full recording, seed 0.
    pub fn new(kernel: &'a RateKernel, geography: &'a GeographySpec) -> Self {
        Self {
            kernel,
            geography,
            merge_law: None,
            killing: false,
            horizon: f64::INFINITY,
            stop: StopRule::Absorbed,
            seed: 0,
            replica: 0,
            event_budget: None,
            record: RecordOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if self.stop == StopRule::BlocksAtMost(0) {
            return Err(Error::InvalidArgument("BlocksAtMost needs m >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "type"))]
pub enum EventKind {
    /// Blocks merged at `site`; `blocks` is sorted and its first id survives.
    Merge { site: u32, blocks: Vec<u32> },
    Migrate { block: u32, from: u32, to: u32 },
    Kill { block: u32, site: u32 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Event {
    pub time: f64,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: EventKind,
}

impl Event {
    /// Change of the alive block count caused by this event.
    pub fn count_change(&self) -> i64 {
        match &self.kind {
            EventKind::Merge { blocks, .. } => 1 - blocks.len() as i64,
            EventKind::Migrate { .. } => 0,
            EventKind::Kill { .. } => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    Horizon,
    StopRule,
    /// Projected from a coupled run; ends with the driving run.
    Coupled,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub replica: u64,
    pub initial: LabeledPartition,
    pub events: Vec<Event>,
    /// `(time, alive block count)`, starting at time 0.
    pub counts: Vec<(f64, u32)>,
    pub event_count: u64,
    pub final_time: f64,
    pub final_block_count: u32,
    pub final_site_counts: Vec<u32>,
    pub final_state: Option<LabeledPartition>,
    pub stop_reason: StopReason,
}

impl TrajectoryRecord {
    /// Alive block count at time `t` from the count series.
    pub fn count_at(&self, t: f64) -> Option<u32> {
        if self.counts.is_empty() {
            return None;
        }
        let i = self.counts.partition_point(|&(s, _)| s <= t);
        Some(self.counts[i.saturating_sub(1)].1)
    }

    /// Partition right after each recorded event, starting with the initial
    /// one at time 0. Needs `EventRecording::All`.
    pub fn replay(&self) -> Result<Vec<(f64, LabeledPartition)>> {
        let mut blocks: Vec<Option<(Vec<u32>, Label)>> = self.initial.blocks().iter().cloned().map(Some).collect();
        let snapshot = |blocks: &[Option<(Vec<u32>, Label)>]| {
            LabeledPartition::new(self.initial.n(), blocks.iter().flatten().cloned().collect())
        };
        let mut out = Vec::with_capacity(self.events.len() + 1);
        out.push((0.0, self.initial.clone()));
        let missing = |id: u32| Error::InvalidPartition(format!("event refers to unknown block {id}"));
        for e in &self.events {
            match &e.kind {
                EventKind::Merge { blocks: ids, .. } => {
                    let (&first, rest) = ids.split_first().ok_or_else(|| missing(u32::MAX))?;
                    let mut merged = Vec::new();
                    for &id in rest {
                        let (els, _) = blocks.get_mut(id as usize).and_then(Option::take).ok_or_else(|| missing(id))?;
                        merged.extend(els);
                    }
                    let (els, _) = blocks
                        .get_mut(first as usize)
                        .and_then(Option::as_mut)
                        .ok_or_else(|| missing(first))?;
                    els.extend(merged);
                }
                EventKind::Migrate { block, to, .. } => {
                    let b = blocks.get_mut(*block as usize).and_then(Option::as_mut).ok_or_else(|| missing(*block))?;
                    b.1 = Label::Site(*to);
                }
                EventKind::Kill { block, .. } => {
                    let b = blocks.get_mut(*block as usize).and_then(Option::as_mut).ok_or_else(|| missing(*block))?;
                    b.1 = Label::Cemetery;
                }
            }
            out.push((e.time, snapshot(&blocks)?));
        }
        Ok(out)
    }

    /// Per-site alive block counts after each recorded event (needs
    /// `EventRecording::All`), starting at time 0.
    pub fn site_count_series(&self, sites: usize) -> Vec<(f64, Vec<u32>)> {
        let mut site_of: Vec<Option<u32>> = self.initial.blocks().iter().map(|(_, l)| l.site().map(|s| s as u32)).collect();
        let mut counts = vec![0u32; sites];
        for s in site_of.iter().flatten() {
            counts[*s as usize] += 1;
        }
        let mut out = vec![(0.0, counts.clone())];
        for e in &self.events {
            match &e.kind {
                EventKind::Merge { site, blocks } => {
                    counts[*site as usize] -= blocks.len() as u32 - 1;
                    for &b in &blocks[1..] {
                        site_of[b as usize] = None;
                    }
                }
                EventKind::Migrate { block, from, to } => {
                    counts[*from as usize] -= 1;
                    counts[*to as usize] += 1;
                    site_of[*block as usize] = Some(*to);
                }
                EventKind::Kill { block, site } => {
                    counts[*site as usize] -= 1;
                    site_of[*block as usize] = None;
                }
            }
            out.push((e.time, counts.clone()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockState {
    site: u32,
    /// Position in the site roster.
    pos: u32,
    alive: bool,
}

/// A running simulation that can be advanced in stages.
pub struct Simulator<'a> {
    cfg: SimulationConfig<'a>,
    rng: ReplicaRng,
    time: f64,
    blocks: Vec<BlockState>,
    labels_killed: Vec<bool>,
    elements: Option<Vec<Vec<u32>>>,
    rosters: Vec<Vec<u32>>,
    weights: Fenwick,
    local_law: Option<MergeLaw>,
    alive: u32,
    initial: LabeledPartition,
    events: Vec<Event>,
    counts: Vec<(f64, u32)>,
    event_count: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(initial: &LabeledPartition, cfg: SimulationConfig<'a>) -> Result<Self> {
        cfg.validate()?;
        let sites = cfg.geography.sites();
        let mut rosters = vec![Vec::new(); sites];
        let mut blocks = Vec::with_capacity(initial.len());
        let mut killed = vec![false; initial.len()];
        for (id, (_, label)) in initial.blocks().iter().enumerate() {
            match *label {
                Label::Site(s) if (s as usize) < sites => {
                    blocks.push(BlockState {
                        site: s,
                        pos: rosters[s as usize].len() as u32,
                        alive: true,
                    });
                    rosters[s as usize].push(id as u32);
                }
                Label::Site(s) => {
                    return Err(Error::InvalidPartition(format!("block {id} sits at site {s}, but there are {sites} sites")));
                }
                Label::Cemetery if cfg.killing => {
                    blocks.push(BlockState {
                        site: 0,
                        pos: 0,
                        alive: false,
                    });
                    killed[id] = true;
                }
                Label::Cemetery => {
                    return Err(Error::InvalidPartition(format!("block {id} is in the cemetery but killing is off")));
                }
            }
        }
        let alive = blocks.iter().filter(|b| b.alive).count() as u32;
        let elements = cfg
            .record
            .elements
            .then(|| initial.blocks().iter().map(|(e, _)| e.clone()).collect());
        let mut sim = Self {
            rng: replica_rng(cfg.seed, cfg.replica),
            cfg,
            time: 0.0,
            blocks,
            labels_killed: killed,
            elements,
            rosters,
            weights: Fenwick::new(vec![0.0; sites]),
            local_law: None,
            alive,
            initial: initial.clone(),
            events: Vec::new(),
            counts: Vec::new(),
            event_count: 0,
        };
        let biggest = sim.rosters.iter().map(Vec::len).max().unwrap_or(0) as u64;
        sim.ensure_law(biggest)?;
        let w: Vec<f64> = (0..sites).map(|s| sim.site_weight(s)).collect();
        sim.weights = Fenwick::new(w);
        if sim.cfg.record.counts {
            sim.counts.push((0.0, alive));
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Alive blocks.
    pub fn block_count(&self) -> u32 {
        self.alive
    }

    pub fn site_count(&self, site: usize) -> u32 {
        self.rosters[site].len() as u32
    }

    pub fn site_counts(&self) -> Vec<u32> {
        self.rosters.iter().map(|r| r.len() as u32).collect()
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    /// Ids of alive blocks at `site`, in roster order.
    pub fn roster(&self, site: usize) -> &[u32] {
        &self.rosters[site]
    }

    /// Current partition (needs element tracking).
    pub fn partition(&self) -> Option<LabeledPartition> {
        let els = self.elements.as_ref()?;
        let blocks = els
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_empty())
            .map(|(id, e)| {
                let label = if self.labels_killed[id] {
                    Label::Cemetery
                } else {
                    Label::Site(self.blocks[id].site)
                };
                (e.clone(), label)
            })
            .collect();
        LabeledPartition::new(self.initial.n(), blocks).ok()
    }

    fn law_rate(&self, b: u64) -> f64 {
        if b < 2 {
            return 0.0;
        }
        self.cfg
            .merge_law
            .and_then(|l| l.rate(b))
            .or_else(|| self.local_law.as_ref().and_then(|l| l.rate(b)))
            .unwrap_or(0.0)
    }

    fn law_for(&self, b: u64) -> &MergeLaw {
        match self.cfg.merge_law {
            Some(l) if l.top() >= b => l,
            _ => self.local_law.as_ref().expect("merge law extended before use"),
        }
    }

    fn ensure_law(&mut self, b: u64) -> Result<()> {
        if b < 2 {
            return Ok(());
        }
        let shared = self.cfg.merge_law.map_or(0, MergeLaw::top);
        let local = self.local_law.as_ref().map_or(0, MergeLaw::top);
        if shared >= b || local >= b {
            return Ok(());
        }
        let top = b.max(2 * local).max(2 * shared).max(16);
        self.local_law = Some(MergeLaw::new(self.cfg.kernel, top)?);
        Ok(())
    }

    fn site_weight(&self, s: usize) -> f64 {
        let b = self.rosters[s].len() as u64;
        if b == 0 {
            return 0.0;
        }
        let bf = b as f64;
        let kill = if self.cfg.killing { bf } else { 0.0 };
        self.law_rate(b) + bf * self.cfg.geography.leave_rate(s) + kill
    }

    fn refresh(&mut self, s: usize) -> Result<()> {
        self.ensure_law(self.rosters[s].len() as u64)?;
        let w = self.site_weight(s);
        self.weights.set(s, w);
        Ok(())
    }

    fn stop_reached(&self) -> bool {
        match self.cfg.stop {
            StopRule::Horizon => false,
            StopRule::BlocksAtMost(m) => self.alive <= m,
            StopRule::Absorbed => {
                if self.cfg.killing {
                    self.alive == 0
                } else {
                    self.alive <= 1
                }
            }
        }
    }

    /// Runs until the stop rule holds or the horizon is reached.
    pub fn run(mut self) -> Result<TrajectoryRecord> {
        let horizon = self.cfg.horizon;
        let reason = self.advance(horizon, true)?;
        Ok(self.into_record(reason))
    }

    /// Advances to time `t` (capped at the horizon), ignoring the stop rule.
    /// The pending exponential clock is discarded at `t`, which leaves the law
    /// unchanged by memorylessness.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        self.advance(t.min(self.cfg.horizon), false).map(|_| ())
    }

    fn advance(&mut self, until: f64, honour_stop: bool) -> Result<StopReason> {
        if honour_stop && self.stop_reached() {
            return Ok(StopReason::StopRule);
        }
        loop {
            let total = self.weights.total();
            if !(total > 0.0) {
                if until.is_finite() {
                    self.time = self.time.max(until);
                    return Ok(StopReason::Horizon);
                }
                return Err(Error::ZeroRateDeadlock { time: self.time });
            }
            let u: f64 = self.rng.random();
            let t_next = self.time - math::ln1p(-u) / total;
            if t_next > until {
                self.time = self.time.max(until);
                return Ok(StopReason::Horizon);
            }
            if let Some(budget) = self.cfg.event_budget {
                if self.event_count >= budget {
                    let partial = Box::new(self.snapshot_record(StopReason::Horizon));
                    return Err(Error::BudgetExceeded { budget, partial });
                }
            }
            self.time = t_next;
            self.step(total)?;
            if honour_stop && self.stop_reached() {
                return Ok(StopReason::StopRule);
            }
        }
    }

    fn step(&mut self, total: f64) -> Result<()> {
        let u: f64 = self.rng.random();
        let s = self.weights.find(u * total);
        let b = self.rosters[s].len() as u64;
        let bf = b as f64;
        let merge_w = self.law_rate(b);
        let move_w = bf * self.cfg.geography.leave_rate(s);
        let kill_w = if self.cfg.killing { bf } else { 0.0 };
        let v: f64 = self.rng.random::<f64>() * (merge_w + move_w + kill_w);
        let kind = if v < merge_w && b >= 2 {
            self.merge(s, b)
        } else if v < merge_w + move_w && move_w > 0.0 {
            self.migrate(s, b)?
        } else if kill_w > 0.0 {
            self.kill(s, b)
        } else if b >= 2 {
            self.merge(s, b)
        } else {
            self.migrate(s, b)?
        };
        self.event_count += 1;
        let ev = Event { time: self.time, kind };
        let structural = !matches!(ev.kind, EventKind::Migrate { .. });
        if self.cfg.record.counts && structural {
            self.counts.push((self.time, self.alive));
        }
        match self.cfg.record.events {
            EventRecording::All => self.events.push(ev),
            EventRecording::Structural if structural => self.events.push(ev),
            _ => {}
        }
        Ok(())
    }

    fn merge(&mut self, s: usize, b: u64) -> EventKind {
        let u: f64 = self.rng.random();
        let k = self.law_for(b).sample_k(b, u) as usize;
        let roster = &mut self.rosters[s];
        // partial Fisher–Yates: the first k roster slots become a uniform k-subset
        for i in 0..k {
            let j = i + self.rng.random_range(0..roster.len() - i);
            roster.swap(i, j);
            self.blocks[roster[i] as usize].pos = i as u32;
            self.blocks[roster[j] as usize].pos = j as u32;
        }
        let mut ids: Vec<u32> = roster[..k].to_vec();
        ids.sort_unstable();
        let survivor = ids[0];
        for &id in &ids[1..] {
            self.remove_from_roster(id);
            self.blocks[id as usize].alive = false;
        }
        if let Some(els) = self.elements.as_mut() {
            let mut merged = core::mem::take(&mut els[survivor as usize]);
            for &id in &ids[1..] {
                merged.append(&mut els[id as usize]);
            }
            merged.sort_unstable();
            els[survivor as usize] = merged;
        }
        self.alive -= k as u32 - 1;
        // merge-law coverage never grows here, so refresh cannot fail
        let _ = self.refresh(s);
        EventKind::Merge {
            site: s as u32,
            blocks: ids,
        }
    }

    fn migrate(&mut self, s: usize, b: u64) -> Result<EventKind> {
        let idx = self.rng.random_range(0..b as usize);
        let id = self.rosters[s][idx];
        let u: f64 = self.rng.random();
        let to = self.cfg.geography.sample_destination(s, u);
        self.remove_from_roster(id);
        let blk = &mut self.blocks[id as usize];
        blk.site = to as u32;
        blk.pos = self.rosters[to].len() as u32;
        self.rosters[to].push(id);
        self.refresh(s)?;
        self.refresh(to)?;
        Ok(EventKind::Migrate {
            block: id,
            from: s as u32,
            to: to as u32,
        })
    }

    fn kill(&mut self, s: usize, b: u64) -> EventKind {
        let idx = self.rng.random_range(0..b as usize);
        let id = self.rosters[s][idx];
        self.remove_from_roster(id);
        self.blocks[id as usize].alive = false;
        self.labels_killed[id as usize] = true;
        self.alive -= 1;
        let _ = self.refresh(s);
        EventKind::Kill {
            block: id,
            site: s as u32,
        }
    }

    fn remove_from_roster(&mut self, id: u32) {
        let BlockState { site, pos, .. } = self.blocks[id as usize];
        let roster = &mut self.rosters[site as usize];
        let pos = pos as usize;
        debug_assert_eq!(roster[pos], id);
        roster.swap_remove(pos);
        if let Some(&moved) = roster.get(pos) {
            self.blocks[moved as usize].pos = pos as u32;
        }
    }

    fn snapshot_record(&self, reason: StopReason) -> TrajectoryRecord {
        TrajectoryRecord {
            seed: self.cfg.seed,
            replica: self.cfg.replica,
            initial: self.initial.clone(),
            events: self.events.clone(),
            counts: self.counts.clone(),
            event_count: self.event_count,
            final_time: self.time,
            final_block_count: self.alive,
            final_site_counts: self.site_counts(),
            final_state: self.partition(),
            stop_reason: reason,
        }
    }

    pub fn into_record(self, reason: StopReason) -> TrajectoryRecord {
        let final_state = self.partition();
        let final_site_counts = self.site_counts();
        TrajectoryRecord {
            seed: self.cfg.seed,
            replica: self.cfg.replica,
            initial: self.initial,
            events: self.events,
            counts: self.counts,
            event_count: self.event_count,
            final_time: self.time,
            final_block_count: self.alive,
            final_site_counts,
            final_state,
            stop_reason: reason,
        }
    }
}

/// Runs one trajectory from `initial`.
pub fn simulate(initial: &LabeledPartition, config: &SimulationConfig) -> Result<TrajectoryRecord> {
    Simulator::new(initial, *config)?.run()
}

/// A configuration derived from the driving one in [`coupled_simulate`].
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum VariantSpec {
    Full,
    /// Restriction to `[m]`.
    Restrict(u32),
    /// Restriction to a subset of elements, relabelled onto `[|S|]` in order.
    Subset(Vec<u32>),
}

/// Runs `initial` once and derives every variant's trajectory from the same
/// event stream by projection: a variant block is the nonempty intersection
/// of a driving block with the variant's element set.
///
/// The restriction of a Λ-coalescent to a subset of its ground set is again a
/// Λ-coalescent with the same Λ and kernel, so each projected trajectory has
/// the law of a direct run from the projected start, while all variants share
/// one realisation. Restriction consistency and class-split domination then
/// hold pathwise.
pub fn coupled_simulate(
    initial: &LabeledPartition,
    variants: &[VariantSpec],
    config: &SimulationConfig,
) -> Result<Vec<TrajectoryRecord>> {
    let n = initial.n();
    let subsets: Vec<Vec<u32>> = variants
        .iter()
        .map(|v| match v {
            VariantSpec::Full => Ok((1..=n).collect()),
            VariantSpec::Restrict(m) if *m >= 1 && *m <= n => Ok((1..=*m).collect()),
            VariantSpec::Restrict(m) => Err(Error::IncompatibleVariants(format!("cannot restrict [{n}] to [{m}]"))),
            VariantSpec::Subset(s) => {
                subset_ranks(n, s).map_err(|e| Error::IncompatibleVariants(format!("{e}")))?;
                let mut s = s.clone();
                s.sort_unstable();
                Ok(s)
            }
        })
        .collect::<Result<_>>()?;
    if subsets.is_empty() {
        return Err(Error::IncompatibleVariants("no variants requested".into()));
    }
    let mut driving_cfg = *config;
    driving_cfg.record = RecordOptions {
        events: EventRecording::All,
        counts: true,
        elements: false,
    };
    let full = simulate(initial, &driving_cfg)?;
    subsets.iter().map(|s| project(&full, s, config)).collect()
}

fn project(full: &TrajectoryRecord, subset: &[u32], config: &SimulationConfig) -> Result<TrajectoryRecord> {
    let n = full.initial.n();
    let rank = subset_ranks(n, subset)?;
    let start = full.initial.restrict_to(subset)?;
    // driving block id -> variant block id, for blocks meeting the subset
    let mut map: Vec<Option<u32>> = vec![None; full.initial.len()];
    {
        let mut firsts: Vec<(u32, usize)> = full
            .initial
            .blocks()
            .iter()
            .enumerate()
            .filter_map(|(id, (els, _))| els.iter().find_map(|&e| rank[e as usize]).map(|r| (r, id)))
            .collect();
        firsts.sort_unstable();
        for (vid, (_, id)) in firsts.into_iter().enumerate() {
            map[id] = Some(vid as u32);
        }
    }
    let sites = config.geography.sites();
    let mut site_counts = vec![0u32; sites];
    for (_, l) in start.blocks() {
        if let Some(s) = l.site() {
            site_counts[s] += 1;
        }
    }
    let mut alive = start.alive_count() as u32;
    let keep_all = config.record.events == EventRecording::All;
    let keep_structural = config.record.events != EventRecording::None;
    let mut events = Vec::new();
    let mut counts = if config.record.counts { vec![(0.0, alive)] } else { Vec::new() };
    let mut event_count = 0u64;
    for e in &full.events {
        let projected = match &e.kind {
            EventKind::Merge { site, blocks } => {
                let mut vids: Vec<u32> = blocks.iter().filter_map(|&b| map[b as usize]).collect();
                for &b in blocks {
                    map[b as usize] = None;
                }
                vids.sort_unstable();
                if let Some(&first) = vids.first() {
                    map[blocks[0] as usize] = Some(first);
                }
                (vids.len() >= 2).then(|| EventKind::Merge {
                    site: *site,
                    blocks: vids,
                })
            }
            EventKind::Migrate { block, from, to } => map[*block as usize].map(|v| EventKind::Migrate {
                block: v,
                from: *from,
                to: *to,
            }),
            EventKind::Kill { block, site } => map[*block as usize].map(|v| EventKind::Kill { block: v, site: *site }),
        };
        let Some(kind) = projected else { continue };
        match &kind {
            EventKind::Merge { site, blocks } => {
                site_counts[*site as usize] -= blocks.len() as u32 - 1;
                alive -= blocks.len() as u32 - 1;
            }
            EventKind::Migrate { from, to, .. } => {
                site_counts[*from as usize] -= 1;
                site_counts[*to as usize] += 1;
            }
            EventKind::Kill { site, .. } => {
                site_counts[*site as usize] -= 1;
                alive -= 1;
            }
        }
        event_count += 1;
        let structural = !matches!(kind, EventKind::Migrate { .. });
        if config.record.counts && structural {
            counts.push((e.time, alive));
        }
        if keep_all || (keep_structural && structural) {
            events.push(Event { time: e.time, kind });
        }
    }
    let mut rec = TrajectoryRecord {
        seed: full.seed,
        replica: full.replica,
        initial: start,
        events,
        counts,
        event_count,
        final_time: full.final_time,
        final_block_count: alive,
        final_site_counts: site_counts,
        final_state: None,
        stop_reason: StopReason::Coupled,
    };
    if config.record.elements && keep_all {
        rec.final_state = rec.replay()?.pop().map(|(_, p)| p);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::LambdaMeasure;

    fn kingman() -> RateKernel {
        RateKernel::new(LambdaMeasure::kingman(1.0).unwrap(), 20).unwrap()
    }

    #[test]
    fn complete_collapse_single_event() {
        let k = RateKernel::new(LambdaMeasure::atom(1.0, 1.0).unwrap(), 10).unwrap();
        let g = GeographySpec::single_site();
        let start = LabeledPartition::singletons_per_site(&[5]);
        let rec = simulate(&start, &SimulationConfig::new(&k, &g)).unwrap();
        assert_eq!(rec.events.len(), 1);
        match &rec.events[0].kind {
            EventKind::Merge { blocks, .. } => assert_eq!(blocks, &vec![0, 1, 2, 3, 4]),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(rec.final_block_count, 1);
        assert_eq!(rec.final_state.unwrap().blocks()[0].0, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn no_merge_across_sites() {
        let k = kingman();
        let g = GeographySpec::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let start = LabeledPartition::singletons_per_site(&[1, 1]);
        for seed in 0..50 {
            let mut cfg = SimulationConfig::new(&k, &g);
            cfg.seed = seed;
            cfg.horizon = 0.05;
            cfg.stop = StopRule::Horizon;
            let rec = simulate(&start, &cfg).unwrap();
            match rec.events.first() {
                None => assert_eq!(rec.final_block_count, 2),
                Some(e) => assert!(matches!(e.kind, EventKind::Migrate { .. })),
            }
        }
    }

    #[test]
    fn deadlock_and_horizon() {
        let k = kingman();
        let g = GeographySpec::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let start = LabeledPartition::singletons_per_site(&[1, 1]);
        let cfg = SimulationConfig::new(&k, &g);
        assert!(matches!(simulate(&start, &cfg), Err(Error::ZeroRateDeadlock { .. })));
        let mut cfg = cfg;
        cfg.horizon = 3.0;
        let rec = simulate(&start, &cfg).unwrap();
        assert_eq!(rec.final_time, 3.0);
        assert_eq!(rec.stop_reason, StopReason::Horizon);
    }

    #[test]
    fn budget_is_enforced() {
        let k = kingman();
        let g = GeographySpec::single_site();
        let start = LabeledPartition::singletons_per_site(&[50]);
        let mut cfg = SimulationConfig::new(&k, &g);
        cfg.event_budget = Some(10);
        match simulate(&start, &cfg) {
            Err(Error::BudgetExceeded { budget: 10, partial }) => {
                assert_eq!(partial.event_count, 10);
                assert_eq!(partial.final_block_count, 40);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn records_are_consistent() {
        let k = RateKernel::new(LambdaMeasure::lebesgue(), 20).unwrap();
        let g = GeographySpec::complete_graph(3).unwrap();
        let start = LabeledPartition::singletons_per_site(&[4, 3, 2]);
        let mut cfg = SimulationConfig::new(&k, &g);
        cfg.seed = 9;
        let rec = simulate(&start, &cfg).unwrap();
        assert!(rec.events.windows(2).all(|w| w[0].time < w[1].time));
        let states = rec.replay().unwrap();
        assert_eq!(states.last().unwrap().1, *rec.final_state.as_ref().unwrap());
        for w in states.windows(2) {
            assert!(w[0].1.is_finer_than(&w[1].1));
        }
        let series = rec.site_count_series(3);
        assert_eq!(series.last().unwrap().1, rec.final_site_counts);
        assert_eq!(rec.final_block_count, 1);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let k = kingman();
        let g = GeographySpec::complete_graph(4).unwrap();
        let start = LabeledPartition::singletons_per_site(&[3, 3, 3, 3]);
        let mut cfg = SimulationConfig::new(&k, &g);
        cfg.seed = 123;
        cfg.replica = 7;
        assert_eq!(simulate(&start, &cfg).unwrap(), simulate(&start, &cfg).unwrap());
    }

    #[test]
    fn staged_advance_matches_counts() {
        let k = kingman();
        let g = GeographySpec::single_site();
        let start = LabeledPartition::singletons_per_site(&[30]);
        let mut sim = Simulator::new(&start, SimulationConfig::new(&k, &g)).unwrap();
        sim.advance_to(0.1).unwrap();
        let c1 = sim.block_count();
        sim.advance_to(0.5).unwrap();
        assert!(sim.block_count() <= c1);
        assert_eq!(sim.time(), 0.5);
    }

    #[test]
    fn coupled_variants() {
        let k = kingman();
        let g = GeographySpec::complete_graph(2).unwrap();
        let start = LabeledPartition::singletons_per_site(&[3, 3]);
        let mut cfg = SimulationConfig::new(&k, &g);
        cfg.seed = 4;
        let recs = coupled_simulate(&start, &[VariantSpec::Full, VariantSpec::Restrict(3)], &cfg).unwrap();
        let direct = simulate(&start, &cfg).unwrap();
        assert_eq!(recs[0].events, direct.events);
        let full = recs[0].replay().unwrap();
        let part = recs[1].replay().unwrap();
        // every restricted state matches the restriction of the full state at that time
        for (t, p) in &full {
            let j = part.partition_point(|(s, _)| s <= t) - 1;
            assert_eq!(p.restrict(3).unwrap(), part[j].1);
        }
        assert!(coupled_simulate(&start, &[VariantSpec::Restrict(7)], &cfg).is_err());
        assert!(coupled_simulate(&start, &[VariantSpec::Subset(vec![0])], &cfg).is_err());
    }
}
