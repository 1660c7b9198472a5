//! Initial-configuration generation, fault-mask enumeration, the solved
//! predicate, runtime invariant monitors, and the sweep driver.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{gaps_on_row, is_compact_straight_line, GlobalDir, NodeCoord};
use crate::particle::{
    Flags, MessageKind, Orientation, Particle, ParticleId, ParticleState,
};
use crate::scheduler::{step, Configuration, SchedulerPolicy, SchedulerState};
use crate::trace::{RoundEvent, Trace};
use crate::SimError;

pub const MIN_CORRECT: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub fault_mask: Vec<bool>,
    pub seed: u64,
    pub policy: SchedulerPolicy,
    pub max_rounds: u64,
    pub fairness_window: u64,
}

impl Scenario {
    pub fn new(n: usize, faults: &[usize], seed: u64, policy: SchedulerPolicy) -> Result<Self, SimError> {
        let mut mask = vec![false; n];
        for &i in faults {
            if i >= n {
                return Err(SimError::InvalidScenario(format!(
                    "fault position {i} out of range for n={n}"
                )));
            }
            mask[i] = true;
        }
        let s = Scenario {
            n,
            fault_mask: mask,
            seed,
            policy,
            max_rounds: default_max_rounds(n),
            fairness_window: n as u64,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn f(&self) -> usize {
        self.fault_mask.iter().filter(|&&b| b).count()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.fault_mask.len() != self.n {
            return Err(SimError::InvalidScenario("mask length differs from n".into()));
        }
        if self.n - self.f() < MIN_CORRECT {
            return Err(SimError::InvalidScenario(format!(
                "need at least {MIN_CORRECT} correct particles, got n={} f={}",
                self.n,
                self.f()
            )));
        }
        if self.max_rounds == 0 {
            return Err(SimError::InvalidScenario("max_rounds must be positive".into()));
        }
        Ok(())
    }
}

pub fn default_max_rounds(n: usize) -> u64 {
    200 * (n as u64) * (n as u64)
}

/// All contracted on row 0 at columns 0..n, faulty per mask, correct ones
/// in the initial protocol state, orientations drawn from the seed.
pub fn gen_initial(scenario: &Scenario) -> Result<Configuration, SimError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5eed_011e);
    let mut particles = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let node = NodeCoord::new(i as i32, 0);
        particles.push(Particle {
            id: ParticleId(i as u32),
            faulty: scenario.fault_mask[i],
            state: ParticleState::Init,
            head: node,
            tail: node,
            orientation: Orientation {
                port0: GlobalDir::from_index(rng.gen_range(0..6)),
                chirality: if rng.gen_bool(0.5) { 1 } else { -1 },
            },
            dir: None,
            pre: None,
            parent: None,
            lineparity: 0,
            flags: Flags::default(),
            axis: None,
            hist: 0,
            memory: BTreeMap::new(),
            self_slot: BTreeMap::new(),
        });
    }
    Ok(Configuration { particles, round: 0 })
}

/// All C(n, f) fault masks, in lexicographic order.
pub fn enumerate_masks(n: usize, f: usize) -> Result<Vec<Vec<bool>>, SimError> {
    if n < f || n - f < MIN_CORRECT {
        return Err(SimError::InvalidScenario(format!(
            "n={n} f={f} violates the correct-particle minimum"
        )));
    }
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..f).collect();
    loop {
        let mut mask = vec![false; n];
        for &i in &combo {
            mask[i] = true;
        }
        out.push(mask);
        if f == 0 {
            break;
        }
        // next combination
        let mut i = f;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if combo[i] != i + n - f {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..f {
            combo[j] = combo[j - 1] + 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolvedKind {
    OneLine,
    TwoLines,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    SolvedOneLine,
    SolvedTwoLines,
    Timeout,
    InvariantViolation,
    ProtocolFault,
}

impl Outcome {
    pub fn is_solved(&self) -> bool {
        matches!(self, Outcome::SolvedOneLine | Outcome::SolvedTwoLines)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub rounds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Segment bookkeeping for the coin exchange: sizes of the two
/// marker-rooted segments, measured from the innermost tail flags.
fn segment_sizes(config: &Configuration) -> Option<(usize, usize, bool)> {
    let cols: Vec<i32> = config
        .particles
        .iter()
        .filter(|p| p.head.r == 0)
        .map(|p| p.head.q)
        .collect();
    let min = *cols.iter().min()?;
    let max = *cols.iter().max()?;
    let mut left_inner: Option<i32> = None;
    let mut right_inner: Option<i32> = None;
    for p in &config.particles {
        if p.faulty || !p.flags.linetail || p.head.r != 0 {
            continue;
        }
        let toward_parent = p
            .parent
            .map(|l| p.orientation.local_to_global(l));
        let is_left = match toward_parent {
            Some(GlobalDir::W) => true,
            Some(GlobalDir::E) => false,
            _ => p.head.q == min,
        };
        if is_left {
            left_inner = Some(left_inner.map_or(p.head.q, |v: i32| v.max(p.head.q)));
        } else {
            right_inner = Some(right_inner.map_or(p.head.q, |v: i32| v.min(p.head.q)));
        }
    }
    let (l, r) = (left_inner?, right_inner?);
    if l >= r {
        return None;
    }
    let size_l = (l - min + 1) as usize;
    let size_r = (max - r + 1) as usize;
    Some((size_l, size_r, r == l + 1))
}

/// Occupied-node components of the correct particles, with per-component
/// particle counts and leader counts.
struct Group {
    nodes: Vec<NodeCoord>,
    particles: usize,
    leaders: usize,
}

fn correct_groups(config: &Configuration) -> Vec<Group> {
    let mut node_owner: BTreeMap<NodeCoord, ParticleId> = BTreeMap::new();
    for p in config.particles.iter().filter(|p| !p.faulty) {
        node_owner.insert(p.head, p.id);
        node_owner.insert(p.tail, p.id);
    }
    let mut seen: BTreeSet<NodeCoord> = BTreeSet::new();
    let mut groups = Vec::new();
    for &start in node_owner.keys() {
        if seen.contains(&start) {
            continue;
        }
        let mut stack = vec![start];
        let mut nodes = Vec::new();
        let mut members: BTreeSet<ParticleId> = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            nodes.push(n);
            members.insert(node_owner[&n]);
            for nb in n.neighbors() {
                if node_owner.contains_key(&nb) && !seen.contains(&nb) {
                    stack.push(nb);
                }
            }
        }
        let leaders = members
            .iter()
            .filter(|id| config.particle(**id).state == ParticleState::Leader)
            .count();
        groups.push(Group { nodes, particles: members.len(), leaders });
    }
    groups
}

/// The terminal predicate. With no faults the coin exchange elects leaders
/// in place; with faults the correct particles must have assembled into
/// leader-led lines (an expanded member still counts as line material,
/// since a line on the march stays a line).
pub fn is_solved(config: &Configuration) -> Option<SolvedKind> {
    let f = config.particles.iter().filter(|p| p.faulty).count();
    let n = config.particles.len();
    if f == 0 {
        let nl = config
            .particles
            .iter()
            .filter(|p| p.state == ParticleState::NofaultyLeader)
            .count();
        if nl == 1 && n % 2 == 1 {
            return Some(SolvedKind::OneLine);
        }
        if nl == 2 && n % 2 == 0 {
            if let Some((l, r, adjacent)) = segment_sizes(config) {
                if adjacent && l == r {
                    return Some(SolvedKind::TwoLines);
                }
            }
        }
        return None;
    }
    if !config
        .particles
        .iter()
        .filter(|p| !p.faulty)
        .all(|p| matches!(p.state, ParticleState::Leader | ParticleState::Follower))
    {
        return None;
    }
    let groups = correct_groups(config);
    let all_lines = groups.iter().all(|g| is_compact_straight_line(&g.nodes));
    if !all_lines {
        return None;
    }
    match groups.len() {
        1 if groups[0].leaders == 1 => Some(SolvedKind::OneLine),
        2 if groups.iter().all(|g| g.leaders == 1)
            && groups[0].particles == groups[1].particles =>
        {
            Some(SolvedKind::TwoLines)
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------
// invariant monitors

pub struct Monitors {
    initial: Configuration,
    f: usize,
    /// Leaders that arose from the even-comparison finale.
    even_leaders: BTreeSet<u32>,
    enabled: bool,
}

impl Monitors {
    pub fn new(initial: &Configuration, enabled: bool) -> Self {
        let f = initial.particles.iter().filter(|p| p.faulty).count();
        Monitors { initial: initial.clone(), f, even_leaders: BTreeSet::new(), enabled }
    }

    /// Evaluate all monitors after a round; returns human-readable
    /// violations, empty when every invariant holds.
    pub fn check(&mut self, config: &Configuration, events: &[RoundEvent]) -> Vec<String> {
        for e in events {
            if let RoundEvent::State { id, to: ParticleState::Leader, cause, .. } = e {
                if *cause == Some(MessageKind::Even) {
                    self.even_leaders.insert(*id);
                }
            }
        }
        if !self.enabled {
            return Vec::new();
        }
        let mut out = Vec::new();

        // segment balance during the coin exchange
        if self.f == 0 {
            if let Some((l, r, _)) = segment_sizes(config) {
                if l.abs_diff(r) > 1 {
                    out.push(format!("segment-balance: sizes {l} and {r} differ by more than 1"));
                }
            }
        }

        // interior row-0 gaps stay small while anyone is pre-departure
        let pre_phase = config.particles.iter().any(|p| {
            !p.faulty
                && matches!(
                    p.state,
                    ParticleState::Init
                        | ParticleState::Starting
                        | ParticleState::Notified
                        | ParticleState::PreExplorer
                )
        });
        if pre_phase {
            let occupied: Vec<NodeCoord> = config
                .particles
                .iter()
                .flat_map(|p| [p.head, p.tail])
                .collect();
            for g in gaps_on_row(&occupied, 0) {
                if g > 2 {
                    out.push(format!("gap-limit: interior row-0 gap of {g}"));
                }
            }
        }

        // leader cardinality
        let leaders: Vec<u32> = config
            .particles
            .iter()
            .filter(|p| p.state == ParticleState::Leader)
            .map(|p| p.id.0)
            .collect();
        if leaders.len() > 2 {
            out.push(format!("leader-cardinality: {} leaders", leaders.len()));
        } else if leaders.len() == 2
            && !leaders.iter().all(|id| self.even_leaders.contains(id))
        {
            out.push("leader-cardinality: two leaders outside the even finale".into());
        }
        let nofaulty = config
            .particles
            .iter()
            .filter(|p| p.state == ParticleState::NofaultyLeader)
            .count();
        if self.f > 0 && nofaulty > 0 {
            out.push("leader-cardinality: no-fault leader elected in a faulty run".into());
        }
        if nofaulty > 2 || (nofaulty == 2 && config.particles.len() % 2 == 1) {
            out.push(format!("leader-cardinality: {nofaulty} no-fault leaders"));
        }

        // faulty particles are frozen
        for (p, q) in self.initial.particles.iter().zip(&config.particles) {
            if !p.faulty {
                continue;
            }
            if p.head != q.head
                || p.tail != q.tail
                || p.state != q.state
                || p.memory != q.memory
                || p.flags != q.flags
            {
                out.push(format!("faulty-freeze: particle {} changed", p.id.0));
            }
        }

        if let Err(e) = config.check_occupancy() {
            out.push(format!("occupancy: {e}"));
        }
        out
    }
}

// ---------------------------------------------------------------------
// run driver

/// Run a scenario to its verdict, recording a complete replayable trace.
/// The solved state must persist over a full fairness window before it
/// counts.
pub fn run_scenario(scenario: &Scenario) -> Result<Trace, SimError> {
    run_scenario_with(scenario, true)
}

pub fn run_scenario_with(scenario: &Scenario, monitors_enabled: bool) -> Result<Trace, SimError> {
    let mut config = gen_initial(scenario)?;
    let mut sched = SchedulerState::new(
        scenario.policy.clone(),
        scenario.fairness_window,
        scenario.seed,
        &config,
    );
    let mut conflict_rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0xc0f11c7);
    let mut monitors = Monitors::new(&config, monitors_enabled);
    let mut rounds = Vec::new();

    let mut solved_streak: Option<(SolvedKind, u64, u64)> = None; // kind, since, count
    while config.round < scenario.max_rounds {
        let activated = sched.choose(&config);
        let outcome = match step(&mut config, &activated, &mut conflict_rng) {
            Ok(o) => o,
            Err(SimError::ProtocolFault(d)) => {
                return Ok(Trace {
                    scenario: scenario.clone(),
                    rounds,
                    verdict: Verdict {
                        outcome: Outcome::ProtocolFault,
                        rounds: config.round,
                        detail: Some(d),
                    },
                });
            }
            Err(e) => return Err(e),
        };
        let mut record = outcome.record;
        let violations = monitors.check(&config, &record.events);
        record.violations = violations.clone();
        rounds.push(record);
        if !violations.is_empty() {
            return Ok(Trace {
                scenario: scenario.clone(),
                rounds,
                verdict: Verdict {
                    outcome: Outcome::InvariantViolation,
                    rounds: config.round,
                    detail: Some(violations.join("; ")),
                },
            });
        }
        match is_solved(&config) {
            Some(kind) => {
                solved_streak = match solved_streak {
                    Some((k, since, c)) if k == kind => Some((k, since, c + 1)),
                    _ => Some((kind, config.round, 1)),
                };
                if let Some((k, since, c)) = solved_streak {
                    if c >= scenario.fairness_window.max(1) {
                        let outcome = match k {
                            SolvedKind::OneLine => Outcome::SolvedOneLine,
                            SolvedKind::TwoLines => Outcome::SolvedTwoLines,
                        };
                        return Ok(Trace {
                            scenario: scenario.clone(),
                            rounds,
                            verdict: Verdict { outcome, rounds: since, detail: None },
                        });
                    }
                }
            }
            None => solved_streak = None,
        }
    }
    Ok(Trace {
        scenario: scenario.clone(),
        rounds,
        verdict: Verdict { outcome: Outcome::Timeout, rounds: config.round, detail: None },
    })
}

/// Cross-product execution over scenarios, in parallel. Runs share nothing.
pub fn sweep(scenarios: &[Scenario]) -> Vec<(Scenario, Verdict)> {
    scenarios
        .par_iter()
        .map(|s| {
            let verdict = match run_scenario(s) {
                Ok(t) => t.verdict,
                Err(e) => Verdict {
                    outcome: Outcome::ProtocolFault,
                    rounds: 0,
                    detail: Some(e.to_string()),
                },
            };
            (s.clone(), verdict)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scen(n: usize, faults: &[usize]) -> Scenario {
        Scenario::new(n, faults, 1, SchedulerPolicy::FullSync).unwrap()
    }

    #[test]
    fn gen_initial_basic() {
        let c = gen_initial(&scen(5, &[])).unwrap();
        assert_eq!(c.particles.len(), 5);
        assert!(c.particles.iter().all(|p| p.state == ParticleState::Init && p.contracted()));
        assert!(c.particles.iter().all(|p| p.head.r == 0));
    }

    #[test]
    fn gen_initial_fault_mask() {
        let c = gen_initial(&scen(8, &[2, 3, 4])).unwrap();
        let faulty: Vec<u32> =
            c.particles.iter().filter(|p| p.faulty).map(|p| p.id.0).collect();
        assert_eq!(faulty, vec![2, 3, 4]);
    }

    #[test]
    fn scenario_minimum_enforced() {
        assert!(Scenario::new(6, &[0, 1], 1, SchedulerPolicy::FullSync).is_err());
        assert!(Scenario::new(5, &[], 1, SchedulerPolicy::FullSync).is_ok());
    }

    #[test]
    fn mask_counts() {
        assert_eq!(enumerate_masks(7, 1).unwrap().len(), 7);
        assert_eq!(enumerate_masks(7, 2).unwrap().len(), 21);
        // binomial-coefficient oracle
        fn binom(n: usize, k: usize) -> usize {
            (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
        }
        assert_eq!(enumerate_masks(9, 4).unwrap().len(), binom(9, 4));
        let masks = enumerate_masks(9, 4).unwrap();
        let uniq: BTreeSet<Vec<bool>> = masks.iter().cloned().collect();
        assert_eq!(uniq.len(), masks.len());
    }

    #[test]
    fn solved_rejects_unequal_groups() {
        // 3 + 4 split with two leaders is not a solution
        let mut c = gen_initial(&scen(8, &[0])).unwrap();
        for (i, p) in c.particles.iter_mut().enumerate() {
            if p.faulty {
                continue;
            }
            p.state = if i == 1 || i == 4 { ParticleState::Leader } else { ParticleState::Follower };
        }
        // split the line physically: move particles 1..=3 away from 4..=7
        for p in &mut c.particles {
            if !p.faulty && p.head.q <= 3 {
                p.head.r = 1;
                p.tail.r = 1;
            }
        }
        assert_eq!(is_solved(&c), None);
    }

    #[test]
    fn solved_accepts_equal_split() {
        let mut c = gen_initial(&scen(11, &[5])).unwrap();
        for p in &mut c.particles {
            if p.faulty {
                continue;
            }
            p.state = if p.head.q == 0 || p.head.q == 6 {
                ParticleState::Leader
            } else {
                ParticleState::Follower
            };
        }
        assert_eq!(is_solved(&c), Some(SolvedKind::TwoLines));
    }

    #[test]
    fn solved_one_line_with_marching_head() {
        let mut c = gen_initial(&scen(6, &[0])).unwrap();
        for p in &mut c.particles {
            if p.faulty {
                continue;
            }
            p.state = ParticleState::Follower;
            p.head.r = 1;
            p.tail.r = 1;
        }
        c.particles[5].state = ParticleState::Leader;
        // leader mid-step: expanded one cell ahead
        c.particles[5].head = NodeCoord::new(6, 1);
        assert_eq!(is_solved(&c), Some(SolvedKind::OneLine));
    }
}
