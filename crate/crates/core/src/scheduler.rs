//! Semi-synchronous round engine: chooses the activated subset, evaluates
//! handlers against the pre-round snapshot, resolves movement conflicts,
//! applies the transaction, and enforces fairness.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{GlobalDir, NodeCoord};
use crate::particle::{
    row_kind, LocalDir, MessageKind, NeighborView, NeighborhoodView, Particle, ParticleId,
    Payload, PayloadView, PortView, RowKind, SlotView,
};
use crate::protocol::{self, Intent, IntentNote, MoveIntent, PayloadOut, SlotRef};
use crate::trace::{ConflictRecord, RoundEvent, RoundRecord};
use crate::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SchedulerPolicy {
    FullSync,
    Sequential,
    RandomSubset { p_activate: f64 },
    Scripted { rounds: Vec<Vec<u32>> },
}

impl SchedulerPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerPolicy::FullSync => "full-sync",
            SchedulerPolicy::Sequential => "sequential",
            SchedulerPolicy::RandomSubset { .. } => "random-subset",
            SchedulerPolicy::Scripted { .. } => "scripted",
        }
    }
}

/// Immutable snapshot of all particles at a round boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub particles: Vec<Particle>,
    pub round: u64,
}

impl Configuration {
    pub fn occupant(&self, n: NodeCoord) -> Option<&Particle> {
        self.particles.iter().find(|p| p.occupies(n))
    }

    pub fn occupant_id(&self, n: NodeCoord) -> Option<ParticleId> {
        self.occupant(n).map(|p| p.id)
    }

    pub fn particle(&self, id: ParticleId) -> &Particle {
        &self.particles[id.0 as usize]
    }

    pub fn correct_ids(&self) -> Vec<ParticleId> {
        self.particles.iter().filter(|p| !p.faulty).map(|p| p.id).collect()
    }

    /// Occupancy integrity: no two particles share a node; expanded
    /// particles span adjacent nodes.
    pub fn check_occupancy(&self) -> Result<(), String> {
        let mut seen: BTreeMap<NodeCoord, ParticleId> = BTreeMap::new();
        for p in &self.particles {
            for n in [p.head, p.tail] {
                if let Some(prev) = seen.insert(n, p.id) {
                    if prev != p.id {
                        return Err(format!("node {:?} claimed by {:?} and {:?}", n, prev, p.id));
                    }
                }
            }
            if p.expanded() && !p.head.is_adjacent(p.tail) {
                return Err(format!("particle {:?} spans non-adjacent nodes", p.id));
            }
        }
        Ok(())
    }
}

/// Rotate `d` one step so its row delta matches `toward` (+1 up, -1 down).
fn rotate_row_step(d: GlobalDir, toward: i32) -> Option<GlobalDir> {
    [d.rotate(1), d.rotate(-1)]
        .into_iter()
        .find(|g| g.delta().1 == toward)
}

fn slot_view(slots: Option<&BTreeMap<MessageKind, Payload>>, reader: &Particle) -> SlotView {
    let mut out = SlotView::new();
    if let Some(s) = slots {
        for (k, v) in s {
            out.insert(
                *k,
                PayloadView {
                    dir: v.dir.map(|g| reader.orientation.global_to_local(g)),
                    fss: v.fss,
                },
            );
        }
    }
    out
}

/// Exposed ports in the simulator's canonical order (head node first, then
/// tail, each by world-direction order). Tie-breaking over this order is
/// what makes runs independent of private port numberings.
fn canonical_ports(p: &Particle) -> Vec<(NodeCoord, GlobalDir)> {
    let nodes: &[NodeCoord] = if p.contracted() { &[p.head][..] } else { &[p.head, p.tail][..] };
    let mut out = Vec::with_capacity(10);
    for &node in nodes {
        let other = if node == p.head { p.tail } else { p.head };
        for g in GlobalDir::ALL {
            let t = node.step(g);
            if p.expanded() && t == other {
                continue;
            }
            out.push((node, g));
        }
    }
    out
}

/// Build the only input a handler may read. Everything here is local:
/// port labels in the particle's own frame, rows classified sign-free,
/// directions of payloads translated into the reader's frame.
pub fn snapshot(config: &Configuration, id: ParticleId) -> NeighborhoodView {
    let p = config.particle(id);
    debug_assert!(!p.faulty, "faulty particles are never activated");
    let raw = canonical_ports(p);
    let axis_global = p.axis.map(|a| p.orientation.local_to_global(a));
    let dir_global = p.dir.map(|d| p.orientation.local_to_global(d));

    let mut ports = Vec::with_capacity(raw.len());
    for &(node, g) in &raw {
        let target = node.step(g);
        let neighbor = config.occupant(target).map(|q| {
            let q_dir_global = q.dir.map(|d| q.orientation.local_to_global(d));
            let points_at_me = q_dir_global
                .map(|qd| {
                    let front = q.head.step(qd);
                    front == p.head || front == p.tail
                })
                .unwrap_or(false);
            NeighborView {
                state: q.state,
                faulty: q.faulty,
                expanded: q.expanded(),
                bonded_to_head: target == q.head,
                head_row: row_kind(q.head.r),
                contracted: q.contracted(),
                points_at_me,
                flag_candidate: q.flags.candidate,
                flag_linetail: q.flags.linetail,
                lineparity: q.lineparity,
                facing: slot_view(q.slot(target, g.opposite()), p),
            }
        });
        let detector_faulty = neighbor.as_ref().map(|n| n.faulty).unwrap_or(false);
        ports.push(PortView {
            on_head: node == p.head,
            local: p.orientation.global_to_local(g),
            target_row: row_kind(target.r),
            faces_l0: target.r == 0,
            on_axis: axis_global.map(|a| g == a || g == a.opposite()).unwrap_or(false),
            incoming: slot_view(p.slot(node, g), p),
            neighbor,
            detector_faulty,
        });
    }

    let find_port = |node: NodeCoord, g: GlobalDir| -> Option<usize> {
        raw.iter().position(|&(n, d)| n == node && d == g)
    };

    let head_sign = p.head.r.signum();
    let on_side_head = p.head.r.abs() == 1;
    let dir_is_lateral = dir_global.map(|g| g.is_lateral()).unwrap_or(false);

    let ahead = dir_global.and_then(|g| find_port(p.head, g));
    let tail_ahead = if p.expanded() {
        dir_global.and_then(|g| find_port(p.tail, g))
    } else {
        None
    };
    let diag_ahead_l0 = if on_side_head && dir_is_lateral {
        dir_global
            .and_then(|g| rotate_row_step(g, -head_sign))
            .and_then(|g| find_port(p.head, g))
    } else {
        None
    };
    let mid_diag_l0 = if p.expanded() && on_side_head && dir_is_lateral {
        dir_global
            .and_then(|g| rotate_row_step(g.opposite(), -head_sign))
            .and_then(|g| find_port(p.head, g))
    } else {
        None
    };
    let diag_behind_l0 = if p.tail.r.abs() == 1 && dir_is_lateral {
        dir_global
            .and_then(|g| rotate_row_step(g.opposite(), -p.tail.r.signum()))
            .and_then(|g| find_port(p.tail, g))
    } else {
        None
    };
    let away_diag = if !p.expanded() && on_side_head && dir_is_lateral {
        dir_global
            .and_then(|g| rotate_row_step(g, head_sign))
            .and_then(|g| find_port(p.head, g))
    } else {
        None
    };
    let lateral_redirect = if on_side_head {
        dir_global.filter(|g| !g.is_lateral()).and_then(|g| {
            [g.rotate(1), g.rotate(-1)]
                .into_iter()
                .find(|x| x.is_lateral())
                .map(|x| p.orientation.global_to_local(x))
        })
    } else {
        None
    };
    let head_away_from_tail = if p.expanded() {
        GlobalDir::ALL
            .into_iter()
            .find(|g| p.tail.step(*g) == p.head)
            .map(|g| p.orientation.global_to_local(g))
    } else {
        None
    };
    // Tour handedness: the rotation sign taking my heading one step toward
    // row 0. Only meaningful for lateral walkers on a side row.
    let handedness: Option<i32> = if on_side_head && dir_is_lateral {
        dir_global.and_then(|g| {
            [1, -1].into_iter().find(|s| g.rotate(*s).delta().1 == -head_sign)
        })
    } else {
        None
    };

    let opposite = raw
        .iter()
        .map(|&(node, g)| {
            let counterpart = if p.contracted() {
                node
            } else if node == p.head {
                p.tail
            } else {
                p.head
            };
            find_port(counterpart, g.opposite())
        })
        .collect();

    let handoff_dir = raw
        .iter()
        .map(|&(_, g)| {
            handedness.map(|h| p.orientation.global_to_local(g.rotate(h)))
        })
        .collect();

    // Direction adopted after leaving row 0 through a port: the first
    // lateral direction reached by rotating, in this particle's own
    // handedness, from the diagonal that points back at the line.
    let chi = p.orientation.chirality as i32;
    let left_after_leaving = raw
        .iter()
        .enumerate()
        .map(|(i, &(node, g))| {
            if node.r == 0 && ports[i].target_row == RowKind::Side {
                let base = g.opposite();
                [base.rotate(chi), base.rotate(2 * chi)]
                    .into_iter()
                    .find(|x| x.is_lateral())
                    .map(|x| p.orientation.global_to_local(x))
            } else {
                None
            }
        })
        .collect();

    let left_resume = left_resume(p);

    NeighborhoodView {
        state: p.state,
        expanded: p.expanded(),
        on_l0: p.head.r == 0 || p.tail.r == 0,
        head_row: row_kind(p.head.r),
        dir: p.dir,
        axis: p.axis,
        parent: p.parent,
        lineparity: p.lineparity,
        flags: p.flags,
        hist: p.hist,
        self_slot: slot_view(Some(&p.self_slot), p),
        ports,
        ahead,
        tail_ahead,
        diag_ahead_l0,
        diag_behind_l0,
        mid_diag_l0,
        away_diag,
        lateral_redirect,
        head_away_from_tail,
        dir_is_lateral,
        toward_l0_rot: handedness.map(|h| (h * chi) as i8),
        opposite,
        handoff_dir,
        left_after_leaving,
        left_resume,
    }
}

/// Resume direction for an explorer finishing its escape off row 0.
fn left_resume(p: &Particle) -> Option<LocalDir> {
    if p.contracted() || p.tail.r != 0 || p.head.r.abs() != 1 {
        return None;
    }
    let u = GlobalDir::ALL.into_iter().find(|g| p.tail.step(*g) == p.head)?;
    let chi = p.orientation.chirality as i32;
    let base = u.opposite();
    [base.rotate(chi), base.rotate(2 * chi)]
        .into_iter()
        .find(|x| x.is_lateral())
        .map(|x| p.orientation.global_to_local(x))
}

// ---------------------------------------------------------------------
// activation choice

#[derive(Clone, Debug)]
pub struct SchedulerState {
    pub policy: SchedulerPolicy,
    pub fairness_window: u64,
    pub seed: u64,
    /// Round each correct particle last acted, for fairness enforcement.
    last_active: BTreeMap<ParticleId, Option<u64>>,
    seq_cursor: usize,
}

impl SchedulerState {
    pub fn new(policy: SchedulerPolicy, fairness_window: u64, seed: u64, config: &Configuration) -> Self {
        let last_active = config.correct_ids().into_iter().map(|id| (id, None)).collect();
        SchedulerState { policy, fairness_window, seed, last_active, seq_cursor: 0 }
    }

    /// Nonempty activation set for this round, fairness enforced.
    pub fn choose(&mut self, config: &Configuration) -> Vec<ParticleId> {
        let correct = config.correct_ids();
        let round = config.round;
        let mut set: Vec<ParticleId> = match &self.policy {
            SchedulerPolicy::FullSync => correct.clone(),
            SchedulerPolicy::Sequential => {
                let pick = correct[self.seq_cursor % correct.len()];
                self.seq_cursor += 1;
                vec![pick]
            }
            SchedulerPolicy::RandomSubset { p_activate } => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    self.seed ^ round.wrapping_mul(0x9e3779b97f4a7c15),
                );
                correct
                    .iter()
                    .copied()
                    .filter(|_| rng.gen_bool(p_activate.clamp(0.0, 1.0)))
                    .collect()
            }
            SchedulerPolicy::Scripted { rounds } => match rounds.get(round as usize) {
                Some(ids) => correct
                    .iter()
                    .copied()
                    .filter(|id| ids.contains(&id.0))
                    .collect(),
                None => correct.clone(),
            },
        };
        // No one may starve past the window.
        for id in &correct {
            let idle = match self.last_active[id] {
                Some(r) => round.saturating_sub(r),
                None => round + 1,
            };
            if idle >= self.fairness_window && !set.contains(id) {
                set.push(*id);
            }
        }
        if set.is_empty() {
            // Longest idle first, lowest id breaking ties.
            let pick = correct
                .iter()
                .copied()
                .min_by_key(|id| (self.last_active[id].map(|r| -((round - r) as i64)).unwrap_or(i64::MIN), id.0))
                .expect("at least one correct particle");
            set.push(pick);
        }
        set.sort_by_key(|id| id.0);
        set.dedup();
        for id in &set {
            self.last_active.insert(*id, Some(round));
        }
        set
    }
}

// ---------------------------------------------------------------------
// the step transaction

struct PlannedMove {
    id: ParticleId,
    mv: MoveIntent,
    /// Node this particle's body would newly occupy, if any.
    claim: Option<NodeCoord>,
    /// Particle forced to move by a handover.
    forced: Option<ParticleId>,
}

pub struct StepOutcome {
    pub record: RoundRecord,
}

/// Evaluate intents against the pre-round snapshot, apply writes, resolve
/// movement conflicts, and apply surviving moves atomically.
pub fn step(
    config: &mut Configuration,
    activated: &[ParticleId],
    conflict_rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, SimError> {
    let pre = config.clone();
    let mut record = RoundRecord::new(pre.round, activated.iter().map(|i| i.0).collect());

    let mut intents: BTreeMap<ParticleId, Intent> = BTreeMap::new();
    for &id in activated {
        let view = snapshot(&pre, id);
        let intent = protocol::handle(&view);
        if let Some(IntentNote::ModelViolation) = intent.note {
            return Err(SimError::ModelViolation(format!(
                "particle {} sees no line neighbor at initialization",
                id.0
            )));
        }
        validate_intent(&pre, id, &intent)?;
        intents.insert(id, intent);
    }

    // --- non-move effects: state, flags, notes -------------------------
    for (&id, intent) in &intents {
        let p = &mut config.particles[id.0 as usize];
        if let Some(s) = intent.new_state {
            record.events.push(RoundEvent::State {
                id: id.0,
                from: p.state,
                to: s,
                cause: transition_cause(intent),
            });
            p.state = s;
        }
        apply_flags(p, intent);
        if let Some(IntentNote::EnteredOpposer) = intent.note {
            record.events.push(RoundEvent::Warning {
                id: id.0,
                what: "entered a state with no defined behavior".into(),
            });
        }
    }

    // --- memory writes -------------------------------------------------
    // Consumes clear pre-existing slots first; incoming sends then land.
    for (&id, intent) in &intents {
        let ports = canonical_ports(pre.particle(id));
        for (slot, kind) in &intent.consumes {
            match slot {
                SlotRef::SelfSlot => {
                    config.particles[id.0 as usize].self_slot.remove(kind);
                }
                SlotRef::Port(i) => {
                    let (node, g) = ports[*i];
                    config.particles[id.0 as usize].clear_slot(node, g, *kind);
                }
            }
        }
    }
    // Group sends per receiving slot to apply the last-writer rule.
    let mut writes: BTreeMap<(ParticleId, NodeCoord, GlobalDir, MessageKind), Vec<(ParticleId, Payload)>> =
        BTreeMap::new();
    for (&id, intent) in &intents {
        let sender = pre.particle(id);
        let ports = canonical_ports(sender);
        for (port, kind, payload) in &intent.sends {
            let (node, g) = ports[*port];
            let target = node.step(g);
            let global_payload = resolve_payload(sender, *payload);
            match pre.occupant(target) {
                None => record.events.push(RoundEvent::DroppedSend {
                    from: id.0,
                    kind: *kind,
                    why: "empty target".into(),
                }),
                Some(q) if q.faulty => record.events.push(RoundEvent::DroppedSend {
                    from: id.0,
                    kind: *kind,
                    why: "faulty target".into(),
                }),
                Some(q) => {
                    writes
                        .entry((q.id, target, g.opposite(), *kind))
                        .or_default()
                        .push((id, global_payload));
                }
            }
        }
        for (slot, kind, payload) in &intent.own_sets {
            let global_payload = resolve_payload(sender, *payload);
            match slot {
                SlotRef::SelfSlot => {
                    config.particles[id.0 as usize].self_slot.insert(*kind, global_payload);
                }
                SlotRef::Port(i) => {
                    let (node, g) = ports[*i];
                    config.particles[id.0 as usize].set_slot(node, g, *kind, global_payload);
                }
            }
        }
    }
    for ((rid, node, g, kind), senders) in writes {
        let payload = if senders.len() == 1 {
            senders[0].1
        } else {
            let all_equal = senders.windows(2).all(|w| w[0].1 == w[1].1);
            if !all_equal {
                // Adversarial ordering: seeded shuffle, last writer wins.
                let k = conflict_rng.gen_range(0..senders.len());
                record.conflicts.push(ConflictRecord::WriteOrder {
                    receiver: rid.0,
                    kind,
                    winner: senders[k].0 .0,
                });
                senders[k].1
            } else {
                senders[0].1
            }
        };
        config.particles[rid.0 as usize].set_slot(node, g, kind, payload);
    }

    // --- movement ------------------------------------------------------
    let mut planned: Vec<PlannedMove> = Vec::new();
    for (&id, intent) in &intents {
        let Some(mv) = intent.mv else { continue };
        if matches!(mv, MoveIntent::Stay) {
            continue;
        }
        let p = pre.particle(id);
        let ports = canonical_ports(p);
        let (claim, forced) = match mv {
            MoveIntent::Expand { port } => {
                let (node, g) = ports[port];
                (Some(node.step(g)), None)
            }
            MoveIntent::HandoverPush { port } => {
                let (node, g) = ports[port];
                let target = node.step(g);
                (Some(target), pre.occupant_id(target))
            }
            MoveIntent::HandoverPull { port } => {
                let (node, g) = ports[port];
                (None, pre.occupant_id(node.step(g)))
            }
            _ => (None, None),
        };
        planned.push(PlannedMove { id, mv, claim, forced });
    }

    // Rule (iii): a handover against a particle that is itself moving this
    // round succeeds only if the two handovers mirror each other.
    let moving: BTreeMap<ParticleId, MoveIntent> =
        planned.iter().map(|m| (m.id, m.mv)).collect();
    let mut cancelled: Vec<ParticleId> = Vec::new();
    let mut absorbed: Vec<ParticleId> = Vec::new();
    for m in &planned {
        let Some(q) = m.forced else { continue };
        if let Some(&q_mv) = moving.get(&q) {
            let reciprocal = match (m.mv, q_mv) {
                (MoveIntent::HandoverPull { .. }, MoveIntent::HandoverPush { .. }) => {
                    let q_claim = planned.iter().find(|x| x.id == q).and_then(|x| x.claim);
                    q_claim == Some(pre.particle(m.id).tail)
                }
                (MoveIntent::HandoverPush { .. }, MoveIntent::HandoverPull { port }) => {
                    let q_ports = canonical_ports(pre.particle(q));
                    let (n, g) = q_ports[port];
                    pre.occupant_id(n.step(g)) == Some(m.id)
                }
                _ => false,
            };
            if reciprocal {
                // One composite move; drop the mirror half.
                if !absorbed.contains(&q) && !absorbed.contains(&m.id) {
                    absorbed.push(q);
                }
            } else {
                cancelled.push(m.id);
                record.conflicts.push(ConflictRecord::HandoverRefused {
                    by: q.0,
                    loser: m.id.0,
                });
            }
        }
    }
    planned.retain(|m| !cancelled.contains(&m.id) && !absorbed.contains(&m.id));

    // Rule (ii): one handover per forced particle.
    let mut by_forced: BTreeMap<ParticleId, Vec<usize>> = BTreeMap::new();
    for (i, m) in planned.iter().enumerate() {
        if let Some(q) = m.forced {
            by_forced.entry(q).or_default().push(i);
        }
    }
    let mut dropped: Vec<usize> = Vec::new();
    for (q, idxs) in by_forced {
        if idxs.len() > 1 {
            let keep = idxs[conflict_rng.gen_range(0..idxs.len())];
            for i in idxs {
                if i != keep {
                    dropped.push(i);
                    record.conflicts.push(ConflictRecord::HandoverContention {
                        target: q.0,
                        winner: planned[keep].id.0,
                        loser: planned[i].id.0,
                    });
                }
            }
        }
    }
    // Rule (i): one expansion per empty node.
    let mut by_node: BTreeMap<NodeCoord, Vec<usize>> = BTreeMap::new();
    for (i, m) in planned.iter().enumerate() {
        if dropped.contains(&i) {
            continue;
        }
        if let Some(n) = m.claim {
            by_node.entry(n).or_default().push(i);
        }
    }
    for (n, idxs) in by_node {
        if idxs.len() > 1 {
            let keep = idxs[conflict_rng.gen_range(0..idxs.len())];
            for i in idxs {
                if i != keep {
                    dropped.push(i);
                    record.conflicts.push(ConflictRecord::ExpansionRace {
                        node: (n.q, n.r),
                        winner: planned[keep].id.0,
                        loser: planned[i].id.0,
                    });
                }
            }
        }
    }
    let mut dropped_ids: Vec<ParticleId> = dropped.iter().map(|&i| planned[i].id).collect();
    dropped_ids.sort_by_key(|i| i.0);
    planned.retain(|m| !dropped_ids.contains(&m.id));

    // Apply survivors.
    for m in &planned {
        let pre_p = pre.particle(m.id).clone();
        match m.mv {
            MoveIntent::Stay => {}
            MoveIntent::Expand { port } => {
                let ports = canonical_ports(&pre_p);
                let (node, g) = ports[port];
                let p = &mut config.particles[m.id.0 as usize];
                p.tail = node;
                p.head = node.step(g);
            }
            MoveIntent::ContractToHead => {
                let p = &mut config.particles[m.id.0 as usize];
                p.tail = p.head;
            }
            MoveIntent::ContractToTail => {
                let p = &mut config.particles[m.id.0 as usize];
                p.head = p.tail;
            }
            MoveIntent::HandoverPull { port } => {
                let ports = canonical_ports(&pre_p);
                let (node, g) = ports[port];
                let q_id = pre.occupant_id(node.step(g)).expect("validated");
                let vacated = pre_p.tail;
                let p = &mut config.particles[m.id.0 as usize];
                p.tail = p.head;
                let q = &mut config.particles[q_id.0 as usize];
                q.tail = q.head;
                q.head = vacated;
                record.events.push(RoundEvent::Handover { puller: m.id.0, moved: q_id.0 });
            }
            MoveIntent::HandoverPush { port } => {
                let ports = canonical_ports(&pre_p);
                let (node, g) = ports[port];
                let target = node.step(g);
                let q_id = pre.occupant_id(target).expect("validated");
                let q = &mut config.particles[q_id.0 as usize];
                if q.head == target {
                    q.head = q.tail;
                } else {
                    q.tail = q.head;
                }
                let p = &mut config.particles[m.id.0 as usize];
                p.tail = p.head;
                p.head = target;
                record.events.push(RoundEvent::Handover { puller: m.id.0, moved: q_id.0 });
            }
        }
    }
    for p in &mut config.particles {
        let moved = p.pre.map(|(h, t)| (h, t) != (p.head, p.tail)).unwrap_or(true);
        if moved {
            p.discard_vacated_memory();
        }
        p.pre = Some((p.head, p.tail));
    }
    config
        .check_occupancy()
        .map_err(|e| SimError::ProtocolFault(format!("round {}: {}", pre.round, e)))?;

    for m in &planned {
        let p = config.particle(m.id);
        let was = pre.particle(m.id);
        if (was.head, was.tail) != (p.head, p.tail) {
            record.events.push(RoundEvent::Move {
                id: m.id.0,
                head: (p.head.q, p.head.r),
                tail: (p.tail.q, p.tail.r),
            });
        }
    }

    config.round += 1;
    Ok(StepOutcome { record })
}

fn transition_cause(intent: &Intent) -> Option<MessageKind> {
    intent.consumes.iter().map(|(_, k)| *k).find(|k| {
        matches!(
            k,
            MessageKind::Even
                | MessageKind::Winner
                | MessageKind::SwitchToLeader
                | MessageKind::SwitchToCandidate
                | MessageKind::Candidate
                | MessageKind::MarkerToLeader
        )
    })
}

fn resolve_payload(sender: &Particle, p: PayloadOut) -> Payload {
    Payload {
        dir: p.dir.map(|d| sender.orientation.local_to_global(d)),
        fss: p.fss,
    }
}

fn apply_flags(p: &mut Particle, intent: &Intent) {
    let f = &intent.flags;
    if let Some(d) = f.dir {
        p.dir = d;
    }
    if let Some(v) = f.linetail {
        p.flags.linetail = v;
    }
    if let Some(v) = f.candidate {
        p.flags.candidate = v;
    }
    if let Some(v) = f.firstsideswitch {
        p.flags.firstsideswitch = v;
    }
    if let Some(v) = f.firstchange {
        p.flags.firstchange = v;
    }
    if let Some(v) = f.firstrun {
        p.flags.firstrun = v;
    }
    if let Some(v) = f.lineparity {
        p.lineparity = v;
    }
    if let Some(v) = f.parent {
        p.parent = v;
    }
    if let Some(v) = f.hist {
        p.hist = v;
    }
    if let Some(v) = f.axis {
        p.axis = Some(v);
    }
}

fn validate_intent(pre: &Configuration, id: ParticleId, intent: &Intent) -> Result<(), SimError> {
    let p = pre.particle(id);
    let bad = |what: &str| {
        Err(SimError::ProtocolFault(format!(
            "round {}: particle {} emitted {} while {}",
            pre.round,
            id.0,
            what,
            if p.contracted() { "contracted" } else { "expanded" }
        )))
    };
    match intent.mv {
        Some(MoveIntent::Expand { port }) => {
            if p.expanded() {
                return bad("expand");
            }
            let ports = canonical_ports(p);
            let (node, g) = ports[port];
            if pre.occupant(node.step(g)).is_some() {
                return bad("expand into an occupied node");
            }
        }
        Some(MoveIntent::ContractToHead) | Some(MoveIntent::ContractToTail) => {
            if p.contracted() {
                return bad("contract");
            }
        }
        Some(MoveIntent::HandoverPull { port }) => {
            if p.contracted() {
                return bad("handover pull");
            }
            let ports = canonical_ports(p);
            let (node, g) = ports[port];
            if node != p.tail {
                return bad("handover pull away from the tail");
            }
            match pre.occupant(node.step(g)) {
                Some(q) if q.contracted() && !q.faulty => {}
                _ => return bad("handover pull of an invalid neighbor"),
            }
        }
        Some(MoveIntent::HandoverPush { port }) => {
            if p.expanded() {
                return bad("handover push");
            }
            let ports = canonical_ports(p);
            let (node, g) = ports[port];
            match pre.occupant(node.step(g)) {
                Some(q) if q.expanded() && !q.faulty => {}
                _ => return bad("handover push of an invalid neighbor"),
            }
        }
        _ => {}
    }
    Ok(())
}
