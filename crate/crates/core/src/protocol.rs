//! The LineRecovery state machine: one pure handler per state, mapping a
//! neighborhood view to an intent (memory writes, flag updates, state
//! transition, movement). Handlers read nothing but the view, so the same
//! view always yields the same intent.

use serde::{Deserialize, Serialize};

use crate::particle::{
    LocalDir, MessageKind, NeighborhoodView, ParticleState, PayloadView, PortView, RowKind,
};

/// Outgoing message as a handler emits it, in the sender's frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadOut {
    pub dir: Option<LocalDir>,
    pub fss: bool,
}

impl PayloadOut {
    pub const NONE: PayloadOut = PayloadOut { dir: None, fss: false };

    pub fn dir(d: LocalDir) -> PayloadOut {
        PayloadOut { dir: Some(d), fss: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveIntent {
    Stay,
    /// Expand into the empty node faced by this port.
    Expand { port: usize },
    ContractToHead,
    ContractToTail,
    /// Contract to head while pulling the contracted neighbor at this
    /// (tail-side) port into the vacated tail node.
    HandoverPull { port: usize },
    /// Expand into the node faced by this port, forcing the expanded
    /// occupant to contract away from it.
    HandoverPush { port: usize },
}

/// Where a consumed message lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotRef {
    Port(usize),
    SelfSlot,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagUpdates {
    pub dir: Option<Option<LocalDir>>,
    pub linetail: Option<bool>,
    pub candidate: Option<bool>,
    pub firstsideswitch: Option<bool>,
    pub firstchange: Option<bool>,
    pub firstrun: Option<bool>,
    pub lineparity: Option<u8>,
    pub parent: Option<Option<LocalDir>>,
    pub hist: Option<u8>,
    pub axis: Option<LocalDir>,
}

/// Notes the scheduler records verbatim into the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntentNote {
    /// A state with no behavior in the protocol was entered.
    EnteredOpposer,
    /// The initial configuration is not a line this particle recognizes.
    ModelViolation,
}

#[derive(Clone, Debug, Default)]
pub struct Intent {
    pub mv: Option<MoveIntent>,
    /// (port, kind, payload) writes into neighbors' facing mailboxes.
    pub sends: Vec<(usize, MessageKind, PayloadOut)>,
    /// Messages re-added or self-addressed into my own mailboxes.
    pub own_sets: Vec<(SlotRef, MessageKind, PayloadOut)>,
    /// Consumed slots in my own mailboxes.
    pub consumes: Vec<(SlotRef, MessageKind)>,
    pub new_state: Option<ParticleState>,
    pub flags: FlagUpdates,
    pub note: Option<IntentNote>,
}

impl Intent {
    fn stay() -> Intent {
        Intent::default()
    }

    fn consume(mut self, port: usize, kind: MessageKind) -> Intent {
        self.consumes.push((SlotRef::Port(port), kind));
        self
    }

    fn state(mut self, s: ParticleState) -> Intent {
        self.new_state = Some(s);
        self
    }

    fn send(mut self, port: usize, kind: MessageKind, p: PayloadOut) -> Intent {
        self.sends.push((port, kind, p));
        self
    }

    fn mv(mut self, m: MoveIntent) -> Intent {
        self.mv = Some(m);
        self
    }

    fn dir(mut self, d: Option<LocalDir>) -> Intent {
        self.flags.dir = Some(d);
        self
    }

    fn hist(mut self, h: u8) -> Intent {
        self.flags.hist = Some(h);
        self
    }
}

pub fn handle(view: &NeighborhoodView) -> Intent {
    match view.state {
        ParticleState::Init => handle_init(view),
        ParticleState::Starting => handle_starting(view),
        ParticleState::Marker => handle_marker(view),
        ParticleState::NofaultyLeader => Intent::stay(),
        ParticleState::Notified => handle_notified(view),
        ParticleState::PreExplorer => handle_pre_explorer(view),
        ParticleState::Explorer => handle_explorer(view),
        ParticleState::PreMarker => handle_pre_marker(view),
        ParticleState::Candidate => handle_candidate(view),
        ParticleState::Slave => handle_slave(view),
        ParticleState::Leader => handle_leader(view),
        ParticleState::Follower => handle_follower(view),
        ParticleState::Probe => handle_probe(view),
        ParticleState::Collector => handle_collector(view),
        ParticleState::CollectorCounting => handle_collector_counting(view),
        ParticleState::CollectorDone => handle_collector_done(view),
        ParticleState::Opposer => Intent::stay(),
    }
}

// ---------------------------------------------------------------------
// shared guard helpers

fn occupied_correct(p: &PortView) -> Option<&crate::particle::NeighborView> {
    p.neighbor.as_ref().filter(|n| !n.faulty)
}

fn consume_switch(view: &NeighborhoodView, kind: MessageKind) -> Option<(usize, PayloadView)> {
    let i = view.first_with(kind)?;
    Some((i, view.payload_at(i, kind).unwrap()))
}

/// Generic role-switch receipt: consume the message and adopt its payload.
fn switch_to(
    view: &NeighborhoodView,
    kind: MessageKind,
    state: ParticleState,
    adopt_dir: bool,
    adopt_fss: bool,
) -> Option<Intent> {
    let (i, p) = consume_switch(view, kind)?;
    let mut out = Intent::stay().consume(i, kind).state(state);
    if adopt_dir {
        if let Some(d) = p.dir {
            out.flags.dir = Some(Some(d));
        }
    }
    if adopt_fss && p.fss {
        out.flags.firstsideswitch = Some(true);
    }
    Some(out)
}

/// The walking step shared by every traveler: contract first when
/// expanded, otherwise expand ahead when the next cell is free.
fn walk(view: &NeighborhoodView) -> Intent {
    if view.expanded {
        contract_updating_hist(view)
    } else if let Some(a) = view.ahead {
        if view.port(a).is_empty() {
            return Intent::stay().mv(MoveIntent::Expand { port: a });
        } else {
            Intent::stay()
        }
    } else {
        Intent::stay()
    }
}

/// Contract to head, advancing the witnessed-empty history from the row-0
/// cell now sliding behind the walker.
fn contract_updating_hist(view: &NeighborhoodView) -> Intent {
    let mut h = 0u8;
    if view.dir_is_lateral {
        if let Some(mid) = view.mid_diag_l0 {
            if view.port(mid).is_empty() {
                h = (view.hist + 1).min(2);
            }
        }
    }
    Intent::stay().mv(MoveIntent::ContractToHead).hist(h)
}

/// Three consecutive empty row-0 cells witnessed, ending at the cell
/// diagonally behind a contracted side-row walker.
fn end_of_line_reached(view: &NeighborhoodView) -> Option<usize> {
    if view.expanded || !view.dir_is_lateral || view.hist < 2 {
        return None;
    }
    let b = view.diag_behind_l0?;
    view.port(b).is_empty().then_some(b)
}

/// Contract-to-head with a handover pull of a contracted follower bonded
/// to the tail, preferring one on row 0.
fn contract_pulling_follower(view: &NeighborhoodView) -> Intent {
    let candidates: Vec<usize> = view
        .ports
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.on_head)
        .filter(|(_, p)| {
            p.occupant()
                .is_some_and(|n| !n.faulty && n.state == ParticleState::Follower && n.contracted)
        })
        .map(|(i, _)| i)
        .collect();
    let pick = candidates
        .iter()
        .copied()
        .find(|&i| view.port(i).faces_l0)
        .or_else(|| candidates.first().copied());
    match pick {
        Some(i) => contract_updating_hist(view).mv(MoveIntent::HandoverPull { port: i }),
        None => contract_updating_hist(view),
    }
}

// ---------------------------------------------------------------------
// Init / marker / starting

fn handle_init(view: &NeighborhoodView) -> Intent {
    // Learn the line axis before anything else.
    let axis_ports: Vec<usize> = view
        .ports
        .iter()
        .enumerate()
        .filter(|(_, p)| p.faces_l0)
        .map(|(i, _)| i)
        .collect();
    let mut out = Intent::stay();
    if let Some(&a) = axis_ports.first() {
        out.flags.axis = Some(view.port(a).local);
    }

    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToSlave) {
        return out.consume(i, MessageKind::SwitchToSlave).state(ParticleState::Slave);
    }
    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToFollower) {
        return out
            .consume(i, MessageKind::SwitchToFollower)
            .state(ParticleState::Follower);
    }

    // Occupied line-axis neighbors still recognizable as line material.
    let line_neighbors: Vec<usize> = axis_ports
        .iter()
        .copied()
        .filter(|&i| {
            view.port(i).occupant().is_some_and(|n| {
                n.faulty
                    || matches!(
                        n.state,
                        ParticleState::Init | ParticleState::Starting | ParticleState::Marker
                    )
            })
        })
        .collect();
    match line_neighbors.len() {
        0 => {
            out.note = Some(IntentNote::ModelViolation);
            out
        }
        1 => {
            let p = line_neighbors[0];
            out.flags.linetail = Some(true);
            out.flags.lineparity = Some(1);
            out.send(p, MessageKind::Coin, PayloadOut::NONE)
                .state(ParticleState::Marker)
        }
        _ => out.state(ParticleState::Starting),
    }
}

fn handle_marker(view: &NeighborhoodView) -> Intent {
    if let Some((i, _)) = consume_switch(view, MessageKind::MarkerToLeader) {
        return Intent::stay()
            .consume(i, MessageKind::MarkerToLeader)
            .state(ParticleState::NofaultyLeader);
    }
    // Tail role handed inward: retire the flag so coins stop treating this
    // end as a growable tail.
    if let Some((i, _)) = consume_switch(view, MessageKind::NewTail) {
        let mut out = Intent::stay().consume(i, MessageKind::NewTail);
        out.flags.linetail = Some(false);
        return out;
    }
    // A returning coin bounces back inward to keep the exchange alive.
    if let Some((i, _)) = consume_switch(view, MessageKind::Coin) {
        if view.port(i).occupant().is_some() {
            return Intent::stay()
                .consume(i, MessageKind::Coin)
                .send(i, MessageKind::Coin, PayloadOut::NONE);
        }
        return Intent::stay().consume(i, MessageKind::Coin);
    }
    if !view.flags.candidate {
        if let Some((i, _)) = consume_switch(view, MessageKind::AskToBeCandidate) {
            let mut out = Intent::stay()
                .consume(i, MessageKind::AskToBeCandidate)
                .send(i, MessageKind::Candidate, PayloadOut::NONE);
            out.flags.candidate = Some(true);
            return out;
        }
    }
    if let Some(out) = switch_to(view, MessageKind::SwitchToLeader, ParticleState::Leader, true, true) {
        return out;
    }

    let find_neighbor = |state: ParticleState, must_be_contracted: bool| -> Option<usize> {
        view.ports.iter().position(|p| {
            p.occupant()
                .is_some_and(|n| !n.faulty && n.state == state && (!must_be_contracted || n.contracted))
        })
    };
    let counting = find_neighbor(ParticleState::CollectorCounting, false);

    if let Some(probe) = find_neighbor(ParticleState::Probe, true) {
        if let Some(counting) = counting {
            let probe_port = view.port(probe);
            if !probe_port.occupant().unwrap().facing.contains_key(&MessageKind::Seen) {
                return Intent::stay()
                    .send(probe, MessageKind::Seen, PayloadOut::NONE)
                    .send(counting, MessageKind::Other, PayloadOut::NONE);
            }
        }
        return Intent::stay();
    }
    if let Some(done) = find_neighbor(ParticleState::CollectorDone, true) {
        if let Some(counting) = counting {
            return Intent::stay().send(counting, MessageKind::Winner, PayloadOut::NONE);
        }
        if let Some(stored) = view.first_with(MessageKind::Done) {
            return Intent::stay()
                .consume(stored, MessageKind::Done)
                .send(done, MessageKind::Even, PayloadOut::NONE)
                .state(ParticleState::Follower);
        }
    }
    Intent::stay()
}

fn handle_starting(view: &NeighborhoodView) -> Intent {
    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToSlave) {
        return Intent::stay()
            .consume(i, MessageKind::SwitchToSlave)
            .state(ParticleState::Slave);
    }
    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToFollower) {
        return Intent::stay()
            .consume(i, MessageKind::SwitchToFollower)
            .state(ParticleState::Follower);
    }

    let mut out = Intent::stay();

    if let Some(p) = view.first_with(MessageKind::Coin) {
        out = out.consume(p, MessageKind::Coin);
        let op = view.opposite_port(p);
        // A tail role is taken at most once per particle; a stray coin
        // passing an already-claimed particle is only forwarded.
        let may_take = view.parent.is_none() && !view.flags.linetail;
        let opposite_tail = op.filter(|_| may_take).and_then(|o| {
            occupied_correct(view.port(o)).filter(|n| n.flag_linetail).map(|n| (o, n))
        });
        if let Some((o, n)) = opposite_tail {
            // Take over the tail role of the far segment and bounce the
            // coin back where it came from.
            out = out
                .send(o, MessageKind::NewTail, PayloadOut::NONE)
                .send(p, MessageKind::Coin, PayloadOut::NONE);
            out.flags.parent = Some(Some(view.port(o).local));
            out.flags.linetail = Some(true);
            out.flags.lineparity = Some((n.lineparity + 1) % 2);
        } else {
            let forward = op.and_then(|o| {
                occupied_correct(view.port(o))
                    .filter(|n| {
                        n.state != ParticleState::Init && !n.facing.contains_key(&MessageKind::Coin)
                    })
                    .map(|_| o)
            });
            match forward {
                Some(o) => out = out.send(o, MessageKind::Coin, PayloadOut::NONE),
                // Hold the coin until the next neighbor can take it.
                None => out.own_sets.push((SlotRef::Port(p), MessageKind::Coin, PayloadOut::NONE)),
            }
        }
    } else if view.flags.linetail {
        if let Some(i) = view.first_with(MessageKind::NewTail) {
            // Dethroned: the tail role moved inward. Nothing else to do as
            // a tail this activation.
            out = out.consume(i, MessageKind::NewTail);
            out.flags.linetail = Some(false);
        } else {
            // The other segment's tail became a neighbor: compare parities.
            let meeting = view
                .l0_ports()
                .find(|(i, p)| {
                    Some(p.local) != view.parent
                        && occupied_correct(p).is_some_and(|n| n.flag_linetail)
                        && view.opposite_port(*i).is_some()
                })
                .map(|(i, p)| (i, p.occupant().unwrap().lineparity));
            if let Some((i, their_parity)) = meeting {
                if view.lineparity == 0 || view.lineparity == their_parity {
                    let toward_marker = view.opposite_port(i).unwrap();
                    out = out.send(toward_marker, MessageKind::MarkerToLeader, PayloadOut::NONE);
                }
            }
        }
    }

    if let Some(i) = view.first_with(MessageKind::MarkerToLeader) {
        out = out.consume(i, MessageKind::MarkerToLeader);
        if let Some(o) = view.opposite_port(i) {
            if view.port(o).occupant().is_some() {
                out = out.send(o, MessageKind::MarkerToLeader, PayloadOut::NONE);
            }
        }
    }

    // Faulty neighbor on the line and an awake neighbor on the other side:
    // leave the line as an explorer, notifying the awake side first.
    let faulty_l0 = view.l0_ports().find(|(_, p)| p.detector_faulty).map(|(i, _)| i);
    if let Some(f) = faulty_l0 {
        let other = view
            .l0_ports()
            .find(|(i, p)| {
                *i != f
                    && p.occupant()
                        .is_some_and(|n| n.faulty || n.state != ParticleState::Init)
            })
            .map(|(i, _)| i);
        if let Some(o) = other {
            if !view.has_anywhere(MessageKind::Notified) {
                return out.send(o, MessageKind::Notify, PayloadOut::NONE).state(ParticleState::PreExplorer);
            }
        }
    }

    // Exactly one notification and no sleeping neighbor left on the line.
    if view.count_with(MessageKind::Notify) == 1 {
        let init_on_l0 = view
            .l0_ports()
            .any(|(_, p)| occupied_correct(p).is_some_and(|n| n.state == ParticleState::Init));
        if !init_on_l0 {
            let p = view.first_with(MessageKind::Notify).unwrap();
            if let Some(o) = view.opposite_port(p) {
                if view.port(o).occupant().is_some() {
                    out = out.send(o, MessageKind::Notified, PayloadOut::NONE);
                }
                return out.state(ParticleState::Notified);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------
// explorer creation

fn handle_notified(view: &NeighborhoodView) -> Intent {
    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToSlave) {
        return Intent::stay()
            .consume(i, MessageKind::SwitchToSlave)
            .state(ParticleState::Slave);
    }
    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToFollower) {
        return Intent::stay()
            .consume(i, MessageKind::SwitchToFollower)
            .state(ParticleState::Follower);
    }
    let Some(p) = view.first_with(MessageKind::Notify) else {
        return Intent::stay();
    };
    let Some(o) = view.opposite_port(p) else {
        return Intent::stay();
    };
    let cond1 = !view.has_anywhere(MessageKind::Notified);
    let cond2 = !view
        .port(o)
        .occupant()
        .is_some_and(|n| n.state == ParticleState::PreExplorer);
    let cond3 = !view.port(o).has(MessageKind::Notify);
    if cond1 && cond2 && cond3 {
        return Intent::stay().consume(p, MessageKind::Notify).state(ParticleState::PreExplorer);
    }
    Intent::stay()
}

/// First empty port leading off row 0 onto a side row.
fn escape_port(view: &NeighborhoodView) -> Option<usize> {
    view.ports
        .iter()
        .position(|p| !p.faces_l0 && p.target_row == RowKind::Side && p.is_empty() && p.on_head)
}

fn handle_pre_explorer(view: &NeighborhoodView) -> Intent {
    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToSlave) {
        return Intent::stay()
            .consume(i, MessageKind::SwitchToSlave)
            .state(ParticleState::Slave);
    }
    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToFollower) {
        return Intent::stay()
            .consume(i, MessageKind::SwitchToFollower)
            .state(ParticleState::Follower);
    }
    let Some(l) = escape_port(view) else {
        return Intent::stay();
    };
    let left = view.left_after_leaving[l].expect("escape port has a leaving direction");
    Intent::stay()
        .mv(MoveIntent::Expand { port: l })
        .dir(Some(left))
        .hist(0)
        .state(ParticleState::Explorer)
}

fn handle_explorer(view: &NeighborhoodView) -> Intent {
    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToSlave) {
        return Intent::stay()
            .consume(i, MessageKind::SwitchToSlave)
            .state(ParticleState::Slave);
    }

    // Still touching row 0: keep trying to leave it.
    if view.on_l0 {
        if view.expanded {
            // escape already underway; finish it
            let left = view.left_resume.or(view.dir);
            return Intent::stay().mv(MoveIntent::ContractToHead).dir(left).hist(0);
        }
        if let Some(l) = escape_port(view) {
            let left = view.left_after_leaving[l].unwrap();
            return Intent::stay().mv(MoveIntent::Expand { port: l }).dir(Some(left)).hist(0);
        }
        return Intent::stay();
    }

    // A sleeping neighbor on the line freezes progress.
    if view
        .l0_ports()
        .any(|(_, p)| occupied_correct(p).is_some_and(|n| n.state == ParticleState::Init))
    {
        return Intent::stay();
    }

    // Three consecutive empty cells: the end of the line. Claim it.
    if let Some(b) = end_of_line_reached(view) {
        return Intent::stay().mv(MoveIntent::Expand { port: b }).state(ParticleState::PreMarker);
    }

    // Head-on explorer: swap directions, once per encounter.
    if let Some(a) = view.ahead {
        let duel = view.port(a).occupant().is_some_and(|n| {
            n.state == ParticleState::Explorer
                && n.points_at_me
                && !n.facing.contains_key(&MessageKind::ChangeDirection)
        });
        if duel {
            return Intent::stay()
                .send(a, MessageKind::ChangeDirection, PayloadOut::NONE)
                .dir(view.dir.map(LocalDir::opposite))
                .hist(0);
        }
    }
    if let Some(a) = view.ahead {
        if view.port(a).has(MessageKind::ChangeDirection) {
            return Intent::stay()
                .consume(a, MessageKind::ChangeDirection)
                .dir(view.dir.map(LocalDir::opposite))
                .hist(0);
        }
    }

    // Any marker on the line beside me: journey over, ask for candidacy.
    if let Some((i, _)) = view
        .l0_ports()
        .find(|(_, p)| occupied_correct(p).is_some_and(|n| n.state == ParticleState::Marker))
    {
        return Intent::stay()
            .send(i, MessageKind::AskToBeCandidate, PayloadOut::NONE)
            .state(ParticleState::Slave);
    }

    match view.count_with(MessageKind::SwitchToCandidate) {
        1 => {
            let (i, p) = consume_switch(view, MessageKind::SwitchToCandidate).unwrap();
            let mut out = Intent::stay()
                .consume(i, MessageKind::SwitchToCandidate)
                .state(ParticleState::Candidate)
                .hist(0);
            if let Some(d) = p.dir {
                out.flags.dir = Some(Some(d));
            }
            return out;
        }
        n if n >= 2 => {
            let mut out = Intent::stay().state(ParticleState::Leader);
            for (i, port) in view.ports.iter().enumerate() {
                if port.has(MessageKind::SwitchToCandidate) {
                    if out.flags.dir.is_none() {
                        if let Some(d) = port.incoming[&MessageKind::SwitchToCandidate].dir {
                            out.flags.dir = Some(Some(d));
                        }
                    }
                    out = out.consume(i, MessageKind::SwitchToCandidate);
                }
            }
            return out;
        }
        _ => {}
    }
    if let Some(out) = switch_to(view, MessageKind::SwitchToLeader, ParticleState::Leader, true, true) {
        return out;
    }
    match view.count_with(MessageKind::SwitchOpposer) {
        1 => {
            let (i, p) = consume_switch(view, MessageKind::SwitchOpposer).unwrap();
            let mut out = Intent::stay()
                .consume(i, MessageKind::SwitchOpposer)
                .state(ParticleState::Opposer);
            if let Some(d) = p.dir {
                out.flags.dir = Some(Some(d));
            }
            out.note = Some(IntentNote::EnteredOpposer);
            return out;
        }
        n if n >= 2 => {
            let mut out = Intent::stay().state(ParticleState::Leader);
            for (i, port) in view.ports.iter().enumerate() {
                if port.has(MessageKind::SwitchOpposer) {
                    out = out.consume(i, MessageKind::SwitchOpposer);
                }
            }
            return out;
        }
        _ => {}
    }
    if view.l0_ports().any(|(_, p)| {
        occupied_correct(p)
            .is_some_and(|n| matches!(n.state, ParticleState::Opposer | ParticleState::Leader))
    }) {
        return Intent::stay().state(ParticleState::Slave);
    }
    walk(view)
}

fn handle_pre_marker(view: &NeighborhoodView) -> Intent {
    if view.expanded {
        // Won the race for the end cell: settle there as the marker.
        Intent::stay().mv(MoveIntent::ContractToHead).state(ParticleState::Marker)
    } else {
        Intent::stay().state(ParticleState::Explorer)
    }
}

// ---------------------------------------------------------------------
// candidate / slave

fn handle_candidate(view: &NeighborhoodView) -> Intent {
    // Freeze the line under me so no new explorers appear behind my back.
    let mut out = Intent::stay();
    for (i, p) in view.l0_ports() {
        if occupied_correct(p).is_some_and(|n| n.state != ParticleState::Marker)
            && !p.occupant().unwrap().facing.contains_key(&MessageKind::SwitchToSlave)
        {
            out = out.send(i, MessageKind::SwitchToSlave, PayloadOut::NONE);
        }
    }

    if view.l0_ports().any(|(_, p)| {
        occupied_correct(p)
            .is_some_and(|n| matches!(n.state, ParticleState::Candidate | ParticleState::Leader))
    }) {
        return out.state(ParticleState::Slave);
    }

    let ahead_occ = view.ahead.and_then(|a| occupied_correct(view.port(a)).map(|n| (a, n)));

    // Swap roles with whatever blocks the walk, keeping the walk alive.
    if let Some((a, n)) = ahead_occ {
        if n.state != ParticleState::Candidate && n.contracted {
            let d = view.dir.expect("walking candidate has a direction");
            return out
                .send(a, MessageKind::SwitchToCandidate, PayloadOut::dir(d))
                .state(ParticleState::Slave);
        }
    }
    // Two candidates face to face: race for the single off-line cell.
    if let Some((_, n)) = ahead_occ {
        if !view.expanded && n.state == ParticleState::Candidate {
            if let Some(l) = view.away_diag {
                if view.port(l).is_empty() {
                    return out.mv(MoveIntent::Expand { port: l });
                }
            }
            return out;
        }
    }
    if let Some((_, n)) = ahead_occ {
        if n.state == ParticleState::Candidate && n.head_row != RowKind::Side {
            return out.state(ParticleState::Slave);
        }
    }
    if view.expanded && view.head_row == RowKind::Far {
        let rival_still_candidate = view
            .tail_ahead
            .and_then(|t| view.port(t).occupant())
            .is_some_and(|n| n.state == ParticleState::Candidate);
        if !rival_still_candidate {
            return out.mv(MoveIntent::ContractToTail).state(ParticleState::Leader);
        }
        return out;
    }

    // At a marker's corner.
    let marker_ahead = view.diag_ahead_l0.and_then(|i| {
        occupied_correct(view.port(i))
            .filter(|n| n.state == ParticleState::Marker)
            .map(|n| (i, n))
    });
    if let Some((i, n)) = marker_ahead {
        if n.flag_candidate && !view.has_anywhere(MessageKind::Candidate) {
            // Someone else already holds this end's candidacy: the other
            // candidate runs on the opposite side. Start comparing.
            return out.dir(view.dir.map(LocalDir::opposite)).hist(0).state(ParticleState::Collector);
        }
        if !n.flag_candidate && !n.facing.contains_key(&MessageKind::AskToBeCandidate) {
            return out.send(i, MessageKind::AskToBeCandidate, PayloadOut::NONE);
        }
    }
    if let Some(p) = view.first_with(MessageKind::Candidate) {
        // Unique candidacy confirmed: hand leadership to the marker.
        let payload = PayloadOut {
            dir: view.handoff_dir[p],
            fss: view.flags.firstsideswitch,
        };
        return out
            .consume(p, MessageKind::Candidate)
            .send(p, MessageKind::SwitchToLeader, payload)
            .dir(Some(view.port(p).local))
            .state(ParticleState::Follower);
    }

    // End of the line: take the last empty cell and lead from there.
    if let Some(b) = end_of_line_reached(view) {
        return out.mv(MoveIntent::Expand { port: b });
    }
    if view.expanded && view.head_row == RowKind::L0 {
        let away = view.head_away_from_tail.expect("expanded");
        let mut o = out.mv(MoveIntent::ContractToHead).dir(Some(away)).hist(0).state(ParticleState::Leader);
        o.flags.firstsideswitch = Some(true);
        return o;
    }
    let mv = walk(view);
    out.mv = mv.mv;
    if let Some(h) = mv.flags.hist {
        out.flags.hist = Some(h);
    }
    out
}

fn handle_slave(view: &NeighborhoodView) -> Intent {
    let has_candidate_msg = view.first_with(MessageKind::Candidate);
    let has_switch_to_candidate = view.first_with(MessageKind::SwitchToCandidate);
    match (has_candidate_msg, has_switch_to_candidate) {
        (Some(i), None) => {
            // Candidacy granted by the marker: turn around and verify it.
            return Intent::stay()
                .consume(i, MessageKind::Candidate)
                .dir(view.dir.map(LocalDir::opposite))
                .hist(0)
                .state(ParticleState::Candidate);
        }
        (Some(i), Some(j)) => {
            let p = view.payload_at(j, MessageKind::SwitchToCandidate).unwrap();
            let mut out = Intent::stay()
                .consume(i, MessageKind::Candidate)
                .consume(j, MessageKind::SwitchToCandidate)
                .state(ParticleState::Leader);
            if let Some(d) = p.dir {
                out.flags.dir = Some(Some(d));
            }
            return out;
        }
        _ => {}
    }
    for kind in [MessageKind::SwitchCollector, MessageKind::SwitchToCollector] {
        if let Some(out) = switch_to(view, kind, ParticleState::Collector, true, false) {
            return out.hist(0);
        }
    }
    if let Some(out) = switch_to(view, MessageKind::SwitchToLeader, ParticleState::Leader, true, true) {
        return out;
    }
    if let Some(out) = switch_to(view, MessageKind::SwitchToCandidate, ParticleState::Candidate, true, false) {
        return out.hist(0);
    }
    if let Some(out) = switch_to(view, MessageKind::SwitchToProbe, ParticleState::Probe, true, false) {
        return out;
    }
    if let Some(out) =
        switch_to(view, MessageKind::SwitchToCollectorDone, ParticleState::CollectorDone, true, false)
    {
        return out;
    }
    if let Some((i, _)) = consume_switch(view, MessageKind::SwitchToFollower) {
        return Intent::stay()
            .consume(i, MessageKind::SwitchToFollower)
            .state(ParticleState::Follower);
    }
    Intent::stay()
}

// ---------------------------------------------------------------------
// unique leader

fn handle_leader(view: &NeighborhoodView) -> Intent {
    // Past the row's end: wrap around the corner toward the other extreme.
    if view.head_row == RowKind::Side {
        if let Some(lat) = view.lateral_redirect {
            return Intent::stay().dir(Some(lat)).hist(0);
        }
    }

    if !view.expanded && view.flags.firstsideswitch {
        let mut sent = Intent::stay();
        let mut any = false;
        for (i, p) in view.l0_ports() {
            let collectible = occupied_correct(p).is_some_and(|n| {
                !matches!(n.state, ParticleState::Follower | ParticleState::Marker)
            });
            if collectible {
                if !p.occupant().unwrap().facing.contains_key(&MessageKind::SwitchToFollower) {
                    sent = sent.send(i, MessageKind::SwitchToFollower, PayloadOut::NONE);
                }
                any = true;
            }
        }
        if any {
            // Do not move until they join.
            return sent;
        }
    }

    if let Some(a) = view.ahead {
        if let Some(n) = occupied_correct(view.port(a)) {
            let _ = n;
            let payload = PayloadOut { dir: view.dir, fss: view.flags.firstsideswitch };
            return Intent::stay()
                .send(a, MessageKind::SwitchToLeader, payload)
                .state(ParticleState::Follower);
        }
    }

    let marker_corner = view.diag_ahead_l0.and_then(|i| {
        occupied_correct(view.port(i))
            .filter(|n| n.state == ParticleState::Marker)
            .map(|_| i)
    });
    if let Some(i) = marker_corner {
        let payload = PayloadOut { dir: view.handoff_dir[i], fss: true };
        let mut out = Intent::stay()
            .send(i, MessageKind::SwitchToLeader, payload)
            .dir(Some(view.port(i).local))
            .state(ParticleState::Follower);
        out.flags.firstsideswitch = Some(true);
        return out;
    }

    if view.expanded {
        return contract_pulling_follower(view);
    }
    if let Some(a) = view.ahead {
        if view.port(a).is_empty() {
            return Intent::stay().mv(MoveIntent::Expand { port: a });
        }
    }
    Intent::stay()
}

fn handle_follower(view: &NeighborhoodView) -> Intent {
    if view.expanded {
        return contract_pulling_follower(view);
    }
    if let Some(out) = switch_to(view, MessageKind::SwitchToLeader, ParticleState::Leader, true, true) {
        return out;
    }
    if let Some(p) = view.first_with(MessageKind::Probe) {
        if let Some(o) = view.opposite_port(p) {
            match view.port(o).occupant() {
                Some(n) if n.contracted && !n.faulty => {
                    return Intent::stay()
                        .consume(p, MessageKind::Probe)
                        .send(o, MessageKind::Probe, PayloadOut::NONE);
                }
                None => {
                    // Last of the chain: carry the count onward myself.
                    return Intent::stay()
                        .consume(p, MessageKind::Probe)
                        .dir(Some(view.port(o).local))
                        .state(ParticleState::Probe);
                }
                _ => {}
            }
        }
    }
    Intent::stay()
}

// ---------------------------------------------------------------------
// opposite sides

fn handle_probe(view: &NeighborhoodView) -> Intent {
    let beside_marker = view
        .l0_ports()
        .any(|(_, p)| occupied_correct(p).is_some_and(|n| n.state == ParticleState::Marker));
    if beside_marker {
        if let Some(i) = view.first_with(MessageKind::Seen) {
            return Intent::stay().consume(i, MessageKind::Seen).state(ParticleState::Slave);
        }
        return Intent::stay();
    }
    if !view.expanded {
        if let Some(a) = view.ahead {
            if view.port(a).is_empty() {
                return Intent::stay().mv(MoveIntent::Expand { port: a });
            }
        }
    }
    if view.expanded {
        return Intent::stay().mv(MoveIntent::ContractToHead);
    }
    if let Some(a) = view.ahead {
        if let Some(n) = occupied_correct(view.port(a)) {
            if n.contracted && n.state == ParticleState::Slave {
                let payload = PayloadOut { dir: view.dir, fss: false };
                return Intent::stay()
                    .send(a, MessageKind::SwitchToProbe, payload)
                    .state(ParticleState::Slave);
            }
        }
    }
    if let Some(out) = switch_to(view, MessageKind::SwitchToLeader, ParticleState::Leader, true, true) {
        return out;
    }
    Intent::stay()
}

fn handle_collector(view: &NeighborhoodView) -> Intent {
    if !view.expanded {
        let mut out = Intent::stay();
        let mut any = false;
        for (i, p) in view.l0_ports() {
            let collectible = occupied_correct(p).is_some_and(|n| {
                !matches!(n.state, ParticleState::Follower | ParticleState::Marker)
            });
            if collectible {
                if !p.occupant().unwrap().facing.contains_key(&MessageKind::SwitchToFollower) {
                    out = out.send(i, MessageKind::SwitchToFollower, PayloadOut::NONE);
                }
                any = true;
            }
        }
        if any {
            return out;
        }
    }
    if let Some(a) = view.ahead {
        if let Some(n) = occupied_correct(view.port(a)) {
            if n.contracted {
                let d = view.dir.expect("walking collector has a direction");
                return Intent::stay()
                    .send(a, MessageKind::SwitchToCollector, PayloadOut::dir(d))
                    .state(ParticleState::Follower);
            }
        }
    }
    if view.expanded {
        return contract_pulling_follower(view);
    }
    let marker_corner = view.diag_ahead_l0.and_then(|i| {
        occupied_correct(view.port(i))
            .filter(|n| n.state == ParticleState::Marker)
            .map(|_| i)
    });
    if marker_corner.is_some() {
        if !view.flags.firstchange {
            let mut out = Intent::stay().dir(view.dir.map(LocalDir::opposite)).hist(0);
            out.flags.firstchange = Some(true);
            return out;
        }
        return Intent::stay().state(ParticleState::CollectorCounting);
    }
    if let Some(a) = view.ahead {
        if view.port(a).is_empty() {
            return Intent::stay().mv(MoveIntent::Expand { port: a });
        }
    }
    Intent::stay()
}

fn handle_collector_counting(view: &NeighborhoodView) -> Intent {
    if !view.flags.firstrun {
        let mut out = Intent::stay();
        out.own_sets.push((SlotRef::SelfSlot, MessageKind::Other, PayloadOut::NONE));
        out.flags.firstrun = Some(true);
        return out;
    }
    let other = if view.self_slot.contains_key(&MessageKind::Other) {
        Some(SlotRef::SelfSlot)
    } else {
        view.first_with(MessageKind::Other).map(SlotRef::Port)
    };
    if let Some(slot) = other {
        let mut out = Intent::stay();
        out.consumes.push((slot, MessageKind::Other));
        // Prefer a follower along my own row so the relay walks the chain.
        let followers: Vec<usize> = view
            .ports
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                occupied_correct(p).is_some_and(|n| n.state == ParticleState::Follower)
            })
            .map(|(i, _)| i)
            .collect();
        let pick = followers
            .iter()
            .copied()
            .find(|&i| !view.port(i).faces_l0 && view.port(i).target_row == RowKind::Side)
            .or_else(|| followers.first().copied());
        if let Some(f) = pick {
            return out.send(f, MessageKind::Probe, PayloadOut::NONE);
        }
        // Segment exhausted: report and head for the far marker.
        if let Some((m, _)) = view
            .l0_ports()
            .find(|(_, p)| occupied_correct(p).is_some_and(|n| n.state == ParticleState::Marker))
        {
            out = out.send(m, MessageKind::Done, PayloadOut::NONE);
        }
        return out
            .dir(view.dir.map(LocalDir::opposite))
            .hist(0)
            .state(ParticleState::CollectorDone);
    }
    if let Some((i, _)) = consume_switch(view, MessageKind::Winner) {
        return Intent::stay().consume(i, MessageKind::Winner).state(ParticleState::Leader);
    }
    Intent::stay()
}

fn handle_collector_done(view: &NeighborhoodView) -> Intent {
    let idle = view.l0_ports().any(|(_, p)| {
        occupied_correct(p)
            .is_some_and(|n| matches!(n.state, ParticleState::Marker | ParticleState::Leader))
    });
    if idle {
        return Intent::stay();
    }
    if let Some((i, _)) = consume_switch(view, MessageKind::Even) {
        // Turn back over the segment that emptied itself toward me.
        return Intent::stay()
            .consume(i, MessageKind::Even)
            .dir(view.dir.map(LocalDir::opposite))
            .state(ParticleState::Leader);
    }
    if !view.expanded {
        if let Some(a) = view.ahead {
            if view.port(a).is_empty() {
                return Intent::stay().mv(MoveIntent::Expand { port: a });
            }
        }
    }
    if view.expanded {
        return Intent::stay().mv(MoveIntent::ContractToHead);
    }
    if let Some(a) = view.ahead {
        if let Some(n) = occupied_correct(view.port(a)) {
            if n.contracted && n.state == ParticleState::Slave {
                let payload = PayloadOut { dir: view.dir, fss: false };
                return Intent::stay()
                    .send(a, MessageKind::SwitchToCollectorDone, payload)
                    .state(ParticleState::Slave);
            }
        }
    }
    if let Some(out) = switch_to(view, MessageKind::SwitchToLeader, ParticleState::Leader, true, true) {
        return out;
    }
    Intent::stay()
}
