//! Particle representation: contracted/expanded geometry, local port
//! numbering without shared chirality, per-port constant-size shared
//! memories, the failure detector, and the neighborhood snapshot handed
//! to protocol handlers.
//!
//! Handlers never see global coordinates or global directions. The view
//! built here exposes ports in a fixed simulator order (so tie-breaking is
//! reproducible and independent of each particle's private numbering) and
//! labels every port with the particle's own local direction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::grid::{GlobalDir, NodeCoord};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ParticleId(pub u32);

/// A direction in the particle's private frame: `LocalDir(k)` is the
/// particle's port-0 direction rotated `k` steps in its own handedness.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct LocalDir(pub u8);

impl LocalDir {
    pub fn opposite(self) -> LocalDir {
        LocalDir((self.0 + 3) % 6)
    }
}

/// Port-0 heading plus handedness. Fixed for the lifetime of a particle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orientation {
    pub port0: GlobalDir,
    /// +1: local labels increase counter-clockwise; -1: clockwise.
    pub chirality: i8,
}

impl Orientation {
    pub fn local_to_global(self, l: LocalDir) -> GlobalDir {
        self.port0.rotate(self.chirality as i32 * l.0 as i32)
    }

    pub fn global_to_local(self, g: GlobalDir) -> LocalDir {
        let diff = g.index() as i32 - self.port0.index() as i32;
        LocalDir((self.chirality as i32 * diff).rem_euclid(6) as u8)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum ParticleState {
    Init,
    Starting,
    Marker,
    NofaultyLeader,
    Notified,
    PreExplorer,
    Explorer,
    PreMarker,
    Candidate,
    Slave,
    Leader,
    Follower,
    Probe,
    Collector,
    CollectorCounting,
    CollectorDone,
    Opposer,
}

/// The closed set of message kinds that can occupy a port-memory slot.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum MessageKind {
    Coin,
    NewTail,
    MarkerToLeader,
    SwitchToSlave,
    Notify,
    Notified,
    AskToBeCandidate,
    Candidate,
    SwitchToCandidate,
    SwitchToLeader,
    ChangeDirection,
    SwitchToFollower,
    SwitchCollector,
    SwitchToCollector,
    Probe,
    Seen,
    Other,
    Done,
    Winner,
    Even,
    SwitchOpposer,
    SwitchToProbe,
    SwitchToCollectorDone,
}

pub const MESSAGE_KIND_COUNT: usize = 23;

/// Optional payload carried by a message: a direction (stored in the
/// simulator's frame, translated into each reader's frame at the view
/// boundary) and a flag bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Payload {
    pub dir: Option<GlobalDir>,
    pub fss: bool,
}

/// One port's mailbox: at most one pending instance per message kind.
pub type SlotMap = BTreeMap<MessageKind, Payload>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub linetail: bool,
    pub candidate: bool,
    pub firstsideswitch: bool,
    pub firstchange: bool,
    pub firstrun: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub id: ParticleId,
    pub faulty: bool,
    pub state: ParticleState,
    pub head: NodeCoord,
    /// Equal to `head` when contracted.
    pub tail: NodeCoord,
    pub orientation: Orientation,
    /// Movement direction, when the current role has one.
    pub dir: Option<LocalDir>,
    /// Occupied nodes in the previous round (head, tail).
    pub pre: Option<(NodeCoord, NodeCoord)>,
    /// Port toward the particle this one took the tail role from.
    pub parent: Option<LocalDir>,
    pub lineparity: u8,
    pub flags: Flags,
    /// Stored axis of the initial line, learned at first activation.
    pub axis: Option<LocalDir>,
    /// Consecutive empty row-0 cells witnessed strictly behind the walker,
    /// saturating at 2. Together with the cell visible diagonally behind,
    /// this implements end-of-line detection by three empty locations.
    pub hist: u8,
    /// Shared memories keyed by (occupied node, world direction).
    pub memory: BTreeMap<(NodeCoord, GlobalDir), SlotMap>,
    /// Self-addressed mailbox.
    pub self_slot: SlotMap,
}

impl Particle {
    pub fn contracted(&self) -> bool {
        self.head == self.tail
    }

    pub fn expanded(&self) -> bool {
        !self.contracted()
    }

    pub fn occupies(&self, n: NodeCoord) -> bool {
        self.head == n || self.tail == n
    }

    /// Exposed ports as (node, world direction), in the particle's own
    /// numbering order: starting at port 0 and proceeding by chirality,
    /// head node first. Internal head-tail edges are not ports.
    pub fn ports(&self) -> Vec<(NodeCoord, GlobalDir)> {
        let mut out = Vec::with_capacity(if self.contracted() { 6 } else { 10 });
        let nodes: &[NodeCoord] = if self.contracted() {
            &[self.head][..]
        } else {
            &[self.head, self.tail][..]
        };
        for &node in nodes {
            let other = if node == self.head { self.tail } else { self.head };
            for k in 0..6u8 {
                let g = self.orientation.local_to_global(LocalDir(k));
                let target = node.step(g);
                if self.expanded() && target == other {
                    continue;
                }
                out.push((node, g));
            }
        }
        out
    }

    pub fn slot(&self, node: NodeCoord, dir: GlobalDir) -> Option<&SlotMap> {
        self.memory.get(&(node, dir))
    }

    pub fn set_slot(&mut self, node: NodeCoord, dir: GlobalDir, kind: MessageKind, p: Payload) {
        self.memory.entry((node, dir)).or_default().insert(kind, p);
    }

    pub fn clear_slot(&mut self, node: NodeCoord, dir: GlobalDir, kind: MessageKind) {
        if let Some(s) = self.memory.get_mut(&(node, dir)) {
            s.remove(&kind);
            if s.is_empty() {
                self.memory.remove(&(node, dir));
            }
        }
    }

    /// Drop every slot bound to a node this particle no longer occupies.
    pub fn discard_vacated_memory(&mut self) {
        let head = self.head;
        let tail = self.tail;
        self.memory.retain(|(n, _), _| *n == head || *n == tail);
    }
}

/// Row classification relative to the initial line, sign-free so that
/// mirrored configurations produce identical views.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum RowKind {
    /// The initial line's row.
    L0,
    /// One of the two rows adjacent to it.
    Side,
    /// Anything further out.
    Far,
}

pub fn row_kind(r: i32) -> RowKind {
    match r.abs() {
        0 => RowKind::L0,
        1 => RowKind::Side,
        _ => RowKind::Far,
    }
}

/// A message as the reading particle sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PayloadView {
    pub dir: Option<LocalDir>,
    pub fss: bool,
}

pub type SlotView = BTreeMap<MessageKind, PayloadView>;

/// What a particle can tell about the occupant it faces through one port.
#[derive(Clone, Debug)]
pub struct NeighborView {
    pub state: ParticleState,
    pub faulty: bool,
    pub expanded: bool,
    /// True when the faced node is the neighbor's head.
    pub bonded_to_head: bool,
    pub head_row: RowKind,
    pub contracted: bool,
    /// The neighbor's movement direction aims at one of my nodes.
    pub points_at_me: bool,
    pub flag_candidate: bool,
    pub flag_linetail: bool,
    pub lineparity: u8,
    /// The neighbor's mailbox on the port facing me.
    pub facing: SlotView,
}

#[derive(Clone, Debug)]
pub struct PortView {
    /// Port belongs to my head node (always true when contracted).
    pub on_head: bool,
    /// My own label for this direction.
    pub local: LocalDir,
    /// Row of the faced node.
    pub target_row: RowKind,
    /// Faced node lies on the initial line's row.
    pub faces_l0: bool,
    /// This port lies along my stored initial-line axis.
    pub on_axis: bool,
    /// My mailbox at this port.
    pub incoming: SlotView,
    pub neighbor: Option<NeighborView>,
    /// Failure-detector output for this port.
    pub detector_faulty: bool,
}

impl PortView {
    pub fn has(&self, kind: MessageKind) -> bool {
        self.incoming.contains_key(&kind)
    }

    pub fn occupant(&self) -> Option<&NeighborView> {
        self.neighbor.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor.is_none()
    }
}

/// Immutable per-activation snapshot. The only input a handler may read.
#[derive(Clone, Debug)]
pub struct NeighborhoodView {
    pub state: ParticleState,
    pub expanded: bool,
    /// Any occupied node on the initial line's row.
    pub on_l0: bool,
    pub head_row: RowKind,
    pub dir: Option<LocalDir>,
    pub axis: Option<LocalDir>,
    pub parent: Option<LocalDir>,
    pub lineparity: u8,
    pub flags: Flags,
    pub hist: u8,
    pub self_slot: SlotView,
    /// All exposed ports, in a fixed simulator order (head node first,
    /// then tail, each by canonical world direction).
    pub ports: Vec<PortView>,

    // Precomputed relational geometry, so handlers stay frame-free.
    /// Port from my head in my movement direction.
    pub ahead: Option<usize>,
    /// Port from my tail in my movement direction (expanded only).
    pub tail_ahead: Option<usize>,
    /// Row-0 cell diagonally ahead of my head (walkers on side rows).
    pub diag_ahead_l0: Option<usize>,
    /// Row-0 cell diagonally behind (from my tail node when expanded).
    pub diag_behind_l0: Option<usize>,
    /// Row-0 cell under my body shared by head and tail (expanded only).
    pub mid_diag_l0: Option<usize>,
    /// Off-line cell diagonally ahead, away from row 0 (side-row walkers).
    pub away_diag: Option<usize>,
    /// When my direction points off my side row: the unique lateral
    /// direction angularly adjacent to it (corner turn).
    pub lateral_redirect: Option<LocalDir>,
    /// Direction from head away from tail (expanded only).
    pub head_away_from_tail: Option<LocalDir>,
    /// My direction translated is parallel to the rows.
    pub dir_is_lateral: bool,
    /// Rotation sign (in local label steps) that turns my direction one
    /// step toward row 0; the tour handedness at marker handoffs.
    pub toward_l0_rot: Option<i8>,
    /// For each port: the port index geometrically opposite, if exposed.
    pub opposite: Vec<Option<usize>>,
    /// For each port: payload direction a marker handoff through that
    /// port should carry (the corner-continuation diagonal).
    pub handoff_dir: Vec<Option<LocalDir>>,
    /// For each port: the lateral direction a particle leaving row 0
    /// through it should adopt, per this particle's handedness.
    pub left_after_leaving: Vec<Option<LocalDir>>,
    /// Same direction for a particle already expanded off row 0.
    pub left_resume: Option<LocalDir>,
}

impl NeighborhoodView {
    pub fn port(&self, i: usize) -> &PortView {
        &self.ports[i]
    }

    /// First port (simulator order) whose mailbox holds `kind`.
    pub fn first_with(&self, kind: MessageKind) -> Option<usize> {
        self.ports.iter().position(|p| p.has(kind))
    }

    pub fn count_with(&self, kind: MessageKind) -> usize {
        self.ports.iter().filter(|p| p.has(kind)).count()
    }

    pub fn has_anywhere(&self, kind: MessageKind) -> bool {
        self.self_slot.contains_key(&kind) || self.first_with(kind).is_some()
    }

    pub fn payload_at(&self, port: usize, kind: MessageKind) -> Option<PayloadView> {
        self.ports[port].incoming.get(&kind).copied()
    }

    /// Ports whose faced node is on row 0.
    pub fn l0_ports(&self) -> impl Iterator<Item = (usize, &PortView)> {
        self.ports.iter().enumerate().filter(|(_, p)| p.faces_l0)
    }

    pub fn opposite_port(&self, i: usize) -> Option<usize> {
        self.opposite[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GlobalDir::*;
    use proptest::prelude::*;

    fn particle_at(head: NodeCoord, tail: NodeCoord, port0: GlobalDir, chi: i8) -> Particle {
        Particle {
            id: ParticleId(0),
            faulty: false,
            state: ParticleState::Init,
            head,
            tail,
            orientation: Orientation { port0, chirality: chi },
            dir: None,
            pre: None,
            parent: None,
            lineparity: 0,
            flags: Flags::default(),
            axis: None,
            hist: 0,
            memory: BTreeMap::new(),
            self_slot: BTreeMap::new(),
        }
    }

    #[test]
    fn contracted_has_six_ports() {
        let p = particle_at(NodeCoord::new(0, 0), NodeCoord::new(0, 0), E, 1);
        assert_eq!(p.ports().len(), 6);
    }

    #[test]
    fn expanded_has_ten_ports() {
        // Oracle: count boundary edges of a lattice domino by enumeration.
        let head = NodeCoord::new(1, 0);
        let tail = NodeCoord::new(0, 0);
        let mut boundary = 0;
        for node in [head, tail] {
            for nb in node.neighbors() {
                if nb != head && nb != tail {
                    boundary += 1;
                }
            }
        }
        assert_eq!(boundary, 10);
        let p = particle_at(head, tail, NW, -1);
        let ports = p.ports();
        assert_eq!(ports.len(), boundary);
        // no port may face an occupied own node
        for (n, d) in &ports {
            assert!(n.step(*d) != head && n.step(*d) != tail);
        }
    }

    #[test]
    fn opposite_chirality_reverses_rotational_order() {
        let a = particle_at(NodeCoord::new(0, 0), NodeCoord::new(0, 0), E, 1);
        let b = particle_at(NodeCoord::new(0, 0), NodeCoord::new(0, 0), E, -1);
        let seq_a: Vec<GlobalDir> = a.ports().iter().map(|(_, d)| *d).collect();
        let seq_b: Vec<GlobalDir> = b.ports().iter().map(|(_, d)| *d).collect();
        // same starting direction, mirrored traversal
        assert_eq!(seq_a[0], seq_b[0]);
        let mut rev = seq_b.clone();
        rev[1..].reverse();
        assert_eq!(seq_a, rev);
    }

    proptest! {
        #[test]
        fn orientation_roundtrip(p0 in 0usize..6, chi in prop::sample::select(vec![1i8, -1]), d in 0usize..6) {
            let o = Orientation { port0: GlobalDir::from_index(p0), chirality: chi };
            let g = GlobalDir::from_index(d);
            prop_assert_eq!(o.local_to_global(o.global_to_local(g)), g);
            let l = LocalDir(d as u8);
            prop_assert_eq!(o.global_to_local(o.local_to_global(l)), l);
        }

        #[test]
        fn slot_count_bounded(kinds in proptest::collection::vec(0usize..MESSAGE_KIND_COUNT, 0..60)) {
            let mut p = particle_at(NodeCoord::new(0, 0), NodeCoord::new(0, 0), E, 1);
            let all = [
                MessageKind::Coin, MessageKind::NewTail, MessageKind::MarkerToLeader,
                MessageKind::SwitchToSlave, MessageKind::Notify, MessageKind::Notified,
                MessageKind::AskToBeCandidate, MessageKind::Candidate, MessageKind::SwitchToCandidate,
                MessageKind::SwitchToLeader, MessageKind::ChangeDirection, MessageKind::SwitchToFollower,
                MessageKind::SwitchCollector, MessageKind::SwitchToCollector, MessageKind::Probe,
                MessageKind::Seen, MessageKind::Other, MessageKind::Done, MessageKind::Winner,
                MessageKind::Even, MessageKind::SwitchOpposer, MessageKind::SwitchToProbe,
                MessageKind::SwitchToCollectorDone,
            ];
            for k in kinds {
                p.set_slot(NodeCoord::new(0, 0), E, all[k], Payload::default());
            }
            for s in p.memory.values() {
                prop_assert!(s.len() <= MESSAGE_KIND_COUNT);
            }
        }
    }
}
