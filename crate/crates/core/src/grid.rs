//! Triangular-lattice geometry: axial coordinates, the six directions,
//! rows, and straight-compact-line tests.
//!
//! Axial convention: `q` runs along row 0, `r` is the row index. A node
//! `(q, r)` sits at cartesian `(q + r/2, r * sqrt(3)/2)`, which makes the
//! six neighbors of the origin `(1,0) (-1,0) (0,1) (-1,1) (1,-1) (0,-1)`.

use serde::{Deserialize, Serialize};

/// A node of the infinite triangular grid.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct NodeCoord {
    pub q: i32,
    pub r: i32,
}

impl NodeCoord {
    pub const fn new(q: i32, r: i32) -> Self {
        NodeCoord { q, r }
    }

    /// Row index; row 0 is the initial line L0.
    pub fn row(self) -> i32 {
        self.r
    }

    pub fn step(self, d: GlobalDir) -> NodeCoord {
        let (dq, dr) = d.delta();
        NodeCoord::new(self.q + dq, self.r + dr)
    }

    /// The 6 adjacent nodes, in canonical direction order.
    pub fn neighbors(self) -> [NodeCoord; 6] {
        let mut out = [self; 6];
        for (i, d) in GlobalDir::ALL.iter().enumerate() {
            out[i] = self.step(*d);
        }
        out
    }

    pub fn is_adjacent(self, other: NodeCoord) -> bool {
        self.neighbors().contains(&other)
    }
}

/// One of the 6 lattice directions, in the simulator's global frame.
/// Particles never see these; their handlers work with local port labels.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum GlobalDir {
    E,
    NE,
    NW,
    W,
    SW,
    SE,
}

impl GlobalDir {
    /// Counter-clockwise angular order starting at E.
    pub const ALL: [GlobalDir; 6] = [
        GlobalDir::E,
        GlobalDir::NE,
        GlobalDir::NW,
        GlobalDir::W,
        GlobalDir::SW,
        GlobalDir::SE,
    ];

    pub fn index(self) -> usize {
        match self {
            GlobalDir::E => 0,
            GlobalDir::NE => 1,
            GlobalDir::NW => 2,
            GlobalDir::W => 3,
            GlobalDir::SW => 4,
            GlobalDir::SE => 5,
        }
    }

    pub fn from_index(i: usize) -> GlobalDir {
        GlobalDir::ALL[i % 6]
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            GlobalDir::E => (1, 0),
            GlobalDir::W => (-1, 0),
            GlobalDir::NE => (0, 1),
            GlobalDir::NW => (-1, 1),
            GlobalDir::SE => (1, -1),
            GlobalDir::SW => (0, -1),
        }
    }

    pub fn opposite(self) -> GlobalDir {
        GlobalDir::from_index(self.index() + 3)
    }

    /// Rotate by `steps` of 60 degrees counter-clockwise (negative = clockwise).
    pub fn rotate(self, steps: i32) -> GlobalDir {
        GlobalDir::from_index((self.index() as i32 + steps).rem_euclid(6) as usize)
    }

    /// True for E and W, the two directions parallel to the rows.
    pub fn is_lateral(self) -> bool {
        matches!(self, GlobalDir::E | GlobalDir::W)
    }
}

/// True iff the nodes are collinear along one lattice axis and consecutive
/// (the induced subgraph is a connected path with no holes).
pub fn is_compact_straight_line(nodes: &[NodeCoord]) -> bool {
    if nodes.is_empty() {
        return false;
    }
    if nodes.len() == 1 {
        return true;
    }
    let mut sorted: Vec<NodeCoord> = nodes.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != nodes.len() {
        return false;
    }
    // Candidate axes: E (Δ=(1,0)), NE (Δ=(0,1)), SE (Δ=(1,-1)). Sorting by
    // (q, r) puts each axis into its increasing order.
    for axis in [GlobalDir::E, GlobalDir::NE, GlobalDir::SE] {
        let (dq, dr) = axis.delta();
        let mut sorted_axis = sorted.clone();
        if axis == GlobalDir::SE {
            // along SE, q increases while r decreases
            sorted_axis.sort_by_key(|n| (n.q, -n.r));
        }
        if sorted_axis.windows(2).all(|w| {
            w[1].q - w[0].q == dq && w[1].r - w[0].r == dr
        }) {
            return true;
        }
    }
    false
}

/// Lengths of the maximal empty runs strictly between the leftmost and
/// rightmost occupied nodes of row `r`. Empty if the row holds fewer than
/// two occupied nodes.
pub fn gaps_on_row(occupied: &[NodeCoord], r: i32) -> Vec<usize> {
    let mut cols: Vec<i32> = occupied.iter().filter(|n| n.r == r).map(|n| n.q).collect();
    cols.sort_unstable();
    cols.dedup();
    if cols.len() < 2 {
        return Vec::new();
    }
    let mut gaps = Vec::new();
    for w in cols.windows(2) {
        let run = (w[1] - w[0] - 1) as usize;
        if run > 0 {
            gaps.push(run);
        }
    }
    gaps
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n(q: i32, r: i32) -> NodeCoord {
        NodeCoord::new(q, r)
    }

    #[test]
    fn neighbors_of_origin() {
        let mut got = n(0, 0).neighbors().to_vec();
        got.sort();
        let mut want = vec![n(1, 0), n(-1, 0), n(0, 1), n(-1, 1), n(1, -1), n(0, -1)];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn adjacency_on_row_zero() {
        assert!(n(5, 0).is_adjacent(n(6, 0)));
        assert!(n(6, 0).is_adjacent(n(5, 0)));
        assert!(!n(0, 0).is_adjacent(n(2, 0)));
    }

    #[test]
    fn step_conventions() {
        assert_eq!(n(0, 0).step(GlobalDir::E), n(1, 0));
        assert_eq!(n(0, 0).step(GlobalDir::NE), n(0, 1));
        assert_eq!(
            n(3, -1).step(GlobalDir::SW.opposite()),
            n(3, -1).step(GlobalDir::NE)
        );
    }

    #[test]
    fn rows() {
        assert_eq!(n(7, 0).row(), 0);
        assert_eq!(n(2, 1).row(), 1);
        assert_eq!(n(-4, -1).row(), -1);
    }

    #[test]
    fn compact_line_examples() {
        assert!(is_compact_straight_line(&[n(0, 0), n(1, 0), n(2, 0)]));
        assert!(!is_compact_straight_line(&[n(0, 0), n(2, 0)]));
        assert!(!is_compact_straight_line(&[n(0, 0), n(1, 0), n(1, 1)]));
        // the other two axes count as straight lines too
        assert!(is_compact_straight_line(&[n(0, 0), n(0, 1), n(0, 2)]));
        assert!(is_compact_straight_line(&[n(0, 2), n(1, 1), n(2, 0)]));
    }

    #[test]
    fn gap_examples() {
        assert_eq!(gaps_on_row(&[n(0, 0), n(3, 0)], 0), vec![2]);
        assert_eq!(gaps_on_row(&[n(0, 0), n(1, 0), n(2, 0)], 0), Vec::<usize>::new());
        // brute-force oracle over the interval for the mixed case
        let occ = [n(0, 0), n(2, 0), n(6, 0)];
        let mut runs = Vec::new();
        let mut run = 0usize;
        for q in 0..=6 {
            if occ.contains(&n(q, 0)) {
                if run > 0 {
                    runs.push(run);
                }
                run = 0;
            } else {
                run += 1;
            }
        }
        assert_eq!(runs, vec![1, 3]);
        assert_eq!(gaps_on_row(&occ, 0), runs);
    }

    #[test]
    fn gap_row_isolation() {
        // nodes on other rows are invisible to the scan
        assert_eq!(gaps_on_row(&[n(0, 0), n(1, 1), n(4, 0)], 0), vec![3]);
        assert_eq!(gaps_on_row(&[n(0, 1)], 1), Vec::<usize>::new());
    }

    proptest! {
        #[test]
        fn step_opposite_roundtrip(q in -50i32..50, r in -50i32..50, di in 0usize..6) {
            let node = n(q, r);
            let d = GlobalDir::from_index(di);
            prop_assert_eq!(node.step(d).step(d.opposite()), node);
        }

        #[test]
        fn neighbors_agree_with_step(q in -1000i32..1000, r in -1000i32..1000) {
            let node = n(q, r);
            let nb = node.neighbors();
            for (i, d) in GlobalDir::ALL.iter().enumerate() {
                prop_assert_eq!(nb[i], node.step(*d));
            }
            let mut uniq = nb.to_vec();
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), 6);
        }

        #[test]
        fn compact_iff_no_gaps_on_row(cols in proptest::collection::btree_set(-20i32..20, 1..10)) {
            let nodes: Vec<NodeCoord> = cols.iter().map(|&q| n(q, 0)).collect();
            let compact = is_compact_straight_line(&nodes);
            let no_gaps = gaps_on_row(&nodes, 0).is_empty();
            prop_assert_eq!(compact, no_gaps);
        }

        #[test]
        fn opposite_involution(di in 0usize..6) {
            let d = GlobalDir::from_index(di);
            prop_assert_eq!(d.opposite().opposite(), d);
        }
    }
}
