//! Wick pairings and the bath influence functionals.
//!
//! A pairing of an even set of contour times contributes the product of the
//! two-point correlations over its pairs; the full functional sums every
//! pairing, the linked functional only those whose arcs form a connected
//! crossing graph. Evaluation goes through a precomputed pair table and a
//! fixed-order recursion, so results are bit-reproducible run to run — the
//! solver-level reuse equality checks depend on that.

use alloc::vec::Vec;

use crate::bath::BathCorrelation;
use crate::time::TimePoint;
use crate::{Error, Result, C64};

/// Hard cap on the number of points per functional; the pairing count grows
/// as (M-1)!!, so anything beyond this is an input error.
pub const MAX_POINTS: usize = 14;

const MAX_ARCS: usize = MAX_POINTS / 2;

/// A perfect matching of `{1..M}`, each pair `(j, k)` with `j < k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pub pairs: Vec<(u8, u8)>,
}

impl Pairing {
    pub fn order(&self) -> usize {
        2 * self.pairs.len()
    }
}

/// All `(M-1)!!` pairings of `{1..M}` in lexicographic first-point order.
pub fn enumerate_pairings(m: usize) -> Result<Vec<Pairing>> {
    if m % 2 != 0 {
        return Err(Error::OddPairingOrder(m));
    }
    if m > MAX_POINTS {
        return Err(Error::PairingOrderTooLarge {
            got: m,
            bound: MAX_POINTS,
        });
    }
    let mut out = Vec::new();
    let mut current: Vec<(u8, u8)> = Vec::with_capacity(m / 2);
    let mut used = vec_mask(m);
    recurse_enumerate(m, &mut used, &mut current, &mut out);
    Ok(out)
}

fn vec_mask(m: usize) -> Vec<bool> {
    alloc::vec![false; m]
}

fn recurse_enumerate(
    m: usize,
    used: &mut Vec<bool>,
    current: &mut Vec<(u8, u8)>,
    out: &mut Vec<Pairing>,
) {
    let first = match used.iter().position(|&u| !u) {
        Some(i) => i,
        None => {
            out.push(Pairing {
                pairs: current.clone(),
            });
            return;
        }
    };
    used[first] = true;
    for partner in (first + 1)..m {
        if used[partner] {
            continue;
        }
        used[partner] = true;
        current.push((first as u8 + 1, partner as u8 + 1));
        recurse_enumerate(m, used, current, out);
        current.pop();
        used[partner] = false;
    }
    used[first] = false;
}

/// True iff the crossing graph of the pairing is connected: vertices are the
/// arcs, and two arcs `(a,b)`, `(c,d)` are adjacent iff they interleave
/// (`a < c < b < d` or `c < a < d < b`). Nested or disjoint arcs alone do not
/// link a diagram.
pub fn is_linked(pairing: &Pairing) -> bool {
    let n = pairing.pairs.len();
    if n == 0 {
        return false;
    }
    if n == 1 {
        return true;
    }
    let mut arcs: Vec<(u8, u8)> = pairing.pairs.clone();
    arcs.sort_unstable();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = arcs[i];
            let (c, d) = arcs[j];
            if (a < c && c < b && b < d) || (c < a && a < d && d < b) {
                uf.union(i, j);
            }
        }
    }
    uf.component_count() == 1
}

struct UnionFind {
    parent: [usize; MAX_ARCS],
    len: usize,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        let mut parent = [0; MAX_ARCS];
        for (i, p) in parent.iter_mut().enumerate() {
            *p = i;
        }
        UnionFind { parent, len }
    }

    fn find(&self, mut i: usize) -> usize {
        while self.parent[i] != i {
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[rb.max(ra)] = rb.min(ra);
        }
    }

    fn component_count(&self) -> usize {
        (0..self.len).filter(|&i| self.find(i) == i).count()
    }
}

/// Pairwise correlation table for one evaluation.
struct PairTable {
    b: [[C64; MAX_POINTS]; MAX_POINTS],
    m: usize,
}

impl PairTable {
    fn build(bath: &BathCorrelation, points: &[TimePoint], h: f64) -> Self {
        let m = points.len();
        let mut b = [[C64::new(0.0, 0.0); MAX_POINTS]; MAX_POINTS];
        for j in 0..m {
            for k in (j + 1)..m {
                b[j][k] = bath.two_point_pts(&points[j], &points[k], h);
            }
        }
        PairTable { b, m }
    }
}

fn assert_eval_input(points: &[TimePoint], h: f64) {
    assert!(
        points.len() <= MAX_POINTS,
        "functional order {} exceeds bound {}",
        points.len(),
        MAX_POINTS
    );
    for w in points.windows(2) {
        assert!(
            w[0].value(h) <= w[1].value(h),
            "functional input must be ordered"
        );
    }
}

/// Full bath influence functional: the sum over all pairings of the products
/// of two-point correlations. Zero for odd orders by convention (the solvers
/// always append the endpoint, making the order even).
pub fn lb_full(bath: &BathCorrelation, points: &[TimePoint], h: f64) -> C64 {
    assert_eval_input(points, h);
    let m = points.len();
    if m == 0 || m % 2 != 0 {
        return C64::new(0.0, 0.0);
    }
    let table = PairTable::build(bath, points, h);
    full_sum(&table, 0)
}

/// Recursive first-point pairing over the pair table. `used` is a bit mask of
/// consumed points; partners are visited in ascending order.
fn full_sum(table: &PairTable, used: u16) -> C64 {
    let first = match (0..table.m).find(|&i| used & (1 << i) == 0) {
        Some(i) => i,
        None => return C64::new(1.0, 0.0),
    };
    let mut acc = C64::new(0.0, 0.0);
    for partner in (first + 1)..table.m {
        if used & (1 << partner) != 0 {
            continue;
        }
        let mask = used | (1 << first) | (1 << partner);
        acc += table.b[first][partner] * full_sum(table, mask);
    }
    acc
}

/// Linked bath influence functional: only pairings whose crossing graph is
/// connected contribute. Up to eight points this filters the explicit
/// enumeration; above that a connectivity-pruned recursion avoids walking
/// unlinked branches.
pub fn lb_connected(bath: &BathCorrelation, points: &[TimePoint], h: f64) -> C64 {
    assert_eval_input(points, h);
    let m = points.len();
    if m == 0 || m % 2 != 0 {
        return C64::new(0.0, 0.0);
    }
    let table = PairTable::build(bath, points, h);
    if m <= 8 {
        connected_sum_filter(&table)
    } else {
        connected_sum_pruned(&table)
    }
}

fn connected_sum_filter(table: &PairTable) -> C64 {
    let pairings = enumerate_pairings(table.m).expect("order validated above");
    let mut acc = C64::new(0.0, 0.0);
    for p in &pairings {
        if !is_linked(p) {
            continue;
        }
        let mut prod = C64::new(1.0, 0.0);
        for &(j, k) in &p.pairs {
            prod *= table.b[j as usize - 1][k as usize - 1];
        }
        acc += prod;
    }
    acc
}

/// Depth-first enumeration that unions each new arc with every earlier arc it
/// crosses and abandons a branch as soon as some component can no longer be
/// reached by future arcs (its rightmost point lies left of the next unpaired
/// point). Leaves with a single component are exactly the linked pairings.
fn connected_sum_pruned(table: &PairTable) -> C64 {
    struct State<'a> {
        table: &'a PairTable,
        arcs: [(usize, usize); MAX_ARCS],
        parent: [usize; MAX_ARCS],
        max_right: [usize; MAX_ARCS],
        acc: C64,
    }

    fn find(parent: &[usize; MAX_ARCS], mut i: usize) -> usize {
        while parent[i] != i {
            i = parent[i];
        }
        i
    }

    fn recurse(st: &mut State, used: u16, arc_count: usize, product: C64) {
        let m = st.table.m;
        let first = match (0..m).find(|&i| used & (1 << i) == 0) {
            Some(i) => i,
            None => {
                let roots = (0..arc_count).filter(|&i| find(&st.parent, i) == i).count();
                if roots == 1 {
                    st.acc += product;
                }
                return;
            }
        };
        for partner in (first + 1)..m {
            if used & (1 << partner) != 0 {
                continue;
            }
            let saved_parent = st.parent;
            let saved_max = st.max_right;
            st.arcs[arc_count] = (first, partner);
            st.parent[arc_count] = arc_count;
            st.max_right[arc_count] = partner;
            for i in 0..arc_count {
                let (_, d) = st.arcs[i];
                if first < d && d < partner {
                    let ra = find(&st.parent, i);
                    let rb = find(&st.parent, arc_count);
                    if ra != rb {
                        let (keep, drop) = (ra.min(rb), ra.max(rb));
                        st.parent[drop] = keep;
                        st.max_right[keep] = st.max_right[keep].max(st.max_right[drop]);
                    }
                }
            }
            let mask = used | (1 << first) | (1 << partner);
            let next_unpaired = (0..m).find(|&i| mask & (1 << i) == 0);
            let dead = match next_unpaired {
                Some(p) => (0..=arc_count)
                    .filter(|&i| find(&st.parent, i) == i)
                    .any(|root| st.max_right[root] < p),
                None => false,
            };
            if !dead {
                let prod = product * st.table.b[first][partner];
                recurse(st, mask, arc_count + 1, prod);
            }
            st.parent = saved_parent;
            st.max_right = saved_max;
        }
    }

    let mut st = State {
        table,
        arcs: [(0, 0); MAX_ARCS],
        parent: [0; MAX_ARCS],
        max_right: [0; MAX_ARCS],
        acc: C64::new(0.0, 0.0),
    };
    recurse(&mut st, 0, 0, C64::new(1.0, 0.0));
    st.acc
}

/// Number of linked pairings of `m` points (enumeration-based; test support
/// and diagnostics).
pub fn linked_pairing_count(m: usize) -> Result<usize> {
    Ok(enumerate_pairings(m)?
        .iter()
        .filter(|p| is_linked(p))
        .count())
}
