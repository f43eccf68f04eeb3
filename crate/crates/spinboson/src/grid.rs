//! Triangular grid of full propagators `G_{j,k}` for `-N <= j <= k <= N`.
//!
//! The propagator is discontinuous where either argument crosses zero, so the
//! zero node is split into `0^-` and `0^+` and every grid-adjacent cell picks
//! the value from its own side: intervals in `[-h, 0]` see `0^-`, intervals
//! in `[0, h]` see `0^+`. Off-grid values come from piecewise linear
//! interpolation — bilinear on interior cells, a barycentric blend with
//! identity on the diagonal for cells the diagonal cuts.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::matrix::Matrix2;

/// Grid node label. `Neg(n)` is `t_{-n}` for `n >= 1`, `Pos(k)` is `t_k` for
/// `k >= 1`, and the origin carries a one-sided label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Neg(u32),
    ZeroMinus,
    ZeroPlus,
    Pos(u32),
}

impl Node {
    /// Node from a signed step index, resolving 0 to the requested side.
    pub fn from_index(k: i32, zero_side_plus: bool) -> Node {
        if k < 0 {
            Node::Neg((-k) as u32)
        } else if k > 0 {
            Node::Pos(k as u32)
        } else if zero_side_plus {
            Node::ZeroPlus
        } else {
            Node::ZeroMinus
        }
    }

    pub fn value(&self, h: f64) -> f64 {
        match self {
            Node::Neg(n) => -(*n as f64) * h,
            Node::ZeroMinus | Node::ZeroPlus => 0.0,
            Node::Pos(k) => (*k as f64) * h,
        }
    }

    /// Linear slot in a grid with `N` steps per side; orders nodes left to
    /// right with `0^-` immediately before `0^+`.
    fn slot(&self, n_steps: u32) -> usize {
        match self {
            Node::Neg(n) => {
                debug_assert!(*n >= 1 && *n <= n_steps);
                (n_steps - n) as usize
            }
            Node::ZeroMinus => n_steps as usize,
            Node::ZeroPlus => n_steps as usize + 1,
            Node::Pos(k) => {
                debug_assert!(*k >= 1 && *k <= n_steps);
                (n_steps + 1 + k) as usize
            }
        }
    }

    /// Mirror through the origin: `t_k -> t_{-k}`, swapping zero sides.
    pub fn mirrored(&self) -> Node {
        match self {
            Node::Neg(n) => Node::Pos(*n),
            Node::Pos(k) => Node::Neg(*k),
            Node::ZeroMinus => Node::ZeroPlus,
            Node::ZeroPlus => Node::ZeroMinus,
        }
    }
}

/// Left corner node of cell `a` (the interval `[t_a, t_{a+1}]`).
fn cell_left(a: i32) -> Node {
    if a > 0 {
        Node::Pos(a as u32)
    } else if a == 0 {
        Node::ZeroPlus
    } else {
        Node::Neg((-a) as u32)
    }
}

/// Right corner node of cell `a`.
fn cell_right(a: i32) -> Node {
    let r = a + 1;
    if r > 0 {
        Node::Pos(r as u32)
    } else if r == 0 {
        Node::ZeroMinus
    } else {
        Node::Neg((-r) as u32)
    }
}

/// Storage for the grid values. Only slots with `row <= col` are used.
#[derive(Debug, Clone)]
pub struct PropagatorGrid {
    n_steps: u32,
    h: f64,
    data: Vec<Option<Matrix2>>,
}

impl PropagatorGrid {
    /// Fresh grid with every diagonal node set to the identity and the
    /// `(0^-, 0^+)` pair set to the observable.
    pub fn new(n_steps: u32, h: f64, observable: Matrix2) -> Self {
        let side = 2 * n_steps as usize + 2;
        let mut grid = PropagatorGrid {
            n_steps,
            h,
            data: alloc::vec![None; side * side],
        };
        let mut nodes: Vec<Node> = Vec::new();
        for n in (1..=n_steps).rev() {
            nodes.push(Node::Neg(n));
        }
        nodes.push(Node::ZeroMinus);
        nodes.push(Node::ZeroPlus);
        for k in 1..=n_steps {
            nodes.push(Node::Pos(k));
        }
        for node in &nodes {
            grid.set(*node, *node, Matrix2::identity());
        }
        grid.set(Node::ZeroMinus, Node::ZeroPlus, observable);
        grid
    }

    pub fn n_steps(&self) -> u32 {
        self.n_steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    fn idx(&self, u: Node, v: Node) -> usize {
        let (r, c) = (u.slot(self.n_steps), v.slot(self.n_steps));
        debug_assert!(r <= c, "grid is upper-triangular: {u:?} !<= {v:?}");
        r * (2 * self.n_steps as usize + 2) + c
    }

    pub fn set(&mut self, u: Node, v: Node, value: Matrix2) {
        let i = self.idx(u, v);
        self.data[i] = Some(value);
    }

    pub fn get(&self, u: Node, v: Node) -> Option<Matrix2> {
        self.data[self.idx(u, v)]
    }

    pub fn node_value(&self, u: Node, v: Node) -> Matrix2 {
        self.get(u, v)
            .unwrap_or_else(|| panic!("grid value missing at ({u:?}, {v:?})"))
    }

    /// All populated `(u, v, value)` triples, row-major.
    pub fn entries(&self) -> Vec<(Node, Node, Matrix2)> {
        let mut out = Vec::new();
        let side = 2 * self.n_steps as usize + 2;
        for r in 0..side {
            for c in r..side {
                if let Some(m) = self.data[r * side + c] {
                    out.push((self.node_at_slot(r), self.node_at_slot(c), m));
                }
            }
        }
        out
    }

    fn node_at_slot(&self, s: usize) -> Node {
        let n = self.n_steps as usize;
        if s < n {
            Node::Neg((n - s) as u32)
        } else if s == n {
            Node::ZeroMinus
        } else if s == n + 1 {
            Node::ZeroPlus
        } else {
            Node::Pos((s - n - 1) as u32)
        }
    }

    /// Interpolate at real coordinates; `(a, a)` is the identity for any `a`.
    pub fn interpolate(&self, a: f64, b: f64) -> Matrix2 {
        GridView::plain(self).interp_real_real(a, b)
    }
}

/// Read view of a grid with an optional single-node override, used by the
/// corrector stage where the not-yet-final value `G*` stands in for its node.
#[derive(Clone, Copy)]
pub struct GridView<'a> {
    grid: &'a PropagatorGrid,
    override_node: Option<(Node, Node, Matrix2)>,
}

impl<'a> GridView<'a> {
    pub fn plain(grid: &'a PropagatorGrid) -> Self {
        GridView {
            grid,
            override_node: None,
        }
    }

    pub fn with_override(grid: &'a PropagatorGrid, u: Node, v: Node, value: Matrix2) -> Self {
        GridView {
            grid,
            override_node: Some((u, v, value)),
        }
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    /// Node-pair lookup; any hit on the override node returns the override.
    pub fn corner(&self, u: Node, v: Node) -> Matrix2 {
        if let Some((ou, ov, m)) = self.override_node {
            if u == ou && v == ov {
                return m;
            }
        }
        self.grid.node_value(u, v)
    }

    fn cell_of(&self, x: f64) -> i32 {
        let n = self.grid.n_steps as i32;
        let t_max = n as f64 * self.grid.h;
        assert!(
            x >= -t_max - 1e-9 * self.grid.h && x <= t_max + 1e-9 * self.grid.h,
            "coordinate {x} outside grid range [{}, {}]",
            -t_max,
            t_max
        );
        let raw = (x / self.grid.h).floor() as i32;
        raw.clamp(-n, n - 1)
    }

    /// `G_I(t_u, y)` with the first argument on a node.
    pub fn interp_node_real(&self, u: Node, y: f64) -> Matrix2 {
        let h = self.grid.h;
        let b = self.cell_of(y);
        let (left, right) = (cell_left(b), cell_right(b));
        let w_r = (y - left.value(h)) / h;
        let w_l = (right.value(h) - y) / h;
        self.corner(u, left).scale_re(w_l) + self.corner(u, right).scale_re(w_r)
    }

    /// `G_I(x, t_v)` with the second argument on a node.
    pub fn interp_real_node(&self, x: f64, v: Node) -> Matrix2 {
        let h = self.grid.h;
        let a = self.cell_of(x);
        let (left, right) = (cell_left(a), cell_right(a));
        let w_r = (x - left.value(h)) / h;
        let w_l = (right.value(h) - x) / h;
        self.corner(left, v).scale_re(w_l) + self.corner(right, v).scale_re(w_r)
    }

    /// `G_I(x, y)` with both arguments off-grid.
    pub fn interp_real_real(&self, x: f64, y: f64) -> Matrix2 {
        if x == y {
            return Matrix2::identity();
        }
        assert!(x < y, "interpolation requires x <= y");
        let h = self.grid.h;
        let a = self.cell_of(x);
        let b = self.cell_of(y);
        let (xl, xr) = (cell_left(a), cell_right(a));
        let (yl, yr) = (cell_left(b), cell_right(b));
        if a == b {
            // Triangle (t_a, t_a) - (t_a, t_{a+1}) - (t_{a+1}, t_{a+1}) with
            // identity on the diagonal vertices.
            let w_ll = (xr.value(h) - y) / h;
            let w_rr = (x - xl.value(h)) / h;
            let w_lr = (y - x) / h;
            Matrix2::identity().scale_re(w_ll + w_rr) + self.corner(xl, xr).scale_re(w_lr)
        } else {
            let wx_r = (x - xl.value(h)) / h;
            let wx_l = (xr.value(h) - x) / h;
            let wy_r = (y - yl.value(h)) / h;
            let wy_l = (yr.value(h) - y) / h;
            self.corner(xl, yl).scale_re(wx_l * wy_l)
                + self.corner(xl, yr).scale_re(wx_l * wy_r)
                + self.corner(xr, yl).scale_re(wx_r * wy_l)
                + self.corner(xr, yr).scale_re(wx_r * wy_r)
        }
    }
}
