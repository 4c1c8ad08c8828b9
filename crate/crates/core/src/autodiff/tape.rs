//! Matrix-valued reverse-mode tape with a forward tangent channel.
//!
//! Each node holds a `rows x cols` block (rows = batch, cols = features),
//! an optional tangent block of the same shape (`None` means identically
//! zero) and the operation that produced it. Nodes are appended in
//! evaluation order, so arguments always precede results and the reverse
//! sweep is a single pass from the seed downwards.
//!
//! Shape errors are programming errors and panic; function-domain errors
//! are returned as [`DomainError`].

use ndarray::{Array2, Array3, Axis, Zip};
use thiserror::Error;

use super::{gelu_derivatives, DomainError};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("backward seed must be a 1x1 node, got {0}x{1}")]
    SeedNotScalar(usize, usize),
    #[error("seed refers to a node of another tape")]
    UnknownNode,
    #[error("non-finite gradient entry for parameter {0}")]
    NonFiniteGradient(usize),
}

enum Op {
    Leaf { param: Option<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Unary { x: Var, d1: Array2<f64>, d2: Array2<f64> },
    TangentOf(Var),
    Columns(Var, Vec<usize>),
    Assemble(Vec<(Var, Vec<usize>)>),
    RowJacobian { x: Var, jac: Array3<f64> },
    WeightedSquareMean { x: Var, weights: Vec<f64>, rows: Vec<bool>, count: usize },
    Sum(Var),
}

struct Node {
    value: Array2<f64>,
    tangent: Option<Array2<f64>>,
    op: Op,
}

/// Elementwise functions with stored first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Gelu,
    Exp,
    Tanh,
    Ln,
    Sqrt,
    /// `|x|`; derivative `+1` at zero.
    Abs,
}

/// Adjoints of the parameter leaves, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss_value: f64,
    pub params: Vec<Array2<f64>>,
}

impl Gradients {
    /// Concatenates every parameter block row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.iter().copied()).collect()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &delta,
        None => *slot = Some(delta),
    }
}

fn row_sums(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(1)).insert_axis(Axis(1))
}

fn col_sums(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn tangent(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].tangent.as_ref()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar() needs a 1x1 node");
        a[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, tangent: Option<Array2<f64>>, op: Op) -> Var {
        if let Some(t) = &tangent {
            debug_assert_eq!(t.dim(), value.dim());
        }
        self.nodes.push(Node { value, tangent, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, None, Op::Leaf { param: None })
    }

    /// A non-trainable input whose derivative along the forward direction
    /// is `tangent`.
    pub fn constant_with_tangent(&mut self, value: Array2<f64>, tangent: Array2<f64>) -> Var {
        assert_eq!(value.dim(), tangent.dim(), "tangent shape mismatch");
        self.push(value, Some(tangent), Op::Leaf { param: None })
    }

    /// A trainable leaf; gradients are reported in registration order.
    pub fn parameter(&mut self, value: Array2<f64>) -> Var {
        let param = Some(self.n_params);
        self.n_params += 1;
        self.push(value, None, Op::Leaf { param })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        let tangent = match (self.tangent(a), self.tangent(b)) {
            (Some(x), Some(y)) => Some(x + y),
            (Some(x), None) | (None, Some(x)) => Some(x.clone()),
            (None, None) => None,
        };
        self.push(value, tangent, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let value = self.value(a) - self.value(b);
        let tangent = match (self.tangent(a), self.tangent(b)) {
            (Some(x), Some(y)) => Some(x - y),
            (Some(x), None) => Some(x.clone()),
            (None, Some(y)) => Some(-y),
            (None, None) => None,
        };
        self.push(value, tangent, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let (va, vb) = (self.value(a), self.value(b));
        let value = va * vb;
        let tangent = match (self.tangent(a), self.tangent(b)) {
            (Some(ta), Some(tb)) => Some(ta * vb + va * tb),
            (Some(ta), None) => Some(ta * vb),
            (None, Some(tb)) => Some(va * tb),
            (None, None) => None,
        };
        self.push(value, tangent, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let tangent = self.tangent(a).map(|t| t * c);
        self.push(value, tangent, Op::Scale(a, c))
    }

    /// `x + row`, broadcasting a `1 x cols` row over every batch row.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(row), (1, c), "add_row expects a 1x{c} row");
        let value = self.value(x) + self.value(row);
        let tangent = match (self.tangent(x), self.tangent(row)) {
            (Some(tx), Some(tr)) => Some(tx + tr),
            (Some(tx), None) => Some(tx.clone()),
            (None, Some(tr)) => Some(tr.broadcast((r, c)).expect("checked").to_owned()),
            (None, None) => None,
        };
        self.push(value, tangent, Op::AddRow(x, row))
    }

    /// Scales row `i` of `x` by `col[i]` (`col` is `rows x 1`).
    pub fn scale_rows(&mut self, col: Var, x: Var) -> Var {
        let (r, _) = self.shape(x);
        assert_eq!(self.shape(col), (r, 1), "scale_rows expects a {r}x1 column");
        let (vc, vx) = (self.value(col), self.value(x));
        let value = vc * vx;
        let tangent = match (self.tangent(col), self.tangent(x)) {
            (Some(tc), Some(tx)) => Some(tc * vx + vc * tx),
            (Some(tc), None) => Some(tc * vx),
            (None, Some(tx)) => Some(vc * tx),
            (None, None) => None,
        };
        self.push(value, tangent, Op::ScaleRows(col, x))
    }

    /// Affine layer `x W^T + b` with `W` of shape `out x in` and `b` of
    /// shape `1 x out`. `W` and `b` must carry no tangent.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (_, k) = self.shape(x);
        let (m, kw) = self.shape(w);
        assert_eq!(k, kw, "linear: input width {k} vs weight width {kw}");
        assert_eq!(self.shape(b), (1, m), "linear: bias must be 1x{m}");
        assert!(
            self.tangent(w).is_none() && self.tangent(b).is_none(),
            "linear: weights must not carry tangents"
        );
        let wt = self.value(w).t();
        let value = self.value(x).dot(&wt) + self.value(b);
        let tangent = self.tangent(x).map(|t| t.dot(&wt));
        self.push(value, tangent, Op::Linear { x, w, b })
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var, DomainError> {
        let vx = self.value(x);
        let mut value = Array2::zeros(vx.dim());
        let mut d1 = Array2::zeros(vx.dim());
        let mut d2 = Array2::zeros(vx.dim());
        for (((&a, y), g1), g2) in vx.iter().zip(value.iter_mut()).zip(d1.iter_mut()).zip(d2.iter_mut()) {
            let (v, p, q) = match f {
                Unary::Gelu => gelu_derivatives(a),
                Unary::Exp => {
                    let e = a.exp();
                    (e, e, e)
                }
                Unary::Tanh => {
                    let t = a.tanh();
                    let s = 1.0 - t * t;
                    (t, s, -2.0 * t * s)
                }
                Unary::Ln => {
                    if !(a > 0.0) {
                        return Err(DomainError::new("ln", a));
                    }
                    (a.ln(), 1.0 / a, -1.0 / (a * a))
                }
                Unary::Sqrt => {
                    if !(a > 0.0) {
                        return Err(DomainError::new("sqrt", a));
                    }
                    let s = a.sqrt();
                    (s, 0.5 / s, -0.25 / (s * a))
                }
                Unary::Abs => (a.abs(), if a < 0.0 { -1.0 } else { 1.0 }, 0.0),
            };
            *y = v;
            *g1 = p;
            *g2 = q;
        }
        let tangent = self.tangent(x).map(|t| t * &d1);
        Ok(self.push(value, tangent, Op::Unary { x, d1, d2 }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu).expect("gelu is total")
    }

    /// Promotes the tangent channel of `x` to a value. The result's own
    /// tangent (a second forward derivative) is not tracked.
    pub fn tangent_of(&mut self, x: Var) -> Var {
        let value = self
            .tangent(x)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(self.shape(x)));
        self.push(value, None, Op::TangentOf(x))
    }

    /// Selects columns `idx` of `x`.
    pub fn columns(&mut self, x: Var, idx: &[usize]) -> Var {
        let value = self.value(x).select(Axis(1), idx);
        let tangent = self.tangent(x).map(|t| t.select(Axis(1), idx));
        self.push(value, tangent, Op::Columns(x, idx.to_vec()))
    }

    /// Builds a `rows x width` block whose columns `cols_p` come from part
    /// `p`. Every column must be covered exactly once.
    pub fn assemble(&mut self, width: usize, parts: &[(Var, &[usize])]) -> Var {
        let rows = parts.first().map(|(v, _)| self.shape(*v).0).unwrap_or(0);
        let mut covered = vec![false; width];
        let mut value = Array2::zeros((rows, width));
        let any_tangent = parts.iter().any(|(v, _)| self.tangent(*v).is_some());
        let mut tangent = any_tangent.then(|| Array2::zeros((rows, width)));
        for (v, cols) in parts {
            assert_eq!(self.shape(*v), (rows, cols.len()), "assemble part shape mismatch");
            for (k, &c) in cols.iter().enumerate() {
                assert!(c < width && !covered[c], "assemble column {c} invalid or repeated");
                covered[c] = true;
                value.column_mut(c).assign(&self.value(*v).column(k));
                if let (Some(t), Some(src)) = (tangent.as_mut(), self.tangent(*v)) {
                    t.column_mut(c).assign(&src.column(k));
                }
            }
        }
        assert!(covered.iter().all(|&c| c), "assemble leaves columns uncovered");
        let parts = parts.iter().map(|(v, c)| (*v, c.to_vec())).collect();
        self.push(value, tangent, Op::Assemble(parts))
    }

    /// A row-wise map `y_r = g(x_r)` evaluated outside the tape. `value` is
    /// `rows x m` and `jac[r, i, k] = d y_ri / d x_rk`. The tangent is
    /// propagated as `J x_T`; the reverse sweep is first order in `J`
    /// (curvature of `g` is not represented), which is exact whenever the
    /// tangent channel of the result does not reach the seed.
    pub fn row_jacobian(&mut self, x: Var, value: Array2<f64>, jac: Array3<f64>) -> Var {
        let (r, k) = self.shape(x);
        let m = value.ncols();
        assert_eq!(value.nrows(), r, "row_jacobian row count mismatch");
        assert_eq!(jac.dim(), (r, m, k), "row_jacobian Jacobian shape mismatch");
        let tangent = self.tangent(x).map(|tx| {
            let mut out = Array2::zeros((r, m));
            for row in 0..r {
                let j = jac.index_axis(Axis(0), row);
                out.row_mut(row).assign(&j.dot(&tx.row(row)));
            }
            out
        });
        self.push(value, tangent, Op::RowJacobian { x, jac })
    }

    /// `(1/|R|) sum_{r in R} sum_j w_j x_rj^2` over rows with `rows[r]`.
    /// An empty `R` gives zero.
    pub fn weighted_square_mean(&mut self, x: Var, weights: &[f64], rows: &[bool]) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(weights.len(), c, "one weight per column");
        assert_eq!(rows.len(), r, "one mask entry per row");
        let count = rows.iter().filter(|&&m| m).count();
        let norm = if count == 0 { 0.0 } else { 1.0 / count as f64 };
        let vx = self.value(x);
        let mut total = 0.0;
        let mut dtotal = 0.0;
        for (i, row) in vx.outer_iter().enumerate() {
            if !rows[i] {
                continue;
            }
            for (j, &v) in row.iter().enumerate() {
                total += weights[j] * v * v;
                if let Some(t) = self.tangent(x) {
                    dtotal += 2.0 * weights[j] * v * t[[i, j]];
                }
            }
        }
        let tangent = self.tangent(x).map(|_| Array2::from_elem((1, 1), dtotal * norm));
        let op = Op::WeightedSquareMean {
            x,
            weights: weights.to_vec(),
            rows: rows.to_vec(),
            count,
        };
        self.push(Array2::from_elem((1, 1), total * norm), tangent, op)
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(x).sum());
        let tangent = self.tangent(x).map(|t| Array2::from_elem((1, 1), t.sum()));
        self.push(value, tangent, Op::Sum(x))
    }

    /// Reverse sweep from a `1 x 1` seed. Every node is visited once, in
    /// reverse recording order, with serial accumulation.
    pub fn backward(&self, seed: Var) -> Result<Gradients, TapeError> {
        if seed.0 >= self.nodes.len() {
            return Err(TapeError::UnknownNode);
        }
        let (r, c) = self.shape(seed);
        if (r, c) != (1, 1) {
            return Err(TapeError::SeedNotScalar(r, c));
        }
        let n = seed.0 + 1;
        let mut adj_v: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        let mut adj_t: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        adj_v[seed.0] = Some(Array2::ones((1, 1)));
        let mut params: Vec<Option<Array2<f64>>> = (0..self.n_params).map(|_| None).collect();

        for i in (0..n).rev() {
            let g = adj_v[i].take();
            let h = adj_t[i].take();
            if g.is_none() && h.is_none() {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { param } => {
                    if let (Some(p), Some(g)) = (param, g) {
                        params[*p] = Some(g);
                    }
                }
                Op::Add(a, b) => {
                    if let Some(g) = g {
                        accumulate(&mut adj_v[a.0], g.clone());
                        accumulate(&mut adj_v[b.0], g);
                    }
                    if let Some(h) = h {
                        accumulate(&mut adj_t[a.0], h.clone());
                        accumulate(&mut adj_t[b.0], h);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(g) = g {
                        accumulate(&mut adj_v[b.0], -&g);
                        accumulate(&mut adj_v[a.0], g);
                    }
                    if let Some(h) = h {
                        accumulate(&mut adj_t[b.0], -&h);
                        accumulate(&mut adj_t[a.0], h);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if let Some(g) = &g {
                        accumulate(&mut adj_v[a.0], g * vb);
                        accumulate(&mut adj_v[b.0], g * va);
                    }
                    if let Some(h) = &h {
                        accumulate(&mut adj_t[a.0], h * vb);
                        accumulate(&mut adj_t[b.0], h * va);
                        if let Some(tb) = self.tangent(*b) {
                            accumulate(&mut adj_v[a.0], h * tb);
                        }
                        if let Some(ta) = self.tangent(*a) {
                            accumulate(&mut adj_v[b.0], h * ta);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(g) = g {
                        accumulate(&mut adj_v[a.0], g * *c);
                    }
                    if let Some(h) = h {
                        accumulate(&mut adj_t[a.0], h * *c);
                    }
                }
                Op::AddRow(x, row) => {
                    if let Some(g) = g {
                        accumulate(&mut adj_v[row.0], col_sums(&g));
                        accumulate(&mut adj_v[x.0], g);
                    }
                    if let Some(h) = h {
                        if self.tangent(*row).is_some() {
                            accumulate(&mut adj_t[row.0], col_sums(&h));
                        }
                        accumulate(&mut adj_t[x.0], h);
                    }
                }
                Op::ScaleRows(col, x) => {
                    let (vc, vx) = (self.value(*col), self.value(*x));
                    if let Some(g) = &g {
                        accumulate(&mut adj_v[x.0], g * vc);
                        accumulate(&mut adj_v[col.0], row_sums(&(g * vx)));
                    }
                    if let Some(h) = &h {
                        accumulate(&mut adj_t[x.0], h * vc);
                        accumulate(&mut adj_t[col.0], row_sums(&(h * vx)));
                        if let Some(tc) = self.tangent(*col) {
                            accumulate(&mut adj_v[x.0], h * tc);
                        }
                        if let Some(tx) = self.tangent(*x) {
                            accumulate(&mut adj_v[col.0], row_sums(&(h * tx)));
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let vw = self.value(*w);
                    if let Some(g) = &g {
                        accumulate(&mut adj_v[x.0], g.dot(vw));
                        accumulate(&mut adj_v[w.0], g.t().dot(self.value(*x)));
                        accumulate(&mut adj_v[b.0], col_sums(g));
                    }
                    if let Some(h) = &h {
                        accumulate(&mut adj_t[x.0], h.dot(vw));
                        if let Some(tx) = self.tangent(*x) {
                            accumulate(&mut adj_v[w.0], h.t().dot(tx));
                        }
                    }
                }
                Op::Unary { x, d1, d2 } => {
                    if let Some(g) = g {
                        accumulate(&mut adj_v[x.0], g * d1);
                    }
                    if let Some(h) = h {
                        if let Some(tx) = self.tangent(*x) {
                            let mut curv = d2 * tx;
                            curv *= &h;
                            accumulate(&mut adj_v[x.0], curv);
                        }
                        accumulate(&mut adj_t[x.0], h * d1);
                    }
                }
                Op::TangentOf(x) => {
                    if let Some(g) = g {
                        accumulate(&mut adj_t[x.0], g);
                    }
                }
                Op::Columns(x, idx) => {
                    let shape = self.shape(*x);
                    let scatter = |src: Array2<f64>| {
                        let mut out = Array2::zeros(shape);
                        for (k, &c) in idx.iter().enumerate() {
                            let mut dst = out.column_mut(c);
                            dst += &src.column(k);
                        }
                        out
                    };
                    if let Some(g) = g {
                        accumulate(&mut adj_v[x.0], scatter(g));
                    }
                    if let Some(h) = h {
                        accumulate(&mut adj_t[x.0], scatter(h));
                    }
                }
                Op::Assemble(parts) => {
                    for (v, cols) in parts {
                        if let Some(g) = &g {
                            accumulate(&mut adj_v[v.0], g.select(Axis(1), cols));
                        }
                        if let Some(h) = &h {
                            accumulate(&mut adj_t[v.0], h.select(Axis(1), cols));
                        }
                    }
                }
                Op::RowJacobian { x, jac } => {
                    let pull = |src: &Array2<f64>| {
                        let mut out = Array2::zeros(self.shape(*x));
                        for row in 0..src.nrows() {
                            let j = jac.index_axis(Axis(0), row);
                            out.row_mut(row).assign(&j.t().dot(&src.row(row)));
                        }
                        out
                    };
                    if let Some(g) = &g {
                        accumulate(&mut adj_v[x.0], pull(g));
                    }
                    if let Some(h) = &h {
                        accumulate(&mut adj_t[x.0], pull(h));
                    }
                }
                Op::WeightedSquareMean { x, weights, rows, count } => {
                    if *count == 0 {
                        continue;
                    }
                    let norm = 2.0 / *count as f64;
                    let vx = self.value(*x);
                    let gs = g.map(|g| g[[0, 0]]).unwrap_or(0.0);
                    let hs = h.map(|h| h[[0, 0]]).unwrap_or(0.0);
                    let mut dv = Array2::zeros(vx.dim());
                    Zip::indexed(&mut dv).and(vx).for_each(|(r, c), d, &v| {
                        if rows[r] {
                            *d = norm * weights[c] * v * gs;
                        }
                    });
                    if hs != 0.0 {
                        if let Some(tx) = self.tangent(*x) {
                            Zip::indexed(&mut dv).and(tx).for_each(|(r, c), d, &t| {
                                if rows[r] {
                                    *d += norm * weights[c] * t * hs;
                                }
                            });
                        }
                        let mut dt = Array2::zeros(vx.dim());
                        Zip::indexed(&mut dt).and(vx).for_each(|(r, c), d, &v| {
                            if rows[r] {
                                *d = norm * weights[c] * v * hs;
                            }
                        });
                        accumulate(&mut adj_t[x.0], dt);
                    }
                    accumulate(&mut adj_v[x.0], dv);
                }
                Op::Sum(x) => {
                    let shape = self.shape(*x);
                    if let Some(g) = g {
                        accumulate(&mut adj_v[x.0], Array2::from_elem(shape, g[[0, 0]]));
                    }
                    if let Some(h) = h {
                        accumulate(&mut adj_t[x.0], Array2::from_elem(shape, h[[0, 0]]));
                    }
                }
            }
        }

        let params: Vec<Array2<f64>> = params
            .into_iter()
            .zip(self.parameter_shapes())
            .map(|(p, shape)| p.unwrap_or_else(|| Array2::zeros(shape)))
            .collect();
        for (k, p) in params.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(TapeError::NonFiniteGradient(k));
            }
        }
        Ok(Gradients {
            loss_value: self.scalar(seed),
            params,
        })
    }

    fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(0, 0); self.n_params];
        for node in &self.nodes {
            if let Op::Leaf { param: Some(p) } = node.op {
                shapes[p] = node.value.dim();
            }
        }
        shapes
    }
}

#[cfg(test)]
mod tests;
