//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value, its parent node ids and a backward closure. [`Tape::backward`] walks
//! the tape once in reverse creation order (which is a reverse topological
//! order by construction) and accumulates gradients into a [`Gradients`] map.
//!
//! The tape is dynamic: it is rebuilt for every forward pass, so
//! variable-length utterances need no padding or masking. Construction and
//! backward are single-threaded; independent graphs may be evaluated on
//! separate threads as long as each owns its tape.
//!
//! Contract violations (shape mismatches, non-finite op outputs, log of a
//! non-positive value, a non-scalar backward root) panic with a descriptive
//! message rather than returning an error: they are programming or numeric
//! bugs, and training wants to fail fast instead of propagating NaN.

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::{matmul_raw, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

/// Backward closure: receives the gradient w.r.t. this node's value plus a
/// per-parent "is a gradient needed" mask, and returns gradients w.r.t. each
/// parent (entries may be `None` where the mask is false).
type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Gradients produced by one backward pass, addressable by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`, if `v` required one and was reachable from the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }
}

/// Recording tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a constant input (no gradient will be computed for it).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.insert(value, false, "leaf")
    }

    /// Record a trainable input (gradient requested).
    pub fn param(&self, value: Tensor) -> Var {
        self.insert(value, true, "param")
    }

    fn insert(&self, value: Tensor, requires_grad: bool, what: &str) -> Var {
        assert!(
            value.all_finite(),
            "non-finite value fed to tape as {what} (shape {:?})",
            value.shape()
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var { id: nodes.len() - 1 }
    }

    /// Shared clone of a node's value.
    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.id].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    /// Record an op node. The backward closure must not touch the tape.
    ///
    /// Panics if the forward value is non-finite: NaN is an immediate error
    /// here, never a propagated value.
    pub(crate) fn push_custom(
        &self,
        op: &str,
        value: Tensor,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Var {
        assert!(
            value.all_finite(),
            "non-finite value produced by op '{op}' (output shape {:?})",
            value.shape()
        );
        let mut nodes = self.nodes.borrow_mut();
        let parent_ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = parent_ids.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parent_ids,
            requires_grad,
            backward: if requires_grad { Some(backward) } else { None },
        });
        Var { id: nodes.len() - 1 }
    }

    /// Reverse sweep from a scalar root. Every reachable node that requires a
    /// gradient ends up populated in the returned map. Deterministic for a
    /// given graph: nodes are visited exactly once, in reverse creation order.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.id].value.shape();
        assert!(
            root_shape == [1],
            "backward root must be scalar shape [1], got {root_shape:?}"
        );
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[root.id] = Some(Tensor::scalar(1.0));

        for id in (0..=root.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            if let Some(bw) = &node.backward {
                let needs: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect();
                let parent_grads = bw(&g, &needs);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (slot, pg) in parent_grads.into_iter().enumerate() {
                    let p = node.parents[slot];
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    let pg = pg.expect("backward returned None for a parent that needs a gradient");
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        empty => *empty = Some(pg),
                    }
                }
            }
            if node.requires_grad {
                grads[id] = Some(g);
            }
        }
        Gradients { grads }
    }

    // ── elementwise suite ───────────────────────────────────────────────

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "add: shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        self.push_custom("add", out, &[a, b], Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.clone()),
            ]
        }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "sub: shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        self.push_custom("sub", out, &[a, b], Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| {
                    let mut n = g.clone();
                    n.scale(-1.0);
                    n
                }),
            ]
        }))
    }

    /// Elementwise product; same shape on both sides (no broadcasting).
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "mul: shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        let (ac, bc) = (Rc::clone(&av), Rc::clone(&bv));
        self.push_custom("mul", out, &[a, b], Box::new(move |g, needs| {
            let wrt = |other: &Tensor| {
                let data = g.data().iter().zip(other.data()).map(|(x, y)| x * y).collect();
                Tensor::new(g.shape().to_vec(), data)
            };
            vec![
                needs[0].then(|| wrt(&bc)),
                needs[1].then(|| wrt(&ac)),
            ]
        }))
    }

    pub fn mul_scalar(&self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let mut out = (*av).clone();
        out.scale(factor);
        self.push_custom("mul_scalar", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut n = g.clone();
                n.scale(factor);
                n
            })]
        }))
    }

    pub fn relu(&self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        let ac = Rc::clone(&av);
        self.push_custom("relu", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let data = g
                    .data()
                    .iter()
                    .zip(ac.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                Tensor::new(g.shape().to_vec(), data)
            })]
        }))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let av = self.value(a);
        let data: Vec<f64> = av
            .data()
            .iter()
            .map(|&x| {
                // split on sign so exp never overflows
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        let yc = Rc::new(out.clone());
        self.push_custom("sigmoid", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let data = g
                    .data()
                    .iter()
                    .zip(yc.data())
                    .map(|(&gv, &y)| gv * y * (1.0 - y))
                    .collect();
                Tensor::new(g.shape().to_vec(), data)
            })]
        }))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let av = self.value(a);
        let data: Vec<f64> = av.data().iter().map(|&x| x.tanh()).collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        let yc = Rc::new(out.clone());
        self.push_custom("tanh", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let data = g
                    .data()
                    .iter()
                    .zip(yc.data())
                    .map(|(&gv, &y)| gv * (1.0 - y * y))
                    .collect();
                Tensor::new(g.shape().to_vec(), data)
            })]
        }))
    }

    /// Natural log; a non-positive input is an error, not a NaN.
    pub fn log(&self, a: Var) -> Var {
        let av = self.value(a);
        for &x in av.data() {
            assert!(x > 0.0, "log: non-positive input value {x}");
        }
        let data = av.data().iter().map(|&x| x.ln()).collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        let ac = Rc::clone(&av);
        self.push_custom("log", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let data = g.data().iter().zip(ac.data()).map(|(&gv, &xv)| gv / xv).collect();
                Tensor::new(g.shape().to_vec(), data)
            })]
        }))
    }

    pub fn exp(&self, a: Var) -> Var {
        let av = self.value(a);
        let data: Vec<f64> = av.data().iter().map(|&x| x.exp()).collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        let yc = Rc::new(out.clone());
        self.push_custom("exp", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let data = g.data().iter().zip(yc.data()).map(|(&gv, &y)| gv * y).collect();
                Tensor::new(g.shape().to_vec(), data)
            })]
        }))
    }

    // ── shape ops ───────────────────────────────────────────────────────

    /// Element-count-preserving reshape.
    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Var {
        let av = self.value(a);
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            av.numel(),
            "reshape: cannot view {:?} ({} elements) as {:?} ({} elements)",
            av.shape(),
            av.numel(),
            shape,
            numel
        );
        let out = Tensor::new(shape, av.data().to_vec());
        let orig_shape = av.shape().to_vec();
        self.push_custom("reshape", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| Tensor::new(orig_shape.clone(), g.data().to_vec()))]
        }))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = av.transposed();
        self.push_custom("transpose", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| g.transposed())]
        }))
    }

    /// Rectangular matrix slice: rows `[r0, r1)`, columns `[c0, c1)`.
    pub fn slice(&self, a: Var, r0: usize, r1: usize, c0: usize, c1: usize) -> Var {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        assert!(
            r0 < r1 && r1 <= m && c0 < c1 && c1 <= n,
            "slice: range rows {r0}..{r1}, cols {c0}..{c1} out of bounds for [{m}x{n}]"
        );
        let mut data = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for r in r0..r1 {
            data.extend_from_slice(&av.row(r)[c0..c1]);
        }
        let out = Tensor::matrix(r1 - r0, c1 - c0, data);
        self.push_custom("slice", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut full = Tensor::zeros(vec![m, n]);
                let gcols = c1 - c0;
                for r in r0..r1 {
                    let grow = &g.data()[(r - r0) * gcols..(r - r0 + 1) * gcols];
                    full.data_mut()[r * n + c0..r * n + c1].copy_from_slice(grow);
                }
                full
            })]
        }))
    }

    /// Concatenate matrices along columns; all inputs share a row count.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let m = values[0].rows();
        for v in &values {
            assert_eq!(
                v.rows(),
                m,
                "concat_cols: row mismatch: {:?} vs {:?}",
                values[0].shape(),
                v.shape()
            );
        }
        let widths: Vec<usize> = values.iter().map(|v| v.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let out = Tensor::matrix(m, total, data);
        self.push_custom("concat_cols", out, parts, Box::new(move |g, needs| {
            let mut outs = Vec::with_capacity(widths.len());
            let mut offset = 0;
            for (k, &w) in widths.iter().enumerate() {
                if needs[k] {
                    let mut part = Vec::with_capacity(m * w);
                    for r in 0..m {
                        part.extend_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    outs.push(Some(Tensor::matrix(m, w, part)));
                } else {
                    outs.push(None);
                }
                offset += w;
            }
            outs
        }))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let out = matmul_raw(&av, &bv);
        let (ac, bc) = (Rc::clone(&av), Rc::clone(&bv));
        self.push_custom("matmul", out, &[a, b], Box::new(move |g, needs| {
            vec![
                needs[0].then(|| matmul_raw(g, &bc.transposed())),
                needs[1].then(|| matmul_raw(&ac.transposed(), g)),
            ]
        }))
    }

    /// Add a `[n]` vector to every row of an `m×n` matrix (bias add).
    pub fn add_rowvec(&self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        let (m, n) = (av.rows(), av.cols());
        assert_eq!(
            bv.shape(),
            [n],
            "add_rowvec: bias shape {:?} does not match matrix {:?}",
            bv.shape(),
            av.shape()
        );
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for (x, y) in av.row(r).iter().zip(bv.data()) {
                data.push(x + y);
            }
        }
        let out = Tensor::matrix(m, n, data);
        self.push_custom("add_rowvec", out, &[a, bias], Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| {
                    let mut sums = vec![0.0; n];
                    for r in 0..m {
                        for (s, &gv) in sums.iter_mut().zip(g.row(r)) {
                            *s += gv;
                        }
                    }
                    Tensor::vector(sums)
                }),
            ]
        }))
    }

    // ── reductions and normalizations ───────────────────────────────────

    pub fn sum_all(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::scalar(av.data().iter().sum());
        let shape = av.shape().to_vec();
        self.push_custom("sum_all", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let numel: usize = shape.iter().product();
                Tensor::new(shape.clone(), vec![g.scalar_value(); numel])
            })]
        }))
    }

    /// Overflow-safe log-sum-exp over all elements, reduced to a scalar.
    pub fn log_sum_exp(&self, a: Var) -> Var {
        let av = self.value(a);
        let lse = log_sum_exp_slice(av.data());
        let out = Tensor::scalar(lse);
        let ac = Rc::clone(&av);
        self.push_custom("log_sum_exp", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let gv = g.scalar_value();
                let data = ac.data().iter().map(|&x| gv * (x - lse).exp()).collect();
                Tensor::new(ac.shape().to_vec(), data)
            })]
        }))
    }

    /// Row-wise softmax with max subtraction; every row sums to 1.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            data.extend(softmax_slice(av.row(r)));
        }
        let out = Tensor::matrix(m, n, data);
        let yc = Rc::new(out.clone());
        self.push_custom("softmax_rows", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let yr = yc.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(y, gv)| y * gv).sum();
                    for c in 0..n {
                        dx[r * n + c] = yr[c] * (gr[c] - dot);
                    }
                }
                Tensor::matrix(m, n, dx)
            })]
        }))
    }

    /// Row-wise log-softmax (stable, shares the max-subtraction with softmax).
    pub fn log_softmax_rows(&self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = av.row(r);
            let lse = log_sum_exp_slice(row);
            data.extend(row.iter().map(|&x| x - lse));
        }
        let out = Tensor::matrix(m, n, data);
        let yc = Rc::new(out.clone());
        self.push_custom("log_softmax_rows", out, &[a], Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let lr = yc.row(r);
                    let gr = g.row(r);
                    let gsum: f64 = gr.iter().sum();
                    for c in 0..n {
                        dx[r * n + c] = gr[c] - lr[c].exp() * gsum;
                    }
                }
                Tensor::matrix(m, n, dx)
            })]
        }))
    }

    /// Per-row standardization followed by an affine map:
    /// `out = gain ⊙ (x − μ) / √(σ² + eps) + bias`, with μ, σ² per row.
    pub fn layer_norm(&self, a: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (av, gv, bv) = (self.value(a), self.value(gain), self.value(bias));
        let (m, d) = (av.rows(), av.cols());
        assert_eq!(
            gv.shape(),
            [d],
            "layer_norm: gain shape {:?} does not match input {:?}",
            gv.shape(),
            av.shape()
        );
        assert_eq!(
            bv.shape(),
            [d],
            "layer_norm: bias shape {:?} does not match input {:?}",
            bv.shape(),
            av.shape()
        );
        let mut norm = vec![0.0; m * d]; // standardized rows, saved for backward
        let mut rstd = vec![0.0; m];
        let mut data = Vec::with_capacity(m * d);
        for r in 0..m {
            let row = av.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let r_inv = 1.0 / (var + eps).sqrt();
            rstd[r] = r_inv;
            for c in 0..d {
                let xhat = (row[c] - mean) * r_inv;
                norm[r * d + c] = xhat;
                data.push(gv.data()[c] * xhat + bv.data()[c]);
            }
        }
        let out = Tensor::matrix(m, d, data);
        let norm = Rc::new(norm);
        let gain_saved = Rc::clone(&gv);
        self.push_custom("layer_norm", out, &[a, gain, bias], Box::new(move |g, needs| {
            let dn = d as f64;
            let dx = needs[0].then(|| {
                let mut dx = vec![0.0; m * d];
                for r in 0..m {
                    let gr = g.row(r);
                    let xhat = &norm[r * d..(r + 1) * d];
                    let mut mean_gg = 0.0;
                    let mut mean_ggx = 0.0;
                    for c in 0..d {
                        let gg = gr[c] * gain_saved.data()[c];
                        mean_gg += gg;
                        mean_ggx += gg * xhat[c];
                    }
                    mean_gg /= dn;
                    mean_ggx /= dn;
                    for c in 0..d {
                        let gg = gr[c] * gain_saved.data()[c];
                        dx[r * d + c] = rstd[r] * (gg - mean_gg - xhat[c] * mean_ggx);
                    }
                }
                Tensor::matrix(m, d, dx)
            });
            let dgain = needs[1].then(|| {
                let mut dg = vec![0.0; d];
                for r in 0..m {
                    for c in 0..d {
                        dg[c] += g.row(r)[c] * norm[r * d + c];
                    }
                }
                Tensor::vector(dg)
            });
            let dbias = needs[2].then(|| {
                let mut db = vec![0.0; d];
                for r in 0..m {
                    for (s, &gv) in db.iter_mut().zip(g.row(r)) {
                        *s += gv;
                    }
                }
                Tensor::vector(db)
            });
            vec![dx, dgain, dbias]
        }))
    }

    // ── composite helpers ───────────────────────────────────────────────

    /// Mean of a non-empty list of scalar nodes.
    pub fn mean_scalars(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "mean_scalars: no inputs");
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        self.mul_scalar(acc, 1.0 / parts.len() as f64)
    }
}

/// Stable log(Σ exp(x)) over a slice; `-inf` entries are handled exactly.
pub fn log_sum_exp_slice(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Stable softmax of a slice (max subtraction).
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_case() {
        let tape = Tape::new();
        let eye = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let v = tape.leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]));
        let out = tape.matmul(eye, v);
        assert_eq!(tape.value(out).data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_scalar_product_gradients() {
        let tape = Tape::new();
        let a = tape.param(Tensor::matrix(1, 1, vec![2.0]));
        let b = tape.param(Tensor::matrix(1, 1, vec![3.0]));
        let out = tape.matmul(a, b);
        let root = tape.reshape(out, vec![1]);
        assert_eq!(tape.value(root).scalar_value(), 6.0);
        let grads = tape.backward(root);
        assert_eq!(grads.wrt(a).unwrap().data(), &[3.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[2.0]);
    }

    #[test]
    #[should_panic(expected = "inner dimensions disagree")]
    fn matmul_mismatch_panics() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![4, 2]));
        tape.matmul(a, b);
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 2, vec![0.0, 0.0, 1000.0, 0.0]));
        let y = tape.softmax_rows(a);
        let yv = tape.value(y);
        assert!((yv.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((yv.at(0, 1) - 0.5).abs() < 1e-15);
        assert!((yv.at(1, 0) - 1.0).abs() < 1e-12);
        assert!(yv.at(1, 1).abs() < 1e-12);
        for r in 0..2 {
            let s: f64 = yv.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_forward_and_grad_mask() {
        let tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![-1.0, 2.0]));
        let y = tape.relu(a);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
        let root = tape.sum_all(y);
        let grads = tape.backward(root);
        assert_eq!(grads.wrt(a).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn log_sum_exp_stability_floor() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![-1000.0, -1000.0]));
        let y = tape.log_sum_exp(a);
        let expected = -1000.0 + 2.0f64.ln();
        assert!((tape.value(y).scalar_value() - expected).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_trivial_rows() {
        let tape = Tape::new();
        let gain = tape.leaf(Tensor::vector(vec![1.0, 1.0]));
        let bias = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        // constant row: zero-variance guarded by eps
        let c = tape.leaf(Tensor::matrix(1, 2, vec![5.0, 5.0]));
        let y = tape.layer_norm(c, gain, bias, 1e-8);
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));
        // two-point standardization
        let x = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 3.0]));
        let y = tape.layer_norm(x, gain, bias, 1e-12);
        let yv = tape.value(y);
        assert!((yv.at(0, 0) + 1.0).abs() < 1e-6);
        assert!((yv.at(0, 1) - 1.0).abs() < 1e-6);
    }

    #[test]
    #[should_panic(expected = "non-positive input")]
    fn log_rejects_non_positive() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        tape.log(a);
    }

    #[test]
    #[should_panic(expected = "cannot view")]
    fn reshape_count_mismatch() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        tape.reshape(a, vec![7]);
    }

    #[test]
    #[should_panic(expected = "backward root must be scalar")]
    fn backward_requires_scalar_root() {
        let tape = Tape::new();
        let a = tape.param(Tensor::zeros(vec![2, 2]));
        tape.backward(a);
    }

    #[test]
    fn backward_is_linear_in_the_root() {
        // grad of (f + g) equals grad f + grad g elementwise, exactly
        let build = |combined: bool| -> (Tensor, Option<(Tensor, Tensor)>) {
            let tape = Tape::new();
            let x = tape.param(Tensor::vector(vec![1.5, -2.0, 0.5]));
            let a = tape.leaf(Tensor::vector(vec![2.0, 3.0, 4.0]));
            let f = tape.sum_all(tape.mul(x, a));
            let g = tape.sum_all(tape.tanh(x));
            if combined {
                let root = tape.add(f, g);
                (tape.backward(root).wrt(x).unwrap().clone(), None)
            } else {
                let gf = tape.backward(f).wrt(x).unwrap().clone();
                let gg = tape.backward(g).wrt(x).unwrap().clone();
                (Tensor::zeros(vec![1]), Some((gf, gg)))
            }
        };
        let (combined, _) = build(true);
        let (_, parts) = build(false);
        let (gf, gg) = parts.unwrap();
        for i in 0..3 {
            assert_eq!(combined.data()[i], gf.data()[i] + gg.data()[i]);
        }
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let run = || {
            let tape = Tape::new();
            let x = tape.param(Tensor::matrix(2, 2, vec![0.3, -0.7, 1.2, 0.1]));
            let w = tape.param(Tensor::matrix(2, 2, vec![0.5, 0.2, -0.4, 0.9]));
            let h = tape.tanh(tape.matmul(x, w));
            let y = tape.softmax_rows(h);
            let root = tape.log_sum_exp(y);
            let grads = tape.backward(root);
            (
                grads.wrt(x).unwrap().data().to_vec(),
                grads.wrt(w).unwrap().data().to_vec(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn slice_and_concat_roundtrip() {
        let tape = Tape::new();
        let a = tape.param(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let left = tape.slice(a, 0, 2, 0, 2);
        let right = tape.slice(a, 0, 2, 2, 4);
        let back = tape.concat_cols(&[left, right]);
        assert_eq!(*tape.value(back), *tape.value(a));
        let root = tape.sum_all(back);
        let grads = tape.backward(root);
        assert!(grads.wrt(a).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    #[should_panic(expected = "non-finite value produced")]
    fn nan_output_is_an_immediate_error() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1e308]));
        let b = tape.leaf(Tensor::vector(vec![1e308]));
        // overflow to +inf trips the finiteness check
        tape.add(a, b);
    }
}
