//! Reverse-mode differentiation tape.
//!
//! Nodes are whole vectors and the recorded operations are layer-sized
//! (affine maps, elementwise activations, concatenation, reductions), each
//! with an analytic vector-Jacobian product. Parameters are not nodes: an
//! affine node refers to its weight and bias by offset into the flat
//! parameter vector the tape was created with, and the backward pass
//! accumulates their gradients into a vector of the same length.

use std::ops::Range;

use super::activation::Activation;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        weight: usize,
        bias: Option<usize>,
        rows: usize,
        cols: usize,
    },
    Act(Var, Activation),
    ActDeriv(Var, Activation),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine { x: Var, scale: f64 },
    Exp(Var),
    Ln(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    Broadcast(Var),
    MatVec { m: Var, v: Var, rows: usize, cols: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
    vjp_fault: Option<Range<usize>>,
}

/// Result of a backward pass.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<f64>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }

    pub fn wrt(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            vjp_fault: None,
        }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: weight gradients of affine nodes whose weight offset lies
    /// in `range` are deliberately scaled by 1.01 in the backward pass.
    pub fn inject_vjp_fault(&mut self, range: Range<usize>) {
        self.vjp_fault = Some(range);
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(vec![value])
    }

    /// `W x (+ b)` where `W` is a `rows x cols` row-major block of the
    /// parameter vector starting at `weight`.
    pub fn linear(
        &mut self,
        x: Var,
        weight: usize,
        bias: Option<usize>,
        rows: usize,
        cols: usize,
    ) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), cols, "linear: input length");
        let w = &self.params[weight..weight + rows * cols];
        let mut out: Vec<f64> = match bias {
            Some(b) => self.params[b..b + rows].to_vec(),
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(
            out,
            Op::Linear {
                x,
                weight,
                bias,
                rows,
                cols,
            },
        )
    }

    pub fn act(&mut self, x: Var, act: Activation) -> Var {
        let v = self.nodes[x.0].value.iter().map(|&a| act.apply(a)).collect();
        self.push(v, Op::Act(x, act))
    }

    /// Elementwise derivative of the activation, evaluated at `x`.
    pub fn act_deriv(&mut self, x: Var, act: Activation) -> Var {
        let v = self.nodes[x.0]
            .value
            .iter()
            .map(|&a| act.derivative(a))
            .collect();
        self.push(v, Op::ActDeriv(x, act))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "elementwise op: length mismatch");
        av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.nodes[x.0]
            .value
            .iter()
            .map(|a| scale * a + shift)
            .collect();
        self.push(v, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.iter().map(|a| a.exp()).collect();
        self.push(v, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.iter().map(|a| a.ln()).collect();
        self.push(v, Op::Ln(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.iter().map(|a| a * a).collect();
        self.push(v, Op::Square(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    /// Sum of all entries, as a length-1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::Sum(x))
    }

    /// Repeats a length-1 node `n` times.
    pub fn broadcast(&mut self, x: Var, n: usize) -> Var {
        assert_eq!(self.nodes[x.0].value.len(), 1, "broadcast of non-scalar");
        let v = vec![self.nodes[x.0].value[0]; n];
        self.push(v, Op::Broadcast(x))
    }

    /// Sum over a list of nodes of equal length.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut it = terms.iter();
        let first = *it.next().expect("add_all needs at least one term");
        it.fold(first, |acc, t| self.add(acc, *t))
    }

    /// Product of the node `m` viewed as a `rows x cols` row-major matrix
    /// with the vector node `v`.
    pub fn matvec(&mut self, m: Var, v: Var, rows: usize, cols: usize) -> Var {
        let (mv, vv) = (&self.nodes[m.0].value, &self.nodes[v.0].value);
        assert_eq!(mv.len(), rows * cols, "matvec: matrix length");
        assert_eq!(vv.len(), cols, "matvec: vector length");
        let out = (0..rows)
            .map(|r| {
                mv[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(vv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push(out, Op::MatVec { m, v, rows, cols })
    }

    /// Backward pass from a scalar node with unit seed.
    pub fn backward(&self, output: Var) -> Gradients {
        self.backward_seeded(&[(output, vec![1.0])])
    }

    /// Backward pass from several seeds at once; gradients from all seeds
    /// are summed.
    pub fn backward_seeded(&self, seeds: &[(Var, Vec<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut pgrad = vec![0.0; self.params.len()];
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(g.len(), self.nodes[v.0].value.len(), "seed length");
            accumulate(&mut grads, *v, g);
            last = last.max(v.0);
        }
        let end = if seeds.is_empty() { 0 } else { last + 1 };
        for idx in (0..end).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads, &mut pgrad);
            grads[idx] = Some(g);
        }
        Gradients {
            nodes: grads,
            params: pgrad,
        }
    }

    fn propagate(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        pgrad: &mut [f64],
    ) {
        let node = &self.nodes[idx];
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear {
                x,
                weight,
                bias,
                rows,
                cols,
            } => {
                let xv = val(x);
                let w = &self.params[*weight..weight + rows * cols];
                let mut gx = vec![0.0; *cols];
                for r in 0..*rows {
                    axpy(&mut gx, g[r], &w[r * cols..(r + 1) * cols]);
                }
                let wscale = match &self.vjp_fault {
                    Some(range) if range.contains(weight) => 1.01,
                    _ => 1.0,
                };
                for r in 0..*rows {
                    let base = weight + r * cols;
                    axpy(&mut pgrad[base..base + cols], wscale * g[r], xv);
                }
                if let Some(b) = bias {
                    axpy(&mut pgrad[*b..b + rows], 1.0, g);
                }
                accumulate(grads, *x, &gx);
            }
            Op::Act(x, act) => {
                let gx: Vec<f64> = val(x)
                    .iter()
                    .zip(g)
                    .map(|(a, gi)| gi * act.derivative(*a))
                    .collect();
                accumulate(grads, *x, &gx);
            }
            Op::ActDeriv(x, act) => {
                let gx: Vec<f64> = val(x)
                    .iter()
                    .zip(g)
                    .map(|(a, gi)| gi * act.second_derivative(*a))
                    .collect();
                accumulate(grads, *x, &gx);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(val(b)).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(val(a)).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Div(a, b) => {
                let bv = val(b);
                let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x / y).collect();
                let gb: Vec<f64> = g
                    .iter()
                    .zip(&node.value)
                    .zip(bv)
                    .map(|((gi, q), y)| -gi * q / y)
                    .collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Affine { x, scale, .. } => {
                let gx: Vec<f64> = g.iter().map(|v| v * scale).collect();
                accumulate(grads, *x, &gx);
            }
            Op::Exp(x) => {
                let gx: Vec<f64> = g.iter().zip(&node.value).map(|(a, b)| a * b).collect();
                accumulate(grads, *x, &gx);
            }
            Op::Ln(x) => {
                let gx: Vec<f64> = g.iter().zip(val(x)).map(|(a, b)| a / b).collect();
                accumulate(grads, *x, &gx);
            }
            Op::Square(x) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(val(x))
                    .map(|(a, b)| 2.0 * a * b)
                    .collect();
                accumulate(grads, *x, &gx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    accumulate(grads, *p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let mut gx = vec![0.0; val(x).len()];
                gx[*start..start + g.len()].copy_from_slice(g);
                accumulate(grads, *x, &gx);
            }
            Op::Sum(x) => {
                let gx = vec![g[0]; val(x).len()];
                accumulate(grads, *x, &gx);
            }
            Op::Broadcast(x) => {
                accumulate(grads, *x, &[g.iter().sum()]);
            }
            Op::MatVec { m, v, rows, cols } => {
                let (mv, vv) = (val(m), val(v));
                let mut gm = vec![0.0; rows * cols];
                let mut gv = vec![0.0; *cols];
                for r in 0..*rows {
                    axpy(&mut gm[r * cols..(r + 1) * cols], g[r], vv);
                    axpy(&mut gv, g[r], &mv[r * cols..(r + 1) * cols]);
                }
                accumulate(grads, *m, &gm);
                accumulate(grads, *v, &gv);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => axpy(acc, 1.0, g),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-7 * fd.abs().max(1.0),
                "coord {i}: fd {fd} vs tape {}",
                grad[i]
            );
        }
    }

    fn composite(params: &[f64], x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let mut t = Tape::new(params);
        let xv = t.leaf(x.to_vec());
        let h = t.linear(xv, 0, Some(6), 2, 3);
        let a = t.act(h, Activation::Tanh);
        let d = t.act_deriv(h, Activation::Softplus);
        let p = t.mul(a, d);
        let e = t.exp(p);
        let q = t.div(e, a);
        let sq = t.square(q);
        let c = t.concat(&[sq, xv]);
        let s = t.slice(c, 1, 3);
        let ta = t_affine(&mut t, s);
        let l = t.ln(ta);
        let m = t.matvec(c, c, 1, 5);
        let bm = t.broadcast(m, 3);
        let z = t.sub(l, bm);
        let out = t.sum(z);
        let g = t.backward(out);
        (t.scalar(out), g.wrt(xv, 3), g.params().to_vec())
    }

    fn t_affine(t: &mut Tape, v: Var) -> Var {
        let sq = t.square(v);
        t.affine(sq, 0.5, 1.0)
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let params = vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6, 0.05, -0.1];
        let x = vec![0.7, -0.3, 0.2];
        let (_, gx, gp) = composite(&params, &x);
        fd_check(|xx| composite(&params, xx).0, &x, &gx);
        fd_check(|pp| composite(pp, &x).0, &params, &gp);
    }

    #[test]
    fn seeds_accumulate() {
        let params: Vec<f64> = vec![];
        let mut t = Tape::new(&params);
        let a = t.leaf(vec![1.0, 2.0]);
        let b = t.scale(a, 3.0);
        let g = t.backward_seeded(&[(b, vec![1.0, 1.0]), (a, vec![0.5, 0.0])]);
        assert_eq!(g.wrt(a, 2), vec![3.5, 3.0]);
    }

    #[test]
    fn fault_hook_perturbs_weight_gradient_only() {
        let params = vec![1.0, 2.0, 0.5];
        let run = |fault: bool| {
            let mut t = Tape::new(&params);
            if fault {
                t.inject_vjp_fault(0..2);
            }
            let x = t.leaf(vec![1.0, 1.0]);
            let y = t.linear(x, 0, Some(2), 1, 2);
            let g = t.backward(y);
            (g.params().to_vec(), g.wrt(x, 2))
        };
        let (clean, gx0) = run(false);
        let (bad, gx1) = run(true);
        assert_eq!(gx0, gx1);
        assert_eq!(clean[2], bad[2]);
        assert!((bad[0] - 1.01 * clean[0]).abs() < 1e-15);
    }
}
