use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::spectral::{self, bin_count, bin_multiplicity, is_self_conjugate};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive whose vector-Jacobian product can be deliberately corrupted,
/// so gradient checks can be shown to catch a broken rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    MatMul,
    Square,
    ComplexMagnitude,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddColumn(Var, Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    SqrtGuarded(Var),
    ComplexMagnitude(Var),
    L1Norm(Var),
    L2NormSquared(Var),
    Irfft(Var, usize),
    Gather(Var, Vec<usize>),
    MovingAverage(Var, usize),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | AddColumn(a, b) => vec![*a, *b],
            Scale(a, _)
            | Transpose(a)
            | RowSum(a)
            | Sum(a)
            | Mean(a)
            | Square(a)
            | SqrtGuarded(a)
            | ComplexMagnitude(a)
            | L1Norm(a)
            | L2NormSquared(a)
            | Irfft(a, _)
            | Gather(a, _)
            | MovingAverage(a, _) => vec![*a],
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// A linear record of matrix-valued operations for reverse-mode
/// differentiation. Scalars are `1 x 1` matrices.
///
/// Nodes are appended in evaluation order, so node ids are already a
/// topological order and [`Tape::backward`] is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: scale the backward rule of one primitive by 1.5.
    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
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

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).dim(), self.value(b).dim());
        if sa != sb {
            return Err(Error::ShapeMismatch(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).dim(), self.value(b).dim());
        if sa.1 != sb.0 {
            return Err(Error::ShapeMismatch(format!("matmul: {sa:?} x {sb:?}")));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// `a + col * 1^T` for an `r x c` matrix and an `r x 1` column.
    pub fn add_column(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.value(a).dim(), self.value(col).dim());
        if sc != (sa.0, 1) {
            return Err(Error::ShapeMismatch(format!("add_column: {sa:?} + {sc:?}")));
        }
        let v = self.value(a) + self.value(col);
        Ok(self.push(v, Op::AddColumn(a, col)))
    }

    /// Sum across columns: `r x c -> r x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = scalar(x.sum() / x.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// `sqrt(x + guard^2)`, finite with a finite derivative at zero.
    pub fn sqrt_guarded(&mut self, a: Var, guard: f64) -> Var {
        let g2 = guard * guard;
        let v = self.value(a).mapv(|x| (x + g2).sqrt());
        self.push(v, Op::SqrtGuarded(a))
    }

    /// Magnitudes of complex numbers stored as interleaved `(re, im)` column
    /// pairs: `r x 2n -> r x n`, `|z| = sqrt(re^2 + im^2 + guard^2)`.
    pub fn complex_magnitude(&mut self, a: Var, guard: f64) -> Result<Var> {
        let x = self.value(a);
        if !x.ncols().is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!("complex_magnitude: odd width {}", x.ncols())));
        }
        let g2 = guard * guard;
        let v = Array2::from_shape_fn((x.nrows(), x.ncols() / 2), |(r, j)| {
            let (re, im) = (x[[r, 2 * j]], x[[r, 2 * j + 1]]);
            (re * re + im * im + g2).sqrt()
        });
        Ok(self.push(v, Op::ComplexMagnitude(a)))
    }

    pub fn l1_norm(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).iter().map(|x| x.abs()).sum());
        self.push(v, Op::L1Norm(a))
    }

    pub fn l2_norm_squared(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).iter().map(|x| x * x).sum());
        self.push(v, Op::L2NormSquared(a))
    }

    /// Inverse real DFT of `C` one-sided spectra, one per row with
    /// interleaved `(re, im)` bins: `C x 2(M/2+1) -> M x C`.
    ///
    /// Imaginary parts of the DC and Nyquist bins are ignored, which makes
    /// this an exact linear map on the free coefficients.
    pub fn irfft(&mut self, spec: Var, len: usize) -> Result<Var> {
        let x = self.value(spec);
        let bins = bin_count(len);
        if len < 2 || x.ncols() != 2 * bins {
            return Err(Error::ShapeMismatch(format!(
                "irfft: width {} for length {len}",
                x.ncols()
            )));
        }
        let mut out = Array2::zeros((len, x.nrows()));
        for (c, row) in x.rows().into_iter().enumerate() {
            let coeffs = (0..bins)
                .map(|j| {
                    let im = if is_self_conjugate(j, len) { 0.0 } else { row[2 * j + 1] };
                    num_complex::Complex64::new(row[2 * j], im)
                })
                .collect();
            let s = spectral::Spectrum::from_coeffs(coeffs, len)?;
            let time = spectral::irfft(&s)?;
            out.column_mut(c).assign(&ndarray::Array1::from(time));
        }
        Ok(self.push(out, Op::Irfft(spec, len)))
    }

    /// Pick elements of `a` (flattened row-major) into a new `shape`.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>, shape: (usize, usize)) -> Result<Var> {
        let x = self.value(a);
        if indices.len() != shape.0 * shape.1 {
            return Err(Error::ShapeMismatch(format!(
                "gather: {} indices for shape {shape:?}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::ShapeMismatch(format!("gather: index {bad} >= {}", x.len())));
        }
        let flat = x.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        let v = Array2::from_shape_vec(shape, indices.iter().map(|&i| flat[i]).collect())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(self.push(v, Op::Gather(a, indices)))
    }

    /// Centered moving average down each column with edge replication.
    pub fn moving_average(&mut self, a: Var, kernel: usize) -> Result<Var> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!("moving_average: kernel {kernel} must be odd")));
        }
        let v = moving_average(self.value(a), kernel);
        Ok(self.push(v, Op::MovingAverage(a, kernel)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).dim();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::DetachedGraph);
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            for (input, contrib) in self.vjp(&node.op, &node.value, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn corrupt(&self, which: Fault, g: Array2<f64>) -> Array2<f64> {
        if self.fault == Some(which) {
            g * 1.5
        } else {
            g
        }
    }

    fn vjp(&self, op: &Op, out: &Array2<f64>, g: &Array2<f64>) -> Vec<(Var, Array2<f64>)> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, -g)],
            Op::Scale(a, k) => vec![(*a, g * *k)],
            Op::Mul(a, b) => {
                let mut r = Vec::with_capacity(2);
                if needs(a) {
                    r.push((*a, g * val(b)));
                }
                if needs(b) {
                    r.push((*b, g * val(a)));
                }
                r
            }
            Op::MatMul(a, b) => {
                let mut r = Vec::with_capacity(2);
                if needs(a) {
                    r.push((*a, self.corrupt(Fault::MatMul, g.dot(&val(b).t()))));
                }
                if needs(b) {
                    r.push((*b, self.corrupt(Fault::MatMul, val(a).t().dot(g))));
                }
                r
            }
            Op::Transpose(a) => vec![(*a, g.t().to_owned())],
            Op::AddColumn(a, col) => {
                vec![(*a, g.clone()), (*col, g.sum_axis(Axis(1)).insert_axis(Axis(1)))]
            }
            Op::RowSum(a) => {
                let shape = val(a).dim();
                vec![(*a, g.broadcast(shape).expect("row_sum broadcast").to_owned())]
            }
            Op::Sum(a) => vec![(*a, Array2::from_elem(val(a).dim(), g[[0, 0]]))],
            Op::Mean(a) => {
                let x = val(a);
                vec![(*a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64))]
            }
            Op::Square(a) => {
                let d = Zip::from(g).and(val(a)).map_collect(|g, x| 2.0 * x * g);
                vec![(*a, self.corrupt(Fault::Square, d))]
            }
            Op::SqrtGuarded(a) => {
                vec![(*a, Zip::from(g).and(out).map_collect(|g, y| 0.5 * g / y))]
            }
            Op::ComplexMagnitude(a) => {
                let x = val(a);
                let mut d = Array2::zeros(x.dim());
                for ((r, j), mag) in out.indexed_iter() {
                    d[[r, 2 * j]] = g[[r, j]] * x[[r, 2 * j]] / mag;
                    d[[r, 2 * j + 1]] = g[[r, j]] * x[[r, 2 * j + 1]] / mag;
                }
                vec![(*a, self.corrupt(Fault::ComplexMagnitude, d))]
            }
            Op::L1Norm(a) => {
                let s = g[[0, 0]];
                vec![(*a, val(a).mapv(|x| if x > 0.0 { s } else if x < 0.0 { -s } else { 0.0 }))]
            }
            Op::L2NormSquared(a) => {
                let s = 2.0 * g[[0, 0]];
                vec![(*a, val(a) * s)]
            }
            Op::Irfft(a, len) => vec![(*a, irfft_adjoint(g, *len))],
            Op::Gather(a, idx) => {
                let shape = val(a).dim();
                let mut flat = vec![0.0; shape.0 * shape.1];
                for (&i, &gv) in idx.iter().zip(g.iter()) {
                    flat[i] += gv;
                }
                vec![(*a, Array2::from_shape_vec(shape, flat).expect("gather shape"))]
            }
            Op::MovingAverage(a, k) => vec![(*a, moving_average_adjoint(g, *k))],
        }
    }
}

/// Centered moving average along axis 0 with replicated edges.
pub fn moving_average(x: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let half = (kernel / 2) as isize;
    let inv = 1.0 / kernel as f64;
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows as isize {
        let mut acc = out.row_mut(i as usize);
        for d in -half..=half {
            let src = (i + d).clamp(0, rows as isize - 1) as usize;
            acc.scaled_add(inv, &x.row(src));
        }
    }
    out
}

fn moving_average_adjoint(g: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let (rows, cols) = g.dim();
    let half = (kernel / 2) as isize;
    let inv = 1.0 / kernel as f64;
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows as isize {
        for d in -half..=half {
            let src = (i + d).clamp(0, rows as isize - 1) as usize;
            out.row_mut(src).scaled_add(inv, &g.row(i as usize));
        }
    }
    out
}

/// Adjoint of [`Tape::irfft`]: `M x C` cotangent to `C x 2(M/2+1)`.
pub fn irfft_adjoint(g: &Array2<f64>, len: usize) -> Array2<f64> {
    let bins = bin_count(len);
    let mut out = Array2::zeros((g.ncols(), 2 * bins));
    for (c, col) in g.columns().into_iter().enumerate() {
        let v = spectral::rfft(&col.to_vec()).expect("len >= 2 checked at record time");
        for (j, z) in v.coeffs().iter().enumerate() {
            let w = bin_multiplicity(j, len) / len as f64;
            out[[c, 2 * j]] = w * z.re;
            out[[c, 2 * j + 1]] = if is_self_conjugate(j, len) { 0.0 } else { w * z.im };
        }
    }
    out
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like its value if the loss does not
    /// depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(tape.value(v).dim()))
    }
}
