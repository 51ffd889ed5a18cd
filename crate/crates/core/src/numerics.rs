//! Dense linear algebra, softmax cross-entropy and Adam.
//!
//! Everything is `f64`. Classifier weights are stored `d × C` (representation
//! dimension by class count), so logits are `hᵀW`; see [`matvec`].

use std::ops::{Deref, DerefMut, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for probabilities inside `log`.
pub const PROB_FLOOR: f64 = 1e-12;

/// A dense vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.data.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn squared_distance(&self, other: &[f64]) -> f64 {
        squared_distance(&self.data, other)
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Self { data }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = String;
    fn try_from(r: MatrixRepr) -> Result<Self, String> {
        let len = r.rows.checked_mul(r.cols).ok_or("matrix shape overflows")?;
        if r.data.len() != len {
            return Err(format!(
                "matrix {}x{} needs {len} entries, found {}",
                r.rows,
                r.cols,
                r.data.len()
            ));
        }
        if !r.data.iter().all(|x| x.is_finite()) {
            return Err("matrix contains non-finite entries".into());
        }
        Ok(Matrix {
            rows: r.rows,
            cols: r.cols,
            data: r.data,
        })
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::from_vec",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    op: "Matrix::from_rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// Copies columns `range` into a new `rows × range.len()` matrix.
    pub fn columns(&self, range: Range<usize>) -> Matrix {
        assert!(range.end <= self.cols, "column range out of bounds");
        let width = range.len();
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[range.clone()]);
        }
        Matrix {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    /// Overwrites columns starting at `start` with the columns of `src`.
    pub fn set_columns(&mut self, start: usize, src: &Matrix) -> Result<()> {
        if src.rows != self.rows || start + src.cols > self.cols {
            return Err(Error::ShapeMismatch {
                op: "Matrix::set_columns",
                expected: (self.rows, self.cols - start.min(self.cols)),
                found: src.shape(),
            });
        }
        for i in 0..self.rows {
            let dst = i * self.cols + start;
            self.data[dst..dst + src.cols].copy_from_slice(src.row(i));
        }
        Ok(())
    }

    /// Returns `[self | right]`.
    pub fn hcat(&self, right: &Matrix) -> Result<Matrix> {
        if self.rows != right.rows {
            return Err(Error::DimensionMismatch {
                op: "Matrix::hcat",
                expected: self.rows,
                found: right.rows,
            });
        }
        let cols = self.cols + right.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(right.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// `self v`: the ordinary matrix-vector product, output has `rows` entries.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::mul_vec",
                expected: self.cols,
                found: v.len(),
            });
        }
        let out = (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect();
        Ok(Vector::from_vec(out))
    }

    /// `self += scale · u vᵀ`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let a = scale * ui;
            if a == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (w, &vj) in row.iter_mut().zip(v) {
                *w += a * vj;
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Logits `hᵀW` for a `d × C` weight matrix: `out[j] = Σ_i W[i][j]·h[i]`.
pub fn matvec(w: &Matrix, h: &[f64]) -> Result<Vector> {
    if w.rows != h.len() {
        return Err(Error::DimensionMismatch {
            op: "matvec (W rows vs h dim)",
            expected: w.rows,
            found: h.len(),
        });
    }
    let mut out = vec![0.0; w.cols];
    for (i, &hi) in h.iter().enumerate() {
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o += wij * hi;
        }
    }
    Ok(Vector::from_vec(out))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vector> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    if !logits.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Vector::from_vec(exps.into_iter().map(|e| e / total).collect()))
}

/// `-log probs[label]`, with the probability clamped at [`PROB_FLOOR`].
pub fn xent_loss(probs: &[f64], label: usize) -> Result<f64> {
    let p = *probs.get(label).ok_or(Error::LabelOutOfRange {
        label,
        classes: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of `-log softmax(logits)[label]` w.r.t. the logits.
pub fn softmax_xent_grad(logits: &[f64], label: usize) -> Result<Vector> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let mut g = softmax(logits)?;
    g[label] -= 1.0;
    Ok(g)
}

/// Loss and logit-gradient in one pass; shares the softmax.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vector)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let mut p = softmax(logits)?;
    let loss = xent_loss(&p, label)?;
    p[label] -= 1.0;
    Ok((loss, p))
}

/// First/second-moment state for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(rows: usize, cols: usize) -> Self {
        Self::with_hyper(rows, cols, Self::BETA1, Self::BETA2, Self::EPSILON)
    }

    pub fn with_hyper(rows: usize, cols: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }

    /// Advances the step counter and returns the bias-correction factors.
    fn tick(&mut self) -> (f64, f64) {
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    #[inline]
    fn update(
        &self,
        p: &mut f64,
        g: f64,
        m: &mut f64,
        v: &mut f64,
        lr: f64,
        (c1, c2): (f64, f64),
    ) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
    }

    /// One Adam step over a whole parameter matrix.
    pub fn step(&mut self, params: &mut Matrix, grads: &Matrix, lr: f64) -> Result<()> {
        self.check(params.shape(), grads.shape(), "adam_step")?;
        if self.shape() != params.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step (state)",
                expected: params.shape(),
                found: self.shape(),
            });
        }
        self.step_slice(params.as_mut_slice(), grads.as_slice(), lr)
    }

    /// One Adam step over a flat parameter slice; the state must hold the
    /// same number of entries.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        let n = self.m.as_slice().len();
        if params.len() != n || grads.len() != n {
            return Err(Error::DimensionMismatch {
                op: "adam_step",
                expected: n,
                found: if params.len() != n {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        check_lr(lr)?;
        let corr = self.tick();
        let mut m = std::mem::replace(&mut self.m, Matrix::zeros(0, 0));
        let mut v = std::mem::replace(&mut self.v, Matrix::zeros(0, 0));
        for (((p, &g), mi), vi) in params
            .iter_mut()
            .zip(grads)
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            self.update(p, g, mi, vi, lr, corr);
        }
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One Adam step restricted to columns `cols` of `params`/`grads`. The
    /// state has shape `params.rows() × cols.len()`.
    pub fn step_columns(
        &mut self,
        params: &mut Matrix,
        grads: &Matrix,
        cols: Range<usize>,
        lr: f64,
    ) -> Result<()> {
        self.check(params.shape(), grads.shape(), "adam_step_columns")?;
        let expected = (params.rows, cols.len());
        if cols.end > params.cols || self.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "adam_step_columns (state)",
                expected,
                found: self.shape(),
            });
        }
        check_lr(lr)?;
        let corr = self.tick();
        let width = cols.len();
        let mut m = std::mem::replace(&mut self.m, Matrix::zeros(0, 0));
        let mut v = std::mem::replace(&mut self.v, Matrix::zeros(0, 0));
        for i in 0..params.rows {
            let base = i * params.cols;
            let p_row = &mut params.data[base + cols.start..base + cols.end];
            let g_row = &grads.data[base + cols.start..base + cols.end];
            let m_row = &mut m.data[i * width..(i + 1) * width];
            let v_row = &mut v.data[i * width..(i + 1) * width];
            for (((p, &g), mi), vi) in p_row.iter_mut().zip(g_row).zip(m_row).zip(v_row) {
                self.update(p, g, mi, vi, lr, corr);
            }
        }
        self.m = m;
        self.v = v;
        Ok(())
    }

    fn check(
        &self,
        params: (usize, usize),
        grads: (usize, usize),
        op: &'static str,
    ) -> Result<()> {
        if params != grads {
            return Err(Error::ShapeMismatch {
                op,
                expected: params,
                found: grads,
            });
        }
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    Ok(())
}

/// Standard Adam update with bias correction. `lr = 0` leaves `params`
/// bit-identical while still advancing the moments.
pub fn adam_step(params: &mut Matrix, grads: &Matrix, state: &mut AdamState, lr: f64) -> Result<()> {
    state.step(params, grads, lr)
}

/// Central-difference gradient check. Returns the maximum over entries of
/// `|numeric − analytic| / (|analytic| + 1e-8)`.
pub fn finite_diff_check<F>(mut loss_fn: F, at: &Matrix, analytic: &Matrix, eps: f64) -> Result<f64>
where
    F: FnMut(&Matrix) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
    }
    if at.shape() != analytic.shape() {
        return Err(Error::ShapeMismatch {
            op: "finite_diff_check",
            expected: at.shape(),
            found: analytic.shape(),
        });
    }
    let mut probe = at.clone();
    let mut worst = 0.0f64;
    for k in 0..at.data.len() {
        let orig = probe.data[k];
        probe.data[k] = orig + eps;
        let plus = loss_fn(&probe);
        probe.data[k] = orig - eps;
        let minus = loss_fn(&probe);
        probe.data[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite_diff_check loss"));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data[k];
        worst = worst.max((numeric - a).abs() / (a.abs() + 1e-8));
    }
    Ok(worst)
}
