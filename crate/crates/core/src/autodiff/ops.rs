//! Differentiable operations recorded on a [`Tape`].

use std::rc::Rc;

use super::linalg::{gemm, matmul, transpose, Lu, MatRef};
use super::tape::{GradAcc, Value, Var};
use crate::error::{Error, Result};

/// Row norms below this are rejected by [`Var::cosine_rows`].
pub const MIN_ROW_NORM: f64 = 1e-12;

fn same_shape(a: &Value, b: &Value, op: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    Ok(())
}

fn matrix(v: &Value, op: &str) -> Result<(usize, usize)> {
    if v.shape.len() != 2 {
        return Err(Error::dim(format!(
            "{op}: expected a matrix, got shape {:?}",
            v.shape
        )));
    }
    Ok((v.shape[0], v.shape[1]))
}

/// Softplus in the overflow-safe form `max(x, 0) + ln(1 + exp(-|x|))`.
pub fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    fn emit(
        &self,
        parents: &[Var<'t>],
        value: Value,
        backward: impl Fn(&[f64], &mut GradAcc) + 'static,
    ) -> Var<'t> {
        let rg = parents.iter().any(Var::requires_grad);
        self.tape.push(value, rg, Some(Box::new(backward)))
    }

    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let y = Value {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| f(v)).collect(),
        };
        if !self.requires_grad() {
            return self.tape.push(y, false, None);
        }
        let out_data = Rc::new(y.data.clone());
        let xid = self.id;
        self.emit(&[*self], y, move |g, acc| {
            let s = acc.slot(xid);
            for i in 0..g.len() {
                s[i] += g[i] * df(x.data[i], out_data[i]);
            }
        })
    }

    fn zip(&self, other: Var<'t>, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Value> {
        let a = self.value();
        let b = other.value();
        same_shape(&a, &b, op)?;
        Ok(Value {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip(other, "add", |x, y| x + y)?;
        let (ai, bi) = (self.id, other.id);
        let (ar, br) = (self.requires_grad(), other.requires_grad());
        Ok(self.emit(&[self, other], v, move |g, acc| {
            for (id, r) in [(ai, ar), (bi, br)] {
                if r {
                    acc.slot(id).iter_mut().zip(g).for_each(|(s, &gv)| *s += gv);
                }
            }
        }))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip(other, "sub", |x, y| x - y)?;
        let (ai, bi) = (self.id, other.id);
        let (ar, br) = (self.requires_grad(), other.requires_grad());
        Ok(self.emit(&[self, other], v, move |g, acc| {
            if ar {
                acc.slot(ai).iter_mut().zip(g).for_each(|(s, &gv)| *s += gv);
            }
            if br {
                acc.slot(bi).iter_mut().zip(g).for_each(|(s, &gv)| *s -= gv);
            }
        }))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip(other, "mul", |x, y| x * y)?;
        let (a, b) = (self.value(), other.value());
        let (ai, bi) = (self.id, other.id);
        let (ar, br) = (self.requires_grad(), other.requires_grad());
        Ok(self.emit(&[self, other], v, move |g, acc| {
            if ar {
                let s = acc.slot(ai);
                for i in 0..g.len() {
                    s[i] += g[i] * b.data[i];
                }
            }
            if br {
                let s = acc.slot(bi);
                for i in 0..g.len() {
                    s[i] += g[i] * a.data[i];
                }
            }
        }))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.unary(|x| k * x, move |_, _| k)
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        self.unary(|x| x + k, |_, _| 1.0)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Multiplies every element by a single-element variable.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        let sv = s.value();
        if sv.data.len() != 1 {
            return Err(Error::dim(format!(
                "mul_scalar: factor has shape {:?}",
                sv.shape
            )));
        }
        let k = sv.data[0];
        let x = self.value();
        let v = Value {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&e| e * k).collect(),
        };
        let (xi, si) = (self.id, s.id);
        let (xr, sr) = (self.requires_grad(), s.requires_grad());
        Ok(self.emit(&[self, s], v, move |g, acc| {
            if xr {
                acc.slot(xi).iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * k);
            }
            if sr {
                let dot: f64 = g.iter().zip(&x.data).map(|(a, b)| a * b).sum();
                acc.slot(si)[0] += dot;
            }
        }))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus_f64, |x, _| sigmoid_f64(x))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid_f64, |_, y| y * (1.0 - y))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    /// Clamp to `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    /// Same value, cut from the graph.
    pub fn detach(self) -> Var<'t> {
        let v = self.value();
        self.tape.push((*v).clone(), false, None)
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let n = x.data.len();
        let v = Value {
            shape: vec![1],
            data: vec![x.data.iter().sum()],
        };
        let xi = self.id;
        self.emit(&[self], v, move |g, acc| {
            let s = acc.slot(xi);
            for e in s.iter_mut().take(n) {
                *e += g[0];
            }
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().data.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// `sum_k w_k x_k` over the flattened tensor.
    pub fn weighted_sum(self, weights: Vec<f64>) -> Result<Var<'t>> {
        let x = self.value();
        if weights.len() != x.data.len() {
            return Err(Error::dim(format!(
                "weighted_sum: {} weights for {} values",
                weights.len(),
                x.data.len()
            )));
        }
        let v = Value {
            shape: vec![1],
            data: vec![x.data.iter().zip(&weights).map(|(a, b)| a * b).sum()],
        };
        let xi = self.id;
        Ok(self.emit(&[self], v, move |g, acc| {
            let s = acc.slot(xi);
            for (d, w) in s.iter_mut().zip(&weights) {
                *d += g[0] * w;
            }
        }))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (m, k) = matrix(&a, "matmul")?;
        let (k2, n) = matrix(&b, "matmul")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner dimensions {k} and {k2} differ"
            )));
        }
        let data = matmul(MatRef::new(&a.data, m, k), MatRef::new(&b.data, k, n));
        let (ai, bi) = (self.id, other.id);
        let (ar, br) = (self.requires_grad(), other.requires_grad());
        Ok(self.emit(
            &[self, other],
            Value {
                shape: vec![m, n],
                data,
            },
            move |g, acc| {
                let gm = MatRef::new(g, m, n);
                if ar {
                    gemm(1.0, gm, MatRef::new(&b.data, k, n).t(), 1.0, acc.slot(ai));
                }
                if br {
                    gemm(1.0, MatRef::new(&a.data, m, k).t(), gm, 1.0, acc.slot(bi));
                }
            },
        ))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = matrix(&x, "transpose")?;
        let xi = self.id;
        Ok(self.emit(
            &[self],
            Value {
                shape: vec![c, r],
                data: transpose(&x.data, r, c),
            },
            move |g, acc| {
                let s = acc.slot(xi);
                for i in 0..r {
                    for j in 0..c {
                        s[i * c + j] += g[j * r + i];
                    }
                }
            },
        ))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let b = bias.value();
        let (r, c) = matrix(&x, "add_row")?;
        if b.data.len() != c {
            return Err(Error::dim(format!(
                "add_row: bias of length {} for {c} columns",
                b.data.len()
            )));
        }
        let mut data = x.data.clone();
        for row in data.chunks_mut(c) {
            row.iter_mut().zip(&b.data).for_each(|(v, bv)| *v += bv);
        }
        let (xi, bi) = (self.id, bias.id);
        let (xr, br) = (self.requires_grad(), bias.requires_grad());
        Ok(self.emit(
            &[self, bias],
            Value {
                shape: vec![r, c],
                data,
            },
            move |g, acc| {
                if xr {
                    acc.slot(xi).iter_mut().zip(g).for_each(|(s, &gv)| *s += gv);
                }
                if br {
                    let s = acc.slot(bi);
                    for row in g.chunks(c) {
                        s.iter_mut().zip(row).for_each(|(d, &gv)| *d += gv);
                    }
                }
            },
        ))
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = matrix(&x, "softmax_rows")?;
        let mut y = x.data.clone();
        for row in y.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let yd = Rc::new(y.clone());
        let xi = self.id;
        Ok(self.emit(
            &[self],
            Value {
                shape: vec![r, c],
                data: y,
            },
            move |g, acc| {
                let s = acc.slot(xi);
                for i in 0..r {
                    let (gr, yr) = (&g[i * c..(i + 1) * c], &yd[i * c..(i + 1) * c]);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        s[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            },
        ))
    }

    /// Divides every row by its sum.
    pub fn normalize_rows(self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = matrix(&x, "normalize_rows")?;
        let sums: Vec<f64> = x.data.chunks(c).map(|row| row.iter().sum()).collect();
        if let Some(i) = sums.iter().position(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::dim(format!(
                "normalize_rows: row {i} sums to {}",
                sums[i]
            )));
        }
        let mut y = x.data.clone();
        for (row, s) in y.chunks_mut(c).zip(&sums) {
            row.iter_mut().for_each(|v| *v /= s);
        }
        let yd = Rc::new(y.clone());
        let xi = self.id;
        Ok(self.emit(
            &[self],
            Value {
                shape: vec![r, c],
                data: y,
            },
            move |g, acc| {
                let s = acc.slot(xi);
                for i in 0..r {
                    let (gr, yr) = (&g[i * c..(i + 1) * c], &yd[i * c..(i + 1) * c]);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        s[i * c + j] += (gr[j] - dot) / sums[i];
                    }
                }
            },
        ))
    }

    /// `out[i][j] = <a_i, b_j> / (|a_i| |b_j|)`.
    pub fn cosine_rows(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (n, d) = matrix(&a, "cosine_rows")?;
        let (m, d2) = matrix(&b, "cosine_rows")?;
        if d != d2 {
            return Err(Error::dim(format!(
                "cosine_rows: row widths {d} and {d2} differ"
            )));
        }
        let unit = |v: &Value, rows: usize| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut u = v.data.clone();
            let mut norms = Vec::with_capacity(rows);
            for (i, row) in u.chunks_mut(d).enumerate() {
                let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(nrm >= MIN_ROW_NORM) {
                    return Err(Error::DegenerateVector { row: i, norm: nrm });
                }
                row.iter_mut().for_each(|x| *x /= nrm);
                norms.push(nrm);
            }
            Ok((u, norms))
        };
        let (ua, na) = unit(&a, n)?;
        let (ub, nb) = unit(&b, m)?;
        let cos = matmul(MatRef::new(&ua, n, d), MatRef::new(&ub, m, d).t());
        let cd = Rc::new(cos.clone());
        let (ai, bi) = (self.id, other.id);
        let (ar, br) = (self.requires_grad(), other.requires_grad());
        Ok(self.emit(
            &[self, other],
            Value {
                shape: vec![n, m],
                data: cos,
            },
            move |g, acc| {
                let gm = MatRef::new(g, n, m);
                if ar {
                    // dA_i = (G_i . B^ - (sum_j G_ij C_ij) A^_i) / |a_i|
                    let mut t = matmul(gm, MatRef::new(&ub, m, d));
                    let s = acc.slot(ai);
                    for i in 0..n {
                        let w: f64 = (0..m).map(|j| g[i * m + j] * cd[i * m + j]).sum();
                        for k in 0..d {
                            t[i * d + k] -= w * ua[i * d + k];
                            s[i * d + k] += t[i * d + k] / na[i];
                        }
                    }
                }
                if br {
                    let mut t = matmul(gm.t(), MatRef::new(&ua, n, d));
                    let s = acc.slot(bi);
                    for j in 0..m {
                        let w: f64 = (0..n).map(|i| g[i * m + j] * cd[i * m + j]).sum();
                        for k in 0..d {
                            t[j * d + k] -= w * ub[j * d + k];
                            s[j * d + k] += t[j * d + k] / nb[j];
                        }
                    }
                }
            },
        ))
    }

    /// Solves `self * X = rhs`. Backward uses `dB = A^{-T} G`, `dA = -dB X^T`.
    pub fn linear_solve(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = rhs.value();
        let (n, n2) = matrix(&a, "linear_solve")?;
        let (bn, m) = matrix(&b, "linear_solve")?;
        if n != n2 || bn != n {
            return Err(Error::dim(format!(
                "linear_solve: system {:?} with right-hand side {:?}",
                a.shape, b.shape
            )));
        }
        let lu = Lu::factor(&a.data, n)?;
        let x = lu.solve(&b.data, m);
        let xd = Rc::new(x.clone());
        let (ai, bi) = (self.id, rhs.id);
        let (ar, br) = (self.requires_grad(), rhs.requires_grad());
        Ok(self.emit(
            &[self, rhs],
            Value {
                shape: vec![n, m],
                data: x,
            },
            move |g, acc| {
                let db = lu.solve_transpose(g, m);
                if ar {
                    gemm(
                        -1.0,
                        MatRef::new(&db, n, m),
                        MatRef::new(&xd, n, m).t(),
                        1.0,
                        acc.slot(ai),
                    );
                }
                if br {
                    acc.slot(bi).iter_mut().zip(&db).for_each(|(s, v)| *s += v);
                }
            },
        ))
    }

    /// Mean softmax cross-entropy of `self` (N x C logits) against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let z = self.value();
        let (n, c) = matrix(&z, "cross_entropy")?;
        if labels.len() != n {
            return Err(Error::Label(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label(format!("label {bad} outside [0, {c})")));
        }
        let mut probs = z.data.clone();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let labels = labels.to_vec();
        let zi = self.id;
        Ok(self.emit(
            &[self],
            Value {
                shape: vec![1],
                data: vec![loss / n as f64],
            },
            move |g, acc| {
                let s = acc.slot(zi);
                let k = g[0] / n as f64;
                for i in 0..n {
                    for j in 0..c {
                        let t = if j == labels[i] { 1.0 } else { 0.0 };
                        s[i * c + j] += k * (probs[i * c + j] - t);
                    }
                }
            },
        ))
    }

    /// Mean sigmoid cross-entropy of single-logit rows against 0/1 targets.
    pub fn bce_with_logits(self, targets: &[f64]) -> Result<Var<'t>> {
        let z = self.value();
        if z.data.len() != targets.len() {
            return Err(Error::Label(format!(
                "{} targets for {} logits",
                targets.len(),
                z.data.len()
            )));
        }
        if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::Label("binary targets must be 0 or 1".into()));
        }
        let n = targets.len() as f64;
        let loss: f64 = z
            .data
            .iter()
            .zip(targets)
            .map(|(&x, &t)| softplus_f64(x) - t * x)
            .sum();
        let targets = targets.to_vec();
        let zi = self.id;
        Ok(self.emit(
            &[self],
            Value {
                shape: vec![1],
                data: vec![loss / n],
            },
            move |g, acc| {
                let s = acc.slot(zi);
                for i in 0..targets.len() {
                    s[i] += g[0] * (sigmoid_f64(z.data[i]) - targets[i]) / n;
                }
            },
        ))
    }
}

/// `x W + b`, row by row.
pub fn affine<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    x.matmul(w)?.add_row(b)
}

/// Concatenates matrices along `dim` (0 stacks rows, 1 stacks columns).
pub fn concat<'t>(parts: &[Var<'t>], dim: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat: no inputs"))?;
    let vals: Vec<Rc<Value>> = parts.iter().map(Var::value).collect();
    let dims = vals
        .iter()
        .map(|v| matrix(v, "concat"))
        .collect::<Result<Vec<_>>>()?;
    let (r0, c0) = dims[0];
    let (shape, data, offsets) = match dim {
        0 => {
            if dims.iter().any(|&(_, c)| c != c0) {
                return Err(Error::dim("concat(0): column counts differ"));
            }
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let data: Vec<f64> = vals.iter().flat_map(|v| v.data.iter().copied()).collect();
            (vec![rows, c0], data, Vec::new())
        }
        1 => {
            if dims.iter().any(|&(r, _)| r != r0) {
                return Err(Error::dim("concat(1): row counts differ"));
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for (v, &(_, c)) in vals.iter().zip(&dims) {
                    data.extend_from_slice(&v.data[i * c..(i + 1) * c]);
                }
            }
            let mut offsets = Vec::new();
            let mut acc = 0;
            for &(_, c) in &dims {
                offsets.push(acc);
                acc += c;
            }
            (vec![r0, cols], data, offsets)
        }
        _ => return Err(Error::dim(format!("concat: unsupported dim {dim}"))),
    };
    let ids: Vec<(usize, bool)> = parts.iter().map(|p| (p.id, p.requires_grad())).collect();
    let total_cols = shape[1];
    Ok(first.emit(parts, Value { shape, data }, move |g, acc| {
        let mut row_off = 0;
        for (k, &(id, rg)) in ids.iter().enumerate() {
            let (r, c) = dims[k];
            if rg {
                let s = acc.slot(id);
                if dim == 0 {
                    let start = row_off * c;
                    s.iter_mut()
                        .zip(&g[start..start + r * c])
                        .for_each(|(d, &v)| *d += v);
                } else {
                    for i in 0..r {
                        let src = &g[i * total_cols + offsets[k]..i * total_cols + offsets[k] + c];
                        s[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &v)| *d += v);
                    }
                }
            }
            row_off += r;
        }
    }))
}
