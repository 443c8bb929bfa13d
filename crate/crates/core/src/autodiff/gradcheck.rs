use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is zero are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let out = f(tape.leaf(x))?;
    if out.value().data.len() != 1 {
        return Err(Error::dim("grad_check: function must return a scalar"));
    }
    Ok(out.item())
}

/// Largest relative error between the reverse-mode gradient of `f` at `x`
/// and the central difference `(f(x + eps e_k) - f(x - eps e_k)) / 2 eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let mut probe = x.clone();
    probe.requires_grad = true;
    let tape = Tape::new();
    let leaf = tape.leaf(&probe);
    let out = f(leaf)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(leaf)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut worst = 0.0_f64;
    for k in 0..x.numel() {
        let mut plus = probe.clone();
        plus.data_mut()[k] += eps;
        let mut minus = probe.clone();
        minus.data_mut()[k] -= eps;
        let numeric = (eval(&f, &plus)? - eval(&f, &minus)?) / (2.0 * eps);
        let a = analytic[k];
        let denom = a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
