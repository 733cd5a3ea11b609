//! Central finite-difference checks of the analytic gradients.

use crate::cq::{CQParams, GumbelConfig};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::train::{backward_mse, loss_mse_with, Gradients, TokenSample};
use crate::types::{Mode, QuantizerSpec};

/// Base finite-difference step used by [`check_mse_gradients`].
pub const FD_STEP: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// `(L(θ + h e_i) - L(θ - h e_i)) / 2h` for every parameter.
pub fn finite_difference<F>(params: &CQParams, step: f64, loss: F) -> Result<Gradients>
where
    F: Fn(&CQParams) -> Result<f64>,
{
    let mut grads = Gradients::zeros_like(params);
    let mut probe = params.clone();
    for t in 0..grads.tensors.len() {
        for i in 0..grads.tensors[t].len() {
            let orig = params.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + step;
            let up = loss(&probe)?;
            probe.tensors_mut()[t][i] = orig - step;
            let down = loss(&probe)?;
            probe.tensors_mut()[t][i] = orig;
            grads.tensors[t][i] = (up - down) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Richardson-extrapolated central differences, `(4 D(h/2) - D(h)) / 3`.
///
/// Plain central differences carry an `O(h^2)` truncation error that swamps
/// gradient entries near 1e-6 at `h = 1e-3`; the extrapolation cancels it.
pub fn richardson_difference<F>(params: &CQParams, step: f64, loss: F) -> Result<Gradients>
where
    F: Fn(&CQParams) -> Result<f64>,
{
    let coarse = finite_difference(params, step, &loss)?;
    let mut fine = finite_difference(params, step / 2.0, &loss)?;
    for (f, c) in fine.tensors.iter_mut().zip(&coarse.tensors) {
        for (x, &y) in f.iter_mut().zip(c) {
            *x = (4.0 * *x - y) / 3.0;
        }
    }
    Ok(fine)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (tensor index, entry) of the worst entry.
    pub worst: (usize, usize),
}

/// Compare two gradient sets entry by entry.
pub fn compare(analytic: &Gradients, numeric: &Gradients) -> GradCheck {
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    for (t, (a, n)) in analytic.tensors.iter().zip(&numeric.tensors).enumerate() {
        for (i, (&x, &y)) in a.iter().zip(n).enumerate() {
            let e = relative_error(x, y);
            out.checked += 1;
            if e > out.max_rel_error {
                out.max_rel_error = e;
                out.worst = (t, i);
            }
        }
    }
    out
}

/// Check the reconstruction-loss gradients of `model` on `batch` under the noise of `g`.
pub fn check_mse_gradients(model: &CQParams, batch: &[TokenSample], g: &GumbelConfig) -> Result<GradCheck> {
    let (_, analytic) = backward_mse(model, batch, g)?;
    let numeric = richardson_difference(model, FD_STEP, |p| loss_mse_with(p, batch, g))?;
    Ok(compare(&analytic, &numeric))
}

/// A seeded random model and token batch for gradient checking.
pub fn random_instance(seed: u64, mode: Mode, books: usize, codewords: usize, dim: usize) -> Result<(CQParams, Vec<TokenSample>)> {
    let spec = QuantizerSpec::new(mode, books, codewords, dim)?;
    let mut rng = SplitMix64::substream(seed, 0);
    let mut params = CQParams::init(spec, false, rng.next_u64())?;
    // non-zero biases so every code path is exercised
    for t in [1usize, 3, 5] {
        for v in params.tensors_mut()[t].iter_mut() {
            *v = rng.uniform(-0.2, 0.2);
        }
    }
    let batch = (0..4)
        .map(|i| {
            let e_t: Vec<f32> = (0..dim).map(|_| (0.4 * rng.gaussian()) as f32).collect();
            let e_bar: Vec<f32> = (0..dim).map(|_| (0.4 * rng.gaussian()) as f32).collect();
            TokenSample::new(&e_t, &e_bar, i)
        })
        .collect();
    Ok((params, batch))
}

/// Gradient check on a random instance with Gumbel noise on.
pub fn random_gradcheck(seed: u64, mode: Mode, books: usize, codewords: usize, dim: usize) -> Result<GradCheck> {
    let (params, batch) = random_instance(seed, mode, books, codewords, dim)?;
    check_mse_gradients(&params, &batch, &GumbelConfig::training(seed))
}
