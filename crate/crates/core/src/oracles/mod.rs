//! Brute-force references used to check the optimized code paths.
//!
//! Nothing here calls into the backprop, residual or training code it is
//! used to validate; `gradcheck` ships these so checks can run in the field.

mod dd;

pub use dd::Dd;

use crate::dynamics::{self, LinearField, Method, Trajectory, VectorField};
use crate::error::{check_len, Result};

/// Central differences of `f` at `point`, one coordinate at a time.
///
/// The divisor is the representable step `(x + h) - (x - h)` rather than
/// `2h`, which removes the rounding of `x ± h` from the estimate.
pub fn fd_gradient<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        let hi = orig + h;
        let lo = orig - h;
        x[i] = hi;
        let f_hi = f(&x);
        x[i] = lo;
        let f_lo = f(&x);
        x[i] = orig;
        grad.push((f_hi - f_lo) / (hi - lo));
    }
    grad
}

/// Evaluates a tanh feed-forward net in double-double precision.
///
/// `params` follows the [`FeedForwardNet`](crate::nn::FeedForwardNet)
/// layout: per layer, out x in weights row-major, then the biases.
pub fn mlp_forward_dd(dims: &[usize], params: &[Dd], input: &[f64]) -> Vec<Dd> {
    let input: Vec<Dd> = input.iter().map(|&v| Dd::new(v)).collect();
    mlp_forward_dd_in(dims, params, &input)
}

/// [`mlp_forward_dd`] for an input that is itself double-double.
pub fn mlp_forward_dd_in(dims: &[usize], params: &[Dd], input: &[Dd]) -> Vec<Dd> {
    let mut act = input.to_vec();
    let layers = dims.len().saturating_sub(1);
    let mut off = 0;
    for k in 0..layers {
        let (fan_in, fan_out) = (dims[k], dims[k + 1]);
        let w = &params[off..off + fan_in * fan_out];
        let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        act = (0..fan_out)
            .map(|i| {
                let pre = (0..fan_in).fold(b[i], |s, j| s + w[i * fan_in + j] * act[j]);
                if k + 1 < layers {
                    pre.tanh()
                } else {
                    pre
                }
            })
            .collect();
    }
    act
}

/// Central differences of an objective evaluated in double-double precision,
/// so that only the truncation error of the difference quotient remains.
pub fn fd_gradient_dd<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[Dd]) -> Dd,
{
    let mut theta: Vec<Dd> = point.iter().map(|&v| Dd::new(v)).collect();
    let step = Dd::new(h);
    let width = step + step;
    (0..point.len())
        .map(|i| {
            let orig = theta[i];
            theta[i] = orig + step;
            let f_hi = f(&theta);
            theta[i] = orig - step;
            let f_lo = f(&theta);
            theta[i] = orig;
            ((f_hi - f_lo) / width).to_f64()
        })
        .collect()
}

/// [`fd_gradient_dd`] of `upstream . net(input)` with respect to every parameter.
pub fn mlp_fd_gradient(dims: &[usize], params: &[f64], input: &[f64], upstream: &[f64], h: f64) -> Vec<f64> {
    fd_gradient_dd(
        |theta| {
            mlp_forward_dd(dims, theta, input)
                .iter()
                .zip(upstream)
                .fold(Dd::ZERO, |s, (y, &u)| s + *y * Dd::new(u))
        },
        params,
        h,
    )
}

/// Central-difference Jacobian of a vector map, row `i` = d out_i / d x.
pub fn fd_jacobian<F>(mut f: F, point: &[f64], h: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut x = point.to_vec();
    let mut cols = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        let (hi, lo) = (orig + h, orig - h);
        x[i] = hi;
        let f_hi = f(&x);
        x[i] = lo;
        let f_lo = f(&x);
        x[i] = orig;
        cols.push(
            f_hi.iter()
                .zip(&f_lo)
                .map(|(a, b)| (a - b) / (hi - lo))
                .collect::<Vec<_>>(),
        );
    }
    let rows = cols.first().map_or(0, Vec::len);
    (0..rows)
        .map(|r| cols.iter().map(|c| c[r]).collect())
        .collect()
}

/// `z + dt L z - dt (a ⊙ z)`: the error-corrected Euler map of a linear
/// field, written out directly.
pub fn linear_corrected_map(a: &[f64], z: &[f64], dt: f64, field: &LinearField) -> Result<Vec<f64>> {
    check_len("correction coefficients", z.len(), a.len())?;
    check_len("linear field", field.dim(), z.len())?;
    let lz = field.eval(z);
    Ok((0..z.len())
        .map(|j| z[j] + dt * lz[j] - dt * a[j] * z[j])
        .collect())
}

/// Fine-step RK4 reference, used to bound the error of the Euler ground truth.
pub fn rk4_truth<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    dt_fine: f64,
    t_end: f64,
) -> Result<Trajectory> {
    dynamics::generate_reference(field, x0, dt_fine, t_end, Method::Rk4)
}
