use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use super::tensor::Tensor;

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients against central finite differences on
/// `probes` randomly chosen scalar parameters and returns the worst relative error.
///
/// `forward(values, grads)` must return the scalar loss and, when `grads` is
/// `Some`, accumulate its gradient there. Relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn grad_check<F>(forward: F, params: &ParamSet, probes: usize, seed: u64) -> f64
where
    F: Fn(&[Tensor], Option<&mut [Tensor]>) -> f64,
{
    let mut grads: Vec<Tensor> = params.values().iter().map(|t| Tensor::zeros(t.dims())).collect();
    forward(params.values(), Some(&mut grads));

    let sizes: Vec<usize> = params.values().iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = params.values().to_vec();
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let mut flat = rng.gen_range(0..total);
        let mut tensor = 0;
        while flat >= sizes[tensor] {
            flat -= sizes[tensor];
            tensor += 1;
        }
        let original = values[tensor].values()[flat];
        values[tensor].values_mut()[flat] = original + FD_STEP;
        let up = forward(&values, None);
        values[tensor].values_mut()[flat] = original - FD_STEP;
        let down = forward(&values, None);
        values[tensor].values_mut()[flat] = original;

        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads[tensor].values()[flat];
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;

    #[test]
    fn quadratic_is_exact() {
        let mut p = ParamSet::new();
        let w = p.insert("w", Tensor::scalar(3.0)).unwrap();
        let err = grad_check(
            |values, grads| {
                let mut tape = Tape::new(values);
                let x = tape.param(w);
                let xv = tape.value(x)[0];
                // w^2 via scaled_sum is linear; build it as row_dot(x, x).
                let sq = tape.row_dot(x, x);
                if let Some(g) = grads {
                    tape.backward(sq, 1.0, g);
                }
                let out = tape.scalar(sq);
                debug_assert!((out - xv * xv).abs() < 1e-12);
                out
            },
            &p,
            5,
            0,
        );
        assert!(err <= 1e-8, "relative error {err}");
    }
}
