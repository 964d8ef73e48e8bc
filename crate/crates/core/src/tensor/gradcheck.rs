use super::{Result, Tensor, TensorError};

fn reduce(t: Tensor<f64>) -> Result<Tensor<f64>> {
    if t.len() == 1 {
        Ok(t)
    } else {
        t.sum()
    }
}

/// Compares the tape gradient of `op` at `input` with central differences.
///
/// Non-scalar outputs are reduced by summation. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|)` over all input coordinates.
pub fn finite_diff_check<F>(op: F, input: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    if !(eps > 0.0) {
        return Err(TensorError::InvalidArgument {
            op: "finite_diff_check",
            msg: format!("eps must be positive, got {eps}"),
        });
    }
    let x = Tensor::leaf(input.to_vec(), input.shape(), true)?;
    reduce(op(&x)?)?.backward()?;
    let analytic = x.grad_vec().unwrap_or_else(|| vec![0.0; x.len()]);

    let mut probe = input.to_vec();
    let mut worst = 0.0f64;
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = reduce(op(&Tensor::new(probe.clone(), input.shape())?)?)?.item()?;
        probe[i] = orig - eps;
        let down = reduce(op(&Tensor::new(probe.clone(), input.shape())?)?)?.item()?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(TensorError::NonFinite { op: "finite_diff_check" });
        }
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).unwrap()
    }

    #[test]
    fn linear_map_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[7], -3.0, 3.0);
        let err = finite_diff_check(|x| x.scale(2.5)?.add_scalar(-1.0), &x, 1e-3).unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..20)
            .map(|_| {
                let m = rng.random_range(0.1..2.0);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect();
        let x = Tensor::new(data, &[20]).unwrap();
        let err = finite_diff_check(|x| x.relu(), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let x = Tensor::<f64>::zeros(&[2]).unwrap();
        assert!(finite_diff_check(|x| x.sum(), &x, 0.0).is_err());
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        // log at 1e-7 probed with eps 1e-6 steps into the negative domain.
        let x = Tensor::new(vec![1e-7], &[1]).unwrap();
        assert!(finite_diff_check(|x| x.log(), &x, 1e-6).is_err());
    }

    /// Every primitive over many random draws.
    #[test]
    fn primitives_pass_over_100_seeds() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&mut rng, &[2, 3, 2], 0.2, 2.0);
            let y = random(&mut rng, &[2, 3, 2], 0.2, 2.0);
            let checks: Vec<(&str, f64)> = vec![
                ("add", finite_diff_check(|x| x.add(&y), &x, 1e-6).unwrap()),
                ("sub", finite_diff_check(|x| y.sub(x), &x, 1e-6).unwrap()),
                ("mul", finite_diff_check(|x| x.mul(&y)?.mul(x), &x, 1e-6).unwrap()),
                ("div", finite_diff_check(|x| y.div(x), &x, 1e-6).unwrap()),
                ("scale", finite_diff_check(|x| x.scale(-0.7), &x, 1e-6).unwrap()),
                ("sum", finite_diff_check(|x| x.mul(x)?.sum(), &x, 1e-6).unwrap()),
                ("mean", finite_diff_check(|x| x.mul(&y)?.mean(), &x, 1e-6).unwrap()),
                ("log", finite_diff_check(|x| x.log(), &x, 1e-6).unwrap()),
                ("sigmoid", finite_diff_check(|x| x.add_scalar(-1.0)?.sigmoid(), &x, 1e-6).unwrap()),
                ("relu", finite_diff_check(|x| x.add_scalar(-5.0)?.relu()?.add(&x.relu()?), &x, 1e-6).unwrap()),
                ("concat", finite_diff_check(|x| Tensor::concat(&[x, &y, x], 1)?.mul(&Tensor::concat(&[&y, x, &y], 1)?), &x, 1e-6).unwrap()),
                ("slice", finite_diff_check(|x| x.slice(1, 1, 2)?.mul(&y.slice(1, 0, 2)?), &x, 1e-6).unwrap()),
                ("reshape", finite_diff_check(|x| x.reshape(&[12])?.mul(&y.reshape(&[12])?), &x, 1e-6).unwrap()),
            ];
            for (name, err) in checks {
                assert!(err < 1e-4, "{name} seed {seed}: {err}");
            }
        }
    }
}
