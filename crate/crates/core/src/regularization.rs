//! Group-sparsity and sparse-group-Lasso penalties and their proximal maps.
//!
//! For a block `l` with per-neuron groups `theta_l^n` of size `P_l` the penalty is
//!
//! ```text
//! r(theta) = sum_l ( (1 - alpha) * lambda_l * sqrt(P_l) * sum_n ||theta_l^n||_2
//!                    + alpha * lambda_l * ||theta_l||_1 )
//! ```
//!
//! and `alpha = 0` leaves only the group term. The classifier block is never
//! penalized, so a config holds one entry per block *before* the classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, ParamSet};
use crate::tensor::{norm1, norm2, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub per_layer_lambda: Vec<f64>,
    pub alpha: f64,
    pub group_sizes: Vec<usize>,
}

impl RegularizerConfig {
    pub fn new(per_layer_lambda: Vec<f64>, alpha: f64, group_sizes: Vec<usize>) -> Result<Self> {
        let cfg = RegularizerConfig {
            per_layer_lambda,
            alpha,
            group_sizes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// One lambda per regularized block of `net`.
    pub fn for_network(net: &Network, per_layer_lambda: Vec<f64>, alpha: f64) -> Result<Self> {
        let group_sizes = regularized_group_sizes(net);
        if per_layer_lambda.len() != group_sizes.len() {
            return Err(Error::Config(format!(
                "network has {} regularized blocks but {} lambdas were given",
                group_sizes.len(),
                per_layer_lambda.len()
            )));
        }
        Self::new(per_layer_lambda, alpha, group_sizes)
    }

    /// `lambda_first` for the first `prefix` regularized blocks and
    /// `lambda_rest` for the others.
    pub fn two_tier(net: &Network, prefix: usize, lambda_first: f64, lambda_rest: f64, alpha: f64) -> Result<Self> {
        let n = regularized_group_sizes(net).len();
        let lambdas = (0..n).map(|i| if i < prefix { lambda_first } else { lambda_rest }).collect();
        Self::for_network(net, lambdas, alpha)
    }

    /// All lambdas zero.
    pub fn disabled(net: &Network) -> Self {
        let group_sizes = regularized_group_sizes(net);
        RegularizerConfig {
            per_layer_lambda: vec![0.0; group_sizes.len()],
            alpha: 0.0,
            group_sizes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if let Some(l) = self.per_layer_lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
        }
        if self.group_sizes.contains(&0) {
            return Err(Error::Config("group sizes must be >= 1".into()));
        }
        if self.per_layer_lambda.len() != self.group_sizes.len() {
            return Err(Error::Config(format!(
                "{} lambdas for {} group sizes",
                self.per_layer_lambda.len(),
                self.group_sizes.len()
            )));
        }
        Ok(())
    }

    pub fn is_inactive(&self) -> bool {
        self.per_layer_lambda.iter().all(|&l| l == 0.0)
    }

    fn check_params(&self, params: &ParamSet) -> Result<()> {
        self.validate()?;
        let n = self.group_sizes.len();
        if params.blocks.len() != n + 1 {
            return Err(Error::Config(format!(
                "config covers {n} blocks but parameters have {} regularized blocks",
                params.blocks.len().saturating_sub(1)
            )));
        }
        for (l, (groups, &p)) in params.blocks.iter().zip(&self.group_sizes).enumerate() {
            if let Some(g) = groups.iter().find(|g| g.len() != p) {
                return Err(Error::Config(format!("block {l}: group size {} but config says {p}", g.len())));
            }
        }
        Ok(())
    }
}

/// Group sizes of every block except the classifier.
pub fn regularized_group_sizes(net: &Network) -> Vec<usize> {
    let blocks = &net.layout().blocks;
    blocks[..blocks.len() - 1].iter().map(|b| b.group_size()).collect()
}

/// Value of the penalty. Norms sum in ascending flat index order, groups in
/// neuron order, blocks in block order.
pub fn regularizer_value(params: &ParamSet, cfg: &RegularizerConfig) -> Result<f64> {
    cfg.check_params(params)?;
    let mut total = 0.0;
    for (l, groups) in params.blocks[..cfg.group_sizes.len()].iter().enumerate() {
        let lambda = cfg.per_layer_lambda[l];
        let sqrt_p = (cfg.group_sizes[l] as f64).sqrt();
        let mut group_sum = 0.0;
        let mut l1 = 0.0;
        for g in groups {
            let flat = g.to_flat();
            group_sum += norm2(&flat);
            l1 += norm1(&flat);
        }
        total += (1.0 - cfg.alpha) * lambda * sqrt_p * group_sum + cfg.alpha * lambda * l1;
    }
    Ok(total)
}

/// `sign(z) * max(|z| - tau, 0)` on a slice; entries with `|z| <= tau` become
/// exactly `0.0`.
pub fn soft_threshold_slice(z: &[f64], tau: f64) -> Vec<f64> {
    z.iter()
        .map(|&v| if v.abs() <= tau { 0.0 } else { v.signum() * (v.abs() - tau) })
        .collect()
}

pub fn soft_threshold(z: &Tensor, tau: f64) -> Result<Tensor> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::Domain(format!("soft-threshold level must be >= 0, got {tau}")));
    }
    Tensor::new(z.shape().to_vec(), soft_threshold_slice(z.data(), tau))
}

/// Closed-form minimizer of
/// `1/(2t) ||theta - theta_hat||^2 + lambda ((1 - alpha) sqrt(P) ||theta||_2 + alpha ||theta||_1)`.
///
/// With `s = S(theta_hat, t alpha lambda)` and `tau = t (1 - alpha) lambda sqrt(P)`,
/// the result is zero when `||s||_2 <= tau` and `(1 - tau / ||s||_2) s` otherwise.
pub fn prox_group(theta_hat: &[f64], t: f64, lambda: f64, alpha: f64, group_size: usize) -> Result<Vec<f64>> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::Domain(format!("step size must be > 0, got {t}")));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if group_size == 0 {
        return Err(Error::Domain("group size must be >= 1".into()));
    }
    if let Some(v) = theta_hat.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite parameter {v}")));
    }

    let shrunk = soft_threshold_slice(theta_hat, t * alpha * lambda);
    let norm = norm2(&shrunk);
    let tau = t * (1.0 - alpha) * lambda * (group_size as f64).sqrt();
    // Also covers norm == 0, where the scaling factor would be 0/0.
    if norm <= tau {
        return Ok(vec![0.0; theta_hat.len()]);
    }
    let factor = (norm - tau) / norm;
    Ok(shrunk.into_iter().map(|v| factor * v).collect())
}

/// Indices of all-zero groups, one list per regularized block.
pub type KillList = Vec<Vec<usize>>;

/// Applies [`prox_group`] to every group of every regularized block in place.
pub fn prox_all_in_place(params: &mut ParamSet, t: f64, cfg: &RegularizerConfig) -> Result<KillList> {
    cfg.check_params(params)?;
    let n = cfg.group_sizes.len();
    let mut killed = Vec::with_capacity(n);
    for (l, groups) in params.blocks[..n].iter_mut().enumerate() {
        let lambda = cfg.per_layer_lambda[l];
        let mut dead = Vec::new();
        for (i, g) in groups.iter_mut().enumerate() {
            if lambda > 0.0 {
                let updated = prox_group(&g.to_flat(), t, lambda, cfg.alpha, cfg.group_sizes[l])?;
                g.set_flat(&updated)?;
            }
            if g.is_zero() {
                dead.push(i);
            }
        }
        killed.push(dead);
    }
    Ok(killed)
}

pub fn prox_all(params: &ParamSet, t: f64, cfg: &RegularizerConfig) -> Result<(ParamSet, KillList)> {
    let mut out = params.clone();
    let killed = prox_all_in_place(&mut out, t, cfg)?;
    Ok((out, killed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, LossKind, NetworkSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(hidden: &[usize], seed: u64) -> Network {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Dense { neurons: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Classifier { classes: 3 });
        Network::init(NetworkSpec { input_shape: vec![5], layers, loss: LossKind::CrossEntropy }, seed).unwrap()
    }

    #[test]
    fn value_of_zero_params_is_zero() {
        let mut n = net(&[4, 3], 0);
        let mut params = n.params().clone();
        params.scale(0.0);
        n.set_params(params).unwrap();
        let cfg = RegularizerConfig::for_network(&n, vec![1.0, 2.0], 0.5).unwrap();
        assert_eq!(regularizer_value(n.params(), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn value_single_group_substitution() {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::Dense { neurons: 1 }, LayerSpec::Classifier { classes: 1 }],
            loss: LossKind::SquaredError,
        };
        let mut n = Network::init(spec, 0).unwrap();
        n.group_mut(0, 0).set_flat(&[3.0, 4.0, 0.0]).unwrap();
        let cfg = RegularizerConfig::for_network(&n, vec![2.0], 0.0).unwrap();
        assert_eq!(cfg.group_sizes, vec![3]);
        let v = regularizer_value(n.params(), &cfg).unwrap();
        assert!((v - 2.0 * 3f64.sqrt() * 5.0).abs() < 1e-12);
        assert!((v - 17.3205).abs() < 1e-4);
    }

    #[test]
    fn value_matches_scalar_loop() {
        let n = net(&[6, 4], 3);
        let cfg = RegularizerConfig::for_network(&n, vec![0.3, 0.8], 0.5).unwrap();
        let mut expected = 0.0;
        for (l, block) in n.params().blocks[..2].iter().enumerate() {
            let p = block[0].len() as f64;
            let lam = cfg.per_layer_lambda[l];
            for g in block {
                let flat = g.to_flat();
                let mut sq = 0.0;
                let mut abs = 0.0;
                for v in &flat {
                    sq += v * v;
                    abs += v.abs();
                }
                expected += 0.5 * lam * p.sqrt() * sq.sqrt() + 0.5 * lam * abs;
            }
        }
        let got = regularizer_value(n.params(), &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn alpha_zero_is_pure_group_penalty_bitwise() {
        let n = net(&[6, 4], 4);
        let cfg = RegularizerConfig::for_network(&n, vec![0.3, 0.8], 0.0).unwrap();
        let mut direct = 0.0;
        for (l, block) in n.params().blocks[..2].iter().enumerate() {
            let mut s = 0.0;
            for g in block {
                s += norm2(&g.to_flat());
            }
            direct += cfg.per_layer_lambda[l] * (cfg.group_sizes[l] as f64).sqrt() * s;
        }
        assert_eq!(regularizer_value(n.params(), &cfg).unwrap().to_bits(), direct.to_bits());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let n = net(&[6, 4], 4);
        let bad = RegularizerConfig::new(vec![0.1], 0.0, vec![6]).unwrap();
        assert!(matches!(regularizer_value(n.params(), &bad), Err(Error::Config(_))));
        assert!(RegularizerConfig::for_network(&n, vec![0.1], 0.0).is_err());
        assert!(RegularizerConfig::new(vec![0.1], 1.5, vec![6]).is_err());
        assert!(RegularizerConfig::new(vec![-0.1], 0.5, vec![6]).is_err());
    }

    #[test]
    fn soft_threshold_examples() {
        let z = Tensor::vector(vec![3.0, -0.5, -2.0]).unwrap();
        assert_eq!(soft_threshold(&z, 1.0).unwrap().data(), &[2.0, 0.0, -1.0]);
        assert_eq!(soft_threshold(&z, 0.0).unwrap(), z);
        assert!(matches!(soft_threshold(&z, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn soft_threshold_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = (0..32).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = soft_threshold(&Tensor::vector(z.clone()).unwrap(), 0.7).unwrap();
        for (g, v) in got.data().iter().zip(&z) {
            let expected = if *v > 0.7 {
                v - 0.7
            } else if *v < -0.7 {
                v + 0.7
            } else {
                0.0
            };
            assert_eq!(*g, expected);
        }
    }

    #[test]
    fn prox_group_examples() {
        assert_eq!(prox_group(&[0.0; 4], 0.5, 1.0, 0.3, 4).unwrap(), vec![0.0; 4]);
        // ||theta|| = 1 and t * lambda * sqrt(P) = 2
        let unit = [0.6, 0.8, 0.0, 0.0];
        assert_eq!(prox_group(&unit, 1.0, 1.0, 0.0, 4).unwrap(), vec![0.0; 4]);
        // t * lambda * sqrt(P) = 2.5 with P = 4: t = 1.25, lambda = 1
        let got = prox_group(&[3.0, 4.0], 1.25, 1.0, 0.0, 4).unwrap();
        assert_eq!(got, vec![1.5, 2.0]);
    }

    #[test]
    fn prox_group_rejects_bad_step() {
        assert!(matches!(prox_group(&[1.0], 0.0, 1.0, 0.0, 1), Err(Error::Domain(_))));
        assert!(matches!(prox_group(&[1.0], -1.0, 1.0, 0.0, 1), Err(Error::Domain(_))));
        assert!(prox_group(&[f64::NAN], 1.0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn zero_lambda_prox_is_identity() {
        let n = net(&[6, 4], 8);
        let cfg = RegularizerConfig::disabled(&n);
        let (out, killed) = prox_all(n.params(), 0.1, &cfg).unwrap();
        assert_eq!(&out, n.params());
        assert!(killed.iter().all(Vec::is_empty));
    }

    #[test]
    fn large_lambda_kills_small_block() {
        let mut n = net(&[6, 4], 8);
        let mut params = n.params().clone();
        for g in &mut params.blocks[0] {
            let tiny: Vec<f64> = g.to_flat().iter().map(|v| v * 1e-3).collect();
            g.set_flat(&tiny).unwrap();
        }
        n.set_params(params).unwrap();
        let cfg = RegularizerConfig::for_network(&n, vec![10.0, 0.0], 0.0).unwrap();
        let (out, killed) = prox_all(n.params(), 0.1, &cfg).unwrap();
        assert_eq!(killed[0], (0..6).collect::<Vec<_>>());
        assert!(killed[1].is_empty());
        assert!(out.blocks[0].iter().all(|g| g.is_zero()));
        assert_eq!(out.blocks[2], n.params().blocks[2]);
    }

    #[test]
    fn prox_all_is_separable() {
        let n = {
            let mut layers = Vec::new();
            for h in [7, 5, 4] {
                layers.push(LayerSpec::Dense { neurons: h });
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::Classifier { classes: 2 });
            Network::init(NetworkSpec { input_shape: vec![3], layers, loss: LossKind::CrossEntropy }, 21).unwrap()
        };
        let cfg = RegularizerConfig::for_network(&n, vec![0.4, 0.9, 1.7], 0.25).unwrap();
        let (out, _) = prox_all(n.params(), 0.3, &cfg).unwrap();
        for l in 0..3 {
            for (a, b) in n.params().blocks[l].iter().zip(&out.blocks[l]) {
                let alone = prox_group(&a.to_flat(), 0.3, cfg.per_layer_lambda[l], 0.25, cfg.group_sizes[l]).unwrap();
                let got = b.to_flat();
                assert!(alone.iter().zip(&got).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    fn group_strategy() -> impl Strategy<Value = (Vec<f64>, f64, f64, f64)> {
        (
            prop::collection::vec(-3.0f64..3.0, 1..=8),
            0.01f64..2.0,
            0.0f64..3.0,
            prop::sample::select(vec![0.0, 0.25, 0.5, 1.0]),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn kill_iff_norm_below_threshold_alpha_zero((theta, t, lambda, _) in group_strategy()) {
            let p = theta.len();
            let out = prox_group(&theta, t, lambda, 0.0, p).unwrap();
            let killed = out.iter().all(|&v| v == 0.0);
            prop_assert_eq!(killed, norm2(&theta) <= t * lambda * (p as f64).sqrt());
        }

        #[test]
        fn kill_iff_shrunk_norm_below_threshold((theta, t, lambda, alpha) in group_strategy()) {
            let p = theta.len();
            let out = prox_group(&theta, t, lambda, alpha, p).unwrap();
            let killed = out.iter().all(|&v| v == 0.0);
            let shrunk = soft_threshold_slice(&theta, t * alpha * lambda);
            prop_assert_eq!(killed, norm2(&shrunk) <= t * (1.0 - alpha) * lambda * (p as f64).sqrt());
        }
    }

    proptest! {
        #[test]
        fn prox_is_non_expansive(
            (a, t, lambda, alpha) in group_strategy(),
            noise in prop::collection::vec(-1.0f64..1.0, 8),
        ) {
            let p = a.len();
            let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
            let pa = prox_group(&a, t, lambda, alpha, p).unwrap();
            let pb = prox_group(&b, t, lambda, alpha, p).unwrap();
            let d_out: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
            let d_in: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            prop_assert!(norm2(&d_out) <= norm2(&d_in) * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn prox_does_not_increase_penalised_distance((theta_hat, t, lambda, alpha) in group_strategy()) {
            // theta_hat itself is feasible for the subproblem
            let p = theta_hat.len();
            let out = prox_group(&theta_hat, t, lambda, alpha, p).unwrap();
            let pen = |v: &[f64]| lambda * ((1.0 - alpha) * (p as f64).sqrt() * norm2(v) + alpha * norm1(v));
            let dist: f64 = out.iter().zip(&theta_hat).map(|(x, y)| (x - y) * (x - y)).sum();
            prop_assert!(pen(&out) + dist / (2.0 * t) <= pen(&theta_hat) + 1e-12);
        }
    }
}
