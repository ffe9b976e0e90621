//! Plain centralised gradient descent on the weighted global loss, used to
//! certify the federated engine's full-participation, single-step case.

use crate::engine::Schedule;
use crate::error::Result;
use crate::math::{mse_gradient, Clip, ClientShard, ParamVector};

/// Iterates `θ_{k+1} = θ_k − η_k clip(Σ_l (n_l/n) ∇f_l(θ_k))` for `total`
/// steps and returns `θ_1, …, θ_T`. Client gradients are summed in ascending
/// client order.
pub fn centralized_gd_oracle(
    shards: &[ClientShard],
    theta_0: &ParamVector,
    total: u64,
    schedule: &Schedule,
    clip: &Clip,
) -> Result<Vec<ParamVector>> {
    let n: usize = shards.iter().map(|s| s.len()).sum();
    let mut theta = theta_0.clone();
    let mut path = Vec::with_capacity(total as usize);
    for k in 0..total {
        let mut g = ParamVector::zeros(theta.dim());
        for s in shards {
            g.add_scaled(s.len() as f64 / n as f64, &mse_gradient(&theta, s)?)?;
        }
        theta.add_scaled(-schedule.rate(k), &clip.apply(&g))?;
        path.push(theta.clone());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::global_loss;
    use crate::math::NormKind;

    #[test]
    fn one_step_on_a_quadratic() {
        let shard = ClientShard::new(0, &[vec![1.0]], vec![1.0], false).unwrap();
        let clip = Clip::new(1e9, NormKind::L2).unwrap();
        let path = centralized_gd_oracle(&[shard], &ParamVector::zeros(1), 1, &Schedule::Constant { eta: 0.25 }, &clip).unwrap();
        assert_eq!(path[0][0], 0.5);
    }

    #[test]
    fn loss_is_monotone_for_small_steps() {
        let ds = crate::data::synth_regression(3, 20, 3, 0.5, 0.2, 4).unwrap();
        let hessian = crate::math::global_hessian(&ds.shards).unwrap();
        let (_, lambda) = crate::math::extreme_eigenvalues(&hessian).unwrap();
        let clip = Clip::new(1e9, NormKind::L2).unwrap();
        let path = centralized_gd_oracle(&ds.shards, &ParamVector::zeros(4), 100, &Schedule::Constant { eta: 0.9 / lambda }, &clip).unwrap();
        let losses: Vec<f64> = path.iter().map(|t| global_loss(t, &ds.shards).unwrap()).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }
}
