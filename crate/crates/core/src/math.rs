//! Linear regression with mean-squared-error loss.
//!
//! Everything the simulator and the bound need from the model lives here:
//! the parameter vector, per-client shards, loss and gradient, norm clipping,
//! minimum-norm least squares, and the problem constants (strong convexity
//! `mu`, smoothness `lambda`, gradient bound `G`, non-IID degree `Γ`, the
//! global optimum and the initial squared distance `y0`).
//!
//! All reductions run in ascending sample/client order so that repeated
//! evaluations are bit-identical.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum iterations granted to the symmetric eigen-solver.
pub const EIGEN_MAX_ITERATIONS: usize = 10_000;
/// Relative tolerance used when deciding convergence and rank.
pub const EIGEN_TOLERANCE: f64 = 1e-8;

/// Dense model parameters of fixed dimension `p`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "parameter entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    /// Wraps values without the finiteness check. Callers that produce
    /// intermediate results check `is_finite` themselves.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::L1 => self.0.iter().map(|v| v.abs()).sum(),
            NormKind::L2 => self.0.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.norm(NormKind::L2)
    }

    /// `‖self − other‖₂²`.
    pub fn sq_distance(&self, other: &ParamVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::L1 => f.write_str("l1"),
            NormKind::L2 => f.write_str("l2"),
        }
    }
}

/// Norm clipping rule `g / max(1, ‖g‖ / zeta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clip {
    pub zeta: f64,
    pub norm: NormKind,
}

impl Clip {
    pub fn new(zeta: f64, norm: NormKind) -> Result<Self> {
        if !(zeta > 0.0) || !zeta.is_finite() {
            return Err(Error::config(format!(
                "clip threshold must be positive and finite, got {zeta}"
            )));
        }
        Ok(Clip { zeta, norm })
    }

    pub fn apply(&self, g: &ParamVector) -> ParamVector {
        clip_unchecked(g, self.zeta, self.norm)
    }
}

/// Scales `g` down so that its `norm_kind` norm is at most `zeta`.
///
/// The output norm never exceeds `zeta` even after rounding, which makes
/// the operation idempotent bit for bit.
pub fn clip_gradient(g: &ParamVector, zeta: f64, norm_kind: NormKind) -> Result<ParamVector> {
    Clip::new(zeta, norm_kind)?;
    Ok(clip_unchecked(g, zeta, norm_kind))
}

fn clip_unchecked(g: &ParamVector, zeta: f64, norm_kind: NormKind) -> ParamVector {
    let norm = g.norm(norm_kind);
    if norm <= zeta {
        return g.clone();
    }
    let mut divisor = norm / zeta;
    loop {
        let out = ParamVector(g.0.iter().map(|v| v / divisor).collect());
        if out.norm(norm_kind) <= zeta {
            return out;
        }
        divisor = divisor.next_up();
    }
}

/// One client's private data: an `n_l × p` design matrix (row-major, bias
/// column already appended when enabled) and `n_l` targets.
#[derive(Clone, PartialEq)]
pub struct ClientShard {
    client_id: usize,
    dim: usize,
    design: Vec<f64>,
    targets: Vec<f64>,
}

impl ClientShard {
    /// Builds a shard from raw feature rows. With `bias` a constant-1 column
    /// is appended so the model has `d + 1` parameters.
    pub fn new(client_id: usize, rows: &[Vec<f64>], targets: Vec<f64>, bias: bool) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data(format!("client {client_id} has no samples")));
        }
        if rows.len() != targets.len() {
            return Err(Error::Data(format!(
                "client {client_id}: {} feature rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let d = rows[0].len();
        let dim = d + usize::from(bias);
        if dim == 0 {
            return Err(Error::Data("zero-dimensional model".into()));
        }
        let mut design = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            check_dim(d, row.len())?;
            design.extend_from_slice(row);
            if bias {
                design.push(1.0);
            }
        }
        Self::from_design(client_id, dim, design, targets)
    }

    /// Builds a shard from an already-augmented row-major design matrix.
    pub fn from_design(
        client_id: usize,
        dim: usize,
        design: Vec<f64>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Data(format!("client {client_id} has no samples")));
        }
        if dim == 0 || design.len() != dim * targets.len() {
            return Err(Error::Data(format!(
                "client {client_id}: design has {} entries, expected {}×{}",
                design.len(),
                targets.len(),
                dim
            )));
        }
        if design.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("client {client_id} has non-finite data")));
        }
        Ok(ClientShard {
            client_id,
            dim,
            design,
            targets,
        })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    #[cfg(test)]
    pub(crate) fn with_client_id(mut self, client_id: usize) -> Self {
        self.client_id = client_id;
        self
    }

    /// Number of samples `n_l`.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Parameter dimension `p` (feature count plus bias column).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    fn residuals(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        check_dim(self.dim, theta.dim())?;
        Ok(self
            .targets
            .iter()
            .enumerate()
            .map(|(i, y)| dot(self.row(i), theta.as_slice()) - y)
            .collect())
    }

    /// `Σ_i (x_iᵀθ − y_i)²` without the `1/n_l` factor.
    pub fn sum_squared_error(&self, theta: &ParamVector) -> Result<f64> {
        Ok(self.residuals(theta)?.iter().map(|r| r * r).sum())
    }
}

impl fmt::Debug for ClientShard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientShard")
            .field("client_id", &self.client_id)
            .field("samples", &self.len())
            .field("dim", &self.dim)
            .finish()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(1/n_l) Σ_i (x_iᵀθ − y_i)²`
pub fn mse_loss(theta: &ParamVector, shard: &ClientShard) -> Result<f64> {
    Ok(shard.sum_squared_error(theta)? / shard.len() as f64)
}

/// `(2/n_l) Xᵀ(Xθ − y)`, the exact gradient of [`mse_loss`].
pub fn mse_gradient(theta: &ParamVector, shard: &ClientShard) -> Result<ParamVector> {
    let residuals = shard.residuals(theta)?;
    let mut grad = vec![0.0; shard.dim];
    for (i, r) in residuals.iter().enumerate() {
        for (g, x) in grad.iter_mut().zip(shard.row(i)) {
            *g += r * x;
        }
    }
    let scale = 2.0 / shard.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok(ParamVector(grad))
}

/// Minimum-norm least-squares solution of `X θ ≈ y` via SVD, followed by one
/// step of iterative refinement.
pub fn least_squares(design: &[f64], targets: &[f64], dim: usize) -> Result<ParamVector> {
    let n = targets.len();
    let x = DMatrix::from_row_slice(n, dim, design);
    let y = DVector::from_column_slice(targets);
    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = (n.max(dim) as f64) * sigma_max * f64::EPSILON;
    let solve = |rhs: &DVector<f64>| {
        svd.solve(rhs, eps)
            .map_err(|e| Error::Data(format!("least squares failed: {e}")))
    };
    let mut theta = solve(&y)?;
    let residual = &y - &x * &theta;
    theta += solve(&residual)?;
    ParamVector::new(theta.iter().copied().collect())
}

/// Minimum-norm minimiser of a shard's loss and the loss value there (`f_l*`).
pub fn local_optimum(shard: &ClientShard) -> Result<(ParamVector, f64)> {
    let theta = least_squares(&shard.design, &shard.targets, shard.dim)?;
    let loss = mse_loss(&theta, shard)?;
    Ok((theta, loss))
}

/// Whether the strong-convexity / smoothness assumptions hold for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Assumptions {
    Hold,
    Violated(String),
}

/// Closed-form constants of a federated least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConstants {
    /// Smallest eigenvalue of the global Hessian.
    pub mu: f64,
    /// Largest eigenvalue of the global Hessian.
    pub lambda: f64,
    /// Gradient-norm bound `G`.
    pub g_bound: f64,
    /// Non-IID degree `Γ = f* − Σ (n_l/n) f_l*`.
    pub gamma_noniid: f64,
    pub f_star: f64,
    pub theta_star: ParamVector,
    /// `‖θ_0 − θ*‖₂²`
    pub y0: f64,
    pub local_optima: Vec<f64>,
    pub assumptions: Assumptions,
}

impl ProblemConstants {
    pub fn assumptions_hold(&self) -> bool {
        self.assumptions == Assumptions::Hold
    }

    /// Errors unless the constants support a convergence bound.
    pub fn require_assumptions(&self) -> Result<()> {
        match &self.assumptions {
            Assumptions::Hold => Ok(()),
            Assumptions::Violated(why) => Err(Error::AssumptionsViolated(why.clone())),
        }
    }
}

/// Pooled design matrix and targets over all shards in client order.
pub fn pooled(shards: &[ClientShard]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let first = shards
        .first()
        .ok_or_else(|| Error::Data("dataset has no clients".into()))?;
    let dim = first.dim;
    let mut design = Vec::new();
    let mut targets = Vec::new();
    for s in shards {
        check_dim(dim, s.dim)?;
        design.extend_from_slice(&s.design);
        targets.extend_from_slice(&s.targets);
    }
    Ok((design, targets, dim))
}

/// Global Hessian `(2/n) XᵀX` of the pooled loss.
pub fn global_hessian(shards: &[ClientShard]) -> Result<DMatrix<f64>> {
    let (design, targets, dim) = pooled(shards)?;
    let n = targets.len();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        let row = &design[i * dim..(i + 1) * dim];
        for a in 0..dim {
            for b in a..dim {
                h[(a, b)] += row[a] * row[b];
            }
        }
    }
    let scale = 2.0 / n as f64;
    for a in 0..dim {
        for b in a..dim {
            let v = h[(a, b)] * scale;
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    Ok(h)
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn extreme_eigenvalues(h: &DMatrix<f64>) -> Result<(f64, f64)> {
    let eig = SymmetricEigen::try_new(h.clone(), f64::EPSILON, EIGEN_MAX_ITERATIONS).ok_or(
        Error::NonConvergence {
            what: "symmetric eigen-decomposition",
            iterations: EIGEN_MAX_ITERATIONS,
        },
    )?;
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    Ok((min, max))
}

/// Computes `mu`, `lambda`, `Γ`, `f*`, `θ*` and `y0` for a dataset.
///
/// `g_bound` is set to the clipping threshold, which bounds every clipped
/// gradient in L2 (for L1 clipping too, since `‖g‖₂ ≤ ‖g‖₁`). The engine can
/// tighten it with a pilot run.
pub fn problem_constants(
    shards: &[ClientShard],
    theta_0: &ParamVector,
    clip: Clip,
) -> Result<ProblemConstants> {
    let (design, targets, dim) = pooled(shards)?;
    check_dim(dim, theta_0.dim())?;
    let n = targets.len() as f64;

    let hessian = global_hessian(shards)?;
    let (mut mu, lambda) = extreme_eigenvalues(&hessian)?;
    let assumptions = if mu > EIGEN_TOLERANCE * lambda.abs().max(f64::MIN_POSITIVE) {
        Assumptions::Hold
    } else {
        Assumptions::Violated(format!(
            "global Hessian is rank deficient (smallest eigenvalue {mu:e})"
        ))
    };
    // Scaled identity: report exact equality instead of rounding noise.
    if (lambda - mu).abs() <= f64::EPSILON * lambda.abs() * dim as f64 {
        mu = lambda;
    }

    let theta_star = least_squares(&design, &targets, dim)?;
    let sse: f64 = shards
        .iter()
        .map(|s| s.sum_squared_error(&theta_star))
        .sum::<Result<f64>>()?;
    let f_star = sse / n;

    let mut local_optima = Vec::with_capacity(shards.len());
    let mut weighted_local = 0.0;
    for s in shards {
        let (_, f_l) = local_optimum(s)?;
        weighted_local += (s.len() as f64 / n) * f_l;
        local_optima.push(f_l);
    }
    let mut gamma_noniid = f_star - weighted_local;
    // f* is a minimum of the weighted average, so anything within rounding of
    // zero is zero.
    if gamma_noniid <= 1e-12 * (1.0 + f_star) {
        gamma_noniid = 0.0;
    }

    let y0 = theta_0.sq_distance(&theta_star)?;
    Ok(ProblemConstants {
        mu,
        lambda,
        g_bound: clip.zeta,
        gamma_noniid,
        f_star,
        theta_star,
        y0,
        local_optima,
        assumptions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn random_shard(rng: &mut ChaCha8Rng, id: usize, n: usize, d: usize) -> ClientShard {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let targets = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        ClientShard::new(id, &rows, targets, true).unwrap()
    }

    #[test]
    fn rejects_non_finite_parameters() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn shard_rejects_mismatched_rows() {
        let err = ClientShard::new(0, &[vec![1.0], vec![2.0]], vec![1.0], true);
        assert!(err.is_err());
        assert!(ClientShard::new(0, &[], vec![], true).is_err());
    }

    #[test]
    fn loss_matches_hand_summation() {
        // Three samples, no bias, θ = (0.5, -1).
        let rows = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, -2.0]];
        let shard = ClientShard::new(0, &rows, vec![0.25, 1.0, -4.0], false).unwrap();
        let theta = pv(&[0.5, -1.0]);
        let r0: f64 = 0.5 * 1.0 - 2.0 - 0.25;
        let r1: f64 = -0.5 - 0.5 - 1.0;
        let r2: f64 = 1.5 + 2.0 + 4.0;
        let expected = (r0 * r0 + r1 * r1 + r2 * r2) / 3.0;
        assert!((mse_loss(&theta, &shard).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn interpolating_parameters_have_zero_loss() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.0]];
        let theta = pv(&[2.0, -1.0, 0.5]);
        let targets = rows
            .iter()
            .map(|r| 2.0 * r[0] - r[1] + 0.5)
            .collect();
        let shard = ClientShard::new(0, &rows, targets, true).unwrap();
        assert_eq!(mse_loss(&theta, &shard).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let shard = ClientShard::new(0, &[vec![1.0]], vec![1.0], true).unwrap();
        assert!(matches!(
            mse_loss(&pv(&[1.0]), &shard),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
        assert!(mse_gradient(&pv(&[1.0, 2.0, 3.0]), &shard).is_err());
    }

    #[test]
    fn single_sample_gradient() {
        let shard = ClientShard::new(0, &[vec![1.0]], vec![0.0], false).unwrap();
        let g = mse_gradient(&pv(&[1.0]), &shard).unwrap();
        assert_eq!(g.as_slice(), &[2.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for case in 0..100 {
            let n = 1 + case % 7;
            let d = 1 + case % 4;
            let shard = random_shard(&mut rng, 0, n, d);
            let theta: Vec<f64> = (0..=d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = mse_gradient(&pv(&theta), &shard).unwrap();
            for j in 0..=d {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[j] += h;
                minus[j] -= h;
                let fd = (mse_loss(&pv(&plus), &shard).unwrap()
                    - mse_loss(&pv(&minus), &shard).unwrap())
                    / (2.0 * h);
                let scale = g.as_slice()[j].abs().max(1.0);
                assert!(
                    (fd - g[j]).abs() <= 1e-6 * scale,
                    "case {case} coord {j}: fd {fd} vs analytic {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn clip_halves_when_l1_norm_is_twice_threshold() {
        let g = pv(&[100.0, -200.0]);
        let c = clip_gradient(&g, 150.0, NormKind::L1).unwrap();
        assert_eq!(c.as_slice(), &[50.0, -100.0]);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let g = pv(&[3.0, 4.0]);
        assert_eq!(clip_gradient(&g, 150.0, NormKind::L1).unwrap(), g);
    }

    #[test]
    fn clip_rejects_non_positive_threshold() {
        let g = pv(&[1.0]);
        assert!(clip_gradient(&g, 0.0, NormKind::L2).is_err());
        assert!(clip_gradient(&g, -3.0, NormKind::L1).is_err());
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_bounded(
            values in proptest::collection::vec(-1e6f64..1e6, 1..12),
            zeta in 1e-3f64..1e3,
            l2 in any::<bool>(),
        ) {
            let norm = if l2 { NormKind::L2 } else { NormKind::L1 };
            let g = pv(&values);
            let once = clip_gradient(&g, zeta, norm).unwrap();
            let twice = clip_gradient(&once, zeta, norm).unwrap();
            prop_assert!(once.norm(norm) <= zeta);
            prop_assert_eq!(once.as_slice(), twice.as_slice());
            // Direction preserved: once = g / s for a single s ≥ 1.
            let s = g.norm(norm) / once.norm(norm).max(f64::MIN_POSITIVE);
            for (a, b) in g.as_slice().iter().zip(once.as_slice()) {
                prop_assert!((a / s.max(1.0) - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn single_sample_local_optimum() {
        let shard = ClientShard::new(0, &[vec![2.0]], vec![4.0], false).unwrap();
        let (theta, loss) = local_optimum(&shard).unwrap();
        assert!((theta[0] - 2.0).abs() < 1e-12);
        assert!(loss < 1e-24);
    }

    #[test]
    fn affine_targets_are_fit_exactly() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let targets = rows.iter().map(|r| 1.5 * r[0] - 0.3 * r[1] + 2.0).collect();
        let shard = ClientShard::new(0, &rows, targets, true).unwrap();
        let (theta, loss) = local_optimum(&shard).unwrap();
        assert!(loss < 1e-20, "loss {loss}");
        assert!((theta[0] - 1.5).abs() < 1e-9);
        assert!((theta[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn local_optimum_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shard = random_shard(&mut rng, 0, 5, 2);
        let (theta, loss) = local_optimum(&shard).unwrap();
        for _ in 0..100 {
            let delta: Vec<f64> = (0..3).map(|_| rng.random_range(-0.1..0.1)).collect();
            let mut moved = theta.clone();
            moved.add_scaled(1.0, &pv(&delta)).unwrap();
            assert!(mse_loss(&moved, &shard).unwrap() >= loss);
        }
    }

    #[test]
    fn local_optimum_residual_gradient_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..50 {
            // Includes rank-deficient shards with fewer samples than parameters.
            let shard = random_shard(&mut rng, 0, 1 + case % 6, 1 + case % 5);
            let (theta, _) = local_optimum(&shard).unwrap();
            let g = mse_gradient(&theta, &shard).unwrap();
            let y_norm = shard.targets().iter().map(|y| y * y).sum::<f64>().sqrt();
            assert!(g.l2_norm() <= 1e-8 * (1.0 + y_norm), "case {case}: {g:?}");
        }
    }

    #[test]
    fn identical_shards_have_zero_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = random_shard(&mut rng, 0, 8, 3);
        let shards: Vec<ClientShard> = (0..5).map(|i| base.clone().with_client_id(i)).collect();
        let clip = Clip::new(10.0, NormKind::L2).unwrap();
        let c = problem_constants(&shards, &ParamVector::zeros(4), clip).unwrap();
        assert_eq!(c.gamma_noniid, 0.0);
        assert!(c.mu <= c.lambda);
        assert!(c.assumptions_hold());
    }

    #[test]
    fn two_quadratics_gamma() {
        // f_1 = θ², f_2 = (θ − 2)²: pooled optimum θ = 1, f* = 1, f_l* = 0.
        let a = ClientShard::new(0, &[vec![1.0]], vec![0.0], false).unwrap();
        let b = ClientShard::new(1, &[vec![1.0]], vec![2.0], false).unwrap();
        let clip = Clip::new(1.0, NormKind::L2).unwrap();
        let c = problem_constants(&[a, b], &ParamVector::zeros(1), clip).unwrap();
        assert!((c.theta_star[0] - 1.0).abs() < 1e-12);
        assert!((c.f_star - 1.0).abs() < 1e-12);
        assert!((c.gamma_noniid - 1.0).abs() < 1e-12);
        assert!((c.y0 - 1.0).abs() < 1e-12);
        // Hessian (2/n)XᵀX = 2 is a scaled identity.
        assert_eq!(c.mu, c.lambda);
        assert!((c.mu - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_is_nonnegative_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let shards: Vec<ClientShard> =
                (0..4).map(|i| random_shard(&mut rng, i, 6, 2)).collect();
            let clip = Clip::new(5.0, NormKind::L1).unwrap();
            let c = problem_constants(&shards, &ParamVector::zeros(3), clip).unwrap();
            assert!(c.gamma_noniid >= 0.0);
            assert!(c.mu > 0.0 && c.mu < c.lambda);
        }
    }

    #[test]
    fn rank_deficient_hessian_flags_assumptions() {
        // Duplicate feature columns make XᵀX singular.
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, i as f64]).collect();
        let shard = ClientShard::new(0, &rows, vec![1.0; 5], false).unwrap();
        let clip = Clip::new(1.0, NormKind::L2).unwrap();
        let c = problem_constants(&[shard], &ParamVector::zeros(2), clip).unwrap();
        assert!(!c.assumptions_hold());
        assert!(c.require_assumptions().is_err());
    }

    #[test]
    fn hessian_eigenvalues_match_brute_force_in_two_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shard = random_shard(&mut rng, 0, 10, 1);
        let h = global_hessian(std::slice::from_ref(&shard)).unwrap();
        let (a, b, d) = (h[(0, 0)], h[(0, 1)], h[(1, 1)]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        let (lo, hi) = extreme_eigenvalues(&h).unwrap();
        assert!((lo - (mean - rad)).abs() < 1e-10);
        assert!((hi - (mean + rad)).abs() < 1e-10);
    }
}
