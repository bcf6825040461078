//! Exact analysis of absorbing discrete-time Markov chains.
//!
//! The canonical form of an absorbing chain groups the transient states
//! first:
//!
//! ```text
//! P = | Q  R  |
//!     | 0  I  |
//! ```
//!
//! From the transient block `Q` the fundamental matrix `N = (I - Q)^-1`
//! gives expected visit counts, `N * 1` the expected number of steps to
//! absorption and `N * R` the absorption probabilities.
//!
//! The sequential pipeline chain (every transient stage retries with
//! probability `1 - delta` and advances with probability `delta`) is built by
//! [`build_pipeline_chain`], but every routine accepts arbitrary absorbing
//! chains.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_probability, Error, Result};

/// Row sums must equal one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Transitions at or below this probability are treated as absent when
/// checking reachability.
pub const REACHABILITY_EPSILON: f64 = 1e-15;
/// `I - Q` with a condition estimate above this is rejected as singular. The
/// estimate is `max(||I - Q||, ||Q||) * ||N||` in the infinity norm.
pub const MAX_CONDITION: f64 = 1e12;
/// Norm used for the tail-bound constant.
pub const ALPHA_NORM: &str = "infinity";

/// Parameters of the sequential pipeline chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineSpec {
    pub delta: f64,
    pub stages: usize,
}

impl PipelineSpec {
    pub fn new(delta: f64, stages: usize) -> Result<Self> {
        check_probability("delta", delta)?;
        if stages == 0 {
            return Err(Error::InvalidParameter("stages must be at least 1".into()));
        }
        Ok(Self { delta, stages })
    }

    /// The four-stage pipeline used throughout the experiments.
    pub fn four_stage(delta: f64) -> Result<Self> {
        Self::new(delta, 4)
    }
}

/// A validated row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    entries: DMatrix<f64>,
    absorbing: Vec<usize>,
}

impl StochasticMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::NotStochastic(format!(
                "expected a non-empty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let p = entries[(i, j)];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::NotStochastic(format!(
                        "entry ({i}, {j}) = {p} is outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::NotStochastic(format!("row {i} sums to {sum}")));
            }
        }
        let absorbing = (0..n)
            .filter(|&i| (entries[(i, i)] - 1.0).abs() <= ROW_SUM_TOLERANCE)
            .collect();
        Ok(Self { entries, absorbing })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::NotStochastic(
                "rows have inconsistent lengths".into(),
            ));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Indices of states whose row is the unit vector on the diagonal.
    pub fn absorbing_states(&self) -> &[usize] {
        &self.absorbing
    }
}

/// `P` split into its transient-to-transient block `Q` and transient-to-absorbing
/// block `R`, with the original state indices kept in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalDecomposition {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub transient_order: Vec<usize>,
    pub absorbing_order: Vec<usize>,
}

impl CanonicalDecomposition {
    pub fn transient_count(&self) -> usize {
        self.transient_order.len()
    }

    pub fn absorbing_count(&self) -> usize {
        self.absorbing_order.len()
    }
}

/// Exact absorption quantities derived from the fundamental matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainAnalysis {
    /// `N = (I - Q)^-1`.
    pub fundamental: DMatrix<f64>,
    /// `N * 1`, expected steps to absorption from each transient state.
    pub expected_steps: DVector<f64>,
    /// `N * R`, probability of ending in each absorbing state.
    pub absorption_probs: DMatrix<f64>,
    pub spectral_radius: f64,
    /// Infinity norm of `N` (see [`ALPHA_NORM`]).
    pub alpha: f64,
    pub transient_block: DMatrix<f64>,
}

impl ChainAnalysis {
    /// Exact `P(tau > k)` starting from transient position `start`, i.e. the
    /// `start`-th entry of `Q^k * 1`.
    pub fn exact_survival(&self, start: usize, k: u64) -> f64 {
        let t = self.transient_block.nrows();
        let mut v = DVector::from_element(t, 1.0);
        for _ in 0..k {
            v = &self.transient_block * v;
        }
        v[start]
    }
}

/// Builds the `(stages + 1)`-state sequential chain: transient stage `i`
/// stays with probability `1 - delta` and advances with probability `delta`;
/// the last state absorbs.
pub fn build_pipeline_chain(spec: PipelineSpec) -> Result<StochasticMatrix> {
    let spec = PipelineSpec::new(spec.delta, spec.stages)?;
    let n = spec.stages + 1;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..spec.stages {
        m[(i, i)] = 1.0 - spec.delta;
        m[(i, i + 1)] = spec.delta;
    }
    m[(n - 1, n - 1)] = 1.0;
    StochasticMatrix::new(m)
}

/// Extracts `Q` and `R` after checking that every transient state can reach
/// an absorbing state.
///
/// A chain made only of absorbing states yields an empty decomposition
/// (`t = 0`); [`analyze`] rejects it.
pub fn decompose(p: &StochasticMatrix) -> Result<CanonicalDecomposition> {
    let n = p.n();
    let absorbing_order = p.absorbing_states().to_vec();
    if absorbing_order.is_empty() {
        return Err(Error::NotAbsorbing("no absorbing state".into()));
    }
    let transient_order: Vec<usize> = (0..n).filter(|i| !absorbing_order.contains(i)).collect();

    // Reverse BFS from the absorbing set over edges with positive probability.
    let mut reaches = vec![false; n];
    let mut queue: VecDeque<usize> = absorbing_order.iter().copied().collect();
    for &a in &absorbing_order {
        reaches[a] = true;
    }
    while let Some(j) = queue.pop_front() {
        for (i, reached) in reaches.iter_mut().enumerate() {
            if !*reached && p.get(i, j) > REACHABILITY_EPSILON {
                *reached = true;
                queue.push_back(i);
            }
        }
    }
    if let Some(stuck) = transient_order.iter().find(|&&i| !reaches[i]) {
        return Err(Error::NotAbsorbing(format!(
            "state {stuck} cannot reach an absorbing state"
        )));
    }

    let t = transient_order.len();
    let r = absorbing_order.len();
    let q = DMatrix::from_fn(t, t, |i, j| p.get(transient_order[i], transient_order[j]));
    let rb = DMatrix::from_fn(t, r, |i, j| p.get(transient_order[i], absorbing_order[j]));
    Ok(CanonicalDecomposition {
        q,
        r: rb,
        transient_order,
        absorbing_order,
    })
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Computes `N`, `N * 1`, `N * R`, the spectral radius of `Q` and the
/// tail-bound constant.
pub fn analyze(decomp: &CanonicalDecomposition) -> Result<ChainAnalysis> {
    let t = decomp.transient_count();
    if t == 0 {
        return Err(Error::NoTransientStates);
    }
    let i_minus_q = DMatrix::identity(t, t) - &decomp.q;
    let mut fundamental = i_minus_q
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularMatrix {
            condition: f64::INFINITY,
        })?;
    // Perturbations enter through the entries of Q, so scale by the larger of
    // ||I - Q|| and ||Q||.
    let condition = inf_norm(&i_minus_q).max(inf_norm(&decomp.q)) * inf_norm(&fundamental);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularMatrix { condition });
    }
    // N = sum of Q^k is nonnegative; negative entries are rounding residue.
    fundamental.apply(|x| *x = x.max(0.0));
    let expected_steps = &fundamental * DVector::from_element(t, 1.0);
    let absorption_probs = &fundamental * &decomp.r;
    let alpha = inf_norm(&fundamental);
    Ok(ChainAnalysis {
        spectral_radius: spectral_radius(&decomp.q),
        alpha,
        fundamental,
        expected_steps,
        absorption_probs,
        transient_block: decomp.q.clone(),
    })
}

/// Convenience wrapper: build, decompose and analyze the pipeline chain.
pub fn analyze_pipeline(spec: PipelineSpec) -> Result<ChainAnalysis> {
    analyze(&decompose(&build_pipeline_chain(spec)?)?)
}

fn is_upper_triangular(q: &DMatrix<f64>) -> bool {
    (0..q.nrows()).all(|i| (0..i.min(q.ncols())).all(|j| q[(i, j)] == 0.0))
}

/// Largest eigenvalue magnitude of `q`.
///
/// Triangular matrices use the diagonal directly; anything else goes through
/// [`power_iteration_radius`].
pub fn spectral_radius(q: &DMatrix<f64>) -> f64 {
    if q.is_empty() {
        return 0.0;
    }
    if is_upper_triangular(q) {
        q.diagonal().iter().map(|x| x.abs()).fold(0.0, f64::max)
    } else {
        power_iteration_radius(q)
    }
}

/// Spectral radius by power iteration.
///
/// For a nonnegative matrix the radius is the maximum Perron root over its
/// strongly connected blocks. Each block `B` is iterated as `I + B`, which is
/// primitive, and the Collatz-Wielandt ratios `min/max (Ax)_i / x_i`
/// bracket `rho + 1` until they agree to 1e-13. Matrices with negative
/// entries fall back to a Schur eigenvalue solve.
pub fn power_iteration_radius(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    if n == 0 {
        return 0.0;
    }
    if q.iter().any(|&x| x < 0.0) {
        return q
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    }

    let mut reach = DMatrix::from_fn(n, n, |i, j| i == j || q[(i, j)] > 0.0);
    for k in 0..n {
        for i in 0..n {
            if reach[(i, k)] {
                for j in 0..n {
                    if reach[(k, j)] {
                        reach[(i, j)] = true;
                    }
                }
            }
        }
    }
    let mut assigned = vec![false; n];
    let mut radius: f64 = 0.0;
    for root in 0..n {
        if assigned[root] {
            continue;
        }
        let block: Vec<usize> = (0..n)
            .filter(|&j| reach[(root, j)] && reach[(j, root)])
            .collect();
        for &j in &block {
            assigned[j] = true;
        }
        let b = DMatrix::from_fn(block.len(), block.len(), |i, j| q[(block[i], block[j])]);
        radius = radius.max(perron_root(&b));
    }
    radius
}

fn perron_root(b: &DMatrix<f64>) -> f64 {
    const TOL: f64 = 1e-13;
    const MAX_ITER: usize = 1_000_000;
    let m = b.nrows();
    let a = DMatrix::identity(m, m) + b;
    let mut x = DVector::from_element(m, 1.0);
    let mut estimate = 1.0;
    for _ in 0..MAX_ITER {
        let y = &a * &x;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..m {
            let ratio = y[i] / x[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        estimate = 0.5 * (lo + hi);
        if hi - lo < TOL {
            break;
        }
        let scale = y.max();
        x = y / scale;
    }
    (estimate - 1.0).max(0.0)
}

/// `min(1, alpha * lambda^k)`: the exponential tail envelope.
///
/// For the pipeline chain `Q` is a single Jordan block, so the true
/// survival carries a polynomial factor in `k` and eventually exceeds this
/// envelope for any fixed `alpha`. Use [`ChainAnalysis::exact_survival`]
/// when a certified value is needed.
pub fn tail_bound(analysis: &ChainAnalysis, k: u64) -> f64 {
    let exp = i32::try_from(k).unwrap_or(i32::MAX);
    (analysis.alpha * analysis.spectral_radius.powi(exp)).min(1.0)
}

/// Closed form `stages / delta` for the expected number of attempts from the
/// first stage.
pub fn exact_expected_steps_closed_form(spec: PipelineSpec) -> f64 {
    spec.stages as f64 / spec.delta
}

/// `(stages - (stages - 1) delta) / delta`: the expected count when only
/// failed attempts plus the single final success are counted. Equals
/// `(4 - 3 delta) / delta` for four stages.
pub fn failures_convention_expected_steps(spec: PipelineSpec) -> f64 {
    let s = spec.stages as f64;
    (s - (s - 1.0) * spec.delta) / spec.delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pipeline(delta: f64, stages: usize) -> StochasticMatrix {
        build_pipeline_chain(PipelineSpec::new(delta, stages).unwrap()).unwrap()
    }

    #[test]
    fn pipeline_rows() {
        let p = pipeline(0.5, 4);
        let row0: Vec<f64> = p.entries().row(0).iter().copied().collect();
        assert_eq!(row0, vec![0.5, 0.5, 0.0, 0.0, 0.0]);
        let row4: Vec<f64> = p.entries().row(4).iter().copied().collect();
        assert_eq!(row4, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.absorbing_states(), &[4]);
    }

    #[test]
    fn deterministic_pipeline_is_superdiagonal() {
        let p = pipeline(1.0, 4);
        for i in 0..4 {
            for j in 0..5 {
                assert_eq!(p.get(i, j), if j == i + 1 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn single_stage_chain() {
        let p = pipeline(0.3, 1);
        assert_eq!(p.n(), 2);
        assert_relative_eq!(p.get(0, 0), 0.7);
        assert_eq!(p.get(0, 1), 0.3);
        assert_eq!(p.get(1, 0), 0.0);
        assert_eq!(p.get(1, 1), 1.0);
    }

    #[test]
    fn rejects_bad_pipeline_params() {
        assert!(PipelineSpec::new(0.0, 4).is_err());
        assert!(PipelineSpec::new(1.2, 4).is_err());
        assert!(PipelineSpec::new(f64::NAN, 4).is_err());
        assert!(PipelineSpec::new(0.5, 0).is_err());
        let bad = PipelineSpec {
            delta: -0.1,
            stages: 4,
        };
        assert!(build_pipeline_chain(bad).is_err());
    }

    #[test]
    fn rejects_non_stochastic() {
        assert!(StochasticMatrix::from_rows(&[vec![0.5, 0.4], vec![0.0, 1.0]]).is_err());
        assert!(StochasticMatrix::from_rows(&[vec![1.5, -0.5], vec![0.0, 1.0]]).is_err());
        assert!(StochasticMatrix::from_rows(&[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn decompose_pipeline() {
        let d = decompose(&pipeline(0.5, 4)).unwrap();
        assert_eq!(d.transient_order, vec![0, 1, 2, 3]);
        assert_eq!(d.absorbing_order, vec![4]);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j || j == i + 1 { 0.5 } else { 0.0 };
                assert_eq!(d.q[(i, j)], expected);
            }
        }
        assert_eq!(d.r.shape(), (4, 1));
        assert_eq!(d.r.as_slice(), &[0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn absorbing_only_chain_is_empty_and_unanalyzable() {
        let p = StochasticMatrix::from_rows(&[vec![1.0]]).unwrap();
        let d = decompose(&p).unwrap();
        assert_eq!(d.transient_count(), 0);
        assert!(matches!(analyze(&d), Err(Error::NoTransientStates)));
    }

    #[test]
    fn unreachable_absorption_is_rejected() {
        let p = StochasticMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(matches!(decompose(&p), Err(Error::NotAbsorbing(_))));

        let no_absorbing = StochasticMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            decompose(&no_absorbing),
            Err(Error::NotAbsorbing(_))
        ));
    }

    #[test]
    fn expected_steps_examples() {
        let a = analyze_pipeline(PipelineSpec::four_stage(0.5).unwrap()).unwrap();
        assert_relative_eq!(a.expected_steps[0], 8.0, max_relative = 1e-12);
        let a = analyze_pipeline(PipelineSpec::four_stage(0.1).unwrap()).unwrap();
        assert_relative_eq!(a.expected_steps[0], 40.0, max_relative = 1e-12);
    }

    #[test]
    fn deterministic_chain_analysis() {
        let a = analyze_pipeline(PipelineSpec::four_stage(1.0).unwrap()).unwrap();
        assert_eq!(a.expected_steps.as_slice(), &[4.0, 3.0, 2.0, 1.0]);
        assert!(a.absorption_probs.iter().all(|&b| b == 1.0));
        assert_eq!(a.spectral_radius, 0.0);
    }

    #[test]
    fn spectral_radius_is_one_minus_delta() {
        let a = analyze_pipeline(PipelineSpec::four_stage(0.3).unwrap()).unwrap();
        assert_relative_eq!(a.spectral_radius, 0.7, max_relative = 1e-15);
        let d = decompose(&pipeline(0.2, 4)).unwrap();
        assert_relative_eq!(spectral_radius(&d.q), 0.8, max_relative = 1e-15);
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn general_two_by_two_radius_matches_analytic_eigenvalue() {
        // Eigenvalues of [[a, b], [c, a]] are a +- sqrt(b c).
        let oracle = 0.5 + (0.4_f64 * 0.3).sqrt();
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.3, 0.5]);
        let got = spectral_radius(&q);
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
        assert!((got - 0.84641).abs() < 1e-5);
    }

    #[test]
    fn periodic_block_radius() {
        // Eigenvalues +-0.5; plain power iteration would oscillate.
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert!((power_iteration_radius(&q) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn singular_transient_block_is_rejected() {
        let d = CanonicalDecomposition {
            q: DMatrix::from_row_slice(1, 1, &[1.0]),
            r: DMatrix::zeros(1, 1),
            transient_order: vec![0],
            absorbing_order: vec![1],
        };
        assert!(matches!(analyze(&d), Err(Error::SingularMatrix { .. })));
        let nearly = CanonicalDecomposition {
            q: DMatrix::from_row_slice(1, 1, &[1.0 - 1e-14]),
            r: DMatrix::from_row_slice(1, 1, &[1e-14]),
            transient_order: vec![0],
            absorbing_order: vec![1],
        };
        assert!(matches!(
            analyze(&nearly),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn fundamental_matrix_invariants() {
        let a = analyze_pipeline(PipelineSpec::four_stage(0.35).unwrap()).unwrap();
        let t = a.fundamental.nrows();
        let prod = (DMatrix::identity(t, t) - &a.transient_block) * &a.fundamental;
        for i in 0..t {
            for j in 0..t {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - id).abs() < 1e-10);
                assert!(a.fundamental[(i, j)] >= 0.0);
            }
            let row_sum: f64 = a.fundamental.row(i).sum();
            assert!((a.expected_steps[i] - row_sum).abs() < 1e-10);
        }
        // alpha = max row sum of N = stages / delta for the pipeline.
        assert_relative_eq!(a.alpha, 4.0 / 0.35, max_relative = 1e-12);
    }

    #[test]
    fn tail_bound_examples() {
        let a = analyze_pipeline(PipelineSpec::four_stage(0.5).unwrap()).unwrap();
        assert_eq!(tail_bound(&a, 0), 1.0);
        assert_relative_eq!(
            tail_bound(&a, 40),
            8.0 * 0.5_f64.powi(40),
            max_relative = 1e-12
        );

        let a = analyze_pipeline(PipelineSpec::four_stage(0.9).unwrap()).unwrap();
        for k in 10..20 {
            let ratio = tail_bound(&a, k + 1) / tail_bound(&a, k);
            assert_relative_eq!(ratio, 0.1, max_relative = 1e-9);
        }
    }

    #[test]
    fn exact_survival_matches_binomial_count() {
        // P(tau > k) = P(fewer than 4 successes in k attempts).
        let a = analyze_pipeline(PipelineSpec::four_stage(0.5).unwrap()).unwrap();
        let k = 10u64;
        let oracle = (1.0 + 10.0 + 45.0 + 120.0) / 1024.0;
        assert_relative_eq!(a.exact_survival(0, k), oracle, max_relative = 1e-12);
        // The envelope with the fixed constant under-covers here.
        assert!(tail_bound(&a, k) < a.exact_survival(0, k));
    }

    #[test]
    fn closed_forms() {
        let s = |d| PipelineSpec::four_stage(d).unwrap();
        assert_relative_eq!(exact_expected_steps_closed_form(s(0.3)), 40.0 / 3.0);
        assert_relative_eq!(exact_expected_steps_closed_form(s(0.8)), 5.0);
        assert_eq!(exact_expected_steps_closed_form(s(1.0)), 4.0);
        assert_relative_eq!(failures_convention_expected_steps(s(0.5)), 5.0);
        assert_relative_eq!(
            failures_convention_expected_steps(s(0.2)),
            (4.0 - 0.6) / 0.2
        );
    }
}
