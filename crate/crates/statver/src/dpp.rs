//! Diverse batch selection through a k-determinantal point process.
//!
//! Spending M simulations per retrain amortizes the model refresh, but
//! picking the M best-scoring points clusters them: near a score peak the
//! top entries are near-identical parameters carrying near-identical
//! information. The batch sampler instead
//!
//! 1. converts the acquisition scores into a distribution
//!    P_V(θ) = Ṽ(θ|L)/Z_V over the untried pool,
//! 2. draws M_T candidates from P_V without replacement (sequential
//!    renormalized draws), and
//! 3. samples exactly M of them from a k-DPP with kernel
//!    L = diag(q)·S·diag(q), quality q_i = √P_V(θ_i) and similarity
//!    s_ij = exp(−½ Σ_d ((θ_i,d − θ_j,d)/ℓ_d)²) reusing the GP lengthscales.
//!
//! A k-DPP assigns P(S) ∝ det(L_S) to every size-k subset S, which is large
//! when the selected items are high quality *and* mutually dissimilar —
//! duplicate or near-duplicate candidates make det(L_S) collapse, so batches
//! spread across high-value regions instead of piling onto the maximum.
//!
//! Sampling is exact, via the spectral two-phase algorithm: phase one picks
//! an eigenvector subset of size k with probabilities given by elementary
//! symmetric polynomials e_l of the eigenvalues (the recursion
//! e_l(λ₁..λ_n) = e_l(λ₁..λ_{n−1}) + λ_n·e_{l−1}(λ₁..λ_{n−1}), evaluated on
//! eigenvalues normalized by λ_max — a k-DPP is invariant to scaling L);
//! phase two walks that eigenvector basis, drawing one item per step with
//! probability proportional to the squared row norm and deflating the basis
//! against the drawn coordinate.
//!
//! The comparison baselines do not use the DPP: top-M by score for the
//! mean/variance criteria and M uniform draws for random, so each baseline
//! stays what it claims to be.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{self, BatchSettings, LoopSettings};
use crate::kernel::{self, KernelHyperparams};
use crate::sampling::{Lattice, MleSettings, Strategy};
use crate::systems::BenchmarkSystem;
use crate::trace::RunTrace;
use crate::verify::GroundTruthField;
use crate::{Error, Result};

/// Eigenvalues below −1e−8 mean the ensemble matrix was not a valid kernel;
/// anything in (−1e−8, 0) is rounding and clamps to zero.
const EIGENVALUE_TOL: f64 = 1e-8;

/// Batch-mode closed-loop configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    /// Points added per iteration (M).
    pub batch_size: usize,
    /// Candidates drawn from P_V before the k-DPP picks the batch (M_T).
    pub candidate_count: usize,
    /// Closed-loop iterations (T).
    pub iterations: usize,
    /// Initial design size N₀.
    pub n0: usize,
    /// Observation-noise standard deviation ε_y for the GP likelihood.
    pub noise_std: f64,
    pub mle: MleSettings,
    /// Base seed; measurement seeds and the trace echo derive from it.
    pub run_seed: u64,
    /// Whether the terminal satisfaction field is kept in the trace.
    pub save_field: bool,
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config {
                field: "batch_size".into(),
                message: "batches must add at least one point".into(),
            });
        }
        if self.candidate_count < self.batch_size {
            return Err(Error::Config {
                field: "candidate_count".into(),
                message: format!(
                    "candidate count {} is smaller than the batch size {}",
                    self.candidate_count, self.batch_size
                ),
            });
        }
        Ok(())
    }
}

/// Normalizes non-negative acquisition scores into the sampling distribution
/// P_V = scores/ΣZ. All-zero scores (every candidate fully resolved, or the
/// exponential factor underflowing everywhere) degrade to the uniform
/// distribution so the loop keeps moving.
pub fn score_distribution(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot normalize an empty score vector".into(),
        ));
    }
    let mut z = 0.0;
    for &s in scores {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "scores must be finite and non-negative, got {s}"
            )));
        }
        z += s;
    }
    if !z.is_finite() {
        return Err(Error::InvalidArgument(
            "score total overflowed; cannot normalize".into(),
        ));
    }
    if z == 0.0 {
        return Ok(vec![1.0 / scores.len() as f64; scores.len()]);
    }
    Ok(scores.iter().map(|&s| s / z).collect())
}

/// Fenwick (binary indexed) tree over sampling weights: prefix sums and
/// point updates in O(log n), which turns sequential without-replacement
/// draws into O(m_t·log n) instead of rescanning the pool per draw.
struct Fenwick {
    tree: Vec<f64>,
    n: usize,
}

impl Fenwick {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            let pos = i + 1;
            tree[pos] += w;
            let parent = pos + (pos & pos.wrapping_neg());
            if parent <= n {
                let v = tree[pos];
                tree[parent] += v;
            }
        }
        Fenwick { tree, n }
    }

    fn total(&self) -> f64 {
        let mut i = self.n;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    fn add(&mut self, idx: usize, delta: f64) {
        let mut i = idx + 1;
        while i <= self.n {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// First 0-based index whose cumulative weight exceeds `target`
    /// (zero-weight entries can never be returned while target < total).
    fn search(&self, mut target: f64) -> usize {
        let mut pos = 0;
        let mut bit = 1usize;
        while bit << 1 <= self.n {
            bit <<= 1;
        }
        while bit > 0 {
            let next = pos + bit;
            if next <= self.n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            bit >>= 1;
        }
        pos
    }
}

/// Draws `m_t` indices from `p_v` without replacement: each draw is
/// proportional to the remaining weights (renormalization is implicit in
/// drawing u ~ U[0, remaining total)). Asking for at least the whole pool
/// returns every index, still in draw order; once the remaining weight mass
/// is zero, leftover indices are appended in index order.
pub fn draw_candidates<R: Rng + ?Sized>(p_v: &[f64], m_t: usize, rng: &mut R) -> Vec<usize> {
    let n = p_v.len();
    let m = m_t.min(n);
    let mut weights = p_v.to_vec();
    let mut fen = Fenwick::new(&weights);
    let mut drawn = vec![false; n];
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let total = fen.total();
        if !(total > 0.0) {
            // Only zero-weight candidates remain.
            for idx in 0..n {
                if !drawn[idx] {
                    drawn[idx] = true;
                    out.push(idx);
                    if out.len() == m {
                        break;
                    }
                }
            }
            break;
        }
        let u = rng.gen::<f64>() * total;
        let mut idx = fen.search(u);
        if idx >= n || weights[idx] == 0.0 {
            // Accumulated rounding pushed u past the last positive weight.
            idx = (0..n).rev().find(|&i| weights[i] > 0.0).expect("total > 0");
        }
        fen.add(idx, -weights[idx]);
        weights[idx] = 0.0;
        drawn[idx] = true;
        out.push(idx);
    }
    out
}

/// L-ensemble over a candidate set with its eigendecomposition cached.
#[derive(Debug, Clone)]
pub struct DppEnsemble {
    candidate_indices: Vec<usize>,
    l_matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl DppEnsemble {
    /// Validates symmetry (1e−10, relative to the largest entry), distinct
    /// candidate indices, and positive semidefiniteness up to the clamping
    /// tolerance, then caches the eigendecomposition.
    pub fn new(candidate_indices: Vec<usize>, l_matrix: DMatrix<f64>) -> Result<Self> {
        let n = candidate_indices.len();
        if l_matrix.nrows() != n || l_matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "ensemble matrix vs candidate count",
                expected: n,
                got: l_matrix.nrows().max(l_matrix.ncols()),
            });
        }
        if n == 0 {
            return Err(Error::InvalidArgument(
                "an ensemble needs at least one candidate".into(),
            ));
        }
        let mut sorted = candidate_indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "candidate indices must be distinct".into(),
            ));
        }
        let scale = l_matrix.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (l_matrix[(i, j)] - l_matrix[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "ensemble matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        // Work on the symmetrized matrix so the eigensolver sees an exactly
        // symmetric input.
        let sym = (&l_matrix + l_matrix.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut eigenvalues = eig.eigenvalues;
        for v in eigenvalues.iter_mut() {
            if *v < -EIGENVALUE_TOL {
                return Err(Error::InvalidArgument(format!(
                    "ensemble matrix has eigenvalue {v:.3e}; not positive semidefinite"
                )));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(DppEnsemble {
            candidate_indices,
            l_matrix,
            eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn candidate_indices(&self) -> &[usize] {
        &self.candidate_indices
    }

    pub fn l_matrix(&self) -> &DMatrix<f64> {
        &self.l_matrix
    }

    pub fn len(&self) -> usize {
        self.candidate_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidate_indices.is_empty()
    }

    /// Number of eigenvalues carrying usable mass — the largest batch a
    /// k-DPP on this ensemble can support.
    pub fn rank(&self) -> usize {
        let max = self.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
        if max == 0.0 {
            return 0;
        }
        self.eigenvalues.iter().filter(|&&v| v > max * 1e-12).count()
    }
}

/// Builds the quality × similarity ensemble over drawn candidates:
/// `L_ij = √P_V(θ_i) · √P_V(θ_j) · s_ij` with the SE similarity evaluated at
/// the model's current lengthscales (unit signal, so s_ii = 1 and
/// L_ii = P_V(θ_i)).
pub fn build_ensemble(
    candidates: &[usize],
    lattice: &Lattice,
    p_v: &[f64],
    kernel_h: &KernelHyperparams,
) -> Result<DppEnsemble> {
    if candidates.len() != p_v.len() {
        return Err(Error::DimensionMismatch {
            context: "candidates vs quality scores",
            expected: candidates.len(),
            got: p_v.len(),
        });
    }
    for &idx in candidates {
        if idx >= lattice.len() {
            return Err(Error::OutOfBounds {
                index: idx,
                value: idx as f64,
                lo: 0.0,
                hi: (lattice.len() - 1) as f64,
            });
        }
    }
    if p_v.iter().any(|&q| !q.is_finite() || q < 0.0) {
        return Err(Error::InvalidArgument(
            "candidate qualities must be finite and non-negative".into(),
        ));
    }
    kernel_h.validate()?;
    let similarity_h = KernelHyperparams {
        signal_variance: 1.0,
        lengthscales: kernel_h.lengthscales.clone(),
    };
    let n = candidates.len();
    let q: Vec<f64> = p_v.iter().map(|&v| v.sqrt()).collect();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let a = lattice.point(candidates[i]);
        l[(i, i)] = q[i] * q[i];
        for j in (i + 1)..n {
            let b = lattice.point(candidates[j]);
            let s = kernel::eval_unchecked(a, b, &similarity_h);
            let v = q[i] * q[j] * s;
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    DppEnsemble::new(candidates.to_vec(), l)
}

/// Draws one exact k-DPP sample: k distinct entries of the ensemble's
/// candidate set (lattice indices, in selection order).
///
/// If k exceeds the ensemble rank, the batch shrinks to the rank — a warning
/// is logged and the caller tops the batch up by other means.
pub fn sample_k_dpp<R: Rng + ?Sized>(
    ensemble: &DppEnsemble,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = ensemble.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let rank = ensemble.rank();
    let k = if k > rank {
        log::warn!(
            "k-DPP asked for {k} points but the ensemble supports {rank}; batch shrinks"
        );
        rank
    } else {
        k
    };
    if k == 0 {
        return Ok(Vec::new());
    }

    // Phase 1: choose which eigenvectors participate, conditioned on |S| = k.
    // Eigenvalues are normalized by λ_max — a k-DPP is scale-invariant and
    // the elementary symmetric polynomials stay well inside f64 range.
    let lambda_max = ensemble.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let lam: Vec<f64> = ensemble.eigenvalues.iter().map(|&v| v / lambda_max).collect();
    // esp[l][i] = e_l(λ₁..λ_i).
    let mut esp = vec![vec![0.0f64; n + 1]; k + 1];
    esp[0] = vec![1.0; n + 1];
    for l in 1..=k {
        for i in 1..=n {
            esp[l][i] = esp[l][i - 1] + lam[i - 1] * esp[l - 1][i - 1];
        }
    }
    let mut remaining = k;
    let mut chosen_vectors = Vec::with_capacity(k);
    for i in (1..=n).rev() {
        if remaining == 0 {
            break;
        }
        let denom = esp[remaining][i];
        // From the top i eigenvalues we must still place `remaining`; if only
        // exactly the remaining ones can supply mass the choice is forced.
        let p = if denom > 0.0 {
            lam[i - 1] * esp[remaining - 1][i - 1] / denom
        } else {
            1.0
        };
        if rng.gen::<f64>() < p {
            chosen_vectors.push(i - 1);
            remaining -= 1;
        }
    }
    debug_assert_eq!(remaining, 0, "phase 1 must place all k eigenvectors");

    // Phase 2: walk the selected eigenbasis, drawing one item per step with
    // probability ∝ squared row norm, then deflate the basis against the
    // drawn coordinate and re-orthonormalize.
    let mut basis: Vec<DVector<f64>> = chosen_vectors
        .iter()
        .map(|&c| ensemble.eigenvectors.column(c).into_owned())
        .collect();
    let mut items = Vec::with_capacity(k);
    while !basis.is_empty() {
        let mut row_norms = vec![0.0f64; n];
        for col in &basis {
            for (i, &v) in col.iter().enumerate() {
                row_norms[i] += v * v;
            }
        }
        let total: f64 = row_norms.iter().sum();
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut item = n - 1;
        for (i, &w) in row_norms.iter().enumerate() {
            acc += w;
            if acc > u {
                item = i;
                break;
            }
        }
        items.push(item);

        // Deflate: remove the basis column with the largest coordinate at
        // `item`, eliminate that coordinate from the rest, re-orthonormalize.
        let pivot = (0..basis.len())
            .max_by(|&a, &b| basis[a][item].abs().total_cmp(&basis[b][item].abs()))
            .expect("basis is non-empty");
        let pivot_col = basis.remove(pivot);
        let pivot_val = pivot_col[item];
        if pivot_val != 0.0 {
            for col in &mut basis {
                let f = col[item] / pivot_val;
                if f != 0.0 {
                    col.axpy(-f, &pivot_col, 1.0);
                }
            }
        }
        for c in 0..basis.len() {
            for prev in 0..c {
                let proj = basis[prev].dot(&basis[c]);
                let prev_col = basis[prev].clone();
                basis[c].axpy(-proj, &prev_col, 1.0);
            }
            let norm = basis[c].norm();
            if norm > 1e-12 {
                basis[c] /= norm;
            } else {
                // The basis degenerated (should not happen for a PSD
                // ensemble); sample what remains rather than looping.
                log::warn!("k-DPP basis degenerated; batch shrinks by one");
                basis.remove(c);
                break;
            }
        }
    }

    Ok(items
        .into_iter()
        .map(|i| ensemble.candidate_indices[i])
        .collect())
}

/// Batch selection for one loop iteration. Returns exactly `batch_size`
/// distinct available lattice indices.
///
/// The proposed criterion routes through P_V → candidate draw → k-DPP; if a
/// rank-deficient ensemble returns a short batch, the remainder is filled
/// with the highest-P_V unpicked candidates. Baselines take the top scores
/// (mean/variance criteria) or uniform draws (random).
#[allow(clippy::too_many_arguments)]
pub(crate) fn select_batch(
    strategy: Strategy,
    scores: &[f64],
    available: &[usize],
    lattice: &Lattice,
    kernel_h: &KernelHyperparams,
    batch_size: usize,
    candidate_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if available.len() < batch_size {
        return Err(Error::InvalidArgument(format!(
            "batch of {batch_size} requested with only {} available points",
            available.len()
        )));
    }
    match strategy {
        Strategy::Random => {
            let picks = sample_indices(rng, available.len(), batch_size);
            Ok(picks.iter().map(|p| available[p]).collect())
        }
        Strategy::PdfMean | Strategy::PdfVariance => {
            let mut order: Vec<usize> = (0..available.len()).collect();
            order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            Ok(order[..batch_size].iter().map(|&p| available[p]).collect())
        }
        Strategy::CdfVarianceReduction => {
            let p_v = score_distribution(scores)?;
            let cand_pos = draw_candidates(&p_v, candidate_count, rng);
            let candidates: Vec<usize> = cand_pos.iter().map(|&p| available[p]).collect();
            let cand_pv: Vec<f64> = cand_pos.iter().map(|&p| p_v[p]).collect();
            let ensemble = build_ensemble(&candidates, lattice, &cand_pv, kernel_h)?;
            let mut picked = sample_k_dpp(&ensemble, batch_size, rng)?;
            if picked.len() < batch_size {
                // Rank-deficient ensemble: fill from the strongest unpicked
                // candidates, deterministically.
                let mut order: Vec<usize> = (0..candidates.len()).collect();
                order.sort_unstable_by(|&a, &b| {
                    cand_pv[b].total_cmp(&cand_pv[a]).then(a.cmp(&b))
                });
                for pos in order {
                    if picked.len() == batch_size {
                        break;
                    }
                    if !picked.contains(&candidates[pos]) {
                        picked.push(candidates[pos]);
                    }
                }
            }
            Ok(picked)
        }
    }
}

/// Runs the batch closed loop: per iteration, score the pool, draw M_T
/// candidates from P_V, k-DPP-sample M of them, simulate all M, retrain.
/// Baseline strategies replace the selection step as documented on
/// [`select_batch`]. The trace has the same shape as a sequential run with
/// `batch_size` new points per record.
pub fn run_batch(
    config: &BatchConfig,
    strategy: Strategy,
    system: &BenchmarkSystem,
    lattice: &Lattice,
    truth: Option<&GroundTruthField>,
    rng: &mut ChaCha8Rng,
) -> Result<RunTrace> {
    config.validate()?;
    let settings = LoopSettings {
        strategy,
        batch: Some(BatchSettings {
            batch_size: config.batch_size,
            candidate_count: config.candidate_count,
        }),
        n0: config.n0,
        iterations: config.iterations,
        noise_std: config.noise_std,
        mle: config.mle,
        run_seed: config.run_seed,
        truth,
        save_field: config.save_field,
    };
    driver::run_loop(&settings, system, lattice, rng)
}
