//! Permutationally invariant state representations and the logical mapping.
//!
//! An unresolvable ensemble of `N` spin-1/2 particles is described entirely by
//! matrix elements between degeneracy-averaged level pairs `(J, M, M')`: the
//! multiplicity index of a block is unobservable, so every state here carries
//! amplitudes or density elements indexed by `(J, M)` only. A logical qudit is
//! identified with the level-space density matrix of a single `J` block, which
//! lets pure logical information live in physically mixed states.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::codes::QecCode;
use crate::degeneracy;
use crate::error::{Error, Result};
use crate::half::Half;
use crate::linalg;

pub const NORM_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;

/// Pure conditional state of one Monte-Carlo trajectory: a definite particle
/// number, a definite total angular momentum, and a complex amplitude for
/// each magnetization level of that block.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryState {
    n_spins: u32,
    total_j: Half,
    amps: Vec<C64>,
}

impl TrajectoryState {
    pub fn new(n_spins: u32, total_j: Half, amps: Vec<C64>) -> Result<Self> {
        degeneracy::check_pair(n_spins, total_j)?;
        if amps.len() != total_j.level_count() {
            return Err(Error::Domain(format!(
                "block J={total_j} needs {} amplitudes, got {}",
                total_j.level_count(),
                amps.len()
            )));
        }
        let mut state = TrajectoryState { n_spins, total_j, amps };
        let norm = state.norm();
        if norm == 0.0 {
            return Err(Error::Domain("zero state vector".into()));
        }
        if (norm - 1.0).abs() > NORM_TOL {
            state.renormalize();
        }
        Ok(state)
    }

    /// The pure level state `|J, M>` (a single occupied level).
    pub fn level_state(n_spins: u32, total_j: Half, m: Half) -> Result<Self> {
        degeneracy::check_pair(n_spins, total_j)?;
        let idx = total_j
            .level_index(m)
            .ok_or_else(|| Error::Domain(format!("M={m} outside block J={total_j}")))?;
        let mut amps = vec![C64::new(0.0, 0.0); total_j.level_count()];
        amps[idx] = C64::new(1.0, 0.0);
        Ok(TrajectoryState { n_spins, total_j, amps })
    }

    /// The empty ensemble remaining after every spin has been lost.
    pub fn vacuum() -> Self {
        TrajectoryState {
            n_spins: 0,
            total_j: Half::ZERO,
            amps: vec![C64::new(1.0, 0.0)],
        }
    }

    pub fn n_spins(&self) -> u32 {
        self.n_spins
    }

    pub fn total_j(&self) -> Half {
        self.total_j
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    pub fn amp(&self, m: Half) -> C64 {
        self.total_j
            .level_index(m)
            .map(|i| self.amps[i])
            .unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub(crate) fn renormalize(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            for a in &mut self.amps {
                *a /= norm;
            }
        }
    }

    /// Replace the contents with a new block, renormalizing. Fails on a
    /// zero-norm replacement, which signals a branch-weight bookkeeping bug.
    pub(crate) fn replace(&mut self, n_spins: u32, total_j: Half, amps: Vec<C64>) -> Result<()> {
        degeneracy::check_pair(n_spins, total_j)?;
        debug_assert_eq!(amps.len(), total_j.level_count());
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-150 {
            return Err(Error::ImpossibleBranch);
        }
        self.n_spins = n_spins;
        self.total_j = total_j;
        self.amps = amps;
        self.renormalize();
        Ok(())
    }

    pub(crate) fn amps_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    /// Levels carrying more than `tol` of squared amplitude.
    pub fn support(&self, tol: f64) -> Vec<Half> {
        self.total_j
            .levels()
            .zip(&self.amps)
            .filter(|(_, a)| a.norm_sqr() > tol)
            .map(|(m, _)| m)
            .collect()
    }

    /// Degeneracy-averaged density matrix of this trajectory.
    pub fn to_density(&self) -> PiDensityState {
        let len = self.amps.len();
        let mut block = Array2::from_elem((len, len), C64::new(0.0, 0.0));
        for (i, a) in self.amps.iter().enumerate() {
            for (k, b) in self.amps.iter().enumerate() {
                block[[i, k]] = a * b.conj();
            }
        }
        let mut blocks = BTreeMap::new();
        blocks.insert((self.n_spins, self.total_j), block);
        PiDensityState { n_spins: self.n_spins, blocks }
    }

    /// Squared overlap with another trajectory state; zero when particle
    /// number or angular momentum differ (no cross-block coherence exists).
    pub fn overlap_sqr(&self, other: &TrajectoryState) -> f64 {
        if self.n_spins != other.n_spins || self.total_j != other.total_j {
            return 0.0;
        }
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            .norm_sqr()
    }
}

/// Block-diagonal PI density matrix: one Hermitian level-space block per
/// `(N, J)` sector. Coherence between different sectors cannot be
/// represented, matching the physics of an unresolvable ensemble.
///
/// Spin loss moves weight between particle-number sectors, so blocks are
/// keyed by `(N, J)`; states with a conserved particle number simply use a
/// single `N`.
#[derive(Clone, Debug)]
pub struct PiDensityState {
    n_spins: u32,
    blocks: BTreeMap<(u32, Half), Array2<C64>>,
}

impl PiDensityState {
    /// A state with a single `(N, J)` block.
    pub fn from_block(n_spins: u32, total_j: Half, block: Array2<C64>) -> Result<Self> {
        degeneracy::check_pair(n_spins, total_j)?;
        let len = total_j.level_count();
        if block.nrows() != len || block.ncols() != len {
            return Err(Error::Domain(format!(
                "block J={total_j} must be {len}x{len}"
            )));
        }
        let mut blocks = BTreeMap::new();
        blocks.insert((n_spins, total_j), block);
        let state = PiDensityState { n_spins, blocks };
        state.validate()?;
        Ok(state)
    }

    pub fn from_blocks(n_spins: u32, entries: Vec<(u32, Half, Array2<C64>)>) -> Result<Self> {
        let mut blocks = BTreeMap::new();
        for (n, j, block) in entries {
            degeneracy::check_pair(n, j)?;
            blocks.insert((n, j), block);
        }
        let state = PiDensityState { n_spins, blocks };
        state.validate()?;
        Ok(state)
    }

    /// Nominal (initial) particle number.
    pub fn n_spins(&self) -> u32 {
        self.n_spins
    }

    pub fn blocks(&self) -> impl Iterator<Item = (u32, Half, &Array2<C64>)> {
        self.blocks.iter().map(|(&(n, j), b)| (n, j, b))
    }

    pub fn block(&self, n: u32, j: Half) -> Option<&Array2<C64>> {
        self.blocks.get(&(n, j))
    }

    pub(crate) fn blocks_map(&self) -> &BTreeMap<(u32, Half), Array2<C64>> {
        &self.blocks
    }

    pub(crate) fn blocks_map_mut(&mut self) -> &mut BTreeMap<(u32, Half), Array2<C64>> {
        &mut self.blocks
    }

    pub fn total_trace(&self) -> f64 {
        self.blocks
            .values()
            .map(|b| (0..b.nrows()).map(|i| b[[i, i]].re).sum::<f64>())
            .sum()
    }

    pub fn block_weight(&self, n: u32, j: Half) -> f64 {
        self.block(n, j)
            .map(|b| (0..b.nrows()).map(|i| b[[i, i]].re).sum())
            .unwrap_or(0.0)
    }

    /// Checks unit trace, Hermiticity, and positive semi-definiteness of
    /// every block.
    pub fn validate(&self) -> Result<()> {
        let trace = self.total_trace();
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(Error::Domain(format!(
                "total trace {trace} deviates from 1 beyond {TRACE_TOL}"
            )));
        }
        for (&(n, j), block) in &self.blocks {
            for i in 0..block.nrows() {
                for k in 0..block.ncols() {
                    if (block[[i, k]] - block[[k, i]].conj()).norm() > 1e-9 {
                        return Err(Error::Domain(format!(
                            "block (N={n}, J={j}) is not Hermitian"
                        )));
                    }
                }
            }
            if linalg::min_eigenvalue(block) < -PSD_TOL {
                return Err(Error::Domain(format!(
                    "block (N={n}, J={j}) is not positive semi-definite"
                )));
            }
        }
        Ok(())
    }
}

/// A logical qudit: a density matrix over the abstract logical basis.
#[derive(Clone, Debug)]
pub struct LogicalQudit {
    rho: Array2<C64>,
}

impl LogicalQudit {
    pub fn new(rho: Array2<C64>) -> Result<Self> {
        if rho.nrows() != rho.ncols() || rho.nrows() == 0 {
            return Err(Error::Domain("logical density matrix must be square".into()));
        }
        Ok(LogicalQudit { rho })
    }

    /// Pure qudit from a (normalized) amplitude vector.
    pub fn pure(amps: &[C64]) -> Result<Self> {
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Domain("zero logical state".into()));
        }
        let d = amps.len();
        let mut rho = Array2::from_elem((d, d), C64::new(0.0, 0.0));
        for i in 0..d {
            for k in 0..d {
                rho[[i, k]] = amps[i] * amps[k].conj() / (norm * norm);
            }
        }
        Ok(LogicalQudit { rho })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mut rho = Array2::from_elem((dim, dim), C64::new(0.0, 0.0));
        for i in 0..dim {
            rho[[i, i]] = C64::new(1.0 / dim as f64, 0.0);
        }
        LogicalQudit { rho }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn rho(&self) -> &Array2<C64> {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.rho[[i, i]].re).sum()
    }
}

/// Magnetization levels used to embed a `d`-level qudit in block `J`,
/// centered on `M = 0` (shifted up by a half step when parity forces it).
/// Recomputing this assignment is what makes decoding exact.
pub fn logical_levels(dim: usize, total_j: Half) -> Result<Vec<Half>> {
    if dim == 0 {
        return Err(Error::Domain("qudit dimension must be positive".into()));
    }
    if dim > total_j.level_count() {
        return Err(Error::Capacity {
            j: total_j,
            available: total_j.level_count(),
            needed: dim,
        });
    }
    let d = dim as i32;
    // Ideal centered doubled values are 2l - (d-1); shift by one half step
    // when the parity of the block forbids them.
    let delta = ((d - 1) + total_j.doubled()).rem_euclid(2);
    let mut levels = Vec::with_capacity(dim);
    for l in 0..d {
        let m = Half::new(2 * l - (d - 1) + delta);
        debug_assert!(total_j.level_index(m).is_some());
        levels.push(m);
    }
    Ok(levels)
}

/// Embeds a logical qudit as a PI state with a single `(N, J)` block whose
/// central sub-block equals the qudit density matrix.
pub fn encode_logical(qudit: &LogicalQudit, n_spins: u32, total_j: Half) -> Result<PiDensityState> {
    degeneracy::check_pair(n_spins, total_j)?;
    let levels = logical_levels(qudit.dim(), total_j)?;
    let len = total_j.level_count();
    let mut block = Array2::from_elem((len, len), C64::new(0.0, 0.0));
    for (a, &ma) in levels.iter().enumerate() {
        for (b, &mb) in levels.iter().enumerate() {
            let ia = total_j.level_index(ma).unwrap();
            let ib = total_j.level_index(mb).unwrap();
            block[[ia, ib]] = qudit.rho()[[a, b]];
        }
    }
    PiDensityState::from_block(n_spins, total_j, block)
}

/// Inverse of [`encode_logical`] on its image: extracts the renormalized
/// logical content of the `(N, J)` block along with the block's probability
/// weight before renormalization.
pub fn decode_logical(
    state: &PiDensityState,
    n_spins: u32,
    total_j: Half,
    dim: usize,
) -> Result<(LogicalQudit, f64)> {
    let block = state
        .block(n_spins, total_j)
        .ok_or(Error::EmptyBlock { j: total_j })?;
    let weight = state.block_weight(n_spins, total_j);
    if weight <= 0.0 {
        return Err(Error::EmptyBlock { j: total_j });
    }
    let levels = logical_levels(dim, total_j)?;
    let mut rho = Array2::from_elem((dim, dim), C64::new(0.0, 0.0));
    for (a, &ma) in levels.iter().enumerate() {
        for (b, &mb) in levels.iter().enumerate() {
            let ia = total_j.level_index(ma).unwrap();
            let ib = total_j.level_index(mb).unwrap();
            rho[[a, b]] = block[[ia, ib]] / weight;
        }
    }
    Ok((LogicalQudit::new(rho)?, weight))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observable {
    /// Total magnetization.
    Jz,
    /// Squared magnetization.
    JzSquared,
    /// Total angular momentum squared, eigenvalue `J(J+1)`.
    JSquared,
}

/// `sum_blocks tr(rho_J f(J, M))` with `f = M`, `M^2`, or `J(J+1)`.
pub fn collective_expectation(state: &PiDensityState, observable: Observable) -> f64 {
    let mut total = 0.0;
    for (_, j, block) in state.blocks() {
        for (idx, m) in j.levels().enumerate() {
            let p = block[[idx, idx]].re;
            let f = match observable {
                Observable::Jz => m.to_f64(),
                Observable::JzSquared => m.to_f64() * m.to_f64(),
                Observable::JSquared => j.to_f64() * (j.to_f64() + 1.0),
            };
            total += p * f;
        }
    }
    total
}

/// Same observables for a trajectory state.
pub fn trajectory_expectation(state: &TrajectoryState, observable: Observable) -> f64 {
    let j = state.total_j();
    state
        .amps()
        .iter()
        .enumerate()
        .map(|(idx, a)| {
            let m = j.level_at(idx);
            let f = match observable {
                Observable::Jz => m.to_f64(),
                Observable::JzSquared => m.to_f64() * m.to_f64(),
                Observable::JSquared => j.to_f64() * (j.to_f64() + 1.0),
            };
            a.norm_sqr() * f
        })
        .sum()
}

/// Physical level-space amplitudes of a logical qubit `(alpha0, alpha1)`
/// carried by a code: the fidelity reference vector.
pub fn encoded_reference(code: &QecCode, alpha0: C64, alpha1: C64) -> Vec<C64> {
    let j = code.total_j();
    let mut amps = vec![C64::new(0.0, 0.0); j.level_count()];
    for (m, a) in code.branch_levels(0) {
        amps[j.level_index(*m).unwrap()] += alpha0 * *a;
    }
    for (m, a) in code.branch_levels(1) {
        amps[j.level_index(*m).unwrap()] += alpha1 * *a;
    }
    amps
}

/// Fidelity of a density state against a pure logical qubit encoded by
/// `code` in sector `(N, J)`: weight outside that sector or outside the code
/// subspace counts as lost.
pub fn logical_fidelity(
    state: &PiDensityState,
    reference: &LogicalQudit,
    code: &QecCode,
    n_spins: u32,
) -> f64 {
    if reference.dim() != 2 {
        panic!("logical_fidelity expects a qubit reference");
    }
    // <ref| rho_block |ref> with the reference embedded at the code levels.
    let alpha0 = amplitude_of(reference, 0);
    let alpha1 = amplitude_of(reference, 1);
    let refv = encoded_reference(code, alpha0, alpha1);
    let j = code.total_j();
    let Some(block) = state.block(n_spins, j) else {
        return 0.0;
    };
    let mut f = C64::new(0.0, 0.0);
    for (i, a) in refv.iter().enumerate() {
        for (k, b) in refv.iter().enumerate() {
            f += a.conj() * block[[i, k]] * b;
        }
    }
    f.re.clamp(0.0, 1.0 + 1e-9)
}

/// Trajectory version of [`logical_fidelity`].
pub fn trajectory_fidelity(
    state: &TrajectoryState,
    alpha0: C64,
    alpha1: C64,
    code: &QecCode,
    n_spins: u32,
) -> f64 {
    if state.n_spins() != n_spins || state.total_j() != code.total_j() {
        return 0.0;
    }
    let refv = encoded_reference(code, alpha0, alpha1);
    let overlap: C64 = refv
        .iter()
        .zip(state.amps())
        .map(|(r, a)| r.conj() * a)
        .sum();
    overlap.norm_sqr()
}

// Pure-state amplitude extraction for rank-one references: the column of the
// density matrix with the largest diagonal, normalized.
fn amplitude_of(q: &LogicalQudit, idx: usize) -> C64 {
    let rho = q.rho();
    let mut anchor = 0;
    for i in 1..q.dim() {
        if rho[[i, i]].re > rho[[anchor, anchor]].re {
            anchor = i;
        }
    }
    let pa = rho[[anchor, anchor]].re.max(0.0).sqrt();
    if pa == 0.0 {
        return C64::new(0.0, 0.0);
    }
    // alpha_idx * conj(alpha_anchor) = rho[idx, anchor]; fix anchor phase real.
    rho[[idx, anchor]] / pa
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn centered_level_assignment() {
        assert_eq!(
            logical_levels(2, Half::from_int(10)).unwrap(),
            vec![Half::ZERO, Half::from_int(1)]
        );
        assert_eq!(
            logical_levels(2, Half::new(9)).unwrap(),
            vec![Half::new(-1), Half::new(1)]
        );
        assert_eq!(
            logical_levels(3, Half::from_int(1)).unwrap(),
            vec![Half::from_int(-1), Half::ZERO, Half::from_int(1)]
        );
        assert!(matches!(
            logical_levels(4, Half::from_int(1)),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn encode_pure_single_level() {
        let q = LogicalQudit::pure(&[c(1.0, 0.0)]).unwrap();
        let s = encode_logical(&q, 6, Half::from_int(2)).unwrap();
        let block = s.block(6, Half::from_int(2)).unwrap();
        let idx = Half::from_int(2).level_index(Half::ZERO).unwrap();
        assert!((block[[idx, idx]].re - 1.0).abs() < 1e-15);
        assert!((s.total_trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn encode_maximally_mixed_qutrit() {
        let q = LogicalQudit::maximally_mixed(3);
        let s = encode_logical(&q, 4, Half::from_int(1)).unwrap();
        let block = s.block(4, Half::from_int(1)).unwrap();
        for i in 0..3 {
            assert!((block[[i, i]].re - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_plus_state_block_structure() {
        // (|0_L> + |1_L>)(<0_L| + <1_L|)/2 at d=2, J=10.
        let q = LogicalQudit::pure(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let s = encode_logical(&q, 20, Half::from_int(10)).unwrap();
        let j = Half::from_int(10);
        let block = s.block(20, j).unwrap();
        let i0 = j.level_index(Half::ZERO).unwrap();
        let i1 = j.level_index(Half::from_int(1)).unwrap();
        assert!((block[[i0, i0]].re - 0.5).abs() < 1e-15);
        assert!((block[[i1, i1]].re - 0.5).abs() < 1e-15);
        assert!((block[[i0, i1]].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn decode_inverts_encode() {
        let amps = [c(0.3, 0.4), c(-0.5, 0.2), c(0.1, -0.6)];
        let q = LogicalQudit::pure(&amps).unwrap();
        let s = encode_logical(&q, 8, Half::from_int(3)).unwrap();
        let (back, weight) = decode_logical(&s, 8, Half::from_int(3), 3).unwrap();
        assert!((weight - 1.0).abs() < 1e-12);
        for i in 0..3 {
            for k in 0..3 {
                assert!((back.rho()[[i, k]] - q.rho()[[i, k]]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn decode_reports_block_weight() {
        // Two blocks with weights 0.7 / 0.3.
        let j1 = Half::from_int(2);
        let j0 = Half::from_int(1);
        let mut b1 = Array2::from_elem((5, 5), c(0.0, 0.0));
        b1[[0, 0]] = c(0.7, 0.0);
        let mut b0 = Array2::from_elem((3, 3), c(0.0, 0.0));
        b0[[1, 1]] = c(0.3, 0.0);
        let s = PiDensityState::from_blocks(4, vec![(4, j1, b1), (4, j0, b0)]).unwrap();
        let (_, w) = decode_logical(&s, 4, j1, 1).unwrap();
        assert!((w - 0.7).abs() < 1e-12);
        assert!(decode_logical(&s, 4, Half::ZERO, 1).is_err());
    }

    #[test]
    fn expectations_on_named_states() {
        // Stretched level |N/2, N/2>.
        let dicke = TrajectoryState::level_state(6, Half::from_int(3), Half::from_int(3)).unwrap();
        assert!((trajectory_expectation(&dicke, Observable::Jz) - 3.0).abs() < 1e-14);

        // Singlet |0,0>.
        let singlet = TrajectoryState::level_state(2, Half::ZERO, Half::ZERO).unwrap();
        assert!(trajectory_expectation(&singlet, Observable::JSquared).abs() < 1e-14);

        // Equal mixture of |1,1> and |1,-1>: Jz averages to zero by symmetry.
        let j = Half::from_int(1);
        let mut block = Array2::from_elem((3, 3), c(0.0, 0.0));
        block[[0, 0]] = c(0.5, 0.0);
        block[[2, 2]] = c(0.5, 0.0);
        let s = PiDensityState::from_block(2, j, block).unwrap();
        assert!(collective_expectation(&s, Observable::Jz).abs() < 1e-14);
    }

    #[test]
    fn fidelity_fresh_and_orthogonal() {
        let code = codes::build_two_level_code(Half::from_int(10), Half::from_int(5), Half::from_int(2)).unwrap();
        let plus = LogicalQudit::pure(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let minus = LogicalQudit::pure(&[c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        let sqrt_half = std::f64::consts::FRAC_1_SQRT_2;
        let refv = encoded_reference(&code, c(sqrt_half, 0.0), c(sqrt_half, 0.0));
        let traj = TrajectoryState::new(20, Half::from_int(10), refv).unwrap();
        let rho = traj.to_density();
        assert!((logical_fidelity(&rho, &plus, &code, 20) - 1.0).abs() < 1e-12);
        assert!(logical_fidelity(&rho, &minus, &code, 20).abs() < 1e-12);
    }

    #[test]
    fn density_validation_rejects_bad_blocks() {
        let j = Half::from_int(1);
        let mut block = Array2::from_elem((3, 3), c(0.0, 0.0));
        block[[0, 0]] = c(1.5, 0.0); // trace 1.5
        assert!(PiDensityState::from_block(2, j, block.clone()).is_err());
        block[[0, 0]] = c(1.5, 0.0);
        block[[1, 1]] = c(-0.5, 0.0); // trace 1 but not PSD
        assert!(PiDensityState::from_block(2, j, block).is_err());
    }
}
