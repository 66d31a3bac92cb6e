//! Time evolution: stochastic quantum-trajectory unraveling on pure
//! conditional states, and a deterministic block-wise master-equation
//! integrator used for cross-validation.
//!
//! The trajectory loop is fixed-step first order: each step either applies a
//! sampled jump branch or the no-jump drift that reweights levels by their
//! total outgoing rate. Hooks run after every step and implement error
//! correction cycles and sensing recovery without any access to privileged
//! simulator internals beyond the state itself.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::CoefficientTable;
use crate::error::{Error, Result};
use crate::half::Half;
use crate::state::{PiDensityState, TrajectoryState};

/// Decoherence rates: collective and single-spin rates for decay (`m = -1`),
/// dephasing (`m = 0`), and pumping (`m = +1`), plus the total spin-loss
/// rate. Arrays are indexed by `m + 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub collective: [f64; 3],
    pub individual: [f64; 3],
    pub loss: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .collective
            .iter()
            .chain(self.individual.iter())
            .chain(std::iter::once(&self.loss));
        for (idx, r) in all.enumerate() {
            if !r.is_finite() || *r < 0.0 {
                return Err(Error::Config(format!(
                    "noise rate #{idx} must be finite and non-negative, got {r}"
                )));
            }
        }
        Ok(())
    }

    pub fn zero() -> Self {
        NoiseModel::default()
    }

    pub fn uniform(rate: f64) -> Self {
        NoiseModel {
            collective: [rate; 3],
            individual: [rate; 3],
            loss: rate,
        }
    }

    pub fn individual_only(decay: f64, dephasing: f64, pumping: f64) -> Self {
        NoiseModel {
            collective: [0.0; 3],
            individual: [decay, dephasing, pumping],
            loss: 0.0,
        }
    }

    pub fn collective_decay(rate: f64) -> Self {
        NoiseModel {
            collective: [rate, 0.0, 0.0],
            individual: [0.0; 3],
            loss: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.collective.iter().all(|r| *r == 0.0)
            && self.individual.iter().all(|r| *r == 0.0)
            && self.loss == 0.0
    }
}

/// One decoherence branch a trajectory can jump through.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BranchKind {
    /// Collective jump `J_m`; preserves `J`.
    Collective { m: i8 },
    /// Single-spin channel branch; changes `J` by `dj`.
    Individual { dj: i8, m: i8 },
    /// Spin loss; changes `J` and `M` by half-integers (doubled fields).
    Loss { dj2: i8, dm2: i8 },
}

impl BranchKind {
    pub fn dj2(&self) -> i32 {
        match self {
            BranchKind::Collective { .. } => 0,
            BranchKind::Individual { dj, .. } => 2 * *dj as i32,
            BranchKind::Loss { dj2, .. } => *dj2 as i32,
        }
    }

    pub fn dm2(&self) -> i32 {
        match self {
            BranchKind::Collective { m } => 2 * *m as i32,
            BranchKind::Individual { m, .. } => 2 * *m as i32,
            BranchKind::Loss { dm2, .. } => *dm2 as i32,
        }
    }

    pub fn is_loss(&self) -> bool {
        matches!(self, BranchKind::Loss { .. })
    }
}

/// All sixteen possible branch labels in a fixed order.
pub fn branch_labels() -> Vec<BranchKind> {
    let mut out = Vec::new();
    for m in [-1i8, 0, 1] {
        out.push(BranchKind::Collective { m });
    }
    for dj in [-1i8, 0, 1] {
        for m in [-1i8, 0, 1] {
            out.push(BranchKind::Individual { dj, m });
        }
    }
    for dj2 in [-1i8, 1] {
        for dm2 in [-1i8, 1] {
            out.push(BranchKind::Loss { dj2, dm2 });
        }
    }
    out
}

/// Branch amplitude vector over the levels of block `(N, J)`.
pub fn branch_amplitudes<'t>(
    table: &'t CoefficientTable,
    n: u32,
    j: Half,
    kind: BranchKind,
) -> Result<&'t [f64]> {
    match kind {
        BranchKind::Collective { m } => Ok(table.collective_block(j)?.amp(m)),
        BranchKind::Individual { dj, m } => Ok(table.individual_block(n, j)?.amp(dj, m)),
        BranchKind::Loss { dj2, dm2 } => Ok(table.loss_block(n, j)?.amp(dj2, dm2)),
    }
}

fn branch_rate_factor(noise: &NoiseModel, kind: BranchKind) -> f64 {
    match kind {
        BranchKind::Collective { m } => noise.collective[(m + 1) as usize],
        BranchKind::Individual { m, .. } => noise.individual[(m + 1) as usize],
        BranchKind::Loss { .. } => noise.loss,
    }
}

/// Instantaneous jump rates of every branch for the given state:
/// `rate = channel rate * sum_M amp(M)^2 |c_M|^2`.
pub fn jump_weights(
    state: &TrajectoryState,
    noise: &NoiseModel,
    table: &CoefficientTable,
) -> Result<Vec<(BranchKind, f64)>> {
    let mut out = Vec::new();
    if state.n_spins() == 0 {
        return Ok(out);
    }
    for kind in branch_labels() {
        let rate0 = branch_rate_factor(noise, kind);
        if rate0 == 0.0 {
            continue;
        }
        let amps = branch_amplitudes(table, state.n_spins(), state.total_j(), kind)?;
        let weight: f64 = state
            .amps()
            .iter()
            .zip(amps)
            .map(|(c, a)| c.norm_sqr() * a * a)
            .sum();
        out.push((kind, rate0 * weight));
    }
    Ok(out)
}

/// Applies one jump branch: shifts levels by the branch magnetization change,
/// reweights by the branch amplitudes, renormalizes, and updates `(N, J)`.
pub fn apply_jump(
    state: &mut TrajectoryState,
    kind: BranchKind,
    table: &CoefficientTable,
) -> Result<()> {
    let n = state.n_spins();
    let j = state.total_j();
    let amps = branch_amplitudes(table, n, j, kind)?;
    let tgt_j = j + Half::new(kind.dj2());
    let tgt_n = if kind.is_loss() { n - 1 } else { n };
    if tgt_j.doubled() < 0 {
        return Err(Error::ImpossibleBranch);
    }
    let dm2 = kind.dm2();
    let mut new_amps = vec![C64::new(0.0, 0.0); tgt_j.level_count()];
    for (idx, c) in state.amps().iter().enumerate() {
        let a = amps[idx];
        if a == 0.0 {
            continue;
        }
        let m_target = j.level_at(idx) + Half::new(dm2);
        if let Some(t) = tgt_j.level_index(m_target) {
            new_amps[t] += c * a;
        }
    }
    state.replace(tgt_n, tgt_j, new_amps)
}

/// Per-level total outgoing rate `W(M)` for the no-jump drift.
pub fn level_rates(
    n: u32,
    j: Half,
    noise: &NoiseModel,
    table: &CoefficientTable,
) -> Result<Vec<f64>> {
    let mut w = vec![0.0; j.level_count()];
    if n == 0 {
        return Ok(w);
    }
    for kind in branch_labels() {
        let rate0 = branch_rate_factor(noise, kind);
        if rate0 == 0.0 {
            continue;
        }
        let amps = branch_amplitudes(table, n, j, kind)?;
        for (slot, a) in w.iter_mut().zip(amps) {
            *slot += rate0 * a * a;
        }
    }
    Ok(w)
}

/// Deterministic no-jump evolution over `dt`: levels reweighted by
/// `exp(-dt W(M) / 2)` and renormalized.
pub fn no_jump_step(
    state: &mut TrajectoryState,
    noise: &NoiseModel,
    table: &CoefficientTable,
    dt: f64,
) -> Result<()> {
    let w = level_rates(state.n_spins(), state.total_j(), noise, table)?;
    for (c, wi) in state.amps_mut().iter_mut().zip(&w) {
        *c *= (-0.5 * dt * wi).exp();
    }
    state.renormalize();
    Ok(())
}

/// One logged jump.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct JumpEvent {
    pub t: f64,
    pub kind: BranchKind,
    pub j_before: Half,
    pub j_after: Half,
    pub n_after: u32,
}

/// Observables sampled along a trajectory.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SampleRow {
    pub t: f64,
    pub fidelity: f64,
    pub j: f64,
    pub n: f64,
    pub teleports: u64,
}

/// Full log of one trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRecord {
    pub index: u32,
    pub samples: Vec<SampleRow>,
    pub jumps: Vec<JumpEvent>,
    /// Set when `dt * max rate` exceeded 0.05 at any visited block.
    pub dt_warning: bool,
}

/// Read-only context shared with hooks.
pub struct SimEnv<'a> {
    pub table: &'a CoefficientTable,
    pub noise: &'a NoiseModel,
}

/// Per-trajectory logic invoked after every step (error-correction cycles,
/// sensing recovery) and for sampling observables.
pub trait TrajectoryHook {
    fn after_step(
        &mut self,
        state: &mut TrajectoryState,
        t: f64,
        rng: &mut ChaCha8Rng,
        env: &SimEnv<'_>,
    ) -> Result<()>;

    fn observe(&mut self, state: &TrajectoryState, env: &SimEnv<'_>) -> (f64, u64);
}

/// Hook that does nothing and reports fidelity 0.
pub struct NullHook;

impl TrajectoryHook for NullHook {
    fn after_step(
        &mut self,
        _state: &mut TrajectoryState,
        _t: f64,
        _rng: &mut ChaCha8Rng,
        _env: &SimEnv<'_>,
    ) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, _state: &TrajectoryState, _env: &SimEnv<'_>) -> (f64, u64) {
        (0.0, 0)
    }
}

/// Uniform f64 in [0, 1) from the raw stream; bit-stable across platforms.
pub fn uniform_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives a 32-byte seed for trajectory `index` from the global seed.
pub fn derive_seed(base: u64, index: u32) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut state = base ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    for chunk in out.chunks_mut(8) {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    out
}

// Precomputed per-(N, J) level rates and drift factors for one (noise, dt).
struct DriftCache {
    dt: f64,
    entries: HashMap<(u32, i32), (Vec<f64>, Vec<f64>)>,
}

impl DriftCache {
    fn new(dt: f64) -> Self {
        DriftCache { dt, entries: HashMap::new() }
    }

    fn get(
        &mut self,
        n: u32,
        j: Half,
        noise: &NoiseModel,
        table: &CoefficientTable,
    ) -> Result<&(Vec<f64>, Vec<f64>)> {
        if !self.entries.contains_key(&(n, j.doubled())) {
            let w = level_rates(n, j, noise, table)?;
            let drift: Vec<f64> = w.iter().map(|wi| (-0.5 * self.dt * wi).exp()).collect();
            self.entries.insert((n, j.doubled()), (w, drift));
        }
        Ok(&self.entries[&(n, j.doubled())])
    }
}

/// Evolves one trajectory with fixed step `dt`, sampling observables every
/// `sample_every` steps. Fully deterministic given `seed`.
pub fn evolve_trajectory<H: TrajectoryHook>(
    initial: &TrajectoryState,
    noise: &NoiseModel,
    table: &CoefficientTable,
    t_max: f64,
    dt: f64,
    sample_every: usize,
    seed: [u8; 32],
    hook: &mut H,
    index: u32,
) -> Result<TrajectoryRecord> {
    noise.validate()?;
    if dt <= 0.0 || t_max < 0.0 {
        return Err(Error::Config("dt must be positive and t_max non-negative".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut state = initial.clone();
    let env = SimEnv { table, noise };
    let n_steps = (t_max / dt).round() as usize;
    let sample_every = sample_every.max(1);
    let mut cache = DriftCache::new(dt);
    let mut record = TrajectoryRecord {
        index,
        samples: Vec::with_capacity(n_steps / sample_every + 2),
        jumps: Vec::new(),
        dt_warning: false,
    };

    for step in 0..=n_steps {
        let t = step as f64 * dt;
        if step % sample_every == 0 || step == n_steps {
            let (fidelity, teleports) = hook.observe(&state, &env);
            record.samples.push(SampleRow {
                t,
                fidelity,
                j: state.total_j().to_f64(),
                n: state.n_spins() as f64,
                teleports,
            });
        }
        if step == n_steps {
            break;
        }

        let (w, drift) = cache.get(state.n_spins(), state.total_j(), noise, table)?;
        let total_rate: f64 = state
            .amps()
            .iter()
            .zip(w)
            .map(|(c, wi)| c.norm_sqr() * wi)
            .sum();
        if dt * w.iter().fold(0.0_f64, |a, b| a.max(*b)) > 0.05 {
            record.dt_warning = true;
        }
        let p_jump = total_rate * dt;
        let u = uniform_f64(&mut rng);
        if u < p_jump {
            // Conditional uniform u/p selects the branch.
            let weights = jump_weights(&state, noise, table)?;
            let total: f64 = weights.iter().map(|(_, r)| r).sum();
            let mut sel = (u / p_jump) * total;
            let mut chosen = None;
            for (kind, r) in &weights {
                if sel < *r {
                    chosen = Some(*kind);
                    break;
                }
                sel -= r;
            }
            let kind = chosen.unwrap_or(weights.last().map(|(k, _)| *k).ok_or(Error::ImpossibleBranch)?);
            let j_before = state.total_j();
            apply_jump(&mut state, kind, table)?;
            record.jumps.push(JumpEvent {
                t,
                kind,
                j_before,
                j_after: state.total_j(),
                n_after: state.n_spins(),
            });
        } else {
            let drift = drift.clone();
            for (c, f) in state.amps_mut().iter_mut().zip(&drift) {
                *c *= *f;
            }
            state.renormalize();
        }
        hook.after_step(&mut state, t + dt, &mut rng, &env)?;
    }
    Ok(record)
}

/// Runs `n_traj` independent trajectories in parallel with per-index
/// deterministic seeds; results are ordered by index regardless of the
/// thread count.
pub fn run_ensemble<H, F>(
    n_traj: u32,
    base_seed: u64,
    factory: F,
    noise: &NoiseModel,
    table: &CoefficientTable,
    t_max: f64,
    dt: f64,
    sample_every: usize,
) -> Result<Vec<TrajectoryRecord>>
where
    H: TrajectoryHook,
    F: Fn(u32) -> (TrajectoryState, H) + Sync,
{
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let (state, mut hook) = factory(i);
            evolve_trajectory(
                &state,
                noise,
                table,
                t_max,
                dt,
                sample_every,
                derive_seed(base_seed, i),
                &mut hook,
                i,
            )
        })
        .collect()
}

/// Aggregated ensemble curve point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_alive: u32,
}

/// Mean and standard error over trajectories of a per-sample value,
/// accumulated in index order for bit-reproducibility.
pub fn aggregate<F: Fn(&SampleRow) -> f64>(
    records: &[TrajectoryRecord],
    value: F,
) -> Vec<CurvePoint> {
    if records.is_empty() {
        return Vec::new();
    }
    let n_samples = records[0].samples.len();
    let n = records.len() as f64;
    let mut out = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let mut mean = 0.0;
        for r in records {
            mean += value(&r.samples[s]);
        }
        mean /= n;
        let mut var = 0.0;
        let mut alive = 0u32;
        for r in records {
            let v = value(&r.samples[s]);
            var += (v - mean) * (v - mean);
            if r.samples[s].n > 0.0 {
                alive += 1;
            }
        }
        let stderr = if records.len() > 1 {
            (var / (n * (n - 1.0))).sqrt()
        } else {
            0.0
        };
        out.push(CurvePoint {
            t: records[0].samples[s].t,
            mean,
            stderr,
            n_alive: alive,
        });
    }
    out
}

/// Deterministic block-wise master-equation integration (fixed-step RK4),
/// including loss coupling between particle-number sectors.
pub fn evolve_master(
    initial: &PiDensityState,
    noise: &NoiseModel,
    table: &CoefficientTable,
    t_max: f64,
    dt: f64,
) -> Result<PiDensityState> {
    noise.validate()?;
    let n0 = initial.n_spins();
    if n0 > 40 {
        return Err(Error::Resource(format!(
            "master-equation integrator guards N <= 40, got {n0}"
        )));
    }
    if dt <= 0.0 {
        return Err(Error::Config("dt must be positive".into()));
    }
    let mut blocks: BlockMap = initial.blocks_map().clone();
    let steps = (t_max / dt).round() as usize;
    for step in 0..steps {
        let k1 = master_derivative(&blocks, noise, table)?;
        let s1 = add_maps(&blocks, &k1, dt / 2.0);
        let k2 = master_derivative(&s1, noise, table)?;
        let s2 = add_maps(&blocks, &k2, dt / 2.0);
        let k3 = master_derivative(&s2, noise, table)?;
        let s3 = add_maps(&blocks, &k3, dt);
        let k4 = master_derivative(&s3, noise, table)?;
        for (key, block) in k1 {
            let b2 = &k2[&key];
            let b3 = &k3[&key];
            let b4 = &k4[&key];
            let update = (&block + &(b2 * C64::new(2.0, 0.0)) + &(b3 * C64::new(2.0, 0.0)) + b4)
                * C64::new(dt / 6.0, 0.0);
            blocks
                .entry(key)
                .and_modify(|b| *b = &*b + &update)
                .or_insert(update);
        }
        if step % 64 == 0 || step + 1 == steps {
            let trace: f64 = blocks
                .values()
                .map(|b| (0..b.nrows()).map(|i| b[[i, i]].re).sum::<f64>())
                .sum();
            if (trace - 1.0).abs() > 1e-6 {
                return Err(Error::Integration(format!(
                    "trace drifted to {trace} at step {step}; reduce dt"
                )));
            }
        }
    }
    PiDensityState::from_blocks(
        n0,
        blocks.into_iter().map(|((n, j), b)| (n, j, b)).collect(),
    )
}

type BlockMap = BTreeMap<(u32, Half), Array2<C64>>;

fn add_maps(base: &BlockMap, delta: &BlockMap, s: f64) -> BlockMap {
    let mut out = base.clone();
    for (key, d) in delta {
        let scaled = d * C64::new(s, 0.0);
        out.entry(*key)
            .and_modify(|b| *b = &*b + &scaled)
            .or_insert(scaled);
    }
    out
}

fn master_derivative(
    blocks: &BlockMap,
    noise: &NoiseModel,
    table: &CoefficientTable,
) -> Result<BlockMap> {
    let mut out: BlockMap = blocks
        .keys()
        .map(|&(n, j)| ((n, j), Array2::from_elem((j.level_count(), j.level_count()), C64::new(0.0, 0.0))))
        .collect();
    for (&(n, j), rho) in blocks {
        if n == 0 {
            continue;
        }
        let w = level_rates(n, j, noise, table)?;
        {
            let slot = out.get_mut(&(n, j)).unwrap();
            for a in 0..rho.nrows() {
                for b in 0..rho.ncols() {
                    *slot.get_mut((a, b)).unwrap() -=
                        rho[[a, b]] * C64::new(0.5 * (w[a] + w[b]), 0.0);
                }
            }
        }
        for kind in branch_labels() {
            let rate0 = branch_rate_factor(noise, kind);
            if rate0 == 0.0 {
                continue;
            }
            let amps = branch_amplitudes(table, n, j, kind)?.to_vec();
            if amps.iter().all(|a| *a == 0.0) {
                continue;
            }
            let tgt_j = j + Half::new(kind.dj2());
            if tgt_j.doubled() < 0 {
                continue;
            }
            let tgt_n = if kind.is_loss() { n - 1 } else { n };
            if crate::degeneracy::check_pair(tgt_n, tgt_j).is_err() {
                continue;
            }
            let dm2 = kind.dm2();
            let len_t = tgt_j.level_count();
            let slot = out
                .entry((tgt_n, tgt_j))
                .or_insert_with(|| Array2::from_elem((len_t, len_t), C64::new(0.0, 0.0)));
            for a in 0..rho.nrows() {
                if amps[a] == 0.0 {
                    continue;
                }
                let ta = match tgt_j.level_index(j.level_at(a) + Half::new(dm2)) {
                    Some(i) => i,
                    None => continue,
                };
                for b in 0..rho.ncols() {
                    if amps[b] == 0.0 {
                        continue;
                    }
                    let tb = match tgt_j.level_index(j.level_at(b) + Half::new(dm2)) {
                        Some(i) => i,
                        None => continue,
                    };
                    *slot.get_mut((ta, tb)).unwrap() +=
                        rho[[a, b]] * C64::new(rate0 * amps[a] * amps[b], 0.0);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{trajectory_expectation, Observable};
    use std::sync::OnceLock;

    fn table() -> &'static CoefficientTable {
        static TABLE: OnceLock<CoefficientTable> = OnceLock::new();
        TABLE.get_or_init(|| CoefficientTable::build(8).unwrap())
    }

    #[test]
    fn ground_state_cannot_decay() {
        let state = TrajectoryState::level_state(6, Half::from_int(3), Half::from_int(-3)).unwrap();
        let noise = NoiseModel::collective_decay(1.0);
        let weights = jump_weights(&state, &noise, table()).unwrap();
        let total: f64 = weights.iter().map(|(_, r)| r).sum();
        assert!(total.abs() < 1e-14);
    }

    #[test]
    fn stretched_state_decays_superradiantly() {
        // |N/2, N/2> under collective decay: rate = (J+M)(J-M+1) = N.
        let n = 6;
        let state = TrajectoryState::level_state(n, Half::from_int(3), Half::from_int(3)).unwrap();
        let noise = NoiseModel::collective_decay(1.0);
        let weights = jump_weights(&state, &noise, table()).unwrap();
        let total: f64 = weights.iter().map(|(_, r)| r).sum();
        assert!((total - n as f64).abs() < 1e-12);
    }

    #[test]
    fn loss_branch_weights_sum_to_rate() {
        let state = TrajectoryState::new(
            6,
            Half::from_int(2),
            vec![
                C64::new(0.3, 0.1),
                C64::new(0.2, -0.4),
                C64::new(0.5, 0.0),
                C64::new(0.1, 0.2),
                C64::new(-0.3, 0.4),
            ],
        )
        .unwrap();
        let noise = NoiseModel { loss: 0.7, ..NoiseModel::zero() };
        let weights = jump_weights(&state, &noise, table()).unwrap();
        let total: f64 = weights.iter().map(|(_, r)| r).sum();
        assert!((total - 0.7).abs() < 1e-12);
    }

    #[test]
    fn collective_decay_from_single_level() {
        let mut state = TrajectoryState::level_state(2, Half::from_int(1), Half::from_int(1)).unwrap();
        apply_jump(&mut state, BranchKind::Collective { m: -1 }, table()).unwrap();
        assert_eq!(state.total_j(), Half::from_int(1));
        assert!((state.amp(Half::ZERO).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn loss_jump_from_stretched_pair() {
        let mut state = TrajectoryState::level_state(2, Half::from_int(1), Half::from_int(1)).unwrap();
        apply_jump(&mut state, BranchKind::Loss { dj2: -1, dm2: -1 }, table()).unwrap();
        assert_eq!(state.n_spins(), 1);
        assert_eq!(state.total_j(), Half::HALF);
        assert!((state.amp(Half::HALF).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn impossible_branch_is_an_error() {
        let mut state = TrajectoryState::level_state(2, Half::from_int(1), Half::from_int(1)).unwrap();
        // Pumping from the top of the Dicke block has zero amplitude.
        let err = apply_jump(&mut state, BranchKind::Collective { m: 1 }, table());
        assert!(matches!(err, Err(Error::ImpossibleBranch)));
    }

    #[test]
    fn no_jump_identity_cases() {
        let mut state = TrajectoryState::new(
            4,
            Half::from_int(2),
            vec![
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
                C64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        let before = state.clone();
        no_jump_step(&mut state, &NoiseModel::zero(), table(), 0.01).unwrap();
        assert_eq!(state, before);

        // Single-level states are fixed points after renormalization.
        let mut single = TrajectoryState::level_state(4, Half::from_int(2), Half::from_int(1)).unwrap();
        no_jump_step(&mut single, &NoiseModel::uniform(0.5), table(), 0.01).unwrap();
        assert!((single.amp(Half::from_int(1)).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_level_drift_is_monotone_and_closed_form() {
        // Under pure collective decay the relative amplitude of the
        // faster-decaying level shrinks as exp(-dt (W_hi - W_lo) / 2).
        let j = Half::from_int(2);
        let noise = NoiseModel::collective_decay(1.0);
        let w = level_rates(4, j, &noise, table()).unwrap();
        let hi = j.level_index(Half::from_int(1)).unwrap();
        let lo = j.level_index(Half::from_int(-2)).unwrap();
        let mut prev_ratio = 1.0;
        for steps in 1..5 {
            let mut state = TrajectoryState::new(
                4,
                j,
                vec![
                    C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
                    C64::new(0.0, 0.0),
                    C64::new(0.0, 0.0),
                    C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
                    C64::new(0.0, 0.0),
                ],
            )
            .unwrap();
            let dt = 0.02 * steps as f64;
            no_jump_step(&mut state, &noise, table(), dt).unwrap();
            let ratio = state.amps()[hi].norm() / state.amps()[lo].norm();
            let expect = (-0.5 * dt * (w[hi] - w[lo])).exp();
            assert!((ratio - expect).abs() < 1e-12);
            assert!(ratio < prev_ratio);
            prev_ratio = ratio;
        }
    }

    #[test]
    fn zero_noise_keeps_state_constant() {
        let state = TrajectoryState::level_state(4, Half::from_int(2), Half::from_int(1)).unwrap();
        let mut hook = NullHook;
        let rec = evolve_trajectory(
            &state,
            &NoiseModel::zero(),
            table(),
            1.0,
            0.01,
            10,
            derive_seed(42, 0),
            &mut hook,
            0,
        )
        .unwrap();
        assert!(rec.jumps.is_empty());
        assert_eq!(rec.samples.len(), 11);
    }

    #[test]
    fn identical_seeds_reproduce_bit_for_bit() {
        let state = TrajectoryState::new(
            6,
            Half::from_int(3),
            vec![C64::new(1.0, 0.0); 7],
        )
        .unwrap();
        let noise = NoiseModel::uniform(0.4);
        let run = |seed| {
            let mut hook = NullHook;
            evolve_trajectory(&state, &noise, table(), 0.5, 1e-3, 50, derive_seed(seed, 3), &mut hook, 3)
                .unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a.jumps.len(), b.jumps.len());
        for (x, y) in a.jumps.iter().zip(&b.jumps) {
            assert_eq!(x.t, y.t);
            assert_eq!(x.kind, y.kind);
        }
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.j.to_bits(), y.j.to_bits());
            assert_eq!(x.n.to_bits(), y.n.to_bits());
        }
        let c = run(8);
        assert!(a.jumps.len() != c.jumps.len() || a.jumps.iter().zip(&c.jumps).any(|(x, y)| x.t != y.t));
    }

    #[test]
    fn jump_changes_j_by_branch_and_stays_in_range() {
        let state = TrajectoryState::new(6, Half::from_int(2), vec![C64::new(1.0, 0.0); 5]).unwrap();
        let noise = NoiseModel::uniform(0.5);
        let mut hook = NullHook;
        let rec = evolve_trajectory(
            &state,
            &noise,
            table(),
            1.0,
            5e-4,
            100,
            derive_seed(11, 0),
            &mut hook,
            0,
        )
        .unwrap();
        let mut n_current = 6u32;
        for jump in &rec.jumps {
            assert_eq!(jump.j_after.doubled() - jump.j_before.doubled(), jump.kind.dj2());
            if jump.kind.is_loss() {
                n_current -= 1;
            }
            assert_eq!(jump.n_after, n_current);
            assert!(jump.j_after.doubled() >= Half::j_min(n_current).doubled());
            assert!(jump.j_after.doubled() <= n_current as i32);
        }
    }

    #[test]
    fn master_preserves_trace_and_dephasing_diagonals() {
        let j = Half::from_int(2);
        let mut block = Array2::from_elem((5, 5), C64::new(0.0, 0.0));
        block[[0, 0]] = C64::new(0.25, 0.0);
        block[[1, 1]] = C64::new(0.25, 0.0);
        block[[3, 3]] = C64::new(0.5, 0.0);
        block[[0, 3]] = C64::new(0.25, 0.0);
        block[[3, 0]] = C64::new(0.25, 0.0);
        let initial = PiDensityState::from_block(4, j, block).unwrap();
        let noise = NoiseModel {
            collective: [0.0, 0.8, 0.0],
            ..NoiseModel::zero()
        };
        let evolved = evolve_master(&initial, &noise, table(), 1.0, 1e-3).unwrap();
        assert!((evolved.total_trace() - 1.0).abs() < 1e-8);
        let out = evolved.block(4, j).unwrap();
        // Pure collective dephasing never moves populations.
        assert!((out[[0, 0]].re - 0.25).abs() < 1e-9);
        assert!((out[[3, 3]].re - 0.5).abs() < 1e-9);
        // Coherence decays.
        assert!(out[[0, 3]].norm() < 0.25);
    }

    #[test]
    fn trajectory_mean_matches_master_jz() {
        // N=4 pure individual decay: ensemble-averaged <Jz> from trajectories
        // agrees with the deterministic integrator within 3 standard errors.
        let n = 4;
        let j = Half::from_int(2);
        let initial = TrajectoryState::new(
            n,
            j,
            vec![C64::new(1.0, 0.0); 5],
        )
        .unwrap();
        let noise = NoiseModel::individual_only(0.5, 0.0, 0.0);
        let t_max = 1.0;
        let dt = 2e-4;
        let n_traj = 2000u32;
        struct JzHook;
        impl TrajectoryHook for JzHook {
            fn after_step(
                &mut self,
                _s: &mut TrajectoryState,
                _t: f64,
                _r: &mut ChaCha8Rng,
                _e: &SimEnv<'_>,
            ) -> Result<()> {
                Ok(())
            }
            fn observe(&mut self, s: &TrajectoryState, _e: &SimEnv<'_>) -> (f64, u64) {
                (trajectory_expectation(s, Observable::Jz), 0)
            }
        }
        let records = run_ensemble(
            n_traj,
            99,
            |_| (initial.clone(), JzHook),
            &noise,
            table(),
            t_max,
            dt,
            1000,
        )
        .unwrap();
        let curve = aggregate(&records, |s| s.fidelity);
        let master = evolve_master(&initial.to_density(), &noise, table(), t_max, 1e-3).unwrap();
        let expect = crate::state::collective_expectation(&master, Observable::Jz);
        let last = curve.last().unwrap();
        assert!(
            (last.mean - expect).abs() < 3.0 * last.stderr.max(1e-3),
            "trajectory {} vs master {expect} (stderr {})",
            last.mean,
            last.stderr
        );
    }

    #[test]
    fn one_step_branches_reproduce_channel() {
        // no-jump + jump branches average to the exact one-step channel
        // within O(dt^2), checked against the master derivative.
        let n = 4;
        let j = Half::from_int(1);
        let amps = vec![C64::new(0.6, 0.0), C64::new(0.0, 0.48), C64::new(0.64, 0.0)];
        let state = TrajectoryState::new(n, j, amps).unwrap();
        let noise = NoiseModel::uniform(0.3);
        let dt = 1e-3;

        // Ensemble average over branches after one step.
        let weights = jump_weights(&state, &noise, table()).unwrap();
        let mut avg: BlockMap = BTreeMap::new();
        let mut p_total = 0.0;
        for (kind, rate) in &weights {
            if *rate == 0.0 {
                continue;
            }
            let mut branch_state = state.clone();
            apply_jump(&mut branch_state, *kind, table()).unwrap();
            let p = rate * dt;
            p_total += p;
            accumulate(&mut avg, &branch_state.to_density(), p);
        }
        let mut nj = state.clone();
        no_jump_step(&mut nj, &noise, table(), dt).unwrap();
        accumulate(&mut avg, &nj.to_density(), 1.0 - p_total);

        // Exact one-step evolution of the density state.
        let exact = evolve_master(&state.to_density(), &noise, table(), dt, dt).unwrap();
        let mut max_dev = 0.0_f64;
        for (key, block) in exact.blocks_map() {
            let approx = avg.get(key);
            for a in 0..block.nrows() {
                for b in 0..block.ncols() {
                    let got = approx.map(|m| m[[a, b]]).unwrap_or(C64::new(0.0, 0.0));
                    max_dev = max_dev.max((got - block[[a, b]]).norm());
                }
            }
        }
        assert!(max_dev < 20.0 * dt * dt, "max deviation {max_dev}");
    }

    fn accumulate(into: &mut BlockMap, state: &PiDensityState, weight: f64) {
        for (n, j, block) in state.blocks() {
            let scaled = block * C64::new(weight, 0.0);
            into.entry((n, j))
                .and_modify(|b| *b = &*b + &scaled)
                .or_insert(scaled);
        }
    }
}
