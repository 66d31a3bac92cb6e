//! Ramsey interferometry under decoherence: signal accumulation, the
//! impossibility of protecting against single-spin decay, the
//! collective-decay probe code, and the sensing experiment.
//!
//! Sensitivity is measured as the state-distinguishability infidelity
//! `1 - |<psi_signal | psi_reference>|^2` between matched trajectories
//! evolved with and without the signal. The two arms share every random
//! decision (common random numbers), which is exact here because jump rates
//! depend only on level populations, not on signal phases.

use num_complex::Complex64 as C64;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::codes::{encode_qubit, kl_check, unit_kraus_set, ErrorSet, QecCode};
use crate::coeff::CoefficientTable;
use crate::dynamics::{
    apply_jump, derive_seed, jump_weights, level_rates, uniform_f64, NoiseModel,
};
use crate::error::{Error, Result};
use crate::half::Half;
use crate::recovery::Pulse;
use crate::state::TrajectoryState;

/// A Ramsey probe: two orthogonal logical basis states at fixed `J` plus the
/// signal strength.
#[derive(Clone, Debug)]
pub struct SensingProbe {
    pub code: QecCode,
    pub omega: f64,
}

/// Applies the signal Hamiltonian `omega J_z` for `dt`: each level picks up
/// the phase `exp(-i omega M dt)`.
pub fn signal_step(state: &mut TrajectoryState, omega: f64, dt: f64) {
    if omega == 0.0 {
        return;
    }
    let j = state.total_j();
    for (idx, amp) in state.amps_mut().iter_mut().enumerate() {
        let m = j.level_at(idx).to_f64();
        *amp *= C64::new(0.0, -omega * m * dt).exp();
    }
}

/// Phase accumulated between the logical basis states after time `t`:
/// `omega t (<0|Jz|0> - <1|Jz|1>)`.
pub fn accumulated_phase(probe: &SensingProbe, t: f64) -> f64 {
    probe.omega * t * (probe.code.branch_jz(0) - probe.code.branch_jz(1))
}

/// The decay-tolerant probe: `|0>` on the level just above the bottom of the
/// stretched block, `|1>` on the top level. Both share the same collective
/// decay weight while keeping a nonzero signal slope `1 - N`.
pub fn collective_decay_code(n: u32) -> Result<QecCode> {
    if n < 3 {
        return Err(Error::Domain(
            "collective-decay probe needs N >= 3 (levels coincide below)".into(),
        ));
    }
    let j = Half::new(n as i32);
    let lo = Half::new(-(n as i32) + 2);
    let hi = Half::new(n as i32);
    // Equal decay weights: M(M-1) matches exactly (integer arithmetic).
    let weight = |m: Half| -> i64 {
        let m2 = m.doubled() as i64;
        m2 * (m2 - 2)
    };
    debug_assert_eq!(weight(lo), weight(hi));
    QecCode::from_branches(j, vec![(lo, 1.0)], vec![(hi, 1.0)])
}

/// Exact (integer) check of the equal-decay-weight identity for the
/// collective-decay probe at ensemble size `n`.
pub fn decay_weight_identity_holds(n: u32) -> bool {
    let lo = -(n as i64) + 2;
    let hi = n as i64;
    lo * (lo - 2) == hi * (hi - 2)
}

/// The GHZ probe: extreme levels of the stretched block.
pub fn ghz_code(n: u32) -> Result<QecCode> {
    let j = Half::new(n as i32);
    QecCode::from_branches(
        j,
        vec![(Half::new(-(n as i32)), 1.0)],
        vec![(Half::new(n as i32), 1.0)],
    )
}

/// One candidate of the no-go scan.
#[derive(Clone, Debug, Serialize)]
pub struct NogoCandidate {
    pub j2: i32,
    pub levels: Vec<i32>,
    pub kl_residual: f64,
    pub phi_per_omega_t: f64,
}

/// Report of the individual-decay no-go scan.
#[derive(Clone, Debug, Serialize)]
pub struct NogoReport {
    pub candidates_checked: usize,
    pub kl_passing: usize,
    /// Largest signal slope among recoverability-passing candidates.
    pub max_phi_over_omega_t: f64,
    pub passing_examples: Vec<NogoCandidate>,
}

/// Scans all one- and two-level codes at `J <= j_max` against the
/// individual-decay channel: every candidate satisfying the recoverability
/// conditions has equal branch magnetizations and therefore zero accumulated
/// phase. Candidates come from the moment-equality solutions plus an
/// amplitude grid, so near-misses are represented too.
pub fn nogo_individual_decay(
    j_max: Half,
    tol: f64,
    table: &CoefficientTable,
) -> Result<NogoReport> {
    let mut checked = 0usize;
    let mut passing = 0usize;
    let mut max_phi = 0.0_f64;
    let mut examples = Vec::new();

    let mut j2 = 1;
    while j2 <= j_max.doubled() {
        let j = Half::new(j2);
        let n = (j2 + 4) as u32; // both raising and lowering branches active
        let kraus = unit_kraus_set(n, j, ErrorSet::individual_decay_only(), table)?;
        let levels: Vec<Half> = j.levels().collect();

        let mut sets: Vec<Vec<Half>> = levels.iter().map(|&m| vec![m]).collect();
        for i in 0..levels.len() {
            for k in (i + 1)..levels.len() {
                sets.push(vec![levels[i], levels[k]]);
            }
        }
        for (si, s0) in sets.iter().enumerate() {
            for s1 in sets.iter().skip(si + 1) {
                if s0.iter().any(|m| s1.contains(m)) {
                    continue;
                }
                for (a0, a1) in candidate_amplitudes(s0, s1) {
                    let Ok(code) = QecCode::from_branches(
                        j,
                        s0.iter().copied().zip(a0.iter().copied()).collect(),
                        s1.iter().copied().zip(a1.iter().copied()).collect(),
                    ) else {
                        continue;
                    };
                    checked += 1;
                    let report = kl_check(&code, &kraus, tol);
                    if report.pass {
                        passing += 1;
                        let phi = (code.branch_jz(0) - code.branch_jz(1)).abs();
                        max_phi = max_phi.max(phi);
                        if examples.len() < 8 {
                            examples.push(NogoCandidate {
                                j2,
                                levels: code.levels().iter().map(|m| m.doubled()).collect(),
                                kl_residual: report.max_violation,
                                phi_per_omega_t: phi,
                            });
                        }
                    }
                }
            }
        }
        j2 += 1;
    }
    Ok(NogoReport {
        candidates_checked: checked,
        kl_passing: passing,
        max_phi_over_omega_t: max_phi,
        passing_examples: examples,
    })
}

// Amplitude candidates: moment-equality solutions plus a grid.
fn candidate_amplitudes(s0: &[Half], s1: &[Half]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    match (s0.len(), s1.len()) {
        (1, 1) => out.push((vec![1.0], vec![1.0])),
        (2, 1) => {
            for &p in &grid {
                out.push((vec![p.sqrt(), (1.0 - p).sqrt()], vec![1.0]));
            }
        }
        (1, 2) => {
            for &q in &grid {
                out.push((vec![1.0], vec![q.sqrt(), (1.0 - q).sqrt()]));
            }
        }
        (2, 2) => {
            // Exact moment solution when it exists.
            let (a0, a1) = (s0[0].to_f64(), s0[1].to_f64());
            let (b0, b1) = (s1[0].to_f64(), s1[1].to_f64());
            let m = [[a0 - a1, -(b0 - b1)], [a0 * a0 - a1 * a1, -(b0 * b0 - b1 * b1)]];
            let rhs = [b1 - a1, b1 * b1 - a1 * a1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() > 1e-9 {
                let p = (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det;
                let q = (m[0][0] * rhs[1] - rhs[0] * m[1][0]) / det;
                if p > 1e-9 && p < 1.0 - 1e-9 && q > 1e-9 && q < 1.0 - 1e-9 {
                    out.push((
                        vec![p.sqrt(), (1.0 - p).sqrt()],
                        vec![q.sqrt(), (1.0 - q).sqrt()],
                    ));
                }
            }
            // Coarser grid over both amplitudes.
            for &p in &grid {
                for &q in &grid {
                    out.push((
                        vec![p.sqrt(), (1.0 - p).sqrt()],
                        vec![q.sqrt(), (1.0 - q).sqrt()],
                    ));
                }
            }
        }
        _ => {}
    }
    out
}

/// Restores a probe whose levels shifted down by one collective-decay jump:
/// two resonant swaps move both branch levels back. Both pulses imprint the
/// same phase on the two branches, so the deterministic offset of the
/// relative phase is zero; it is still computed and returned so callers can
/// subtract it in general.
pub fn sensing_recover(state: &mut TrajectoryState, probe: &QecCode) -> Result<f64> {
    let j = state.total_j();
    if j != probe.total_j() {
        return Err(Error::Domain(
            "collective-decay recovery expects an unchanged sector".into(),
        ));
    }
    let lo = probe.branch_levels(0)[0].0;
    let hi = probe.branch_levels(1)[0].0;
    let support = state.support(1e-18);
    if support.iter().all(|m| *m == lo || *m == hi) {
        return Ok(0.0); // nothing to restore
    }
    let shifted_ok = support
        .iter()
        .all(|m| *m == lo - Half::ONE || *m == hi - Half::ONE);
    if !shifted_ok {
        return Err(Error::Domain(format!(
            "probe support {support:?} is not a single-step shift of ({lo}, {hi})"
        )));
    }
    // Each branch is moved by one resonant swap: both acquire the same -i.
    for (src, dst) in [(lo - Half::ONE, lo), (hi - Half::ONE, hi)] {
        Pulse::pi(src, dst).apply_to_state(state);
    }
    // Relative phase offset between branches from the pulses: both got -i.
    Ok(0.0)
}

/// Probe selection for the sensing experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProbeKind {
    Ghz,
    Encoded,
}

impl ProbeKind {
    pub fn id(&self) -> &'static str {
        match self {
            ProbeKind::Ghz => "ghz",
            ProbeKind::Encoded => "encoded",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "ghz" => Some(ProbeKind::Ghz),
            "encoded" => Some(ProbeKind::Encoded),
            _ => None,
        }
    }
}

/// Fully resolved sensing-experiment parameters.
#[derive(Clone, Debug, Serialize)]
pub struct SensingSetup {
    pub n_spins: u32,
    pub omega: f64,
    pub noise: NoiseModel,
    pub t_max: f64,
    pub dt: f64,
    pub sample_dt: f64,
    pub n_traj: u32,
    pub seed: u64,
    pub probes: Vec<ProbeKind>,
    pub qec_variants: Vec<bool>,
    pub reference_curves: bool,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SensingPoint {
    pub t: f64,
    pub mean_infidelity: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SensingCurve {
    pub id: String,
    pub points: Vec<SensingPoint>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SensingResult {
    pub curves: Vec<SensingCurve>,
}

impl SensingResult {
    pub fn curve(&self, id: &str) -> Option<&[SensingPoint]> {
        self.curves
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.points.as_slice())
    }
}

// One matched trajectory pair: signal and reference arms share jump
// decisions; infidelity samples are the per-time distinguishability.
fn run_paired_trajectory(
    probe: &QecCode,
    n: u32,
    omega: f64,
    qec: bool,
    noise: &NoiseModel,
    table: &CoefficientTable,
    t_max: f64,
    dt: f64,
    sample_every: usize,
    seed: [u8; 32],
) -> Result<Vec<f64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let initial = encode_qubit(probe, C64::new(s, 0.0), C64::new(s, 0.0), n)?;
    let mut sig = initial.clone();
    let mut reference = initial;
    let mut rng = ChaCha8Rng::from_seed(seed);
    let n_steps = (t_max / dt).round() as usize;
    let mut samples = Vec::with_capacity(n_steps / sample_every + 2);

    for step in 0..=n_steps {
        if step % sample_every == 0 || step == n_steps {
            samples.push(1.0 - sig.overlap_sqr(&reference));
        }
        if step == n_steps {
            break;
        }
        signal_step(&mut sig, omega, dt);
        // Rates are population-only, identical in both arms.
        let w = level_rates(sig.n_spins(), sig.total_j(), noise, table)?;
        let total_rate: f64 = sig
            .amps()
            .iter()
            .zip(&w)
            .map(|(c, wi)| c.norm_sqr() * wi)
            .sum();
        let u = uniform_f64(&mut rng);
        if u < total_rate * dt {
            let weights = jump_weights(&sig, noise, table)?;
            let total: f64 = weights.iter().map(|(_, r)| r).sum();
            let mut sel = (u / (total_rate * dt)) * total;
            let mut chosen = weights[0].0;
            for (kind, r) in &weights {
                if sel < *r {
                    chosen = *kind;
                    break;
                }
                sel -= r;
            }
            apply_jump(&mut sig, chosen, table)?;
            apply_jump(&mut reference, chosen, table)?;
        } else {
            for (arm, _) in [(&mut sig, 0), (&mut reference, 1)] {
                for (c, wi) in arm.amps_mut().iter_mut().zip(&w) {
                    *c *= (-0.5 * dt * wi).exp();
                }
                arm.renormalize();
            }
        }
        if qec {
            // Restore shifted probes in both arms; a probe that collapsed or
            // left the recoverable manifold is simply left alone.
            let _ = sensing_recover(&mut sig, probe);
            let _ = sensing_recover(&mut reference, probe);
        }
    }
    Ok(samples)
}

/// Runs the sensing experiment: matched-pair ensembles for each requested
/// probe and correction variant, plus closed-form lossless references.
pub fn run_sensing_experiment(
    setup: &SensingSetup,
    table: &CoefficientTable,
) -> Result<SensingResult> {
    setup.noise.validate()?;
    if setup.dt <= 0.0 || setup.t_max <= 0.0 || setup.sample_dt <= 0.0 {
        return Err(Error::Config("dt, t_max, sample_dt must be positive".into()));
    }
    if table.n_max() < setup.n_spins {
        return Err(Error::TableRange {
            n_max: table.n_max(),
            n: setup.n_spins,
            j: Half::new(setup.n_spins as i32),
        });
    }
    let sample_every = (setup.sample_dt / setup.dt).round().max(1.0) as usize;
    let mut curves = Vec::new();
    for probe_kind in &setup.probes {
        let probe = match probe_kind {
            ProbeKind::Ghz => ghz_code(setup.n_spins)?,
            ProbeKind::Encoded => collective_decay_code(setup.n_spins)?,
        };
        for &qec in &setup.qec_variants {
            let all: Vec<Vec<f64>> = (0..setup.n_traj)
                .into_par_iter()
                .map(|i| {
                    run_paired_trajectory(
                        &probe,
                        setup.n_spins,
                        setup.omega,
                        qec,
                        &setup.noise,
                        table,
                        setup.t_max,
                        setup.dt,
                        sample_every,
                        derive_seed(setup.seed, i),
                    )
                })
                .collect::<Result<_>>()?;
            let n_samples = all[0].len();
            let nf = all.len() as f64;
            let mut points = Vec::with_capacity(n_samples);
            for sidx in 0..n_samples {
                let mean: f64 = all.iter().map(|tr| tr[sidx]).sum::<f64>() / nf;
                let var: f64 = all.iter().map(|tr| (tr[sidx] - mean).powi(2)).sum::<f64>();
                let stderr = if all.len() > 1 {
                    (var / (nf * (nf - 1.0))).sqrt()
                } else {
                    0.0
                };
                let t = (sidx * sample_every).min((setup.t_max / setup.dt).round() as usize)
                    as f64
                    * setup.dt;
                points.push(SensingPoint { t, mean_infidelity: mean, stderr });
            }
            curves.push(SensingCurve {
                id: format!("{}_{}", probe_kind.id(), if qec { "qec" } else { "bare" }),
                points,
            });
        }
    }
    if setup.reference_curves {
        // Lossless closed forms: sin^2(N omega t / 2) for the GHZ probe and
        // sin^2((N-1) omega t / 2) for the encoded probe.
        let times: Vec<f64> = curves
            .first()
            .map(|c| c.points.iter().map(|p| p.t).collect())
            .unwrap_or_default();
        for (id, slope) in [
            ("lossless_ghz", setup.n_spins as f64),
            ("lossless_encoded", setup.n_spins as f64 - 1.0),
        ] {
            let points = times
                .iter()
                .map(|&t| SensingPoint {
                    t,
                    mean_infidelity: (slope * setup.omega * t / 2.0).sin().powi(2),
                    stderr: 0.0,
                })
                .collect();
            curves.push(SensingCurve { id: id.into(), points });
        }
    }
    Ok(SensingResult { curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn table() -> &'static CoefficientTable {
        static TABLE: OnceLock<CoefficientTable> = OnceLock::new();
        TABLE.get_or_init(|| CoefficientTable::build_unverified(22).unwrap())
    }

    #[test]
    fn signal_step_phases() {
        let mut state = TrajectoryState::level_state(4, Half::from_int(2), Half::from_int(1)).unwrap();
        let before = state.clone();
        signal_step(&mut state, 0.0, 0.1);
        assert_eq!(state, before);
        // Single level: global phase only.
        signal_step(&mut state, 0.3, 0.1);
        assert!((state.overlap_sqr(&before) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ghz_relative_phase_slope() {
        let n = 6;
        let code = ghz_code(n).unwrap();
        let probe = SensingProbe { code, omega: 0.2 };
        // phi = omega t (<0|Jz|0> - <1|Jz|1>) = -N omega t.
        assert!((accumulated_phase(&probe, 1.5) - (-(n as f64) * 0.2 * 1.5)).abs() < 1e-12);
    }

    #[test]
    fn encoded_probe_phase_and_weights() {
        let n = 20;
        let code = collective_decay_code(n).unwrap();
        assert!((code.branch_jz(0) - (-9.0)).abs() < 1e-14);
        assert!((code.branch_jz(1) - 10.0).abs() < 1e-14);
        let probe = SensingProbe { code, omega: 1.0 };
        assert!((accumulated_phase(&probe, 1.0) - (-19.0)).abs() < 1e-12);
        // Equal decay weights both sides: (N/2)(N/2 - 1) = 90.
        let j = Half::new(n as i32);
        let w_lo = crate::coeff::collective_amp(j, Half::new(-(n as i32) + 2), -1).powi(2);
        let w_hi = crate::coeff::collective_amp(j, Half::new(n as i32), -1).powi(2);
        assert!((w_lo - w_hi).abs() < 1e-12);
        assert!(decay_weight_identity_holds(n));
        assert!(collective_decay_code(2).is_err());
    }

    #[test]
    fn decay_weight_identity_exact_up_to_100() {
        for n in 3..=100 {
            assert!(decay_weight_identity_holds(n), "N={n}");
        }
    }

    #[test]
    fn recover_after_jumps_preserves_relative_phase() {
        // One decay jump then recovery: the relative phase matches the
        // no-jump arm exactly; same after two jump/recovery rounds.
        let n = 8;
        let code = collective_decay_code(n).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let omega = 0.3;
        let dt = 0.05;
        let mut jumped = encode_qubit(&code, C64::new(s, 0.0), C64::new(s, 0.0), n).unwrap();
        let mut smooth = jumped.clone();
        for round in 0..2 {
            signal_step(&mut jumped, omega, dt);
            signal_step(&mut smooth, omega, dt);
            apply_jump(&mut jumped, crate::dynamics::BranchKind::Collective { m: -1 }, table())
                .unwrap();
            let offset = sensing_recover(&mut jumped, &code).unwrap();
            assert_eq!(offset, 0.0, "round {round}");
        }
        // Overlap magnitude 1: identical up to a global phase.
        assert!((jumped.overlap_sqr(&smooth) - 1.0).abs() < 1e-10);
        // No jumps: recovery is the identity.
        let mut clean = encode_qubit(&code, C64::new(s, 0.0), C64::new(s, 0.0), n).unwrap();
        let before = clean.clone();
        sensing_recover(&mut clean, &code).unwrap();
        assert_eq!(clean, before);
    }

    #[test]
    fn zero_noise_matches_closed_forms() {
        let n = 8;
        let omega = 0.25;
        let setup = SensingSetup {
            n_spins: n,
            omega,
            noise: NoiseModel::zero(),
            t_max: 2.0,
            dt: 1e-3,
            sample_dt: 0.25,
            n_traj: 3,
            seed: 3,
            probes: vec![ProbeKind::Ghz, ProbeKind::Encoded],
            qec_variants: vec![false],
            reference_curves: false,
        };
        let result = run_sensing_experiment(&setup, table()).unwrap();
        for (id, slope) in [("ghz_bare", n as f64), ("encoded_bare", n as f64 - 1.0)] {
            let curve = result.curve(id).unwrap();
            for p in curve {
                let expect = (slope * omega * p.t / 2.0).sin().powi(2);
                assert!(
                    (p.mean_infidelity - expect).abs() < 1e-10,
                    "{id} at t={}: {} vs {expect}",
                    p.t,
                    p.mean_infidelity
                );
            }
        }
    }

    #[test]
    fn matched_seeds_make_infidelity_zero_at_t0() {
        let setup = SensingSetup {
            n_spins: 6,
            omega: 0.1,
            noise: NoiseModel::collective_decay(0.5),
            t_max: 0.5,
            dt: 1e-3,
            sample_dt: 0.1,
            n_traj: 10,
            seed: 9,
            probes: vec![ProbeKind::Ghz, ProbeKind::Encoded],
            qec_variants: vec![false, true],
            reference_curves: true,
        };
        let result = run_sensing_experiment(&setup, table()).unwrap();
        for curve in &result.curves {
            assert!(curve.points[0].mean_infidelity.abs() < 1e-14, "{}", curve.id);
        }
    }

    #[test]
    fn nogo_scan_small_blocks() {
        let report = nogo_individual_decay(Half::from_int(3), 1e-10, table()).unwrap();
        assert!(report.candidates_checked > 100);
        assert!(
            report.max_phi_over_omega_t < 1e-10,
            "phi = {}",
            report.max_phi_over_omega_t
        );
    }

    #[test]
    fn memory_code_is_a_useless_sensor() {
        // The mirror memory code passes the decay check with zero phase.
        let code = crate::codes::build_two_level_code(
            Half::from_int(10),
            Half::from_int(5),
            Half::from_int(2),
        )
        .unwrap();
        let kraus = unit_kraus_set(24, Half::from_int(10), ErrorSet::individual_decay_only(), table())
            .unwrap();
        let report = kl_check(&code, &kraus, 1e-10);
        assert!(report.pass);
        assert!((code.branch_jz(0) - code.branch_jz(1)).abs() < 1e-12);
    }

    #[test]
    fn unequal_branch_jz_violates_decay_condition() {
        // Any candidate with unequal branch magnetization fails the no-jump
        // weight equality.
        let j = Half::from_int(3);
        let code = QecCode::from_branches(
            j,
            vec![(Half::from_int(-3), 1.0)],
            vec![(Half::from_int(2), 1.0)],
        )
        .unwrap();
        let kraus = unit_kraus_set(10, j, ErrorSet::individual_decay_only(), table()).unwrap();
        let report = kl_check(&code, &kraus, 1e-10);
        assert!(!report.pass);
    }
}
