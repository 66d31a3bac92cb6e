//! Error detection and correction with collective control only: syndrome
//! measurements, dephasing discrimination, pulse-sequence recovery into the
//! code of the new angular-momentum sector, teleport hand-off to a fresh
//! ensemble, and the full memory experiment.
//!
//! Every recovery unitary is assembled from two primitives that collective
//! control can realize inside one block: a two-level coupling (a polynomial
//! in `J_z` sandwiching a ladder power, which Rabi-couples exactly two
//! levels) and a single-level phase (a `J_z` polynomial). Pulses are derived
//! from the known error branch, never from the quantum state, so correction
//! is a fixed unitary per syndrome.

use std::collections::HashMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codes::{build_two_level_code, encode_qubit, QecCode};
use crate::coeff::CoefficientTable;
use crate::dynamics::{
    aggregate, branch_amplitudes, run_ensemble, uniform_f64, BranchKind, NoiseModel, SampleRow,
    SimEnv, TrajectoryHook, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::half::Half;
use crate::state::{trajectory_fidelity, TrajectoryState};

/// Measured error label: change of angular momentum and magnetization
/// (doubled), with loss flagged by half-integer shifts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Syndrome {
    pub dj2: i32,
    pub dm2: i32,
    pub kind: SyndromeKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SyndromeKind {
    NoError,
    /// Magnetization-preserving error (resolved by the discrimination pulse
    /// when the sector did not change).
    Dephasing,
    /// Decay or pumping.
    Shift,
    /// Spin loss.
    Loss,
}

impl Syndrome {
    pub fn no_error() -> Self {
        Syndrome { dj2: 0, dm2: 0, kind: SyndromeKind::NoError }
    }

    /// Loss flag if and only if the shifts are half-integer.
    pub fn is_loss_consistent(&self) -> bool {
        let half_shift = self.dj2.rem_euclid(2) == 1 && self.dm2.rem_euclid(2) == 1;
        (self.kind == SyndromeKind::Loss) == half_shift
    }
}

/// Two-level coupling Hamiltonian on one block: `h P L^k P + h.c.` with `P`
/// the product of `(J_z - M)` over every level except the two coupled ones
/// and `L` the collective lowering operator. The result is nonzero only at
/// the coupled off-diagonal pair.
pub fn build_level_coupling(j: Half, m_a: Half, m_b: Half, strength: C64) -> Result<Array2<C64>> {
    if m_a == m_b {
        return Err(Error::Domain("coupled levels must differ".into()));
    }
    for m in [m_a, m_b] {
        if j.level_index(m).is_none() {
            return Err(Error::Domain(format!("level M={m} outside block J={j}")));
        }
    }
    let len = j.level_count();
    let (hi, lo) = if m_a.doubled() > m_b.doubled() { (m_a, m_b) } else { (m_b, m_a) };
    let steps = ((hi - lo).doubled() / 2) as usize;

    // Diagonal polynomial values Prod_{M not in {a,b}} (m - M).
    let poly = |m: Half| -> f64 {
        j.levels()
            .filter(|x| *x != m_a && *x != m_b)
            .map(|x| (m - x).to_f64())
            .product()
    };
    // Ladder amplitude from hi down to lo.
    let mut ladder = 1.0;
    let mut m = hi;
    for _ in 0..steps {
        ladder *= crate::coeff::collective_amp(j, m, -1);
        m = m - Half::ONE;
    }
    let element = strength * poly(hi) * poly(lo) * ladder;
    let mut h = Array2::from_elem((len, len), C64::new(0.0, 0.0));
    let ihi = j.level_index(hi).unwrap();
    let ilo = j.level_index(lo).unwrap();
    h[[ilo, ihi]] = element;
    h[[ihi, ilo]] = element.conj();
    Ok(h)
}

/// One primitive of a recovery sequence.
#[derive(Clone, Copy, Debug)]
pub enum Pulse {
    /// `exp(-i (h/|h| |a><b| + h.c.) * angle)`.
    Coupling { m_a: Half, m_b: Half, h: C64, angle: f64 },
    /// `exp(-i phase |m><m|)`.
    Phase { m: Half, phase: f64 },
}

impl Pulse {
    /// Resonant level swap: `|a> -> -i|b>`, `|b> -> -i|a>`.
    pub fn pi(m_a: Half, m_b: Half) -> Pulse {
        Pulse::Coupling {
            m_a,
            m_b,
            h: C64::new(1.0, 0.0),
            angle: std::f64::consts::FRAC_PI_2,
        }
    }

    /// Real rotation in the `(a, b)` plane:
    /// `|a> -> cos(t)|a> - sin(t)|b>`, `|b> -> sin(t)|a> + cos(t)|b>`.
    pub fn rotation(m_a: Half, m_b: Half, theta: f64) -> Pulse {
        Pulse::Coupling { m_a, m_b, h: C64::new(0.0, 1.0), angle: theta }
    }

    fn unitary(h: C64, angle: f64) -> [[C64; 2]; 2] {
        crate::linalg::two_level_exp(h / h.norm(), angle)
    }

    pub fn apply_to_state(&self, state: &mut TrajectoryState) {
        let j = state.total_j();
        match self {
            Pulse::Coupling { m_a, m_b, h, angle } => {
                let (Some(ia), Some(ib)) = (j.level_index(*m_a), j.level_index(*m_b)) else {
                    return;
                };
                let u = Self::unitary(*h, *angle);
                let a = state.amps()[ia];
                let b = state.amps()[ib];
                state.amps_mut()[ia] = u[0][0] * a + u[0][1] * b;
                state.amps_mut()[ib] = u[1][0] * a + u[1][1] * b;
            }
            Pulse::Phase { m, phase } => {
                if let Some(i) = j.level_index(*m) {
                    let f = C64::new(0.0, -*phase).exp();
                    state.amps_mut()[i] *= f;
                }
            }
        }
    }

    // Same action on a sparse level -> amplitude map (prediction tracking).
    fn apply_to_map(&self, v: &mut HashMap<i32, C64>) {
        match self {
            Pulse::Coupling { m_a, m_b, h, angle } => {
                let u = Self::unitary(*h, *angle);
                let a = v.get(&m_a.doubled()).copied().unwrap_or(C64::new(0.0, 0.0));
                let b = v.get(&m_b.doubled()).copied().unwrap_or(C64::new(0.0, 0.0));
                set_or_remove(v, m_a.doubled(), u[0][0] * a + u[0][1] * b);
                set_or_remove(v, m_b.doubled(), u[1][0] * a + u[1][1] * b);
            }
            Pulse::Phase { m, phase } => {
                if let Some(x) = v.get_mut(&m.doubled()) {
                    *x *= C64::new(0.0, -*phase).exp();
                }
            }
        }
    }
}

fn set_or_remove(v: &mut HashMap<i32, C64>, key: i32, value: C64) {
    if value.norm() < 1e-15 {
        v.remove(&key);
    } else {
        v.insert(key, value);
    }
}

/// Reads the definite angular momentum of a trajectory; no collapse needed.
pub fn measure_j_sector(state: &TrajectoryState) -> Half {
    state.total_j()
}

/// Projective sector measurement on a density state: samples an `(N, J)`
/// block by its weight and renormalizes the surviving block.
pub fn measure_j_sector_density(
    state: &crate::state::PiDensityState,
    rng: &mut ChaCha8Rng,
) -> Result<(u32, Half, crate::state::PiDensityState)> {
    let mut u = uniform_f64(rng) * state.total_trace();
    for (n, j, block) in state.blocks() {
        let w: f64 = (0..block.nrows()).map(|i| block[[i, i]].re).sum();
        if u < w {
            let renorm = block / C64::new(w, 0.0);
            let out = crate::state::PiDensityState::from_block(n, j, renorm)?;
            return Ok((n, j, out));
        }
        u -= w;
    }
    Err(Error::Domain("state has no weight".into()))
}

/// Projective syndrome measurement of the magnetization shift. The candidate
/// level sets `{code level + m}` are pairwise disjoint by the code distance,
/// so the measurement identifies `m` while preserving logical coherence
/// inside the chosen set. Support outside every candidate is an
/// unrecoverable multi-error outcome.
pub fn measure_syndrome_m(
    state: &mut TrajectoryState,
    prev_code: &QecCode,
    spins_lost: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Syndrome> {
    let dj2 = state.total_j().doubled() - prev_code.total_j().doubled();
    let candidates: Vec<i32> = match spins_lost {
        0 => vec![-2, 0, 2],
        1 => vec![-1, 1],
        _ => return Err(Error::Unrecoverable),
    };
    let j = state.total_j();
    let mut weights = Vec::with_capacity(candidates.len());
    for &dm2 in &candidates {
        let mut w = 0.0;
        for m in prev_code.levels() {
            if let Some(idx) = j.level_index(m + Half::new(dm2)) {
                w += state.amps()[idx].norm_sqr();
            }
        }
        weights.push(w);
    }
    let covered: f64 = weights.iter().sum();
    let mut u = uniform_f64(rng);
    if u >= covered {
        return Err(Error::Unrecoverable);
    }
    let mut chosen = candidates.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            chosen = i;
            break;
        }
        u -= w;
    }
    let dm2 = candidates[chosen];
    let mut amps = vec![C64::new(0.0, 0.0); j.level_count()];
    for m in prev_code.levels() {
        if let Some(idx) = j.level_index(m + Half::new(dm2)) {
            amps[idx] = state.amps()[idx];
        }
    }
    state.replace(state.n_spins(), j, amps)?;
    let kind = if spins_lost == 1 {
        SyndromeKind::Loss
    } else if dm2 == 0 && dj2 == 0 {
        SyndromeKind::NoError // possibly dephasing; resolved separately
    } else if dm2 == 0 {
        SyndromeKind::Dephasing
    } else {
        SyndromeKind::Shift
    };
    Ok(Syndrome { dj2, dm2, kind })
}

// Ancilla levels for the dephasing discrimination: one unused level adjacent
// to each outer code level; the separation constraints keep them free.
fn ancilla_levels(code: &QecCode) -> Result<(Half, Half)> {
    let m1 = code.m1.ok_or_else(|| {
        Error::Domain("dephasing discrimination needs the two-level family".into())
    })?;
    let anc0 = -m1 + Half::ONE;
    let anc1 = m1 - Half::ONE;
    let levels = code.levels();
    if levels.contains(&anc0) || levels.contains(&anc1) || anc0 == anc1 {
        return Err(Error::Domain(
            "no free ancilla levels; code violates separation constraints".into(),
        ));
    }
    Ok((anc0, anc1))
}

// Branch amplitudes of the two-level family are (cos a, sin a).
fn branch_angle(code: &QecCode) -> f64 {
    let b = code.branch_levels(0);
    b[1].1.atan2(b[0].1)
}

/// Pulses that rotate, within each branch span, the component orthogonal to
/// the code state onto the branch ancilla level, leaving the code component
/// invariant.
pub fn dephasing_discrimination_pulses(code: &QecCode) -> Result<Vec<Pulse>> {
    let (anc0, anc1) = ancilla_levels(code)?;
    let a = branch_angle(code);
    let mut pulses = Vec::new();
    for (k, anc) in [(0usize, anc0), (1usize, anc1)] {
        let levels = code.branch_levels(k);
        let (l0, l1) = (levels[0].0, levels[1].0);
        pulses.push(Pulse::rotation(l0, l1, a));
        pulses.push(Pulse::pi(l1, anc));
        pulses.push(Pulse::rotation(l0, l1, -a));
    }
    Ok(pulses)
}

/// Resolves the ambiguous `(0, 0)` syndrome: discrimination pulses followed
/// by a code-set versus ancilla-set level measurement. On a dephasing
/// outcome the state is left on the ancilla levels for [`recover`]; on a
/// no-error outcome the state is projected back onto the code subspace.
pub fn detect_dephasing(
    state: &mut TrajectoryState,
    code: &QecCode,
    rng: &mut ChaCha8Rng,
) -> Result<Syndrome> {
    let (anc0, anc1) = ancilla_levels(code)?;
    for pulse in dephasing_discrimination_pulses(code)? {
        pulse.apply_to_state(state);
    }
    let j = state.total_j();
    let anc_weight: f64 = [anc0, anc1]
        .iter()
        .filter_map(|m| j.level_index(*m))
        .map(|i| state.amps()[i].norm_sqr())
        .sum();
    let dephased = uniform_f64(rng) < anc_weight;
    let keep: Vec<Half> = if dephased { vec![anc0, anc1] } else { code.levels() };
    let mut amps = vec![C64::new(0.0, 0.0); j.level_count()];
    for m in keep {
        if let Some(i) = j.level_index(m) {
            amps[i] = state.amps()[i];
        }
    }
    state.replace(state.n_spins(), j, amps)?;
    Ok(Syndrome {
        dj2: 0,
        dm2: 0,
        kind: if dephased { SyndromeKind::Dephasing } else { SyndromeKind::NoError },
    })
}

// Predicted (normalized) branch vectors of the corrupted state as level ->
// amplitude maps, derived from the error-branch coefficients alone.
fn corrupted_branch_vectors(
    syndrome: &Syndrome,
    prev_code: &QecCode,
    prev_n: u32,
    table: &CoefficientTable,
) -> Result<[HashMap<i32, C64>; 2]> {
    let kind = if syndrome.kind == SyndromeKind::Loss {
        BranchKind::Loss { dj2: syndrome.dj2 as i8, dm2: syndrome.dm2 as i8 }
    } else {
        BranchKind::Individual { dj: (syndrome.dj2 / 2) as i8, m: (syndrome.dm2 / 2) as i8 }
    };
    let amps = branch_amplitudes(table, prev_n, prev_code.total_j(), kind)?;
    let prev_j = prev_code.total_j();
    let mut out = [HashMap::new(), HashMap::new()];
    for (k, slot) in out.iter_mut().enumerate() {
        for (m, a) in prev_code.branch_levels(k) {
            let idx = prev_j.level_index(*m).unwrap();
            let coeff = amps[idx];
            if coeff == 0.0 {
                continue;
            }
            let tgt = *m + Half::new(syndrome.dm2);
            slot.insert(tgt.doubled(), C64::new(coeff * a, 0.0));
        }
        if slot.is_empty() {
            return Err(Error::ImpossibleBranch);
        }
        let norm: f64 = slot.values().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        for v in slot.values_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

// Branch vectors after a dephasing detection: the orthogonal components
// parked on the ancilla levels, with the phases the pulses imprinted
// (d_0 -> -i anc0, d_1 -> +i anc1).
fn dephased_branch_vectors(code: &QecCode) -> Result<[HashMap<i32, C64>; 2]> {
    let (anc0, anc1) = ancilla_levels(code)?;
    let mut v0 = HashMap::new();
    v0.insert(anc0.doubled(), C64::new(0.0, -1.0));
    let mut v1 = HashMap::new();
    v1.insert(anc1.doubled(), C64::new(0.0, 1.0));
    Ok([v0, v1])
}

// Builds and applies the pulse sequence mapping the predicted branch vectors
// onto the target code branches. The pulses depend only on the syndrome and
// the codes.
fn restore_with_pulses(
    state: &mut TrajectoryState,
    mut predicted: [HashMap<i32, C64>; 2],
    target: &QecCode,
) -> Result<()> {
    let mut pulses: Vec<Pulse> = Vec::new();

    // Stage 1: move populations onto the target levels with resonant swaps.
    // A swap also moves whatever sits on its partner level, so prediction
    // maps are updated through every pulse and moves whose destination is
    // still occupied wait (a blocked pair is just one swap).
    let mut moves: Vec<(i32, i32)> = Vec::new();
    for k in 0..2 {
        let mut sources: Vec<i32> = predicted[k].keys().copied().collect();
        sources.sort();
        let mut targets: Vec<i32> = target
            .branch_levels(k)
            .iter()
            .map(|(m, _)| m.doubled())
            .collect();
        targets.sort();
        match sources.len() {
            1 => {
                // Send the single source to the target level of larger
                // amplitude for a shorter final rotation; deterministic pick:
                // the first target not already used as someone's destination.
                let dest = targets
                    .iter()
                    .find(|t| !moves.iter().any(|(_, d)| d == *t))
                    .copied()
                    .ok_or(Error::Unrecoverable)?;
                if sources[0] != dest {
                    moves.push((sources[0], dest));
                }
            }
            2 => {
                for (s, t) in sources.iter().zip(targets.iter()) {
                    if s != t {
                        moves.push((*s, *t));
                    }
                }
            }
            _ => return Err(Error::Unrecoverable),
        }
    }
    let mut guard = 0;
    while !moves.is_empty() {
        guard += 1;
        if guard > 32 {
            return Err(Error::Unrecoverable);
        }
        let occupied: Vec<i32> = predicted.iter().flat_map(|v| v.keys().copied()).collect();
        // Prefer a move with a free destination; otherwise take a blocked
        // swap pair (destination occupied by a source moving to us).
        let pick = moves
            .iter()
            .position(|(_, d)| !occupied.contains(d))
            .or_else(|| {
                moves
                    .iter()
                    .position(|(s, d)| moves.iter().any(|(s2, d2)| s2 == d && d2 == s))
            })
            .ok_or(Error::Unrecoverable)?;
        let (src, dst) = moves[pick];
        let pulse = Pulse::pi(Half::new(src), Half::new(dst));
        pulse.apply_to_map(&mut predicted[0]);
        pulse.apply_to_map(&mut predicted[1]);
        pulses.push(pulse);
        // The swap satisfies (src -> dst) and, if pending, (dst -> src).
        moves.retain(|(s, d)| !((*s == src && *d == dst) || (*s == dst && *d == src)));
    }

    // Stage 2: per-branch phase alignment and amplitude rotation on the
    // target span.
    for k in 0..2 {
        let targets = target.branch_levels(k);
        let (l0, l1) = (targets[0].0, targets[1].0);
        for (m, _) in targets {
            let amp = predicted[k]
                .get(&m.doubled())
                .copied()
                .unwrap_or(C64::new(0.0, 0.0));
            if amp.norm() > 1e-15 && amp.arg().abs() > 1e-15 {
                let pulse = Pulse::Phase { m: *m, phase: amp.arg() };
                pulse.apply_to_map(&mut predicted[0]);
                pulse.apply_to_map(&mut predicted[1]);
                pulses.push(pulse);
            }
        }
        let u0 = predicted[k].get(&l0.doubled()).map(|c| c.re).unwrap_or(0.0);
        let u1 = predicted[k].get(&l1.doubled()).map(|c| c.re).unwrap_or(0.0);
        let a = u1.atan2(u0);
        let b = targets[1].1.atan2(targets[0].1);
        if (a - b).abs() > 1e-15 {
            let pulse = Pulse::rotation(l0, l1, a - b);
            pulse.apply_to_map(&mut predicted[0]);
            pulse.apply_to_map(&mut predicted[1]);
            pulses.push(pulse);
        }
    }

    // The prediction must coincide with the target branches exactly now.
    for k in 0..2 {
        for (m, amp) in target.branch_levels(k) {
            let got = predicted[k]
                .get(&m.doubled())
                .copied()
                .unwrap_or(C64::new(0.0, 0.0));
            if (got - C64::new(*amp, 0.0)).norm() > 1e-9 {
                return Err(Error::Unrecoverable);
            }
        }
    }
    for pulse in &pulses {
        pulse.apply_to_state(state);
    }
    Ok(())
}

/// Restores a corrupted state to the code of its current sector and returns
/// the new active code. The caller supplies the code active before the error
/// and the registry that selects per-sector codes.
pub fn recover(
    state: &mut TrajectoryState,
    syndrome: &Syndrome,
    prev_code: &QecCode,
    prev_n: u32,
    registry: &CodeRegistry,
    table: &CoefficientTable,
) -> Result<QecCode> {
    if syndrome.kind == SyndromeKind::NoError {
        return Ok(prev_code.clone());
    }
    let j_new = state.total_j();
    let target = registry
        .code_for(j_new)
        .ok_or_else(|| Error::Domain(format!("no code available at J={j_new}")))?;
    let predicted = if syndrome.kind == SyndromeKind::Dephasing && syndrome.dj2 == 0 {
        dephased_branch_vectors(prev_code)?
    } else {
        corrupted_branch_vectors(syndrome, prev_code, prev_n, table)?
    };
    restore_with_pulses(state, predicted, &target)?;
    Ok(target)
}

/// Logical-level teleport to a freshly initialized ensemble. The dispersive
/// ancilla couplings and excitation measurements are ideal, so the transfer
/// is exact; the two measurement outcomes are uniform bits consumed from the
/// trajectory stream, with the conditional Pauli corrections folded in.
pub fn teleport_handoff(
    state: &TrajectoryState,
    code: &QecCode,
    fresh_n: u32,
    fresh_code: &QecCode,
    rng: &mut ChaCha8Rng,
) -> Result<(TrajectoryState, [bool; 2])> {
    let mut alpha = [C64::new(0.0, 0.0); 2];
    let j = state.total_j();
    for (k, slot) in alpha.iter_mut().enumerate() {
        for (m, a) in code.branch_levels(k) {
            if let Some(i) = j.level_index(*m) {
                *slot += C64::new(*a, 0.0) * state.amps()[i];
            }
        }
    }
    let captured = alpha[0].norm_sqr() + alpha[1].norm_sqr();
    if (captured - 1.0).abs() > 1e-9 {
        return Err(Error::Handoff(format!(
            "state support outside the code subspace (captured {captured:.6})"
        )));
    }
    let bits = [uniform_f64(rng) < 0.5, uniform_f64(rng) < 0.5];
    let fresh = encode_qubit(fresh_code, alpha[0], alpha[1], fresh_n)?;
    Ok((fresh, bits))
}

/// Selects the code used at each angular momentum as the ensemble degrades:
/// the configured level pair on blocks of matching parity, and its
/// half-step-reduced partner on the other parity.
#[derive(Clone, Debug)]
pub struct CodeRegistry {
    base_m1: Half,
    base_m2: Half,
}

impl CodeRegistry {
    pub fn new(m1: Half, m2: Half) -> Result<Self> {
        if m2.doubled() < 3 || (m1 - m2).doubled() < 6 {
            return Err(Error::Config(format!(
                "code family needs m2 >= 3/2 and m1 - m2 >= 3, got ({m1}, {m2})"
            )));
        }
        Ok(CodeRegistry { base_m1: m1, base_m2: m2 })
    }

    /// The code for block `J`, or `None` when the block is too small.
    pub fn code_for(&self, j: Half) -> Option<QecCode> {
        let (m1, m2) = if j.same_parity(self.base_m1) {
            (self.base_m1, self.base_m2)
        } else {
            (self.base_m1 - Half::HALF, self.base_m2 - Half::HALF)
        };
        if m2.doubled() < 3 || (m1 - m2).doubled() < 6 || j.doubled() < m1.doubled() {
            return None;
        }
        build_two_level_code(j, m1, m2).ok()
    }
}

/// Error-correction policy of a memory run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QecPolicy {
    /// Run a detection/recovery cycle every this many steps.
    pub steps_per_cycle: usize,
    pub teleport: bool,
    /// Hand off to a fresh ensemble when `J` drops below this threshold.
    pub j_threshold: Half,
}

/// Trajectory hook running the detection/recovery cycle: read the sector,
/// measure the magnetization syndrome, discriminate dephasing, apply the
/// recovery pulses, and optionally hand the qubit to a fresh ensemble when
/// the block nears the smallest usable size. An unrecoverable outcome marks
/// the trajectory failed; it then reports random-guess fidelity.
pub struct QecHook {
    registry: CodeRegistry,
    policy: QecPolicy,
    code: QecCode,
    code_n: u32,
    alpha: [C64; 2],
    fresh_n: u32,
    fresh_j: Half,
    steps: usize,
    teleports: u64,
    failed: bool,
}

impl QecHook {
    pub fn new(
        registry: CodeRegistry,
        policy: QecPolicy,
        code: QecCode,
        n: u32,
        alpha: [C64; 2],
    ) -> Self {
        QecHook {
            registry,
            policy,
            fresh_j: code.total_j(),
            code,
            code_n: n,
            alpha,
            fresh_n: n,
            steps: 0,
            teleports: 0,
            failed: false,
        }
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    fn cycle(
        &mut self,
        state: &mut TrajectoryState,
        rng: &mut ChaCha8Rng,
        env: &SimEnv<'_>,
    ) -> Result<()> {
        let spins_lost = self.code_n.saturating_sub(state.n_spins());
        let dj2 = state.total_j().doubled() - self.code.total_j().doubled();
        let code = self.code.clone();
        if spins_lost == 0 && dj2 == 0 {
            let mut syndrome = measure_syndrome_m(state, &code, 0, rng)?;
            if syndrome.dm2 == 0 {
                syndrome = detect_dephasing(state, &code, rng)?;
            }
            if syndrome.kind != SyndromeKind::NoError {
                self.code = recover(state, &syndrome, &code, self.code_n, &self.registry, env.table)?;
            }
        } else {
            if spins_lost > 1 || dj2.abs() > 2 {
                return Err(Error::Unrecoverable);
            }
            let syndrome = measure_syndrome_m(state, &code, spins_lost, rng)?;
            self.code = recover(state, &syndrome, &code, self.code_n, &self.registry, env.table)?;
            self.code_n = state.n_spins();
        }
        if self.policy.teleport && state.total_j().doubled() < self.policy.j_threshold.doubled() {
            let fresh_code = self
                .registry
                .code_for(self.fresh_j)
                .ok_or_else(|| Error::Domain("fresh ensemble has no code".into()))?;
            let (fresh, _bits) =
                teleport_handoff(state, &self.code, self.fresh_n, &fresh_code, rng)?;
            *state = fresh;
            self.code = fresh_code;
            self.code_n = self.fresh_n;
            self.teleports += 1;
        }
        Ok(())
    }
}

impl TrajectoryHook for QecHook {
    fn after_step(
        &mut self,
        state: &mut TrajectoryState,
        _t: f64,
        rng: &mut ChaCha8Rng,
        env: &SimEnv<'_>,
    ) -> Result<()> {
        self.steps += 1;
        if self.failed || self.steps % self.policy.steps_per_cycle != 0 {
            return Ok(());
        }
        if self.cycle(state, rng, env).is_err() {
            self.failed = true;
        }
        Ok(())
    }

    fn observe(&mut self, state: &TrajectoryState, _env: &SimEnv<'_>) -> (f64, u64) {
        if self.failed {
            return (0.5, self.teleports);
        }
        (
            trajectory_fidelity(state, self.alpha[0], self.alpha[1], &self.code, self.code_n),
            self.teleports,
        )
    }
}

/// Hook for un-corrected curves: fixed reference, no intervention.
pub struct FixedReferenceHook {
    pub code: QecCode,
    pub n: u32,
    pub alpha: [C64; 2],
}

impl TrajectoryHook for FixedReferenceHook {
    fn after_step(
        &mut self,
        _state: &mut TrajectoryState,
        _t: f64,
        _rng: &mut ChaCha8Rng,
        _env: &SimEnv<'_>,
    ) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, state: &TrajectoryState, _env: &SimEnv<'_>) -> (f64, u64) {
        (
            trajectory_fidelity(state, self.alpha[0], self.alpha[1], &self.code, self.n),
            0,
        )
    }
}

/// Which curves a memory run produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MemoryCurve {
    /// Two lowest levels of the stretched block, no correction.
    Bare,
    /// The code without any correction cycle.
    CodeNoQec,
    /// Detection and recovery, no hand-off.
    CodeQec,
    /// Detection, recovery, and teleport hand-off.
    CodeQecTeleport,
}

impl MemoryCurve {
    pub fn id(&self) -> &'static str {
        match self {
            MemoryCurve::Bare => "bare",
            MemoryCurve::CodeNoQec => "code_noqec",
            MemoryCurve::CodeQec => "code_qec",
            MemoryCurve::CodeQecTeleport => "code_qec_teleport",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "bare" => Some(MemoryCurve::Bare),
            "code_noqec" => Some(MemoryCurve::CodeNoQec),
            "code_qec" => Some(MemoryCurve::CodeQec),
            "code_qec_teleport" => Some(MemoryCurve::CodeQecTeleport),
            _ => None,
        }
    }

    pub fn all() -> Vec<MemoryCurve> {
        vec![
            MemoryCurve::Bare,
            MemoryCurve::CodeNoQec,
            MemoryCurve::CodeQec,
            MemoryCurve::CodeQecTeleport,
        ]
    }
}

/// Fully resolved memory-experiment parameters.
#[derive(Clone, Debug, Serialize)]
pub struct MemorySetup {
    pub n_spins: u32,
    pub initial_j: Half,
    pub m1: Half,
    pub m2: Half,
    pub noise: NoiseModel,
    pub t_max: f64,
    pub dt: f64,
    pub sample_dt: f64,
    pub n_traj: u32,
    pub seed: u64,
    pub qec_steps_per_cycle: usize,
    pub j_threshold: Half,
    pub curves: Vec<MemoryCurve>,
}

/// One aggregated point of a memory curve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MemoryPoint {
    pub t: f64,
    pub mean_fidelity: f64,
    pub stderr: f64,
    pub mean_j: f64,
    pub mean_n: f64,
    pub teleports_cumulative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MemoryCurveResult {
    pub curve: MemoryCurve,
    pub points: Vec<MemoryPoint>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MemoryResult {
    pub curves: Vec<MemoryCurveResult>,
}

impl MemoryResult {
    pub fn curve(&self, kind: MemoryCurve) -> Option<&[MemoryPoint]> {
        self.curves
            .iter()
            .find(|c| c.curve == kind)
            .map(|c| c.points.as_slice())
    }
}

fn aggregate_memory(records: &[TrajectoryRecord]) -> Vec<MemoryPoint> {
    let fid = aggregate(records, |s: &SampleRow| s.fidelity);
    let jm = aggregate(records, |s: &SampleRow| s.j);
    let nm = aggregate(records, |s: &SampleRow| s.n);
    let tp = aggregate(records, |s: &SampleRow| s.teleports as f64);
    fid.iter()
        .zip(jm.iter().zip(nm.iter().zip(tp.iter())))
        .map(|(f, (j, (n, t)))| MemoryPoint {
            t: f.t,
            mean_fidelity: f.mean,
            stderr: f.stderr,
            mean_j: j.mean,
            mean_n: n.mean,
            teleports_cumulative: t.mean,
        })
        .collect()
}

/// Runs the memory experiment: one trajectory ensemble per requested curve,
/// encoding a `|+>` qubit and tracking logical fidelity against it.
pub fn run_memory_experiment(
    setup: &MemorySetup,
    table: &CoefficientTable,
) -> Result<MemoryResult> {
    setup.noise.validate()?;
    crate::degeneracy::check_pair(setup.n_spins, setup.initial_j)
        .map_err(|e| Error::Config(format!("initial sector: {e}")))?;
    if table.n_max() < setup.n_spins {
        return Err(Error::TableRange {
            n_max: table.n_max(),
            n: setup.n_spins,
            j: setup.initial_j,
        });
    }
    if setup.dt <= 0.0 || setup.t_max <= 0.0 || setup.sample_dt <= 0.0 {
        return Err(Error::Config("dt, t_max, sample_dt must be positive".into()));
    }
    let registry = CodeRegistry::new(setup.m1, setup.m2)?;
    let code = registry
        .code_for(setup.initial_j)
        .ok_or_else(|| Error::Config(format!("no code at initial J={}", setup.initial_j)))?;
    let sqrt_half = std::f64::consts::FRAC_1_SQRT_2;
    let alpha = [C64::new(sqrt_half, 0.0), C64::new(sqrt_half, 0.0)];
    let sample_every = (setup.sample_dt / setup.dt).round().max(1.0) as usize;

    let n_i32 = setup.n_spins as i32;
    let bare_code = QecCode::from_branches(
        Half::new(n_i32),
        vec![(Half::new(-n_i32), 1.0)],
        vec![(Half::new(-n_i32 + 2), 1.0)],
    )?;

    let mut curves = Vec::new();
    for kind in &setup.curves {
        let records = match kind {
            MemoryCurve::Bare => {
                let initial = encode_qubit(&bare_code, alpha[0], alpha[1], setup.n_spins)?;
                let bare = bare_code.clone();
                run_ensemble(
                    setup.n_traj,
                    setup.seed,
                    move |_| {
                        (
                            initial.clone(),
                            FixedReferenceHook { code: bare.clone(), n: initial.n_spins(), alpha },
                        )
                    },
                    &setup.noise,
                    table,
                    setup.t_max,
                    setup.dt,
                    sample_every,
                )?
            }
            MemoryCurve::CodeNoQec => {
                let initial = encode_qubit(&code, alpha[0], alpha[1], setup.n_spins)?;
                let c = code.clone();
                run_ensemble(
                    setup.n_traj,
                    setup.seed,
                    move |_| {
                        (
                            initial.clone(),
                            FixedReferenceHook { code: c.clone(), n: initial.n_spins(), alpha },
                        )
                    },
                    &setup.noise,
                    table,
                    setup.t_max,
                    setup.dt,
                    sample_every,
                )?
            }
            MemoryCurve::CodeQec | MemoryCurve::CodeQecTeleport => {
                let initial = encode_qubit(&code, alpha[0], alpha[1], setup.n_spins)?;
                let policy = QecPolicy {
                    steps_per_cycle: setup.qec_steps_per_cycle.max(1),
                    teleport: *kind == MemoryCurve::CodeQecTeleport,
                    j_threshold: setup.j_threshold,
                };
                let c = code.clone();
                let reg = registry.clone();
                let n0 = setup.n_spins;
                run_ensemble(
                    setup.n_traj,
                    setup.seed,
                    move |_| {
                        (
                            initial.clone(),
                            QecHook::new(reg.clone(), policy, c.clone(), n0, alpha),
                        )
                    },
                    &setup.noise,
                    table,
                    setup.t_max,
                    setup.dt,
                    sample_every,
                )?
            }
        };
        curves.push(MemoryCurveResult { curve: *kind, points: aggregate_memory(&records) });
    }
    Ok(MemoryResult { curves })
}

/// Default step size: `1e-3 / max total rate` over the levels of the initial
/// block (clamped to the sample interval).
pub fn default_dt(
    n: u32,
    j: Half,
    noise: &NoiseModel,
    table: &CoefficientTable,
    sample_dt: f64,
) -> Result<f64> {
    let w = crate::dynamics::level_rates(n, j, noise, table)?;
    let max_rate = w.iter().fold(0.0_f64, |a, b| a.max(*b));
    let dt = if max_rate > 0.0 { 1e-3 / max_rate } else { sample_dt };
    Ok(dt.min(sample_dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{build_kraus_set, unit_kraus_set, ErrorSet};
    use rand_core::SeedableRng;
    use std::sync::OnceLock;

    fn table() -> &'static CoefficientTable {
        static TABLE: OnceLock<CoefficientTable> = OnceLock::new();
        TABLE.get_or_init(|| CoefficientTable::build_unverified(22).unwrap())
    }

    fn fig_code() -> QecCode {
        build_two_level_code(Half::from_int(10), Half::from_int(5), Half::from_int(2)).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(crate::dynamics::derive_seed(seed, 0))
    }

    fn plus_state() -> TrajectoryState {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        encode_qubit(&fig_code(), C64::new(s, 0.0), C64::new(s, 0.0), 20).unwrap()
    }

    #[test]
    fn level_coupling_matrix_pattern() {
        let j = Half::from_int(3);
        let h = build_level_coupling(j, Half::from_int(-2), Half::from_int(1), C64::new(0.3, 0.4))
            .unwrap();
        let ia = j.level_index(Half::from_int(-2)).unwrap();
        let ib = j.level_index(Half::from_int(1)).unwrap();
        for r in 0..h.nrows() {
            for c in 0..h.ncols() {
                let expected_nonzero = (r == ia && c == ib) || (r == ib && c == ia);
                assert_eq!(h[[r, c]].norm() > 0.0, expected_nonzero, "({r},{c})");
            }
        }
        // Hermitian.
        assert!((h[[ia, ib]] - h[[ib, ia]].conj()).norm() < 1e-12);
        // Zero strength gives the zero matrix.
        let z = build_level_coupling(j, Half::from_int(-2), Half::from_int(1), C64::new(0.0, 0.0))
            .unwrap();
        assert!(z.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn pi_pulse_matches_matrix_exponential() {
        // The closed-form pulse equals exp(-iHt) of the block Hamiltonian
        // restricted to the coupled pair.
        let j = Half::from_int(2);
        let (ma, mb) = (Half::from_int(-1), Half::from_int(2));
        let h = build_level_coupling(j, ma, mb, C64::new(1.0, 0.0)).unwrap();
        let ia = j.level_index(ma).unwrap();
        let ib = j.level_index(mb).unwrap();
        let element = h[[ia.min(ib), ia.max(ib)]];
        let t_pi = std::f64::consts::FRAC_PI_2 / element.norm();
        // Series exponential of the full block matrix.
        let dim = h.nrows();
        let mut u = Array2::from_elem((dim, dim), C64::new(0.0, 0.0));
        for i in 0..dim {
            u[[i, i]] = C64::new(1.0, 0.0);
        }
        let mih = h.mapv(|x| x * C64::new(0.0, -t_pi));
        let mut term = u.clone();
        for k in 1..40 {
            term = term.dot(&mih) / C64::new(k as f64, 0.0);
            u = &u + &term;
        }
        // A pi pulse swaps the two levels with -i phases (up to the phase of
        // the matrix element).
        let mut state = TrajectoryState::level_state(4, j, ma).unwrap();
        let phase = element / element.norm();
        Pulse::Coupling { m_a: ma.min(mb), m_b: ma.max(mb), h: element, angle: std::f64::consts::FRAC_PI_2 }
            .apply_to_state(&mut state);
        let expect_b = C64::new(0.0, -1.0) * phase.conj();
        assert!((state.amp(mb) - expect_b).norm() < 1e-12);
        // And the dense exponential agrees on that column.
        let col: Vec<C64> = (0..dim).map(|r| u[[r, ia]]).collect();
        assert!((col[ib] - expect_b).norm() < 1e-10);
        for (r, v) in col.iter().enumerate() {
            if r != ib {
                assert!(v.norm() < 1e-10, "leakage at row {r}");
            }
        }
    }

    #[test]
    fn syndrome_on_clean_state_is_no_error() {
        let mut state = plus_state();
        let mut r = rng(1);
        let code = fig_code();
        let syn = measure_syndrome_m(&mut state, &code, 0, &mut r).unwrap();
        assert_eq!(syn.kind, SyndromeKind::NoError);
        let syn = detect_dephasing(&mut state, &code, &mut r).unwrap();
        assert_eq!(syn.kind, SyndromeKind::NoError);
        assert!(syn.is_loss_consistent());
        // State unchanged within tolerance.
        let fresh = plus_state();
        assert!((state.overlap_sqr(&fresh) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_dephased_state_is_flagged_deterministically() {
        let code = fig_code();
        let noise = NoiseModel::individual_only(0.0, 1.0, 0.0);
        let set = build_kraus_set(20, Half::from_int(10), &noise, 1e-3, table()).unwrap();
        let op = set
            .ops
            .iter()
            .find(|o| matches!(o.kind, Some(BranchKind::Individual { dj: 0, m: 0 })))
            .unwrap();
        for seed in 0..20 {
            let (mut dephased, _) = set.apply(op, &plus_state()).unwrap();
            let mut r = rng(seed);
            let syn = detect_dephasing(&mut dephased, &code, &mut r).unwrap();
            assert_eq!(syn.kind, SyndromeKind::Dephasing);
        }
    }

    #[test]
    fn partial_dephasing_follows_born_rule() {
        // sqrt(0.9) code + sqrt(0.1) dephased: flag probability 0.1.
        let code = fig_code();
        let noise = NoiseModel::individual_only(0.0, 1.0, 0.0);
        let set = build_kraus_set(20, Half::from_int(10), &noise, 1e-3, table()).unwrap();
        let op = set
            .ops
            .iter()
            .find(|o| matches!(o.kind, Some(BranchKind::Individual { dj: 0, m: 0 })))
            .unwrap();
        let clean = plus_state();
        let (dephased, _) = set.apply(op, &clean).unwrap();
        let mut mixed = clean.clone();
        for (i, amp) in mixed.amps_mut().iter_mut().enumerate() {
            *amp = 0.9_f64.sqrt() * clean.amps()[i] + 0.1_f64.sqrt() * dephased.amps()[i];
        }
        mixed.renormalize();
        let trials = 4000;
        let mut flagged = 0;
        for seed in 0..trials {
            let mut state = mixed.clone();
            let mut r = rng(seed);
            let syn = detect_dephasing(&mut state, &code, &mut r).unwrap();
            if syn.kind == SyndromeKind::Dephasing {
                flagged += 1;
            }
        }
        let p = flagged as f64 / trials as f64;
        let sigma = (0.1 * 0.9 / trials as f64).sqrt();
        assert!((p - 0.1).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn block_measurement_statistics() {
        // Two blocks weighted 0.7 / 0.3 sample accordingly.
        let j1 = Half::from_int(2);
        let j0 = Half::from_int(1);
        let mut b1 = Array2::from_elem((5, 5), C64::new(0.0, 0.0));
        b1[[0, 0]] = C64::new(0.7, 0.0);
        let mut b0 = Array2::from_elem((3, 3), C64::new(0.0, 0.0));
        b0[[1, 1]] = C64::new(0.3, 0.0);
        let state =
            crate::state::PiDensityState::from_blocks(4, vec![(4, j1, b1), (4, j0, b0)]).unwrap();
        let trials = 3000;
        let mut hi = 0;
        for seed in 0..trials {
            let mut r = rng(seed);
            let (_, j, _) = measure_j_sector_density(&state, &mut r).unwrap();
            if j == j1 {
                hi += 1;
            }
        }
        let p = hi as f64 / trials as f64;
        let sigma = (0.7 * 0.3 / trials as f64).sqrt();
        assert!((p - 0.7).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn single_error_round_trips_every_branch() {
        // For every nonzero-rate branch: jump -> syndrome -> recovery
        // restores logical fidelity 1.
        let code = fig_code();
        let registry = CodeRegistry::new(Half::from_int(5), Half::from_int(2)).unwrap();
        let noise = NoiseModel {
            collective: [1.0; 3],
            individual: [1.0; 3],
            loss: 1.0,
        };
        let alpha = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let initial = encode_qubit(&code, alpha[0], alpha[1], 20).unwrap();
        let weights = crate::dynamics::jump_weights(&initial, &noise, table()).unwrap();
        let mut checked = 0;
        for (kind, rate) in weights {
            if rate <= 1e-12 {
                continue;
            }
            let mut state = initial.clone();
            crate::dynamics::apply_jump(&mut state, kind, table()).unwrap();
            let mut r = rng(1000 + checked as u64);
            let spins_lost = if kind.is_loss() { 1 } else { 0 };
            let mut syndrome = measure_syndrome_m(&mut state, &code, spins_lost, &mut r).unwrap();
            if syndrome.kind == SyndromeKind::NoError {
                syndrome = detect_dephasing(&mut state, &code, &mut r).unwrap();
                assert_eq!(syndrome.kind, SyndromeKind::Dephasing, "{kind:?}");
            }
            let new_code = recover(&mut state, &syndrome, &code, 20, &registry, table()).unwrap();
            let f = trajectory_fidelity(&state, alpha[0], alpha[1], &new_code, state.n_spins());
            assert!(
                (f - 1.0).abs() < 1e-10,
                "branch {kind:?}: fidelity {f}"
            );
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} branches had weight");
    }

    #[test]
    fn no_error_recovery_is_identity() {
        let mut state = plus_state();
        let code = fig_code();
        let registry = CodeRegistry::new(Half::from_int(5), Half::from_int(2)).unwrap();
        let out = recover(
            &mut state,
            &Syndrome::no_error(),
            &code,
            20,
            &registry,
            table(),
        )
        .unwrap();
        assert_eq!(out.levels(), code.levels());
        assert!((state.overlap_sqr(&plus_state()) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn recovery_unitaries_are_collective_pulses() {
        // Structural check: the dephasing discrimination sequence consists
        // only of two-level couplings, each realizable by the block
        // Hamiltonian construction.
        let code = fig_code();
        for pulse in dephasing_discrimination_pulses(&code).unwrap() {
            match pulse {
                Pulse::Coupling { m_a, m_b, .. } => {
                    build_level_coupling(code.total_j(), m_a, m_b, C64::new(1.0, 0.0)).unwrap();
                }
                Pulse::Phase { .. } => {}
            }
        }
    }

    #[test]
    fn teleport_preserves_logical_data() {
        let code = fig_code();
        let registry = CodeRegistry::new(Half::from_int(5), Half::from_int(2)).unwrap();
        // |0> input.
        let zero = encode_qubit(&code, C64::new(1.0, 0.0), C64::new(0.0, 0.0), 20).unwrap();
        let mut r = rng(5);
        let (fresh, _) = teleport_handoff(&zero, &code, 20, &code, &mut r).unwrap();
        let f = trajectory_fidelity(&fresh, C64::new(1.0, 0.0), C64::new(0.0, 0.0), &code, 20);
        assert!((f - 1.0).abs() < 1e-12);
        // Random qubit into a smaller fresh code.
        let alpha = [C64::new(0.48, -0.36), C64::new(0.6, 0.52)];
        let norm = (alpha[0].norm_sqr() + alpha[1].norm_sqr()).sqrt();
        let alpha = [alpha[0] / norm, alpha[1] / norm];
        let state = encode_qubit(&code, alpha[0], alpha[1], 20).unwrap();
        let fresh_code = registry.code_for(Half::new(19)).unwrap();
        let (fresh, _) = teleport_handoff(&state, &code, 19, &fresh_code, &mut r).unwrap();
        let f = trajectory_fidelity(&fresh, alpha[0], alpha[1], &fresh_code, 19);
        assert!((f - 1.0).abs() < 1e-12);
        // Undecodable input fails.
        let stray = TrajectoryState::level_state(20, Half::from_int(10), Half::ZERO).unwrap();
        assert!(teleport_handoff(&stray, &code, 20, &code, &mut r).is_err());
    }

    #[test]
    fn teleport_measurement_branches_are_uniform() {
        let code = fig_code();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let state = encode_qubit(&code, C64::new(s, 0.0), C64::new(s, 0.0), 20).unwrap();
        let mut counts = [0u32; 4];
        let trials = 4000;
        for seed in 0..trials {
            let mut r = rng(seed);
            let (_, bits) = teleport_handoff(&state, &code, 20, &code, &mut r).unwrap();
            counts[(bits[0] as usize) * 2 + bits[1] as usize] += 1;
        }
        for c in counts {
            let p = c as f64 / trials as f64;
            assert!((p - 0.25).abs() < 0.03, "branch probability {p}");
        }
    }

    #[test]
    fn registry_alternates_parity_and_stops_below_threshold() {
        let registry = CodeRegistry::new(Half::from_int(5), Half::from_int(2)).unwrap();
        let c10 = registry.code_for(Half::from_int(10)).unwrap();
        assert_eq!(c10.m1, Some(Half::from_int(5)));
        let c19h = registry.code_for(Half::new(19)).unwrap();
        assert_eq!(c19h.m1, Some(Half::new(9)));
        assert_eq!(c19h.m2, Some(Half::new(3)));
        assert!(registry.code_for(Half::new(9)).is_some()); // J = 9/2
        assert!(registry.code_for(Half::from_int(4)).is_none());
        assert!(registry.code_for(Half::new(7)).is_none());
    }

    #[test]
    fn zero_noise_memory_curves_stay_at_one() {
        let setup = MemorySetup {
            n_spins: 12,
            initial_j: Half::from_int(6),
            m1: Half::from_int(5),
            m2: Half::from_int(2),
            noise: NoiseModel::zero(),
            t_max: 0.2,
            dt: 1e-3,
            sample_dt: 0.05,
            n_traj: 5,
            seed: 4,
            qec_steps_per_cycle: 1,
            j_threshold: Half::new(11),
            curves: MemoryCurve::all(),
        };
        let result = run_memory_experiment(&setup, table()).unwrap();
        for curve in &result.curves {
            for p in &curve.points {
                assert!(
                    (p.mean_fidelity - 1.0).abs() < 1e-10,
                    "{:?} at t={}: {}",
                    curve.curve,
                    p.t,
                    p.mean_fidelity
                );
            }
        }
    }

    #[test]
    fn qec_hook_survives_errors_that_kill_bare_state() {
        // Short, noisy run: the corrected curve must stay near 1 while the
        // uncorrected code curve degrades.
        let setup = MemorySetup {
            n_spins: 20,
            initial_j: Half::from_int(10),
            m1: Half::from_int(5),
            m2: Half::from_int(2),
            noise: NoiseModel::individual_only(0.5, 0.0, 0.0),
            t_max: 0.5,
            dt: 1e-4,
            sample_dt: 0.1,
            n_traj: 40,
            seed: 11,
            qec_steps_per_cycle: 1,
            j_threshold: Half::new(11),
            curves: vec![MemoryCurve::CodeNoQec, MemoryCurve::CodeQecTeleport],
        };
        let result = run_memory_experiment(&setup, table()).unwrap();
        let qec = result.curve(MemoryCurve::CodeQecTeleport).unwrap();
        let noqec = result.curve(MemoryCurve::CodeNoQec).unwrap();
        let last = qec.len() - 1;
        assert!(qec[last].mean_fidelity > 0.95, "qec {}", qec[last].mean_fidelity);
        assert!(
            noqec[last].mean_fidelity < qec[last].mean_fidelity - 0.2,
            "noqec {} vs qec {}",
            noqec[last].mean_fidelity,
            qec[last].mean_fidelity
        );
    }

    #[test]
    fn unit_kraus_zero_rate_channels_are_absent() {
        let set = unit_kraus_set(20, Half::from_int(10), ErrorSet::individual_decay_only(), table())
            .unwrap();
        assert!(set
            .ops
            .iter()
            .filter_map(|o| o.kind)
            .all(|k| matches!(k, BranchKind::Individual { m: -1, .. })));
    }
}
