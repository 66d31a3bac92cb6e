//! Qubit codes on the levels of one angular-momentum block, logical Kraus
//! operators for every decoherence branch, the Knill-Laflamme recoverability
//! check, and a numerical search over two-level codes.
//!
//! The workhorse family places `|0>` on levels `{-M1, +M2}` and `|1>` on the
//! mirror `{+M1, -M2}` with amplitudes chosen so both branches have zero mean
//! magnetization. That single condition, plus the mirror symmetry and level
//! separations of at least 3, is what makes every decay, pumping, dephasing,
//! and loss branch act identically on the two logical states.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::coeff::CoefficientTable;
use crate::dynamics::{branch_amplitudes, branch_labels, BranchKind, NoiseModel};
use crate::error::{Error, Result};
use crate::half::Half;
use crate::linalg;
use crate::state::TrajectoryState;

/// A qubit code: two orthogonal superpositions over disjoint level sets of
/// one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QecCode {
    total_j: Half,
    branches: [Vec<(Half, f64)>; 2],
    /// Two-level family parameters, when applicable.
    pub m1: Option<Half>,
    pub m2: Option<Half>,
    /// Set when the separation constraints of the two-level family are
    /// violated (kept buildable for negative tests).
    pub constraint_warning: bool,
}

impl QecCode {
    pub fn from_branches(
        total_j: Half,
        branch0: Vec<(Half, f64)>,
        branch1: Vec<(Half, f64)>,
    ) -> Result<Self> {
        for (m, _) in branch0.iter().chain(branch1.iter()) {
            if total_j.level_index(*m).is_none() {
                return Err(Error::Domain(format!(
                    "code level M={m} outside block J={total_j}"
                )));
            }
        }
        for (m0, _) in &branch0 {
            if branch1.iter().any(|(m1, _)| m1 == m0) {
                return Err(Error::Domain(
                    "logical branches must occupy disjoint levels".into(),
                ));
            }
        }
        let mut code = QecCode {
            total_j,
            branches: [branch0, branch1],
            m1: None,
            m2: None,
            constraint_warning: false,
        };
        for k in 0..2 {
            let norm: f64 = code.branches[k].iter().map(|(_, a)| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Domain("empty code branch".into()));
            }
            for (_, a) in &mut code.branches[k] {
                *a /= norm;
            }
        }
        Ok(code)
    }

    pub fn total_j(&self) -> Half {
        self.total_j
    }

    pub fn branch_levels(&self, k: usize) -> &[(Half, f64)] {
        &self.branches[k]
    }

    /// All levels occupied by either branch.
    pub fn levels(&self) -> Vec<Half> {
        let mut out: Vec<Half> = self
            .branches
            .iter()
            .flat_map(|b| b.iter().map(|(m, _)| *m))
            .collect();
        out.sort();
        out
    }

    /// Branch amplitude vector over the full block.
    pub fn branch_vector(&self, k: usize) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); self.total_j.level_count()];
        for (m, a) in &self.branches[k] {
            v[self.total_j.level_index(*m).unwrap()] = C64::new(*a, 0.0);
        }
        v
    }

    /// Mean magnetization of a branch.
    pub fn branch_jz(&self, k: usize) -> f64 {
        self.branches[k]
            .iter()
            .map(|(m, a)| m.to_f64() * a * a)
            .sum()
    }
}

/// Two-level mirror code: `|0>` on `{-m1, +m2}`, `|1>` on `{+m1, -m2}` with
/// `amp(-+m1) = sqrt(m2 / (m1 + m2))`. Violating the separation constraints
/// (`m2 >= 3/2`, `m1 - m2 >= 3`) sets a warning flag instead of failing so
/// negative tests can exercise the checker.
pub fn build_two_level_code(total_j: Half, m1: Half, m2: Half) -> Result<QecCode> {
    if m1.doubled() > total_j.doubled() {
        return Err(Error::Capacity {
            j: total_j,
            available: total_j.level_count(),
            needed: m1.level_count(),
        });
    }
    if m1.doubled() <= 0 || m2.doubled() <= 0 || m1 == m2 {
        return Err(Error::Domain("need m1 > m2 > 0".into()));
    }
    if !total_j.same_parity(m1) || !total_j.same_parity(m2) {
        return Err(Error::Domain(format!(
            "levels ({m1}, {m2}) do not exist in block J={total_j}"
        )));
    }
    let m1f = m1.to_f64();
    let m2f = m2.to_f64();
    let outer = (m2f / (m1f + m2f)).sqrt();
    let inner = (m1f / (m1f + m2f)).sqrt();
    let mut code = QecCode::from_branches(
        total_j,
        vec![(-m1, outer), (m2, inner)],
        vec![(m1, outer), (-m2, inner)],
    )?;
    code.m1 = Some(m1);
    code.m2 = Some(m2);
    code.constraint_warning = m2.doubled() < 3 || (m1 - m2).doubled() < 6;
    Ok(code)
}

/// One logical Kraus operator: shifts levels by `dm2/2`, moves the state to
/// the `(N + dn, J + dj2/2)` sector, and weighs levels by `amps`.
#[derive(Clone, Debug)]
pub struct KrausOp {
    pub kind: Option<BranchKind>,
    /// `None` kind is the no-jump operator.
    pub rate: f64,
    pub dj2: i32,
    pub dm2: i32,
    pub dn: i32,
    pub amps: Vec<f64>,
}

/// The logical Kraus operators generated by one time step of a noise model
/// on block `(N, J)`.
#[derive(Clone, Debug)]
pub struct KrausSet {
    pub n: u32,
    pub j: Half,
    pub dt: f64,
    pub ops: Vec<KrausOp>,
}

/// Builds one operator per branch with nonzero rate, amplitudes
/// `sqrt(rate dt) * coeff`, plus the no-jump operator.
pub fn build_kraus_set(
    n: u32,
    j: Half,
    noise: &NoiseModel,
    dt: f64,
    table: &CoefficientTable,
) -> Result<KrausSet> {
    noise.validate()?;
    let mut ops = Vec::new();
    let w = crate::dynamics::level_rates(n, j, noise, table)?;
    for kind in branch_labels() {
        let rate = match kind {
            BranchKind::Collective { m } => noise.collective[(m + 1) as usize],
            BranchKind::Individual { m, .. } => noise.individual[(m + 1) as usize],
            BranchKind::Loss { .. } => noise.loss,
        };
        if rate == 0.0 {
            continue;
        }
        let coeffs = branch_amplitudes(table, n, j, kind)?;
        if coeffs.iter().all(|c| *c == 0.0) {
            continue;
        }
        let scale = (rate * dt).sqrt();
        ops.push(KrausOp {
            kind: Some(kind),
            rate,
            dj2: kind.dj2(),
            dm2: kind.dm2(),
            dn: if kind.is_loss() { -1 } else { 0 },
            amps: coeffs.iter().map(|c| c * scale).collect(),
        });
    }
    // No-jump: first-order norm decay on each level.
    ops.push(KrausOp {
        kind: None,
        rate: 0.0,
        dj2: 0,
        dm2: 0,
        dn: 0,
        amps: w.iter().map(|wi| 1.0 - 0.5 * dt * wi).collect(),
    });
    Ok(KrausSet { n, j, dt, ops })
}

impl KrausSet {
    /// Max deviation of `sum E^dag E` from the identity; `O(dt^2)` by
    /// construction.
    pub fn completeness_deviation(&self) -> f64 {
        let len = self.j.level_count();
        let mut diag = vec![0.0_f64; len];
        for op in &self.ops {
            for (idx, a) in op.amps.iter().enumerate() {
                // E^dag E is diagonal per operator: each op shifts all levels
                // uniformly, so the product collapses back.
                diag[idx] += a * a;
            }
        }
        diag.iter().map(|d| (d - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Applies one operator to a trajectory state (unnormalized result is
    /// renormalized; the branch norm is returned).
    pub fn apply(&self, op: &KrausOp, state: &TrajectoryState) -> Result<(TrajectoryState, f64)> {
        if state.total_j() != self.j || state.n_spins() != self.n {
            return Err(Error::Domain("state does not match Kraus context".into()));
        }
        let tgt_j = self.j + Half::new(op.dj2);
        let tgt_n = (self.n as i32 + op.dn) as u32;
        let mut amps = vec![C64::new(0.0, 0.0); tgt_j.level_count()];
        let mut norm_sq = 0.0;
        for (idx, c) in state.amps().iter().enumerate() {
            let a = op.amps[idx];
            if a == 0.0 {
                continue;
            }
            let m_target = self.j.level_at(idx) + Half::new(op.dm2);
            if let Some(t) = tgt_j.level_index(m_target) {
                let v = c * a;
                norm_sq += v.norm_sqr();
                amps[t] += v;
            }
        }
        let mut out = state.clone();
        out.replace(tgt_n, tgt_j, amps)?;
        Ok((out, norm_sq.sqrt()))
    }
}

/// Result of the recoverability check.
#[derive(Clone, Debug)]
pub struct KlReport {
    /// `K[a][b] = <0| E_a^dag E_b |0>` over the stripped operator list
    /// (identity first); equals the `|1>` expectation when the check passes.
    pub k_matrix: Array2<C64>,
    /// Largest violation: branch-expectation mismatch or nonzero cross term.
    pub max_violation: f64,
    pub pass: bool,
    /// Smallest eigenvalue of `K`; non-negative within tolerance on pass.
    pub min_eigenvalue: f64,
}

/// Evaluates the recoverability conditions for `code` against every operator
/// pair: identical action on both logical states and no cross-logical terms.
/// Rate and time-step prefactors are stripped first, so the verdict depends
/// only on amplitude ratios.
pub fn kl_check(code: &QecCode, kraus: &KrausSet, tol: f64) -> KlReport {
    let len = kraus.j.level_count();
    // Strip sqrt(rate dt); the no-jump operator contributes the identity at
    // this order.
    let mut stripped: Vec<(i32, i32, i32, Vec<f64>)> = vec![(0, 0, 0, vec![1.0; len])];
    for op in &kraus.ops {
        match op.kind {
            None => continue,
            Some(_) => {
                let scale = (op.rate * kraus.dt).sqrt();
                stripped.push((
                    op.dn,
                    op.dj2,
                    op.dm2,
                    op.amps.iter().map(|a| a / scale).collect(),
                ));
            }
        }
    }
    let v0 = code.branch_vector(0);
    let v1 = code.branch_vector(1);
    let count = stripped.len();
    let mut k_matrix = Array2::from_elem((count, count), C64::new(0.0, 0.0));
    let mut max_violation = 0.0_f64;
    for (ai, (dna, dja, dma, amps_a)) in stripped.iter().enumerate() {
        for (bi, (dnb, djb, dmb, amps_b)) in stripped.iter().enumerate() {
            // E_a^dag E_b vanishes unless both land in the same sector.
            if dna != dnb || dja != djb {
                continue;
            }
            // P = E_a^dag E_b maps level M -> M + dmb - dma with weight
            // amps_a(M + dmb - dma... ) careful: row = col + dmb - dma.
            let eval = |va: &[C64], vb: &[C64]| -> C64 {
                let mut acc = C64::new(0.0, 0.0);
                for col in 0..len {
                    let m_col = kraus.j.level_at(col);
                    let m_tgt = m_col + Half::new(*dmb);
                    let tgt_j = kraus.j + Half::new(*djb);
                    if tgt_j.level_index(m_tgt).is_none() {
                        continue;
                    }
                    let m_row = m_tgt - Half::new(*dma);
                    let Some(row) = kraus.j.level_index(m_row) else {
                        continue;
                    };
                    acc += va[row].conj() * vb[col] * amps_a[row] * amps_b[col];
                }
                acc
            };
            let k00 = eval(&v0, &v0);
            let k11 = eval(&v1, &v1);
            let k01 = eval(&v0, &v1);
            let k10 = eval(&v1, &v0);
            k_matrix[[ai, bi]] = 0.5 * (k00 + k11);
            max_violation = max_violation
                .max((k00 - k11).norm())
                .max(k01.norm())
                .max(k10.norm());
        }
    }
    let min_eigenvalue = linalg::min_eigenvalue(&k_matrix);
    KlReport {
        k_matrix,
        max_violation,
        pass: max_violation < tol,
        min_eigenvalue,
    }
}

/// Which error channels a code should protect against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSet {
    pub collective: [bool; 3],
    pub individual: [bool; 3],
    pub loss: bool,
}

impl ErrorSet {
    pub fn all() -> Self {
        ErrorSet {
            collective: [true; 3],
            individual: [true; 3],
            loss: true,
        }
    }

    pub fn dephasing_only() -> Self {
        ErrorSet {
            collective: [false, true, false],
            individual: [false, true, false],
            loss: false,
        }
    }

    pub fn individual_decay_only() -> Self {
        ErrorSet {
            collective: [false; 3],
            individual: [true, false, false],
            loss: false,
        }
    }

    pub fn collective_decay_only() -> Self {
        ErrorSet {
            collective: [true, false, false],
            individual: [false; 3],
            loss: false,
        }
    }

    pub fn to_noise(self) -> NoiseModel {
        NoiseModel {
            collective: self.collective.map(|b| if b { 1.0 } else { 0.0 }),
            individual: self.individual.map(|b| if b { 1.0 } else { 0.0 }),
            loss: if self.loss { 1.0 } else { 0.0 },
        }
    }
}

/// Unit-rate Kraus set for a channel selection.
pub fn unit_kraus_set(
    n: u32,
    j: Half,
    channels: ErrorSet,
    table: &CoefficientTable,
) -> Result<KrausSet> {
    build_kraus_set(n, j, &channels.to_noise(), 1.0, table)
}

/// Exhaustive search over codes whose branches occupy one or two levels
/// each. For each disjoint level-set pair the mean and mean-square
/// magnetization equalities pin the amplitudes (a 2x2 linear solve); the
/// full recoverability check then filters the candidates.
pub fn code_search(
    n: u32,
    j: Half,
    channels: ErrorSet,
    level_budget: usize,
    tol: f64,
    table: &CoefficientTable,
) -> Result<Vec<QecCode>> {
    if level_budget > j.level_count() {
        return Err(Error::Domain(format!(
            "level budget {level_budget} exceeds block size {}",
            j.level_count()
        )));
    }
    let kraus = unit_kraus_set(n, j, channels, table)?;
    let levels: Vec<Half> = j.levels().collect();
    let mut found = Vec::new();

    let mut branch_sets: Vec<Vec<Half>> = Vec::new();
    if level_budget >= 1 {
        for &a in &levels {
            branch_sets.push(vec![a]);
        }
    }
    if level_budget >= 2 {
        for i in 0..levels.len() {
            for k in (i + 1)..levels.len() {
                branch_sets.push(vec![levels[i], levels[k]]);
            }
        }
    }

    for (si, s0) in branch_sets.iter().enumerate() {
        for s1 in branch_sets.iter().skip(si + 1) {
            if s0.iter().any(|m| s1.contains(m)) {
                continue;
            }
            for amps in solve_amplitudes(s0, s1) {
                let branch0: Vec<(Half, f64)> =
                    s0.iter().copied().zip(amps.0.iter().copied()).collect();
                let branch1: Vec<(Half, f64)> =
                    s1.iter().copied().zip(amps.1.iter().copied()).collect();
                let Ok(code) = QecCode::from_branches(j, branch0, branch1) else {
                    continue;
                };
                let report = kl_check(&code, &kraus, tol);
                if report.pass {
                    found.push(code);
                }
            }
        }
    }
    Ok(found)
}

// Candidate amplitude assignments for a branch-set pair: the solutions of the
// first- and second-moment equality equations.
fn solve_amplitudes(s0: &[Half], s1: &[Half]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let moments = |s: &[Half], p: f64| -> (f64, f64) {
        match s.len() {
            1 => (s[0].to_f64(), s[0].to_f64() * s[0].to_f64()),
            2 => {
                let (a, b) = (s[0].to_f64(), s[1].to_f64());
                (a * p + b * (1.0 - p), a * a * p + b * b * (1.0 - p))
            }
            _ => unreachable!(),
        }
    };
    let to_amps = |s: &[Half], p: f64| -> Vec<f64> {
        match s.len() {
            1 => vec![1.0],
            _ => vec![p.sqrt(), (1.0 - p).sqrt()],
        }
    };
    let valid = |p: f64| p > 1e-9 && p < 1.0 - 1e-9;

    let mut out = Vec::new();
    match (s0.len(), s1.len()) {
        (1, 1) => {
            out.push((vec![1.0], vec![1.0]));
        }
        (2, 1) | (1, 2) => {
            // One unknown; both moment equations must agree.
            let (fixed, free, swap) = if s0.len() == 1 { (s0, s1, true) } else { (s1, s0, false) };
            let (t1, t2) = moments(fixed, 1.0);
            let (a, b) = (free[0].to_f64(), free[1].to_f64());
            if (a - b).abs() > 1e-12 {
                let p1 = (t1 - b) / (a - b);
                let p2 = if (a * a - b * b).abs() > 1e-12 {
                    (t2 - b * b) / (a * a - b * b)
                } else {
                    p1
                };
                if valid(p1) && (p1 - p2).abs() < 1e-9 {
                    let amps_free = to_amps(free, p1);
                    if swap {
                        out.push((vec![1.0], amps_free));
                    } else {
                        out.push((amps_free, vec![1.0]));
                    }
                }
            }
        }
        (2, 2) => {
            // Linear 2x2 system in (p, q).
            let (a0, a1) = (s0[0].to_f64(), s0[1].to_f64());
            let (b0, b1) = (s1[0].to_f64(), s1[1].to_f64());
            let m = [[a0 - a1, -(b0 - b1)], [a0 * a0 - a1 * a1, -(b0 * b0 - b1 * b1)]];
            let rhs = [b1 - a1, b1 * b1 - a1 * a1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() > 1e-9 {
                let p = (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det;
                let q = (m[0][0] * rhs[1] - rhs[0] * m[1][0]) / det;
                if valid(p) && valid(q) {
                    out.push((to_amps(s0, p), to_amps(s1, q)));
                }
            } else {
                // Degenerate system: sample the one-parameter family.
                for step in 1..20 {
                    let p = step as f64 / 20.0;
                    if (a0 - a1).abs() < 1e-12 {
                        continue;
                    }
                    let lhs = a0 * p + a1 * (1.0 - p);
                    if (b0 - b1).abs() < 1e-12 {
                        continue;
                    }
                    let q = (lhs - b1) / (b0 - b1);
                    if valid(q) {
                        out.push((to_amps(s0, p), to_amps(s1, q)));
                    }
                }
            }
        }
        _ => {}
    }
    out
}

/// One catalog entry of a code search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub total_j: Half,
    pub branch0: Vec<(Half, f64)>,
    pub branch1: Vec<(Half, f64)>,
    pub m1: Option<Half>,
    pub m2: Option<Half>,
    pub channels: ErrorSet,
    pub kl_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CodeCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl CodeCatalog {
    pub fn export(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing catalog: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("parsing catalog: {e}")))
    }

    pub fn codes(&self) -> Result<Vec<QecCode>> {
        self.entries
            .iter()
            .map(|e| QecCode::from_branches(e.total_j, e.branch0.clone(), e.branch1.clone()))
            .collect()
    }
}

/// Encodes a logical qubit into a trajectory state carried by `code`.
pub fn encode_qubit(
    code: &QecCode,
    alpha0: C64,
    alpha1: C64,
    n: u32,
) -> Result<TrajectoryState> {
    let amps = crate::state::encoded_reference(code, alpha0, alpha1);
    TrajectoryState::new(n, code.total_j(), amps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn table() -> &'static CoefficientTable {
        static TABLE: OnceLock<CoefficientTable> = OnceLock::new();
        TABLE.get_or_init(|| CoefficientTable::build_unverified(24).unwrap())
    }

    fn fig_code() -> QecCode {
        build_two_level_code(Half::from_int(10), Half::from_int(5), Half::from_int(2)).unwrap()
    }

    #[test]
    fn two_level_amplitudes_match_family_rule() {
        let code = fig_code();
        let a = code
            .branch_levels(0)
            .iter()
            .find(|(m, _)| *m == Half::from_int(-5))
            .unwrap()
            .1;
        let b = code
            .branch_levels(0)
            .iter()
            .find(|(m, _)| *m == Half::from_int(2))
            .unwrap()
            .1;
        assert!((a - (2.0_f64 / 7.0).sqrt()).abs() < 1e-15);
        assert!((b - (5.0_f64 / 7.0).sqrt()).abs() < 1e-15);
        assert!(!code.constraint_warning);
        // Orthogonality is structural (disjoint levels) and both branches
        // have zero mean magnetization.
        assert!(code.branch_jz(0).abs() < 1e-14);
        assert!(code.branch_jz(1).abs() < 1e-14);
    }

    #[test]
    fn constraint_violations_warn_but_build() {
        let code = build_two_level_code(Half::from_int(10), Half::from_int(3), Half::from_int(1)).unwrap();
        assert!(code.constraint_warning);
        assert!(build_two_level_code(Half::from_int(4), Half::from_int(5), Half::from_int(2)).is_err());
    }

    #[test]
    fn kraus_set_structure() {
        // Dephasing-only noise produces operators at (dj, 0) plus no-jump.
        let noise = NoiseModel::individual_only(0.0, 1.0, 0.0);
        let set = build_kraus_set(20, Half::from_int(10), &noise, 1e-3, table()).unwrap();
        let jumps: Vec<_> = set.ops.iter().filter(|o| o.kind.is_some()).collect();
        assert!(jumps.iter().all(|o| o.dm2 == 0));
        // At J = N/2 the raising branch vanishes.
        assert!(jumps.iter().all(|o| o.dj2 <= 0));
        assert!(set.ops.iter().any(|o| o.kind.is_none()));
        assert!(set.completeness_deviation() < 10.0 * 1e-3 * 1e-3);
    }

    #[test]
    fn loss_operators_have_half_integer_shifts() {
        let noise = NoiseModel { loss: 1.0, ..NoiseModel::zero() };
        let set = build_kraus_set(20, Half::from_int(10), &noise, 1e-3, table()).unwrap();
        for op in set.ops.iter().filter(|o| o.kind.is_some()) {
            assert_eq!(op.dj2.abs() % 2, 1);
            assert_eq!(op.dm2.abs() % 2, 1);
            assert_eq!(op.dn, -1);
        }
    }

    #[test]
    fn fig_code_passes_all_channels() {
        let kraus = unit_kraus_set(20, Half::from_int(10), ErrorSet::all(), table()).unwrap();
        let report = kl_check(&fig_code(), &kraus, 1e-10);
        assert!(report.pass, "violation {}", report.max_violation);
        assert!(report.min_eigenvalue > -1e-10);
    }

    #[test]
    fn close_levels_fail() {
        // M1 - M2 = 2 < 3: decay and pumping syndromes collide.
        let code = build_two_level_code(Half::from_int(10), Half::from_int(3), Half::from_int(1)).unwrap();
        let kraus = unit_kraus_set(20, Half::from_int(10), ErrorSet::all(), table()).unwrap();
        let report = kl_check(&code, &kraus, 1e-10);
        assert!(!report.pass);
    }

    #[test]
    fn extreme_level_code_fails_on_dephasing() {
        // |0> = |-J>, |1> = |+J>: the magnetization-preserving branch acts
        // with opposite sign on the two logical states.
        let j = Half::from_int(10);
        let code = QecCode::from_branches(
            j,
            vec![(Half::from_int(-10), 1.0)],
            vec![(Half::from_int(10), 1.0)],
        )
        .unwrap();
        let kraus = unit_kraus_set(20, j, ErrorSet::dephasing_only(), table()).unwrap();
        let report = kl_check(&code, &kraus, 1e-10);
        assert!(!report.pass);
        assert!(report.max_violation > 1.0);
    }

    #[test]
    fn kl_pass_is_rate_independent() {
        let code = fig_code();
        for scale in [0.1, 1.0, 7.5] {
            let noise = NoiseModel {
                collective: [0.3 * scale, 0.7 * scale, 0.2 * scale],
                individual: [1.1 * scale, 0.4 * scale, 0.9 * scale],
                loss: 0.5 * scale,
            };
            let set = build_kraus_set(20, Half::from_int(10), &noise, 1e-3, table()).unwrap();
            let report = kl_check(&code, &set, 1e-10);
            assert!(report.pass, "scale {scale}");
        }
    }

    #[test]
    fn search_rediscovers_mirror_family() {
        // J = 9/2 is the smallest block carrying a full code.
        let j = Half::new(9);
        let n = 13;
        let found = code_search(n, j, ErrorSet::all(), 2, 1e-10, table()).unwrap();
        assert!(!found.is_empty());
        let expect = build_two_level_code(j, Half::new(9), Half::new(3)).unwrap();
        let found_match = found.iter().any(|c| {
            let mut lv = c.levels();
            lv.sort();
            lv == expect.levels()
                && c.branch_levels(0)
                    .iter()
                    .chain(c.branch_levels(1))
                    .all(|(m, a)| {
                        let e = expect
                            .branch_levels(0)
                            .iter()
                            .chain(expect.branch_levels(1))
                            .find(|(em, _)| em == m)
                            .map(|(_, ea)| *ea);
                        e.map(|ea| (ea - a).abs() < 1e-9).unwrap_or(false)
                    })
        });
        assert!(found_match, "mirror family not rediscovered");
    }

    #[test]
    fn search_below_threshold_is_empty() {
        let table = table();
        for j2 in [3, 4, 5, 6, 7, 8] {
            let j = Half::new(j2);
            let n = (j2 + 4) as u32;
            let n = if (n as i32 - j2) % 2 == 0 { n } else { n + 1 };
            let found = code_search(n, j, ErrorSet::all(), 2, 1e-10, table).unwrap();
            assert!(found.is_empty(), "unexpected code at J={j}");
        }
    }

    #[test]
    fn dephasing_only_search_has_equal_branch_jz() {
        let j = Half::from_int(10);
        let found = code_search(24, j, ErrorSet::dephasing_only(), 2, 1e-10, table()).unwrap();
        assert!(!found.is_empty());
        for code in &found {
            assert!(
                (code.branch_jz(0) - code.branch_jz(1)).abs() < 1e-9,
                "branch Jz differ: {} vs {}",
                code.branch_jz(0),
                code.branch_jz(1)
            );
        }
    }

    #[test]
    fn catalog_round_trip() {
        let code = fig_code();
        let catalog = CodeCatalog {
            entries: vec![CatalogEntry {
                total_j: code.total_j(),
                branch0: code.branch_levels(0).to_vec(),
                branch1: code.branch_levels(1).to_vec(),
                m1: code.m1,
                m2: code.m2,
                channels: ErrorSet::all(),
                kl_residual: 0.0,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        catalog.export(&path).unwrap();
        let back = CodeCatalog::import(&path).unwrap();
        assert_eq!(back.entries.len(), 1);
        let codes = back.codes().unwrap();
        assert_eq!(codes[0].levels(), code.levels());
    }

    #[test]
    fn dephasing_jump_is_orthogonal_to_code_state() {
        // Applying the magnetization-preserving operator to a code state
        // yields a state orthogonal to it.
        let code = fig_code();
        let noise = NoiseModel::individual_only(0.0, 1.0, 0.0);
        let set = build_kraus_set(20, Half::from_int(10), &noise, 1e-3, table()).unwrap();
        let op = set
            .ops
            .iter()
            .find(|o| matches!(o.kind, Some(BranchKind::Individual { dj: 0, m: 0 })))
            .unwrap();
        let state = encode_qubit(&code, C64::new(0.6, 0.0), C64::new(0.8, 0.0), 20).unwrap();
        let (dephased, _) = set.apply(op, &state).unwrap();
        assert!(state.overlap_sqr(&dephased) < 1e-20);
    }
}
