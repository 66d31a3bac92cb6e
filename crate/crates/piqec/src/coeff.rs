//! Jump-amplitude tables for collective, single-spin, and spin-loss channels
//! acting on degeneracy-averaged level pairs.
//!
//! # Derivation
//!
//! Amplitudes follow from decomposing `N` spins as `(N-1) + 1`: a coupled
//! state `|J, M, i>` splits over the last spin as Clebsch-Gordan combinations
//! of `|J', M -+ 1/2, i'>` with `J' = J +- 1/2`. Conjugating by a single-spin
//! operator and averaging over the multiplicity index leaves, for each
//! channel branch, a product `amp(M) * amp(M')` whose `M` part is the
//! standard rank-1 ladder factor and whose weight is a multiplicity ratio:
//!
//! * branch `J -> J-1`: weight `N d(N-1, J-1/2) / (d(N,J) 4J^2)`
//! * branch `J -> J+1`: weight `N d(N-1, J+1/2) / (d(N,J) 4(J+1)^2)`
//! * branch `J -> J`:   the sum of both weight terms; its `M` part is the
//!   collective ladder factor, which is why a `J`-preserving single-spin jump
//!   and a collective jump leave the same state behind.
//!
//! Spin loss is the same decomposition read as a partial trace: the branch
//! `(J -> J + j, M -> M + m)` carries `sqrt(d(N-1, J+j) / d(N,J))` times a
//! Clebsch-Gordan factor, and its squared amplitudes sum to one.
//!
//! All amplitudes are real. Phase freedom is fixed by taking ladder factors
//! non-negative; the magnetization-preserving factor is the signed eigenvalue
//! `M` itself (and the Pauli-z factor `2M`), which is not a phase choice.
//! Every stored value is verified against the exact full-Hilbert-space model
//! for small ensembles and against cross-channel identities above that.

use std::collections::BTreeMap;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::degeneracy::{self, big_ratio, degeneracy};
use crate::error::{Error, Result};
use crate::half::Half;
use crate::oracle::{Channel, ExactChannelOps, FullStateBasis};

/// Largest ensemble size verified directly against the exact model.
pub const ORACLE_VERIFY_MAX: u32 = 10;
/// Verification tolerance; the build fails loudly beyond it.
pub const VERIFY_TOL: f64 = 1e-10;

/// Phase/normalization convention tag stored with every table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    /// Real amplitudes; ladder factors non-negative; amplitudes are those of
    /// the unnormalized post-jump state so squared sums equal channel weights.
    RealLadderV1,
}

/// Collective ladder amplitude: `J_m |J,M,i> = amp * |J,M+m,i>`.
/// Out-of-range level shifts return 0.
pub fn collective_amp(j: Half, m_level: Half, m: i8) -> f64 {
    if j.level_index(m_level).is_none() {
        return 0.0;
    }
    let jj = j.to_f64();
    let mm = m_level.to_f64();
    match m {
        -1 => {
            let v = (jj + mm) * (jj - mm + 1.0);
            if v > 0.0 { v.sqrt() } else { 0.0 }
        }
        0 => mm,
        1 => {
            let v = (jj - mm) * (jj + mm + 1.0);
            if v > 0.0 { v.sqrt() } else { 0.0 }
        }
        _ => panic!("m must be -1, 0, +1"),
    }
}

// Ladder factor of the rank-1 transfer (J, M) -> (J + dj, M + m), non-negative.
fn rank1_factor(j: Half, m_level: Half, dj: i8, m: i8) -> f64 {
    let jj = j.to_f64();
    let mm = m_level.to_f64();
    let v = match (dj, m) {
        (0, _) => return collective_amp(j, m_level, m),
        (-1, -1) => (jj + mm) * (jj + mm - 1.0),
        (-1, 0) => (jj + mm) * (jj - mm),
        (-1, 1) => (jj - mm) * (jj - mm - 1.0),
        (1, -1) => (jj - mm + 1.0) * (jj - mm + 2.0),
        (1, 0) => (jj + mm + 1.0) * (jj - mm + 1.0),
        (1, 1) => (jj + mm + 1.0) * (jj + mm + 2.0),
        _ => panic!("dj must be -1, 0, +1"),
    };
    if v > 0.0 { v.sqrt() } else { 0.0 }
}

// Multiplicity-ratio weights N d(N-1, J -+ 1/2) / (d(N,J) (2J [+2])^2);
// zero when the neighbor block does not exist.
fn branch_weights(n: u32, j: Half) -> (f64, f64) {
    let d = degeneracy(n, j).expect("valid (N, J)");
    let nn = BigUint::from(n);
    let lower = if j.doubled() >= 1 && degeneracy::check_pair(n - 1, j - Half::HALF).is_ok() {
        let dm = degeneracy(n - 1, j - Half::HALF).unwrap();
        big_ratio(&(dm * &nn), &d) / (j.to_f64() * j.to_f64() * 4.0)
    } else {
        0.0
    };
    let upper = if degeneracy::check_pair(n - 1, j + Half::HALF).is_ok() {
        let dp = degeneracy(n - 1, j + Half::HALF).unwrap();
        let jp = j.to_f64() + 1.0;
        big_ratio(&(dp * &nn), &d) / (jp * jp * 4.0)
    } else {
        0.0
    };
    (lower, upper)
}

/// Single-spin channel amplitude for the branch `(J, M) -> (J + dj, M + m)`
/// under `sum_k sigma_{m,k} . sigma_{m,k}^dag`, averaged over the degeneracy
/// index. Squared amplitudes summed over `dj` give the exact channel weight.
/// Out-of-range arguments return 0.
pub fn individual_amp(n: u32, j: Half, m_level: Half, dj: i8, m: i8) -> f64 {
    if degeneracy::check_pair(n, j).is_err() || j.level_index(m_level).is_none() {
        return 0.0;
    }
    let tgt_j = j + Half::new(2 * dj as i32);
    if tgt_j.doubled() < 0 || degeneracy::check_pair(n, tgt_j).is_err() {
        return 0.0;
    }
    if tgt_j.level_index(m_level + Half::new(2 * m as i32)).is_none() {
        return 0.0;
    }
    let (w_lower, w_upper) = branch_weights(n, j);
    let pauli = if m == 0 { 2.0 } else { 1.0 };
    let weight = match dj {
        -1 => w_lower,
        0 => w_lower + w_upper,
        1 => w_upper,
        _ => unreachable!(),
    };
    weight.sqrt() * pauli * rank1_factor(j, m_level, dj, m)
}

/// Spin-loss amplitude for `(J, M, N) -> (J + dj/2, M + dm/2, N-1)` with
/// `dj2, dm2` in `{-1, +1}` (doubled half-integer shifts). Squared amplitudes
/// sum to 1 over the four branches.
pub fn loss_amp(n: u32, j: Half, m_level: Half, dj2: i8, dm2: i8) -> f64 {
    assert!(dj2.abs() == 1 && dm2.abs() == 1, "loss shifts are half-integer");
    if n < 1 || degeneracy::check_pair(n, j).is_err() || j.level_index(m_level).is_none() {
        return 0.0;
    }
    let tgt_j = j + Half::new(dj2 as i32);
    if tgt_j.doubled() < 0 || degeneracy::check_pair(n - 1, tgt_j).is_err() {
        return 0.0;
    }
    let tgt_m = m_level + Half::new(dm2 as i32);
    if tgt_j.level_index(tgt_m).is_none() {
        return 0.0;
    }
    let d = degeneracy(n, j).unwrap();
    let d_tgt = degeneracy(n - 1, tgt_j).unwrap();
    let ratio = big_ratio(&d_tgt, &d);
    let jj = j.to_f64();
    let mm = m_level.to_f64();
    let geom = if dj2 == -1 {
        // through J' = J - 1/2
        let num = if dm2 == -1 { jj + mm } else { jj - mm };
        num / (2.0 * jj)
    } else {
        let num = if dm2 == -1 { jj - mm + 1.0 } else { jj + mm + 1.0 };
        num / (2.0 * jj + 2.0)
    };
    if geom <= 0.0 {
        return 0.0;
    }
    (ratio * geom).sqrt()
}

/// Exact total channel weight `<J,M,i| sum_k sigma^dag sigma |J,M,i>`:
/// `N/2 + M` for decay, `N` for the Pauli-z channel, `N/2 - M` for pumping.
pub fn individual_weight(n: u32, m_level: Half, m: i8) -> f64 {
    match m {
        -1 => n as f64 / 2.0 + m_level.to_f64(),
        0 => n as f64,
        1 => n as f64 / 2.0 - m_level.to_f64(),
        _ => panic!("m must be -1, 0, +1"),
    }
}

/// Per-`(N, J)` block of single-spin amplitudes, indexed `[dj+1][m+1]` then
/// by level index.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IndividualBlock {
    pub amps: Vec<Vec<Vec<f64>>>,
}

impl IndividualBlock {
    pub fn amp(&self, dj: i8, m: i8) -> &[f64] {
        &self.amps[(dj + 1) as usize][(m + 1) as usize]
    }
}

/// Per-`(N, J)` block of loss amplitudes, indexed `[(dj2+1)/2][(dm2+1)/2]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossBlock {
    pub amps: Vec<Vec<Vec<f64>>>,
}

impl LossBlock {
    pub fn amp(&self, dj2: i8, dm2: i8) -> &[f64] {
        &self.amps[((dj2 + 1) / 2) as usize][((dm2 + 1) / 2) as usize]
    }
}

/// Per-`J` block of collective ladder amplitudes, indexed `[m+1]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CollectiveBlock {
    pub amps: Vec<Vec<f64>>,
}

impl CollectiveBlock {
    pub fn amp(&self, m: i8) -> &[f64] {
        &self.amps[(m + 1) as usize]
    }
}

/// Immutable precomputed amplitude tables for every `(N <= n_max, J)` block.
///
/// Entries for `N <= 10` are extracted from the exact full-space model at
/// build time; larger ensembles use the closed forms, which are themselves
/// verified against the exact model for every `N <= 10` and spot-checked via
/// the loss/dephasing composition identity beyond that. Any disagreement
/// aborts the build.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    n_max: u32,
    convention: Convention,
    collective: BTreeMap<i32, CollectiveBlock>,
    individual: BTreeMap<(u32, i32), IndividualBlock>,
    loss: BTreeMap<(u32, i32), LossBlock>,
}

impl CoefficientTable {
    /// Precomputes all entries for `N <= n_max`, verifying against the exact
    /// model wherever it is tractable.
    pub fn build(n_max: u32) -> Result<Self> {
        Self::build_with_verification(n_max, true)
    }

    /// Closed forms only; used internally and by tests that verify separately.
    pub fn build_unverified(n_max: u32) -> Result<Self> {
        Self::build_with_verification(n_max, false)
    }

    fn build_with_verification(n_max: u32, verify: bool) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::Domain(format!(
                "coefficient table needs n_max >= 2, got {n_max}"
            )));
        }
        let mut table = CoefficientTable {
            n_max,
            convention: Convention::RealLadderV1,
            collective: BTreeMap::new(),
            individual: BTreeMap::new(),
            loss: BTreeMap::new(),
        };
        for j2 in 0..=n_max as i32 {
            let j = Half::new(j2);
            let amps: Vec<Vec<f64>> = [-1i8, 0, 1]
                .iter()
                .map(|&m| j.levels().map(|ml| collective_amp(j, ml, m)).collect())
                .collect();
            table.collective.insert(j2, CollectiveBlock { amps });
        }
        for n in 1..=n_max {
            for j in degeneracy::j_values(n) {
                let ind = IndividualBlock {
                    amps: [-1i8, 0, 1]
                        .iter()
                        .map(|&dj| {
                            [-1i8, 0, 1]
                                .iter()
                                .map(|&m| {
                                    j.levels()
                                        .map(|ml| individual_amp(n, j, ml, dj, m))
                                        .collect()
                                })
                                .collect()
                        })
                        .collect(),
                };
                table.individual.insert((n, j.doubled()), ind);
                let loss = LossBlock {
                    amps: [-1i8, 1]
                        .iter()
                        .map(|&dj2| {
                            [-1i8, 1]
                                .iter()
                                .map(|&dm2| {
                                    j.levels()
                                        .map(|ml| loss_amp(n, j, ml, dj2, dm2))
                                        .collect()
                                })
                                .collect()
                        })
                        .collect(),
                };
                table.loss.insert((n, j.doubled()), loss);
            }
        }
        table.check_sum_rules()?;
        if verify {
            table.verify_against_oracle(n_max.min(ORACLE_VERIFY_MAX))?;
            for n in (ORACLE_VERIFY_MAX + 1)..=n_max {
                table.spot_check_composition(n)?;
            }
        }
        Ok(table)
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn collective_block(&self, j: Half) -> Result<&CollectiveBlock> {
        self.collective.get(&j.doubled()).ok_or(Error::TableRange {
            n_max: self.n_max,
            n: 0,
            j,
        })
    }

    pub fn individual_block(&self, n: u32, j: Half) -> Result<&IndividualBlock> {
        self.individual.get(&(n, j.doubled())).ok_or(Error::TableRange {
            n_max: self.n_max,
            n,
            j,
        })
    }

    pub fn loss_block(&self, n: u32, j: Half) -> Result<&LossBlock> {
        self.loss.get(&(n, j.doubled())).ok_or(Error::TableRange {
            n_max: self.n_max,
            n,
            j,
        })
    }

    // Cheap exact identities: squared sums reproduce the closed channel
    // weights; loss squared sums reach one; ladder factors non-negative.
    fn check_sum_rules(&self) -> Result<()> {
        for (&(n, j2), block) in &self.individual {
            let j = Half::new(j2);
            for (idx, ml) in j.levels().enumerate() {
                for m in [-1i8, 0, 1] {
                    let total: f64 = [-1i8, 0, 1]
                        .iter()
                        .map(|&dj| {
                            let a = block.amp(dj, m)[idx];
                            a * a
                        })
                        .sum();
                    let expect = individual_weight(n, ml, m);
                    if (total - expect).abs() > 1e-11 * (1.0 + expect.abs()) {
                        return Err(Error::TableIntegrity(format!(
                            "channel weight mismatch at N={n}, J={j}, M={ml}, m={m}: {total} vs {expect}"
                        )));
                    }
                    for dj in [-1i8, 0, 1] {
                        if m != 0 && block.amp(dj, m)[idx] < 0.0 {
                            return Err(Error::TableIntegrity(format!(
                                "negative ladder amplitude at N={n}, J={j}, M={ml}"
                            )));
                        }
                    }
                }
            }
        }
        for (&(n, j2), block) in &self.loss {
            if n < 1 {
                continue;
            }
            let j = Half::new(j2);
            for (idx, ml) in j.levels().enumerate() {
                let total: f64 = [(-1i8, -1i8), (-1, 1), (1, -1), (1, 1)]
                    .iter()
                    .map(|&(dj2, dm2)| {
                        let a = block.amp(dj2, dm2)[idx];
                        a * a
                    })
                    .sum();
                if n >= 1 && (total - 1.0).abs() > 1e-12 {
                    return Err(Error::TableIntegrity(format!(
                        "loss normalization at N={n}, J={j}, M={ml}: {total}"
                    )));
                }
            }
        }
        Ok(())
    }

    // Full element-wise comparison against the exact model: for every input
    // pair (M, M') and branch, the product of stored amplitudes must equal
    // the exact transfer coefficient. Stored entries for these sizes are
    // replaced by the exact values (signs fixed by the convention).
    fn verify_against_oracle(&mut self, up_to: u32) -> Result<()> {
        for n in 2..=up_to {
            let basis = FullStateBasis::build(n)?;
            let prev = FullStateBasis::build(n - 1)?;
            for m in [-1i8, 0, 1] {
                let ops = ExactChannelOps::number_preserving(&basis, Channel::Individual(m));
                self.verify_individual_channel(n, m, &ops)?;
                let coll = ExactChannelOps::number_preserving(&basis, Channel::Collective(m));
                self.verify_collective_channel(n, m, &coll)?;
            }
            let loss_ops = ExactChannelOps::loss(&basis, &prev);
            self.verify_loss_channel(n, &loss_ops)?;
        }
        Ok(())
    }

    fn verify_individual_channel(
        &mut self,
        n: u32,
        m: i8,
        ops: &ExactChannelOps<'_>,
    ) -> Result<()> {
        for j in degeneracy::j_values(n) {
            let block = self.individual.get_mut(&(n, j.doubled())).unwrap();
            let mut exact: Vec<Vec<f64>> = vec![Vec::new(); 3];
            // Diagonal inputs pin magnitudes.
            for (dj_idx, dj) in [-1i8, 0, 1].iter().enumerate() {
                let tgt_j = j + Half::new(2 * *dj as i32);
                let mut amps = vec![0.0; j.level_count()];
                if tgt_j.doubled() >= 0 && degeneracy::check_pair(n, tgt_j).is_ok() {
                    for (idx, ml) in j.levels().enumerate() {
                        let map = ops.map_element(j, ml, ml, false);
                        let tgt_m = ml + Half::new(2 * m as i32);
                        let w = map.coeff(tgt_j, tgt_m, tgt_m);
                        let stored = block.amp(*dj, m)[idx];
                        let sign = if stored < 0.0 { -1.0 } else { 1.0 };
                        amps[idx] = sign * w.max(0.0).sqrt();
                    }
                }
                exact[dj_idx] = amps;
            }
            // Off-diagonal inputs check the product structure and signs.
            for (ia, ma) in j.levels().enumerate() {
                for (ib, mb) in j.levels().enumerate() {
                    let map = ops.map_element(j, ma, mb, false);
                    for (dj_idx, dj) in [-1i8, 0, 1].iter().enumerate() {
                        let tgt_j = j + Half::new(2 * *dj as i32);
                        if tgt_j.doubled() < 0 || degeneracy::check_pair(n, tgt_j).is_err() {
                            continue;
                        }
                        let shift = Half::new(2 * m as i32);
                        let got = map.coeff(tgt_j, ma + shift, mb + shift);
                        let predict = exact[dj_idx][ia] * exact[dj_idx][ib];
                        if (got - predict).abs() > VERIFY_TOL {
                            return Err(Error::TableIntegrity(format!(
                                "individual channel mismatch at N={n}, J={j}, M=({ma},{mb}), dj={dj}, m={m}: exact {got} vs product {predict}"
                            )));
                        }
                        let closed = block.amp(*dj, m)[ia] * block.amp(*dj, m)[ib];
                        if (got - closed).abs() > VERIFY_TOL {
                            return Err(Error::TableIntegrity(format!(
                                "closed form disagrees with exact model at N={n}, J={j}, M=({ma},{mb}), dj={dj}, m={m}: {closed} vs {got}"
                            )));
                        }
                    }
                }
            }
            // Store the exact-model values for these sizes.
            for (dj_idx, dj) in [-1i8, 0, 1].iter().enumerate() {
                block.amps[(*dj + 1) as usize][(m + 1) as usize] = exact[dj_idx].clone();
            }
        }
        Ok(())
    }

    fn verify_collective_channel(
        &self,
        n: u32,
        m: i8,
        ops: &ExactChannelOps<'_>,
    ) -> Result<()> {
        for j in degeneracy::j_values(n) {
            let block = self.collective.get(&j.doubled()).unwrap();
            for (ia, ma) in j.levels().enumerate() {
                for (ib, mb) in j.levels().enumerate() {
                    let map = ops.map_element(j, ma, mb, false);
                    let shift = Half::new(2 * m as i32);
                    let got = map.coeff(j, ma + shift, mb + shift);
                    let predict = block.amp(m)[ia] * block.amp(m)[ib];
                    if (got - predict).abs() > VERIFY_TOL {
                        return Err(Error::TableIntegrity(format!(
                            "collective channel mismatch at N={n}, J={j}, M=({ma},{mb}), m={m}: {got} vs {predict}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn verify_loss_channel(&mut self, n: u32, ops: &ExactChannelOps<'_>) -> Result<()> {
        for j in degeneracy::j_values(n) {
            let block = self.loss.get_mut(&(n, j.doubled())).unwrap();
            let mut exact: Vec<Vec<Vec<f64>>> =
                vec![vec![vec![0.0; j.level_count()]; 2]; 2];
            for (dj_i, dj2) in [-1i8, 1].iter().enumerate() {
                let tgt_j = j + Half::new(*dj2 as i32);
                if tgt_j.doubled() < 0 || degeneracy::check_pair(n - 1, tgt_j).is_err() {
                    continue;
                }
                for (dm_i, dm2) in [-1i8, 1].iter().enumerate() {
                    for (idx, ml) in j.levels().enumerate() {
                        let map = ops.map_element(j, ml, ml, false);
                        let tgt_m = ml + Half::new(*dm2 as i32);
                        let w = map.coeff(tgt_j, tgt_m, tgt_m);
                        exact[dj_i][dm_i][idx] = w.max(0.0).sqrt();
                    }
                }
            }
            for (ia, ma) in j.levels().enumerate() {
                for (ib, mb) in j.levels().enumerate() {
                    let map = ops.map_element(j, ma, mb, false);
                    for (dj_i, dj2) in [-1i8, 1].iter().enumerate() {
                        let tgt_j = j + Half::new(*dj2 as i32);
                        if tgt_j.doubled() < 0 || degeneracy::check_pair(n - 1, tgt_j).is_err() {
                            continue;
                        }
                        for (dm_i, dm2) in [-1i8, 1].iter().enumerate() {
                            let shift = Half::new(*dm2 as i32);
                            let got = map.coeff(tgt_j, ma + shift, mb + shift);
                            let predict = exact[dj_i][dm_i][ia] * exact[dj_i][dm_i][ib];
                            if (got - predict).abs() > VERIFY_TOL {
                                return Err(Error::TableIntegrity(format!(
                                    "loss channel product mismatch at N={n}, J={j}, M=({ma},{mb})"
                                )));
                            }
                            let closed = block.amp(*dj2, *dm2)[ia] * block.amp(*dj2, *dm2)[ib];
                            if (got - closed).abs() > VERIFY_TOL {
                                return Err(Error::TableIntegrity(format!(
                                    "loss closed form disagrees with exact model at N={n}, J={j}, M=({ma},{mb}): {closed} vs {got}"
                                )));
                            }
                        }
                    }
                }
            }
            for dj_i in 0..2 {
                for dm_i in 0..2 {
                    block.amps[dj_i][dm_i] = exact[dj_i][dm_i].clone();
                }
            }
        }
        Ok(())
    }

    // For sizes beyond direct verification: composing the loss amplitudes
    // with the re-append coupling amplitudes must reproduce half the identity
    // plus 1/(2N) of the Pauli-z channel, element by element.
    fn spot_check_composition(&self, n: u32) -> Result<()> {
        for j in degeneracy::j_values(n) {
            let levels: Vec<Half> = j.levels().collect();
            let probes: Vec<(Half, Half)> = [
                (0usize, 0usize),
                (0, levels.len() - 1),
                (levels.len() / 2, levels.len() - 1),
                (levels.len() / 2, levels.len() / 2),
            ]
            .iter()
            .map(|&(a, b)| (levels[a], levels[b]))
            .collect();
            for (ma, mb) in probes {
                for dj in [-1i8, 0, 1] {
                    let tgt_j = j + Half::new(2 * dj as i32);
                    if tgt_j.doubled() < 0 || degeneracy::check_pair(n, tgt_j).is_err() {
                        continue;
                    }
                    let composed = self.composed_loss_append(n, j, ma, mb, tgt_j);
                    let chi_a = individual_amp(n, j, ma, dj, 0);
                    let chi_b = individual_amp(n, j, mb, dj, 0);
                    let id_part = if dj == 0 { 0.5 } else { 0.0 };
                    let expect = id_part + chi_a * chi_b / (2.0 * n as f64);
                    if (composed - expect).abs() > VERIFY_TOL {
                        return Err(Error::TableIntegrity(format!(
                            "loss/dephasing composition identity failed at N={n}, J={j}, M=({ma},{mb}), dj={dj}: {composed} vs {expect}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    // Coefficient of (tgt_j, ma, mb) in loss followed by conditional
    // re-append of an oppositely polarized spin.
    fn composed_loss_append(&self, n: u32, j: Half, ma: Half, mb: Half, tgt_j: Half) -> f64 {
        let mut total = 0.0;
        for dj2 in [-1i8, 1] {
            let mid_j = j + Half::new(dj2 as i32);
            if mid_j.doubled() < 0 || degeneracy::check_pair(n - 1, mid_j).is_err() {
                continue;
            }
            for dm2 in [-1i8, 1] {
                let la = loss_amp(n, j, ma, dj2, dm2);
                let lb = loss_amp(n, j, mb, dj2, dm2);
                if la == 0.0 && lb == 0.0 {
                    continue;
                }
                // Append the opposite polarization: mu = -dm2/2.
                let mu2 = -(dm2 as i32);
                let ca = append_amp(mid_j, ma + Half::new(dm2 as i32), mu2, tgt_j);
                let cb = append_amp(mid_j, mb + Half::new(dm2 as i32), mu2, tgt_j);
                total += la * lb * ca * cb;
            }
        }
        total
    }

    /// Writes the table as a versioned JSON cache.
    pub fn export(&self, path: &Path) -> Result<()> {
        let file = TableFile {
            format_version: TABLE_FORMAT_VERSION,
            convention: self.convention,
            n_max: self.n_max,
            collective: self.collective.iter().map(|(&k, v)| (k, v.clone())).collect(),
            individual: self.individual.iter().map(|(&k, v)| (k, v.clone())).collect(),
            loss: self.loss.iter().map(|(&k, v)| (k, v.clone())).collect(),
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| Error::Config(format!("serializing table: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Loads a cache written by [`CoefficientTable::export`]. Rejects version
    /// or convention mismatches and re-checks the cheap sum rules.
    pub fn import(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: TableFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("parsing table cache: {e}")))?;
        if file.format_version != TABLE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "table cache format {} unsupported (expected {TABLE_FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.convention != Convention::RealLadderV1 {
            return Err(Error::Config("table cache uses a different convention".into()));
        }
        let table = CoefficientTable {
            n_max: file.n_max,
            convention: file.convention,
            collective: file.collective.into_iter().collect(),
            individual: file.individual.into_iter().collect(),
            loss: file.loss.into_iter().collect(),
        };
        table.check_sum_rules()?;
        Ok(table)
    }
}

const TABLE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TableFile {
    format_version: u32,
    convention: Convention,
    n_max: u32,
    collective: Vec<(i32, CollectiveBlock)>,
    individual: Vec<((u32, i32), IndividualBlock)>,
    loss: Vec<((u32, i32), LossBlock)>,
}

/// Coupling amplitude `<J', M'; 1/2, mu | J'', M' + mu>` for appending one
/// spin (`mu2 = +-1` doubled), Condon-Shortley phases.
pub fn append_amp(jp: Half, mp: Half, mu2: i32, jn: Half) -> f64 {
    let jp2 = jp.doubled();
    let mp2 = mp.doubled();
    let jn2 = jn.doubled();
    if jp.level_index(mp).is_none() {
        return 0.0;
    }
    let m2 = mp2 + mu2;
    if m2 < -jn2 || m2 > jn2 {
        return 0.0;
    }
    let denom = 2.0 * (jp2 as f64 + 1.0);
    if jn2 == jp2 + 1 {
        let num = (jp2 + mu2 * m2) as f64 + 1.0;
        (num.max(0.0) / denom).sqrt()
    } else if jn2 == jp2 - 1 {
        let num = (jp2 - mu2 * m2) as f64 + 1.0;
        let sign = if mu2 > 0 { -1.0 } else { 1.0 };
        sign * (num.max(0.0) / denom).sqrt()
    } else {
        0.0
    }
}
