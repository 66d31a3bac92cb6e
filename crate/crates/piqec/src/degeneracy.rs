//! Multiplicity of total-angular-momentum blocks in an ensemble of spin-1/2
//! particles.
//!
//! The Hilbert space of `N` spin-1/2 particles decomposes into irreducible
//! blocks labelled by total angular momentum `J`, each appearing with a
//! multiplicity counted here by the exact path recurrence
//!
//! ```text
//! d(N, J) = d(N-1, J-1/2) + d(N-1, J+1/2),    d(1, 1/2) = 1,
//! ```
//!
//! i.e. the number of ways to reach `J` by coupling one spin at a time while
//! never dropping below zero. Counts are kept as big integers so ensembles of
//! hundreds of spins do not overflow; ratios needed by floating-point code are
//! extracted with a guarded conversion.

use std::sync::Mutex;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::half::Half;

/// Multiplicity of the spin-`J` block in `N` spin-1/2 particles.
///
/// `N = 0` is the empty ensemble, with a single trivial `J = 0` block.
pub fn degeneracy(n: u32, j: Half) -> Result<BigUint> {
    check_pair(n, j)?;
    Ok(lookup(n, j))
}

/// `degeneracy` as `f64`; may be infinite for very large `N`, callers that
/// need ratios should use [`degeneracy_ratio`].
pub fn degeneracy_f64(n: u32, j: Half) -> Result<f64> {
    Ok(big_to_f64(&degeneracy(n, j)?))
}

/// `a / b` for big-integer multiplicities, computed without overflow by
/// scaling through a 64-bit fixed-point quotient.
pub fn big_ratio(a: &BigUint, b: &BigUint) -> f64 {
    if b.is_zero() {
        return f64::NAN;
    }
    if a.is_zero() {
        return 0.0;
    }
    let scaled = (a << 64u32) / b;
    big_to_f64(&scaled) / 2.0_f64.powi(64)
}

fn big_to_f64(v: &BigUint) -> f64 {
    v.to_f64().unwrap_or(f64::INFINITY)
}

/// Validates that `(N, J)` labels an existing block: `J <= N/2`, `N/2 - J`
/// integer, `J >= 0`.
pub fn check_pair(n: u32, j: Half) -> Result<()> {
    let valid = j.doubled() >= 0
        && j.doubled() <= n as i32
        && (n as i32 - j.doubled()) % 2 == 0;
    if valid {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "no spin-{j} block exists for N={n} spin-1/2 particles"
        )))
    }
}

/// All valid `J` values for `N` spins, ascending.
pub fn j_values(n: u32) -> Vec<Half> {
    let mut out = Vec::new();
    let mut j = Half::j_min(n);
    while j.doubled() <= n as i32 {
        out.push(j);
        j = j + Half::ONE;
    }
    out
}

// Rows of the recurrence, cached up to the largest N requested so far.
static TABLE: Mutex<Vec<Vec<BigUint>>> = Mutex::new(Vec::new());

fn lookup(n: u32, j: Half) -> BigUint {
    let mut table = TABLE.lock().unwrap();
    if table.is_empty() {
        table.push(vec![BigUint::one()]); // N = 0: single J = 0 block
    }
    while table.len() <= n as usize {
        let prev_n = table.len() - 1;
        let prev = table[prev_n].clone();
        let n_new = prev_n + 1;
        // Row for N spins stores d(N, J) at position (2J - parity)/2.
        let count = n_new / 2 + 1;
        let mut row = vec![BigUint::zero(); count];
        for (idx, slot) in row.iter_mut().enumerate() {
            let j2 = Half::j_min(n_new as u32).doubled() + 2 * idx as i32;
            // Contributions from J-1/2 and J+1/2 of the previous row.
            for prev_j2 in [j2 - 1, j2 + 1] {
                if prev_j2 < 0 || prev_j2 > prev_n as i32 {
                    continue;
                }
                let prev_idx = ((prev_j2 - Half::j_min(prev_n as u32).doubled()) / 2) as usize;
                *slot += &prev[prev_idx];
            }
        }
        table.push(row);
    }
    let row = &table[n as usize];
    let idx = ((j.doubled() - Half::j_min(n).doubled()) / 2) as usize;
    row[idx].clone()
}

/// Exact check of the dimension sum rule `sum_J d(N,J) (2J+1) = 2^N`.
pub fn sum_rule_holds(n: u32) -> bool {
    let mut total = BigUint::zero();
    for j in j_values(n) {
        total += lookup(n, j) * BigUint::from(j.level_count());
    }
    total == (BigUint::one() << n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;

    // Independent route: d(N, J) = C(N, N/2 - J) - C(N, N/2 - J - 1).
    fn binomial(n: u64, k: i64) -> BigUint {
        if k < 0 || k as u64 > n {
            return BigUint::zero();
        }
        let mut acc = BigUint::one();
        for i in 0..k as u64 {
            acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
        }
        acc
    }

    fn degeneracy_binomial(n: u32, j: Half) -> BigUint {
        let k = (n as i64 - j.doubled() as i64) / 2;
        binomial(n as u64, k) - binomial(n as u64, k - 1)
    }

    #[test]
    fn small_values() {
        assert_eq!(degeneracy(2, Half::from_int(1)).unwrap(), BigUint::from(1u32));
        assert_eq!(degeneracy(2, Half::ZERO).unwrap(), BigUint::from(1u32));
        assert_eq!(degeneracy(4, Half::from_int(1)).unwrap(), BigUint::from(3u32));
        assert_eq!(degeneracy(6, Half::from_int(2)).unwrap(), BigUint::from(5u32));
        assert_eq!(degeneracy(6, Half::from_int(1)).unwrap(), BigUint::from(9u32));
        assert_eq!(degeneracy(6, Half::ZERO).unwrap(), BigUint::from(5u32));
    }

    #[test]
    fn matches_binomial_difference() {
        for n in 1..=40u32 {
            for j in j_values(n) {
                assert_eq!(degeneracy(n, j).unwrap(), degeneracy_binomial(n, j));
            }
        }
    }

    #[test]
    fn sum_rule_exact_to_30() {
        for n in 0..=30 {
            assert!(sum_rule_holds(n), "sum rule failed at N={n}");
        }
    }

    #[test]
    fn invalid_pairs_rejected() {
        assert!(degeneracy(2, Half::HALF).is_err()); // wrong parity
        assert!(degeneracy(2, Half::from_int(2)).is_err()); // J > N/2
        assert!(degeneracy(3, Half::new(-1)).is_err()); // negative J
    }

    #[test]
    fn ratio_handles_large_n() {
        // d(300, 0) / d(300, 1) is well within f64 range even though the
        // individual counts are not.
        let a = degeneracy(300, Half::ZERO).unwrap();
        let b = degeneracy(300, Half::from_int(1)).unwrap();
        let r = big_ratio(&a, &b);
        assert!(r > 0.0 && r < 1.0, "r = {r}");
        // Cross-check on small values where exact division is possible.
        let x = degeneracy(20, Half::from_int(1)).unwrap();
        let y = degeneracy(20, Half::from_int(2)).unwrap();
        let expect = big_to_f64(&x) / big_to_f64(&y);
        assert!((big_ratio(&x, &y) - expect).abs() < 1e-12);
    }
}
