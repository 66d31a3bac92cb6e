//! Small dense linear-algebra helpers for block matrices.
//!
//! Blocks in this crate are at most a few dozen levels wide, so a cyclic
//! Jacobi sweep is plenty for eigenvalues; no external LAPACK backend is
//! pulled in.

use ndarray::Array2;
use num_complex::Complex64 as C64;

/// Eigenvalues of a Hermitian matrix, ascending, via cyclic Jacobi rotations.
pub fn hermitian_eigenvalues(mat: &Array2<C64>) -> Vec<f64> {
    let n = mat.nrows();
    assert_eq!(n, mat.ncols(), "matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    let mut a = mat.clone();
    // Symmetrize to guard against tiny anti-Hermitian noise in the input.
    for i in 0..n {
        for k in (i + 1)..n {
            let avg = 0.5 * (a[[i, k]] + a[[k, i]].conj());
            a[[i, k]] = avg;
            a[[k, i]] = avg.conj();
        }
        a[[i, i]] = C64::new(a[[i, i]].re, 0.0);
    }

    let tol = 1e-14
        * a.iter()
            .map(|z| z.norm())
            .fold(0.0_f64, f64::max)
            .max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[[p, q]].norm());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.norm() <= tol * 1e-2 {
                    continue;
                }
                // Unitary 2x2 rotation diagonalizing the (p,q) sub-block:
                // first strip the phase of a_pq, then a real Jacobi rotation.
                let phase = apq / apq.norm();
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                let theta = 0.5 * (2.0 * apq.norm()).atan2(aqq - app);
                let (s, c) = theta.sin_cos();
                let u_pp = C64::new(c, 0.0);
                let u_pq = phase * s;
                // Columns: col_p' = c*col_p - conj(phase)*s*col_q, etc.
                for r in 0..n {
                    let arp = a[[r, p]];
                    let arq = a[[r, q]];
                    a[[r, p]] = arp * u_pp - arq * u_pq.conj();
                    a[[r, q]] = arp * u_pq + arq * u_pp;
                }
                for r in 0..n {
                    let apr = a[[p, r]];
                    let aqr = a[[q, r]];
                    a[[p, r]] = apr * u_pp.conj() - aqr * u_pq;
                    a[[q, r]] = apr * u_pq.conj() + aqr * u_pp;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[[i, i]].re).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(mat: &Array2<C64>) -> f64 {
    hermitian_eigenvalues(mat)
        .first()
        .copied()
        .unwrap_or(0.0)
}

/// `sum |eig|` of a Hermitian matrix; `2 * trace distance` for a difference
/// of density blocks.
pub fn abs_eigenvalue_sum(mat: &Array2<C64>) -> f64 {
    hermitian_eigenvalues(mat).iter().map(|e| e.abs()).sum()
}

/// Closed-form `exp(-i H t)` on a two-level span for the coupling Hamiltonian
/// `H = h |a><b| + conj(h) |b><a|`: returns the 2x2 unitary
/// `[[cos(|h|t), -i e^{i arg h} sin(|h|t)], [-i e^{-i arg h} sin(|h|t), cos(|h|t)]]`.
pub fn two_level_exp(h: C64, t: f64) -> [[C64; 2]; 2] {
    let mag = h.norm();
    let angle = mag * t;
    let (s, c) = angle.sin_cos();
    if mag == 0.0 {
        return [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]];
    }
    let phase = h / mag;
    let off = C64::new(0.0, -1.0) * s;
    [
        [C64::new(c, 0.0), off * phase],
        [off * phase.conj(), C64::new(c, 0.0)],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigenvalues_of_known_hermitian() {
        // [[2, i], [-i, 2]] has eigenvalues 1 and 3.
        let m = array![
            [C64::new(2.0, 0.0), C64::new(0.0, 1.0)],
            [C64::new(0.0, -1.0), C64::new(2.0, 0.0)]
        ];
        let e = hermitian_eigenvalues(&m);
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!((e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_match_trace_and_det() {
        // Random-ish 4x4 Hermitian built from A + A^dagger.
        let n = 4;
        let mut m = Array2::from_elem((n, n), C64::new(0.0, 0.0));
        let mut seed = 1234u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        for i in 0..n {
            for k in 0..n {
                m[[i, k]] = C64::new(next(), next());
            }
        }
        let h = &m + &m.t().mapv(|z| z.conj());
        let eigs = hermitian_eigenvalues(&h);
        let trace: f64 = (0..n).map(|i| h[[i, i]].re).sum();
        assert!((eigs.iter().sum::<f64>() - trace).abs() < 1e-10);
        let fro: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        let eig_sq: f64 = eigs.iter().map(|e| e * e).sum();
        assert!((fro - eig_sq).abs() < 1e-9, "{fro} vs {eig_sq}");
    }

    #[test]
    fn two_level_pi_pulse_swaps() {
        // At |h| t = pi/2 the coupling swaps levels with a -i phase.
        let h = C64::new(0.7, 0.0);
        let t = std::f64::consts::FRAC_PI_2 / 0.7;
        let u = two_level_exp(h, t);
        assert!(u[0][0].norm() < 1e-12);
        assert!((u[0][1] - C64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((u[1][0] - C64::new(0.0, -1.0)).norm() < 1e-12);
    }
}
