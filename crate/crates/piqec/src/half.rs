//! Exact half-integer arithmetic for angular-momentum quantum numbers.
//!
//! Total angular momentum `J` and magnetization `M` of a spin-1/2 ensemble
//! step in units of 1/2, so they are stored as doubled integers. This keeps
//! block indexing exact: no floating-point keys, no rounding in `J ± 1/2`.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A half-integer stored as its doubled value.
///
/// `Half::new(5)` is 5/2; `Half::from_int(3)` is 3.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Half(pub i32);

impl Half {
    pub const ZERO: Half = Half(0);
    pub const HALF: Half = Half(1);
    pub const ONE: Half = Half(2);

    /// Construct from a doubled value (`doubled = 2x`).
    pub const fn new(doubled: i32) -> Self {
        Half(doubled)
    }

    pub const fn from_int(v: i32) -> Self {
        Half(2 * v)
    }

    /// Exact conversion from a float that must be an integer or half-integer.
    pub fn try_from_f64(v: f64) -> Option<Self> {
        let doubled = 2.0 * v;
        if doubled.fract() == 0.0 && doubled.abs() <= i32::MAX as f64 {
            Some(Half(doubled as i32))
        } else {
            None
        }
    }

    pub const fn doubled(self) -> i32 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub const fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// `true` when `self` and `other` differ by an integer.
    pub const fn same_parity(self, other: Half) -> bool {
        (self.0 - other.0) % 2 == 0
    }

    /// Number of magnetization levels in a block of this total angular
    /// momentum: `2J + 1`.
    pub fn level_count(self) -> usize {
        debug_assert!(self.0 >= 0);
        self.0 as usize + 1
    }

    /// Index of magnetization `m` within the block `[-J, J]`, ordered from
    /// lowest to highest.
    pub fn level_index(self, m: Half) -> Option<usize> {
        if !self.same_parity(m) || m.0 < -self.0 || m.0 > self.0 {
            return None;
        }
        Some(((m.0 + self.0) / 2) as usize)
    }

    /// Magnetization value at `index` within the block `[-J, J]`.
    pub fn level_at(self, index: usize) -> Half {
        Half(-self.0 + 2 * index as i32)
    }

    /// Iterator over magnetizations `-J, -J+1, ..., J`.
    pub fn levels(self) -> impl Iterator<Item = Half> {
        let j2 = self.0;
        (0..self.level_count()).map(move |i| Half(-j2 + 2 * i as i32))
    }

    /// Smallest total angular momentum of `n` spin-1/2 particles:
    /// 0 for even `n`, 1/2 for odd.
    pub const fn j_min(n: u32) -> Half {
        Half((n % 2) as i32)
    }

    pub const fn j_max(n: u32) -> Half {
        Half(n as i32)
    }
}

impl Add for Half {
    type Output = Half;
    fn add(self, rhs: Half) -> Half {
        Half(self.0 + rhs.0)
    }
}

impl Sub for Half {
    type Output = Half;
    fn sub(self, rhs: Half) -> Half {
        Half(self.0 - rhs.0)
    }
}

impl Neg for Half {
    type Output = Half;
    fn neg(self) -> Half {
        Half(-self.0)
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl std::str::FromStr for Half {
    type Err = String;

    /// Accepts `"3"`, `"3/2"`, `"1.5"`, `"-4.5"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some((num, den)) = s.split_once('/') {
            if den.trim() != "2" {
                return Err(format!("half-integer denominator must be 2: {s}"));
            }
            let n: i32 = num
                .trim()
                .parse()
                .map_err(|_| format!("bad half-integer numerator: {s}"))?;
            return Ok(Half(n));
        }
        let v: f64 = s.parse().map_err(|_| format!("bad half-integer: {s}"))?;
        Half::try_from_f64(v).ok_or_else(|| format!("not an integer or half-integer: {s}"))
    }
}
