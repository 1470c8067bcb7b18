//! Finite discrete distributions over a contiguous integer support.
//!
//! A [`Pmf`] may carry less than unit mass. Truncated series (for example the
//! collision-duration pmf cut at a finite number of reservations) produce such
//! deficient distributions, and nothing in this module renormalizes behind the
//! caller's back. Use [`Pmf::renormalized`] when a proper distribution is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MASS_SLACK: f64 = 1e-9;

/// Discrete pmf with dense weights starting at `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PmfRepr")]
pub struct Pmf {
    offset: i64,
    weights: Vec<f64>,
    mass: f64,
}

#[derive(Deserialize)]
struct PmfRepr {
    offset: i64,
    weights: Vec<f64>,
    #[serde(default)]
    mass: Option<f64>,
}

impl TryFrom<PmfRepr> for Pmf {
    type Error = Error;

    fn try_from(repr: PmfRepr) -> Result<Self> {
        let pmf = Pmf::new(repr.offset, repr.weights)?;
        if let Some(mass) = repr.mass {
            if (mass - pmf.mass).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "stored mass {mass} does not match the sum of weights {}",
                    pmf.mass
                )));
            }
        }
        Ok(pmf)
    }
}

impl Pmf {
    /// Builds a pmf, rejecting negative or non-finite weights and total mass
    /// above one.
    pub fn new(offset: i64, weights: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::Domain(format!(
                "weight at {} is {w}; weights must be finite and nonnegative",
                offset + i as i64
            )));
        }
        let mass = kahan_sum(&weights);
        if mass > 1.0 + MASS_SLACK {
            return Err(Error::Domain(format!("total mass {mass} exceeds 1")));
        }
        Ok(Self {
            offset,
            weights,
            mass,
        })
    }

    /// Constructor for internal results that are nonnegative by construction.
    /// Tiny negative round-off is clipped.
    pub(crate) fn from_raw(offset: i64, mut weights: Vec<f64>) -> Self {
        for w in &mut weights {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let mass = kahan_sum(&weights);
        Self {
            offset,
            weights,
            mass,
        }
    }

    /// Empirical pmf from histogram counts, normalized by `total` (which may
    /// exceed the sum of counts when some observations were censored).
    pub fn from_counts(offset: i64, counts: &[u64], total: u64) -> Result<Self> {
        if total == 0 {
            return Err(Error::InsufficientData("no observations".into()));
        }
        let n = total as f64;
        Self::new(offset, counts.iter().map(|&c| c as f64 / n).collect())
    }

    pub fn empty() -> Self {
        Self {
            offset: 0,
            weights: Vec::new(),
            mass: 0.0,
        }
    }

    pub fn delta(x: i64) -> Self {
        Self {
            offset: x,
            weights: vec![1.0],
            mass: 1.0,
        }
    }

    /// Uniform over `lo..=hi`.
    pub fn uniform(lo: i64, hi: i64) -> Result<Self> {
        if hi < lo {
            return Err(Error::Domain(format!("empty range {lo}..={hi}")));
        }
        let n = (hi - lo + 1) as usize;
        Ok(Self::from_raw(lo, vec![1.0 / n as f64; n]))
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// One past the last stored support point.
    pub fn end(&self) -> i64 {
        self.offset + self.weights.len() as i64
    }

    /// Probability of `x`; zero outside the stored support.
    pub fn get(&self, x: i64) -> f64 {
        if x < self.offset {
            return 0.0;
        }
        self.weights
            .get((x - self.offset) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &w)| (self.offset + i as i64, w))
    }

    /// Drops leading and trailing zero weights. Mass is unchanged.
    pub fn trimmed(&self) -> Self {
        let first = self.weights.iter().position(|&w| w != 0.0);
        let Some(first) = first else {
            return Self::empty();
        };
        let last = self.weights.iter().rposition(|&w| w != 0.0).unwrap();
        Self {
            offset: self.offset + first as i64,
            weights: self.weights[first..=last].to_vec(),
            mass: self.mass,
        }
    }

    /// Returns the pmf scaled to unit mass together with the factor applied.
    pub fn renormalized(&self) -> Result<(Self, f64)> {
        if self.mass <= 0.0 {
            return Err(Error::Domain("cannot renormalize a pmf with zero mass".into()));
        }
        let factor = 1.0 / self.mass;
        Ok((
            Self::from_raw(
                self.offset,
                self.weights.iter().map(|w| w * factor).collect(),
            ),
            factor,
        ))
    }

    /// Cumulative sums over the stored support.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    }

    /// P(X <= x), not renormalized.
    pub fn cdf_at(&self, x: i64) -> f64 {
        if x < self.offset {
            return 0.0;
        }
        let upto = ((x - self.offset + 1) as usize).min(self.weights.len());
        kahan_sum(&self.weights[..upto])
    }

    /// Discrete convolution: the law of X + Y for independent X ~ self, Y ~ other.
    pub fn convolve(&self, other: &Pmf) -> Pmf {
        if self.is_empty() || other.is_empty() {
            return Pmf {
                offset: self.offset + other.offset,
                weights: Vec::new(),
                mass: 0.0,
            };
        }
        // iterate over the shorter operand so the inner loop is a long axpy
        let (long, short) = if self.len() >= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut out = vec![0.0; long.len() + short.len() - 1];
        for (j, &s) in short.weights.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for (o, &l) in out[j..j + long.len()].iter_mut().zip(&long.weights) {
                *o += s * l;
            }
        }
        Pmf::from_raw(self.offset + other.offset, out)
    }

    /// `w`-fold self-convolution by repeated squaring; `w = 0` is `delta(0)`.
    pub fn convolve_power(&self, w: u32) -> Pmf {
        let mut result = Pmf::delta(0);
        let mut base = self.clone();
        let mut e = w;
        while e > 0 {
            if e & 1 == 1 {
                result = result.convolve(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.convolve(&base);
            }
        }
        result
    }

    /// Mean `sum x p(x)`, without renormalizing.
    pub fn mean(&self) -> Result<f64> {
        if self.mass <= 0.0 {
            return Err(Error::Domain("mean of an empty pmf".into()));
        }
        Ok(self.iter().map(|(x, w)| x as f64 * w).sum())
    }

    /// `1 - P(X <= theta)`, clamped to `[0, 1]`.
    pub fn tail_above(&self, theta: i64) -> f64 {
        (1.0 - self.cdf_at(theta)).clamp(0.0, 1.0)
    }

    /// `(value, probability)` rows over the stored support.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,probability\n");
        for (x, w) in self.iter() {
            s.push_str(&format!("{x},{}\n", format_real(w)));
        }
        s
    }
}

/// Half the L1 distance; points outside either support count as zero.
pub fn total_variation(p: &Pmf, q: &Pmf) -> f64 {
    if p.is_empty() && q.is_empty() {
        return 0.0;
    }
    let lo = p.offset.min(q.offset);
    let hi = p.end().max(q.end());
    0.5 * (lo..hi).map(|x| (p.get(x) - q.get(x)).abs()).sum::<f64>()
}

/// `C(n, k) p^k (1-p)^(n-k)` evaluated in log space.
pub fn binomial_pmf(n: u64, p: f64, k: u64) -> Result<f64> {
    if k > n {
        return Err(Error::Domain(format!("binomial: k = {k} exceeds n = {n}")));
    }
    check_probability(p)?;
    if p == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    if p == 1.0 {
        return Ok(if k == n { 1.0 } else { 0.0 });
    }
    let j = k.min(n - k);
    let ln_choose: f64 = (1..=j)
        .map(|i| ((n - j + i) as f64).ln() - (i as f64).ln())
        .sum();
    Ok((ln_choose + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()).exp())
}

/// The whole row `binomial_pmf(n, p, k)` for `k = 0..=n`.
pub fn binomial_row(n: u64, p: f64) -> Result<Vec<f64>> {
    check_probability(p)?;
    let len = n as usize + 1;
    if p == 0.0 || p == 1.0 {
        let mut row = vec![0.0; len];
        row[if p == 0.0 { 0 } else { n as usize }] = 1.0;
        return Ok(row);
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut ln_choose = 0.0;
    let mut row = Vec::with_capacity(len);
    for k in 0..=n {
        row.push((ln_choose + k as f64 * lp + (n - k) as f64 * lq).exp());
        if k < n {
            ln_choose += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    Ok(row)
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Seventeen significant digits, enough to round-trip any f64.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn kahan_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}
