use serde::{Deserialize, Serialize};

use crate::field::MAX_ORDER;
use crate::jet::{layout, Jet};
use crate::{Error, Result};

/// Below this fraction of `ε` the bump is taken as flat: its `r`-jet at
/// `d = 0` is constant and the neglected terms are `O((d/ε)^{r+1})`.
const FLAT_CORE: f64 = 1e-6;

/// `ρ(d) = A (1 − S(d/ε))` with `S` the degree-`2r+1` smoothstep, zero for `d ≥ ε`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BumpProfile {
    pub epsilon: f64,
    pub amplitude: f64,
    pub order: usize,
    /// Measured `max_q max_d |ρ^(q)(d)| ε^q` on a 10⁴-point grid.
    pub rho0: f64,
    /// Power coefficients of `S(u)`.
    smoothstep: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Power coefficients of `u^{r+1} Σ_k C(r+k, k) (1 − u)^k`.
pub fn smoothstep_coefficients(r: usize) -> Vec<f64> {
    let mut a = vec![0.0; 2 * r + 2];
    for k in 0..=r {
        let c = binomial(r + k, k);
        for m in 0..=k {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            a[r + 1 + m] += c * binomial(k, m) * sign;
        }
    }
    a
}

/// Taylor coefficients at `x0` of the polynomial `Σ a_j x^j`, through `order`.
fn poly_taylor(a: &[f64], x0: f64, order: usize) -> Vec<f64> {
    (0..=order)
        .map(|m| {
            a.iter()
                .enumerate()
                .skip(m)
                .map(|(j, aj)| aj * binomial(j, m) * x0.powi((j - m) as i32))
                .sum()
        })
        .collect()
}

pub fn make_bump(epsilon: f64, amplitude: f64, order: usize) -> Result<BumpProfile> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("bump radius {epsilon} must be positive")));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::Domain(format!("bump amplitude {amplitude} must be positive")));
    }
    if order > MAX_ORDER {
        return Err(Error::OrderUnsupported { requested: order, max: MAX_ORDER });
    }
    let mut bump = BumpProfile { epsilon, amplitude, order, rho0: 0.0, smoothstep: smoothstep_coefficients(order) };
    let mut rho0 = 0.0f64;
    for k in 0..=10_000 {
        let d = epsilon * k as f64 / 10_000.0;
        for q in 0..=order {
            rho0 = rho0.max(bump.derivative(d, q).abs() * epsilon.powi(q as i32));
        }
    }
    bump.rho0 = rho0;
    Ok(bump)
}

impl BumpProfile {
    pub fn value(&self, d: f64) -> f64 {
        self.derivative(d, 0)
    }

    /// `ρ^(q)(d)` for `d ≥ 0`.
    pub fn derivative(&self, d: f64, q: usize) -> f64 {
        if d >= self.epsilon {
            return 0.0;
        }
        let u = d / self.epsilon;
        let scale = crate::jet::factorial(q) / self.epsilon.powi(q as i32);
        if u > 0.5 {
            // 1 − S(u) = S(1 − u); expanding at 1 − u keeps the flat end accurate
            let t = poly_taylor(&self.smoothstep, 1.0 - u, q);
            let sign = if q.is_multiple_of(2) { 1.0 } else { -1.0 };
            return self.amplitude * sign * t[q] * scale;
        }
        let t = poly_taylor(&self.smoothstep, u, q);
        let base = if q == 0 { 1.0 } else { 0.0 };
        self.amplitude * (base - t[q] * scale)
    }

    /// `ρ` composed with a jet of the distance itself (valid for `0 ≤ d < ε`
    /// and beyond; not smooth at `d = 0` as a function of position).
    pub fn of_distance(&self, d: &Jet) -> Jet {
        let d0 = d.value();
        if d0 >= self.epsilon {
            return Jet::constant(d.layout(), 0.0);
        }
        let order = d.order();
        let series: Vec<f64> = (0..=order)
            .map(|m| self.derivative(d0, m) / crate::jet::factorial(m))
            .collect();
        d.compose(&series)
    }

    /// `ρ(√s)` for a jet `s` of the squared distance; smooth in position.
    pub fn of_squared(&self, s: &Jet) -> Jet {
        let s0 = s.value();
        let e2 = self.epsilon * self.epsilon;
        if s0 >= e2 {
            return Jet::constant(s.layout(), 0.0);
        }
        if s0 <= (FLAT_CORE * self.epsilon).powi(2) {
            return Jet::constant(s.layout(), self.amplitude);
        }
        let order = s.order();
        // d^m/ds^m of (s/ε²)^{j/2}, as generalized binomial series at s0
        let series: Vec<f64> = (0..=order)
            .map(|m| {
                let mut acc = if m == 0 { 1.0 } else { 0.0 };
                for (j, aj) in self.smoothstep.iter().enumerate() {
                    if *aj == 0.0 {
                        continue;
                    }
                    let p = 0.5 * j as f64;
                    let binom = (0..m).fold(1.0, |b, i| b * (p - i as f64) / (i + 1) as f64);
                    acc -= aj * binom * s0.powf(p - m as f64) / self.epsilon.powi(j as i32);
                }
                self.amplitude * acc
            })
            .collect();
        s.compose(&series)
    }
}

/// Two-branch weights `w_i = ρ_i σ_j / (σ_j + σ_i ρ_j)` with `σ = 1 − ρ/A`,
/// so `w_i = A` at `d_i = 0`, `0` at `d_j = 0` or `d_i ≥ ε`, and `w_1 + w_2 ≤ A`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchWeights {
    pub bump: BumpProfile,
    /// Measured `max_q |∂^q w_i/∂d_i^q| ε^q` on a grid in `(d_i, d_j)` with
    /// `d_i + d_j ≥ ε/2`; the weights are singular where both distances vanish.
    pub rho0: f64,
    /// Largest `w_1 + w_2` seen on the same grid.
    pub max_sum: f64,
}

impl BranchWeights {
    pub fn new(bump: BumpProfile) -> Result<Self> {
        let eps = bump.epsilon;
        let lay = layout(1, bump.order);
        let mut w = BranchWeights { bump, rho0: 0.0, max_sum: 0.0 };
        let (mut rho0, mut max_sum) = (0.0f64, 0.0f64);
        let n = 100;
        for a in 1..n {
            for b in 1..=n {
                let di = eps * a as f64 / n as f64;
                let dj = eps * b as f64 / n as f64;
                if di + dj < 0.5 * eps {
                    continue;
                }
                let ri = w.bump.of_distance(&Jet::variable(&lay, 0, di));
                let rj = w.bump.of_distance(&Jet::constant(&lay, dj));
                let wi = w.combine(&ri, &rj)?;
                for q in 0..=w.bump.order {
                    rho0 = rho0.max(wi.derivative(&[q as u8]).abs() * eps.powi(q as i32));
                }
                max_sum = max_sum.max(w.value(di, dj) + w.value(dj, di));
            }
        }
        w.rho0 = rho0;
        w.max_sum = max_sum;
        Ok(w)
    }

    /// `w_i` from the bump jets `ρ(d_i)`, `ρ(d_j)`.
    pub fn combine(&self, rho_i: &Jet, rho_j: &Jet) -> Result<Jet> {
        let a = self.bump.amplitude;
        let sig_i = rho_i.scale(-1.0 / a).add_scalar(1.0);
        let sig_j = rho_j.scale(-1.0 / a).add_scalar(1.0);
        let den = &sig_j + &(&sig_i * &rho_j.scale(1.0 / a));
        if den.value() <= 0.0 {
            // both distances vanish: the limit along d_1 = d_2 is A/2
            return Ok(Jet::constant(rho_i.layout(), 0.5 * a));
        }
        &(rho_i * &sig_j) / &den
    }

    pub fn value(&self, di: f64, dj: f64) -> f64 {
        let lay = layout(1, 0);
        let ri = Jet::constant(&lay, self.bump.value(di));
        let rj = Jet::constant(&lay, self.bump.value(dj));
        self.combine(&ri, &rj).map(|j| j.value()).unwrap_or(0.0)
    }
}
