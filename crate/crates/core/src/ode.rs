//! Dormand–Prince 5(4) integration with continuous (dense) output.
//!
//! Every ODE solve in the crate (flows, variational flows, geodesics,
//! parallel transport) goes through [`Dopri5`], so a single tolerance
//! policy governs all of them.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    /// Largest admissible |step|; `0` means unbounded.
    pub h_max: f64,
    pub max_steps: usize,
    /// State norm treated as blow-up.
    pub blowup: f64,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 {
            rtol: 1e-10,
            atol: 1e-10,
            h_max: 0.0,
            max_steps: 2_000_000,
            blowup: 1e8,
        }
    }
}

impl Dopri5 {
    pub fn with_tol(tol: f64) -> Self {
        Dopri5 {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

/// One accepted step and its quartic interpolant.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseStep {
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
        }
    }

    fn derivative_into(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let [_, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            // d/ds of r2 s + r3 s s1 + r4 s² s1 + r5 s² s1²
            let d = r2[i]
                + r3[i] * (1.0 - 2.0 * s)
                + r4[i] * s * (2.0 - 3.0 * s)
                + r5[i] * 2.0 * s * s1 * (1.0 - 2.0 * s);
            out[i] = d / self.h;
        }
    }

    pub fn start(&self) -> &[f64] {
        &self.rcont[0]
    }

    pub fn end(&self) -> Vec<f64> {
        self.rcont[0].iter().zip(&self.rcont[1]).map(|(a, b)| a + b).collect()
    }
}

/// Piecewise-quartic dense output of a solve, forward or backward in time.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub t_start: f64,
    pub t_end: f64,
    pub y_start: Vec<f64>,
    pub y_end: Vec<f64>,
    pub steps: Vec<DenseStep>,
    pub rejected: usize,
    /// True when the stop predicate ended the solve before `t_end` was requested.
    pub stopped: bool,
}

impl DenseSolution {
    pub fn dimension(&self) -> usize {
        self.y_start.len()
    }

    fn forward(&self) -> bool {
        self.t_end >= self.t_start
    }

    fn locate(&self, t: f64) -> Option<&DenseStep> {
        if self.steps.is_empty() {
            return None;
        }
        let fwd = self.forward();
        // steps are ordered along the integration direction
        let idx = self.steps.partition_point(|s| if fwd { s.t0 <= t } else { s.t0 >= t });
        Some(&self.steps[idx.saturating_sub(1)])
    }

    /// State at `t`; exact copies of the stored endpoints at `t_start` and `t_end`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        if t == self.t_start {
            return self.y_start.clone();
        }
        if t == self.t_end {
            return self.y_end.clone();
        }
        let mut out = vec![0.0; self.dimension()];
        if let Some(step) = self.locate(t) {
            step.eval_into(t, &mut out);
        } else {
            out.copy_from_slice(&self.y_start);
        }
        out
    }

    pub fn derivative(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        if let Some(step) = self.locate(t) {
            step.derivative_into(t, &mut out);
        }
        out
    }

    /// Accepted step boundaries, in integration order.
    pub fn nodes(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        v.push(self.t_end);
        v
    }
}

fn err_norm(y0: &[f64], y1: &[f64], err: &[f64], cfg: &Dopri5) -> f64 {
    let n = y0.len() as f64;
    let sum: f64 = y0
        .iter()
        .zip(y1)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

impl Dopri5 {
    /// Integrates `y' = f(t, y)` from `t0` to `t1`; `stop` is consulted after
    /// every accepted step and ends the solve early when it returns true.
    pub fn solve<F, S>(&self, mut f: F, t0: f64, y0: &[f64], t1: f64, mut stop: S) -> Result<DenseSolution>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
        S: FnMut(f64, &[f64]) -> bool,
    {
        let n = y0.len();
        let mut sol = DenseSolution {
            t_start: t0,
            t_end: t0,
            y_start: y0.to_vec(),
            y_end: y0.to_vec(),
            steps: Vec::new(),
            rejected: 0,
            stopped: false,
        };
        if t1 == t0 {
            return Ok(sol);
        }
        let dir = (t1 - t0).signum();
        let span = (t1 - t0).abs();
        let h_max = if self.h_max > 0.0 { self.h_max.min(span) } else { span };

        let mut k: [Vec<f64>; 7] = Default::default();
        for s in k.iter_mut() {
            *s = vec![0.0; n];
        }
        let mut ytmp = vec![0.0; n];
        let mut y1 = vec![0.0; n];
        let mut errv = vec![0.0; n];
        let mut y = y0.to_vec();
        let mut t = t0;
        f(t, &y, &mut k[0])?;

        // initial step guess
        let sc: Vec<f64> = y.iter().map(|v| self.atol + self.rtol * v.abs()).collect();
        let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n as f64).sqrt();
        let d1 = (k[0].iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n as f64).sqrt();
        let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h = h.min(h_max).clamp(1e-12, 0.1) * dir;

        let mut nsteps = 0usize;
        loop {
            if nsteps >= self.max_steps {
                return Err(Error::ToleranceFailure { t });
            }
            let remaining = t1 - t;
            let last = h.abs() >= remaining.abs() * (1.0 - 1e-14);
            if last {
                h = remaining;
            }
            macro_rules! stage {
                ($dst:expr, $tc:expr, $($coef:expr => $ki:expr),+) => {{
                    for i in 0..n {
                        ytmp[i] = y[i] + h * (0.0 $(+ $coef * k[$ki][i])+);
                    }
                    let (lo, hi) = k.split_at_mut($dst);
                    let _ = lo;
                    f(t + $tc * h, &ytmp, &mut hi[0])?;
                }};
            }
            stage!(1, C2, A21 => 0);
            stage!(2, C3, A31 => 0, A32 => 1);
            stage!(3, C4, A41 => 0, A42 => 1, A43 => 2);
            stage!(4, C5, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
            stage!(5, 1.0, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
            for i in 0..n {
                y1[i] = y[i]
                    + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
            }
            let t_new = if last { t1 } else { t + h };
            {
                let (lo, hi) = k.split_at_mut(6);
                let _ = lo;
                f(t_new, &y1, &mut hi[0])?;
            }
            for i in 0..n {
                errv[i] = h
                    * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            }
            let err = err_norm(&y, &y1, &errv, self);
            nsteps += 1;
            if !err.is_finite() {
                sol.rejected += 1;
                h *= 0.2;
                if h.abs() < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::ToleranceFailure { t });
                }
                continue;
            }
            if err <= 1.0 {
                let mut r5 = vec![0.0; n];
                let mut r2 = vec![0.0; n];
                let mut r3 = vec![0.0; n];
                let mut r4 = vec![0.0; n];
                for i in 0..n {
                    let ydiff = y1[i] - y[i];
                    let bspl = h * k[0][i] - ydiff;
                    r2[i] = ydiff;
                    r3[i] = bspl;
                    r4[i] = ydiff - h * k[6][i] - bspl;
                    r5[i] = h
                        * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
                }
                sol.steps.push(DenseStep {
                    t0: t,
                    h,
                    rcont: [y.clone(), r2, r3, r4, r5],
                });
                t = t_new;
                y.copy_from_slice(&y1);
                let (a, b) = k.split_at_mut(6);
                a[0].copy_from_slice(&b[0]);
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !norm.is_finite() || norm > self.blowup {
                    return Err(Error::BlowUp { t, norm });
                }
                if last {
                    break;
                }
                if stop(t, &y) {
                    sol.stopped = true;
                    break;
                }
                let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
                h = (h.abs() * fac).min(h_max) * dir;
            } else {
                sol.rejected += 1;
                let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                h *= fac;
                if h.abs() < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::ToleranceFailure { t });
                }
            }
        }
        sol.t_end = t;
        sol.y_end = y;
        Ok(sol)
    }
}
