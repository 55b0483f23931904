use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::field::{Mode, PerturbedField};
use crate::closing::{interpolation_residual, orbit_region};
use crate::field::{estimate_lipschitz, eval_jet, VectorField};
use crate::flow::{flow_series, integrate_with, multisets};
use crate::jet::{factorial, Jet};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Constants {
    pub b: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "H")]
    pub h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OrderVerdict {
    pub q: usize,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CrDistanceReport {
    pub mode: Mode,
    pub r: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub rho0: f64,
    pub constants: Constants,
    pub per_order: Vec<OrderVerdict>,
    pub sample_count: usize,
    /// Samples that landed inside the flow box.
    pub inside_count: usize,
    /// Largest `w_1 + w_2` of the branch weights (at most the amplitude).
    pub overlap_weight_sum: f64,
    pub seed: u64,
}

impl CrDistanceReport {
    pub fn passed(&self) -> bool {
        self.per_order.iter().all(|v| v.pass)
    }

    pub fn measured(&self) -> Vec<f64> {
        self.per_order.iter().map(|v| v.measured).collect()
    }
}

/// `(h · ∇) v` for each component, spatial variables only.
fn directional(v: &[Jet], h: &[f64]) -> Vec<Jet> {
    v.iter()
        .map(|c| {
            let mut acc = c.partial(0).scale(h[0]);
            for (j, hj) in h.iter().enumerate().skip(1) {
                acc = acc + c.partial(j).scale(*hj);
            }
            acc
        })
        .collect()
}

/// Point uniformly distributed in the ball of radius `radius`.
fn ball_offset(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm2: f64 = v.iter().map(|c| c * c).sum();
        if norm2 <= 1.0 && norm2 > 0.0 {
            return v.iter().map(|c| c * radius).collect();
        }
    }
}

/// Sup over tube samples and the test family of `‖L_{h_q}…L_{h_1}(X − Y)‖`,
/// against `(ρ0/ε^q) b² L^{2r} (L^r + H^r)(ε L^r + 2) α`.
///
/// Half of the samples are stratified over the support of the correction
/// (the blend window and an `ε`-margin), half are uniform along the orbit.
pub fn cr_distance(
    x: &dyn VectorField,
    y: &PerturbedField,
    r: usize,
    h_family: &[Vec<f64>],
    sample_count: usize,
    seed: u64,
) -> Result<CrDistanceReport> {
    if sample_count < 1000 {
        return Err(Error::Domain(format!("sample_count {sample_count} below 1000")));
    }
    let orbit = &y.flowbox.orbit;
    let man = &orbit.manifold;
    let n = orbit.dimension();
    let eps = y.epsilon();
    let period = orbit.period;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = eps / orbit.v_min.max(1e-12);
    let (lo, hi) = if orbit.is_corrected() && orbit.window + 2.0 * margin < period {
        (period - orbit.window - margin, period + margin)
    } else {
        (0.0, period)
    };
    let combos: Vec<Vec<Vec<usize>>> = (0..=r).map(|q| multisets(h_family.len(), q)).collect();
    let mut measured = vec![0.0f64; r + 1];
    let mut inside_count = 0;
    for k in 0..sample_count {
        let stratified = k % 2 == 0;
        let (t, radius, dt) = if stratified {
            let j = k / 2;
            let t = lo + (hi - lo) * (j as f64 + 0.5) / (sample_count / 2) as f64;
            (t, eps * ((j % 10) as f64 + 0.5) / 10.0, 0.0)
        } else {
            let t = rng.gen_range(0.0..period);
            let radius = eps * rng.gen::<f64>().powf(1.0 / n as f64);
            let dt = if y.mode == Mode::Nonautonomous {
                rng.gen_range(-1.0..1.0) * eps / y.time_scale
            } else {
                0.0
            };
            (t, radius, dt)
        };
        let p = orbit.point(t);
        let off = ball_offset(&mut rng, n, 1.0);
        let norm = off.iter().map(|c| c * c).sum::<f64>().sqrt();
        let point: Vec<f64> = p.iter().zip(&off).map(|(a, o)| a + radius * o / norm).collect();
        let point = man.wrap(&point);
        if y.flowbox.project(&point).is_outside() {
            continue;
        }
        inside_count += 1;
        let time = orbit.field_time(orbit.wrap(t)) + dt;
        let jy = eval_jet(y, &point, time, r)?;
        let jx = eval_jet(x, &point, time, r)?;
        let diff: Vec<Jet> = jx.components.iter().zip(&jy.components).map(|(a, b)| a - b).collect();
        for (q, list) in combos.iter().enumerate() {
            for combo in list {
                let mut v = diff.clone();
                for &i in combo {
                    v = directional(&v, &h_family[i]);
                }
                let vals: Vec<f64> = v.iter().map(Jet::value).collect();
                measured[q] = measured[q].max(man.norm(&point, &vals));
            }
        }
    }
    let res = interpolation_residual(orbit)?;
    let lip = estimate_lipschitz(x, &orbit_region(orbit, eps), r, 7)?;
    let l = lip.l.max(res.l).max(1.0);
    let h = res.h;
    let b = res.b;
    let rho0 = match &y.weights {
        Some(w) if y.mode == Mode::Homoclinic || !y.flowbox.overlaps.is_empty() => y.bump.rho0.max(w.rho0),
        _ => y.bump.rho0,
    };
    let ri = r as i32;
    let common = b * b * l.powi(2 * ri) * (l.powi(ri) + h.powi(ri)) * (eps * l.powi(ri) + 2.0) * orbit.alpha;
    let per_order = measured
        .iter()
        .enumerate()
        .map(|(q, m)| {
            let bound = rho0 / eps.powi(q as i32) * common;
            OrderVerdict { q, measured: *m, bound, pass: *m <= bound }
        })
        .collect();
    Ok(CrDistanceReport {
        mode: y.mode,
        r,
        alpha: orbit.alpha,
        epsilon: eps,
        rho0,
        constants: Constants { b, l, h },
        per_order,
        sample_count,
        inside_count,
        overlap_weight_sum: y.weights.as_ref().map(|w| w.max_sum).unwrap_or(0.0),
        seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClosureReport {
    pub period: f64,
    /// `dis(ψ_T(x₀), x₀)`.
    pub position_mismatch: f64,
    /// `‖ψ^(q)(T) − ψ^(q)(0)‖` for `q = 1..=r`.
    pub derivative_mismatch: Vec<f64>,
    pub steps: usize,
}

/// Integrates `Y` from `f_0` over one period and compares the ends.
pub fn verify_closure(y: &PerturbedField, r: usize) -> Result<ClosureReport> {
    if y.mode == Mode::Homoclinic {
        return Err(Error::Domain("closure applies to the nonautonomous and autonomous modes".into()));
    }
    let orbit = &y.flowbox.orbit;
    let man = &orbit.manifold;
    let x0 = orbit.point(0.0);
    let t0 = orbit.t_anchor;
    let solver = crate::ode::Dopri5 { rtol: 1e-12, atol: 1e-12, ..man.solver };
    let traj = integrate_with(y, man, &x0, (t0, t0 + orbit.period), &solver)?;
    let end = traj.end().to_vec();
    let start_series = flow_series(y, &x0, t0, r)?;
    let end_series = flow_series(y, &end, t0 + orbit.period, r)?;
    let derivative_mismatch = (1..=r)
        .map(|q| {
            let d: Vec<f64> = (0..x0.len())
                .map(|i| factorial(q) * (end_series[q][i] - start_series[q][i]))
                .collect();
            man.norm(&x0, &d)
        })
        .collect();
    Ok(ClosureReport {
        period: orbit.period,
        position_mismatch: man.distance(&end, &x0),
        derivative_mismatch,
        steps: traj.step_count(),
    })
}
