//! Flows of vector fields: dense trajectories, variational flows, recurrence
//! search and section return times.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::field::{estimate_lipschitz, lie_derivative, ConstantField, Region, VectorField};
use crate::geometry::ChartedManifold;
use crate::jet::{layout, Jet};
use crate::ode::{DenseSolution, Dopri5};
use crate::{Error, Result};

/// Dense solution of `x' = X(x, t)` in the primary chart.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub x0: Vec<f64>,
    pub t_span: (f64, f64),
    pub tolerance: f64,
    pub solution: DenseSolution,
}

impl Trajectory {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.solution.eval(t)
    }

    pub fn derivative(&self, t: f64) -> Vec<f64> {
        self.solution.derivative(t)
    }

    pub fn end(&self) -> &[f64] {
        &self.solution.y_end
    }

    pub fn step_count(&self) -> usize {
        self.solution.steps.len()
    }

    /// Sample times: every step boundary plus `sub - 1` interior points per step.
    pub fn sample_times(&self, sub: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.solution.steps {
            for k in 0..sub.max(1) {
                out.push(s.t0 + s.h * k as f64 / sub.max(1) as f64);
            }
        }
        out.push(self.solution.t_end);
        out
    }

    /// CSV with header `t,x1,...,xn`, 12 significant digits, one row per time.
    pub fn write_csv<W: Write>(&self, mut w: W, times: &[f64]) -> Result<()> {
        let n = self.x0.len();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for &t in times {
            let x = self.eval(t);
            let row: Vec<String> = std::iter::once(t).chain(x).map(fmt12).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Formats with 12 significant digits.
pub fn fmt12(v: f64) -> String {
    format!("{:.11e}", v)
}

fn rhs(field: &dyn VectorField) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + '_ {
    move |t, y, dy| {
        let v = field.eval(y, t)?;
        dy.copy_from_slice(&v);
        Ok(())
    }
}

pub fn integrate(field: &dyn VectorField, man: &ChartedManifold, x0: &[f64], t_span: (f64, f64)) -> Result<Trajectory> {
    integrate_with(field, man, x0, t_span, &man.solver)
}

pub fn integrate_with(
    field: &dyn VectorField,
    man: &ChartedManifold,
    x0: &[f64],
    t_span: (f64, f64),
    solver: &Dopri5,
) -> Result<Trajectory> {
    if x0.len() != field.dimension() || man.dimension != field.dimension() {
        return Err(Error::DimensionMismatch { expected: field.dimension(), found: x0.len() });
    }
    if !(t_span.0.is_finite() && t_span.1.is_finite()) {
        return Err(Error::Domain("time span must be finite".into()));
    }
    let solution = solver.solve(rhs(field), t_span.0, x0, t_span.1, |_, _| false)?;
    Ok(Trajectory { x0: x0.to_vec(), t_span, tolerance: solver.rtol.max(solver.atol), solution })
}

/// Base trajectory together with the fundamental matrix `M(t)`, `M(t0) = I`.
#[derive(Debug, Clone)]
pub struct VariationalTrajectory {
    pub n: usize,
    pub solution: DenseSolution,
}

impl VariationalTrajectory {
    pub fn point(&self, t: f64) -> Vec<f64> {
        self.solution.eval(t)[..self.n].to_vec()
    }

    pub fn matrix(&self, t: f64) -> DMatrix<f64> {
        let y = self.solution.eval(t);
        DMatrix::from_column_slice(self.n, self.n, &y[self.n..])
    }

    pub fn final_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n, self.n, &self.solution.y_end[self.n..])
    }
}

pub fn variational_trajectory(
    field: &dyn VectorField,
    man: &ChartedManifold,
    x0: &[f64],
    t0: f64,
    t1: f64,
) -> Result<VariationalTrajectory> {
    let n = field.dimension();
    if x0.len() != n || man.dimension != n {
        return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
    }
    let mut y0 = x0.to_vec();
    let id = DMatrix::<f64>::identity(n, n);
    y0.extend_from_slice(id.as_slice());
    let f = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let x = &y[..n];
        let v = field.eval(x, t)?;
        dy[..n].copy_from_slice(&v);
        let a = field.jacobian(x, t)?;
        let m = DMatrix::from_column_slice(n, n, &y[n..]);
        let am = a * m;
        dy[n..].copy_from_slice(am.as_slice());
        Ok(())
    };
    let solution = man.solver.solve(f, t0, &y0, t1, |_, _| false)?;
    Ok(VariationalTrajectory { n, solution })
}

/// `dφ_T(x0)` for the flow started at time 0.
pub fn variational_flow(field: &dyn VectorField, man: &ChartedManifold, x0: &[f64], t: f64) -> Result<DMatrix<f64>> {
    Ok(variational_trajectory(field, man, x0, 0.0, t)?.final_matrix())
}

/// Normalized Taylor coefficients `c_0..c_order` of `τ ↦ φ_τ(x)` started at
/// time `t`, computed in Taylor mode (`c_{k+1} = [X(c)]_k / (k+1)`).
pub fn flow_series(field: &dyn VectorField, x: &[f64], t: f64, order: usize) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let lay = layout(1, order);
    let mut coeffs: Vec<Vec<f64>> = x.iter().map(|&v| {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        c
    }).collect();
    let tj = Jet::variable(&lay, 0, t);
    for k in 0..order {
        let xs: Vec<Jet> = coeffs.iter().map(|c| Jet::from_coeffs(&lay, c.clone())).collect();
        let v = field.eval_jets(&xs, &tj)?;
        for i in 0..n {
            coeffs[i][k + 1] = v[i].coeffs()[k] / (k + 1) as f64;
        }
    }
    // transpose to [order][component]
    Ok((0..=order).map(|k| (0..n).map(|i| coeffs[i][k]).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnEvent {
    pub x0: Vec<f64>,
    pub t_anchor: f64,
    pub period: f64,
    pub x_ret: Vec<f64>,
    pub alpha: f64,
}

/// `d/dt ½ dis(x0, φ_t)²` expressed through the log map at `φ_t`.
fn approach_rate(field: &dyn VectorField, man: &ChartedManifold, x0: &[f64], x: &[f64], t: f64) -> Result<f64> {
    let v = field.eval(x, t)?;
    let back = man.log_map(x, x0)?;
    Ok(-man.inner(x, &back, &v))
}

/// Root of a scalar function bracketed by `[a, b]` (Illinois variant of
/// regula falsi), to `|Δt| ≤ tol`.
pub fn refine_root<F: FnMut(f64) -> Result<f64>>(mut g: F, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let mut ga = g(a)?;
    let mut gb = g(b)?;
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    let mut side = 0i8;
    let mut last = 0.5 * (a + b);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            return Ok(last);
        }
        let mut c = (a * gb - b * ga) / (gb - ga);
        if !c.is_finite() || c <= a.min(b) || c >= a.max(b) {
            c = 0.5 * (a + b);
        }
        let gc = g(c)?;
        if gc == 0.0 || (c - last).abs() <= 0.1 * tol {
            return Ok(c);
        }
        last = c;
        if (gc > 0.0) == (gb > 0.0) {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (a + b))
}

/// Scans `t ↦ dis(x0, φ_t(x0))` on `[t_min, horizon]` for local minima below
/// `alpha_max`, refining each to 1e-10 in `t`.
pub fn find_returns(
    field: &dyn VectorField,
    man: &ChartedManifold,
    x0: &[f64],
    t_anchor: f64,
    alpha_max: f64,
    horizon: f64,
    t_min: f64,
) -> Result<Vec<ReturnEvent>> {
    if !(alpha_max > 0.0 && t_min > 0.0 && t_min < horizon) {
        return Err(Error::Domain("need alpha_max > 0 and 0 < t_min < horizon".into()));
    }
    let traj = integrate(field, man, x0, (t_anchor, t_anchor + horizon))?;
    // sample finely relative to the current distance from x0 so that no
    // approach below alpha_max is stepped over
    let mut times = Vec::new();
    for s in &traj.solution.steps {
        let end = s.end();
        let chord = s.start().iter().zip(&end).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let near = man.distance(x0, s.start()).min(man.distance(x0, &end));
        let sub = ((chord / alpha_max.max(0.25 * near)).ceil() as usize).clamp(8, 20_000);
        times.extend((0..sub).map(|k| s.t0 + s.h * k as f64 / sub as f64));
    }
    times.push(traj.solution.t_end);
    let mut events = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for &t in &times {
        let tau = t - t_anchor;
        if tau < t_min {
            continue;
        }
        let x = traj.eval(t);
        let g = approach_rate(field, man, x0, &x, t).unwrap_or(f64::NAN);
        if let Some((tp, gp)) = prev {
            if gp < 0.0 && g >= 0.0 {
                let tr = refine_root(
                    |s| approach_rate(field, man, x0, &traj.eval(s), s),
                    tp,
                    t,
                    1e-12,
                )?;
                let x_ret = traj.eval(tr);
                let alpha = man.distance(x0, &x_ret);
                if alpha < alpha_max {
                    events.push(ReturnEvent {
                        x0: x0.to_vec(),
                        t_anchor,
                        period: tr - t_anchor,
                        x_ret,
                        alpha,
                    });
                }
            }
        }
        prev = Some((t, g));
    }
    events.sort_by(|a, b| a.period.total_cmp(&b.period));
    Ok(events)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnJetReport {
    pub event: ReturnEvent,
    pub order: usize,
    /// `deviations[q]`, maximized over the test-field family.
    pub deviations: Vec<f64>,
    pub b: f64,
    pub l: f64,
    pub bound: f64,
}

pub(crate) fn multisets(family: usize, q: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, family: usize, q: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == q {
            out.push(cur.clone());
            return;
        }
        for i in start..family {
            cur.push(i);
            rec(i, family, q, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, family, q, &mut Vec::new(), &mut out);
    out
}

/// Compares iterated Lie derivatives of the field at the return point
/// (transported back to `x0`) against those at `x0`.
///
/// The bound uses `L_eff = max(L, 1)`: any larger Lipschitz constant is
/// admissible and the `L^r` factor must dominate the first-order term.
pub fn check_return_jets(
    field: &dyn VectorField,
    man: &ChartedManifold,
    event: &ReturnEvent,
    order: usize,
    h_family: &[Vec<f64>],
    region: &Region,
) -> Result<ReturnJetReport> {
    let n = field.dimension();
    let hs: Vec<ConstantField> = h_family.iter().map(|h| ConstantField(h.clone())).collect();
    let t_ret = event.t_anchor + event.period;
    let mut deviations = vec![0.0f64; order + 1];
    for (q, dev) in deviations.iter_mut().enumerate() {
        for combo in multisets(hs.len(), q) {
            let refs: Vec<&dyn VectorField> = combo.iter().map(|&i| &hs[i] as &dyn VectorField).collect();
            let at0 = lie_derivative(field, &refs, &event.x0, event.t_anchor)?;
            let at_ret = lie_derivative(field, &refs, &event.x_ret, t_ret)?;
            let moved = man.transport_between(&event.x_ret, &event.x0, &at_ret)?;
            let diff: Vec<f64> = (0..n).map(|i| moved[i] - at0[i]).collect();
            *dev = dev.max(man.norm(&event.x0, &diff));
        }
    }
    let lip = estimate_lipschitz(field, region, order, 9)?;
    let b = man.b_constant(&event.x0);
    let l = lip.l.max(1.0);
    Ok(ReturnJetReport {
        event: event.clone(),
        order,
        deviations,
        b,
        l,
        bound: b * l.powi(order as i32) * event.alpha,
    })
}

/// Hyperplane section through `point` with unit `normal`, restricted to a
/// ball of `radius`; crossings count in the direction of `normal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
    pub radius: f64,
}

impl Section {
    pub fn new(point: Vec<f64>, normal: Vec<f64>, radius: f64) -> Self {
        let norm = normal.iter().map(|c| c * c).sum::<f64>().sqrt();
        Section { point, normal: normal.iter().map(|c| c / norm).collect(), radius }
    }

    pub fn signed(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.point).zip(&self.normal).map(|((a, p), n)| (a - p) * n).sum()
    }

    pub fn within(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.point).map(|(a, p)| (a - p).powi(2)).sum::<f64>().sqrt() < self.radius
    }
}

/// First positive return of `p` to the section and the derivative of the
/// return time restricted to the section's tangent hyperplane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnTime {
    pub time: f64,
    pub point: Vec<f64>,
    pub gradient: Vec<f64>,
    pub monodromy: Vec<f64>,
}

pub fn first_return(
    field: &dyn VectorField,
    man: &ChartedManifold,
    section: &Section,
    p: &[f64],
    t0: f64,
    horizon: f64,
) -> Result<(f64, VariationalTrajectory)> {
    let n = field.dimension();
    // ignore the immediate departure from a start point on the section
    let t_quiet = 1e-6 * horizon.max(1.0);
    let mut y0 = p.to_vec();
    y0.extend_from_slice(DMatrix::<f64>::identity(n, n).as_slice());
    let mut last = section.signed(p);
    let mut crossed = false;
    let f = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let x = &y[..n];
        dy[..n].copy_from_slice(&field.eval(x, t)?);
        let m = DMatrix::from_column_slice(n, n, &y[n..]);
        let am = field.jacobian(x, t)? * m;
        dy[n..].copy_from_slice(am.as_slice());
        Ok(())
    };
    let stop = |t: f64, y: &[f64]| {
        let s = section.signed(&y[..n]);
        let hit = t - t0 > t_quiet && last < 0.0 && s >= 0.0 && section.within(&y[..n]);
        last = s;
        if hit {
            crossed = true;
        }
        hit
    };
    let sol = match man.solver.solve(f, t0, &y0, t0 + horizon, stop) {
        Ok(s) => s,
        Err(Error::BlowUp { .. }) => return Err(Error::NoCrossing),
        Err(e) => return Err(e),
    };
    if !crossed {
        return Err(Error::NoCrossing);
    }
    let vt = VariationalTrajectory { n, solution: sol };
    let last_step = vt.solution.steps.last().expect("at least one step");
    let (a, b) = (last_step.t0, vt.solution.t_end);
    let tc = refine_root(|t| Ok(section.signed(&vt.point(t))), a, b, 1e-13)?;
    Ok((tc, vt))
}

pub fn return_time_map(
    field: &dyn VectorField,
    man: &ChartedManifold,
    section: &Section,
    p: &[f64],
    horizon: f64,
) -> Result<ReturnTime> {
    let n = field.dimension();
    let (tc, vt) = first_return(field, man, section, p, 0.0, horizon)?;
    let x = vt.point(tc);
    let m = vt.matrix(tc);
    let v = field.eval(&x, tc)?;
    let nv = DVector::from_column_slice(&section.normal);
    let speed = nv.dot(&DVector::from_column_slice(&v));
    if speed.abs() <= 1e-8 {
        return Err(Error::TangentialCrossing(speed.abs()));
    }
    let row = -(nv.transpose() * &m) / speed;
    let proj = DMatrix::<f64>::identity(n, n) - &nv * nv.transpose();
    let grad = row * proj;
    Ok(ReturnTime {
        time: tc,
        point: x,
        gradient: grad.iter().copied().collect(),
        monodromy: m.as_slice().to_vec(),
    })
}

/// Newton shooting for a periodic orbit near `(x, period)`, with the phase
/// fixed by `X(x_guess)·(x − x_guess) = 0`.
pub fn refine_periodic(
    field: &dyn VectorField,
    man: &ChartedManifold,
    x: &[f64],
    period: f64,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = field.dimension();
    let anchor = x.to_vec();
    let phase = DVector::from_vec(field.eval(&anchor, 0.0)?);
    let mut x = DVector::from_column_slice(x);
    let mut period = period;
    for _ in 0..30 {
        let vt = variational_trajectory(field, man, x.as_slice(), 0.0, period)?;
        let end = DVector::from_column_slice(&vt.solution.y_end[..n]);
        let m = vt.final_matrix();
        let fx = DVector::from_vec(field.eval(end.as_slice(), period)?);
        let mut jac = DMatrix::<f64>::zeros(n + 1, n + 1);
        let mut res = DVector::<f64>::zeros(n + 1);
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] = m[(i, j)] - if i == j { 1.0 } else { 0.0 };
            }
            jac[(i, n)] = fx[i];
            jac[(n, i)] = phase[i];
            res[i] = end[i] - x[i];
        }
        res[n] = phase.dot(&(&x - DVector::from_column_slice(&anchor)));
        if res.norm() < tol {
            return Ok((x.iter().copied().collect(), period));
        }
        let step = jac.lu().solve(&(-res)).ok_or(Error::NotPeriodic(f64::NAN))?;
        for i in 0..n {
            x[i] += step[i];
        }
        period += step[n];
    }
    let end = integrate(field, man, x.as_slice(), (0.0, period))?;
    Err(Error::NotPeriodic(man.distance(x.as_slice(), end.end())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::parse_field;

    #[test]
    fn series_of_exponential() {
        let f = parse_field("[x]", 1).unwrap();
        let c = flow_series(&f, &[2.0], 0.0, 5).unwrap();
        let mut fact = 1.0;
        for (k, ck) in c.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            assert!((ck[0] - 2.0 / fact).abs() < 1e-15);
        }
    }

    #[test]
    fn series_with_time_dependence() {
        // x' = t has φ_τ = x + tτ + τ²/2
        let f = parse_field("[t]", 1).unwrap();
        let c = flow_series(&f, &[1.0], 3.0, 3).unwrap();
        assert_eq!(c[0][0], 1.0);
        assert!((c[1][0] - 3.0).abs() < 1e-15);
        assert!((c[2][0] - 0.5).abs() < 1e-15);
        assert!(c[3][0].abs() < 1e-15);
    }

    #[test]
    fn root_refinement() {
        let r = refine_root(|t| Ok(t * t - 2.0), 0.0, 3.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn multiset_counts() {
        assert_eq!(multisets(4, 0).len(), 1);
        assert_eq!(multisets(4, 2).len(), 10);
        assert_eq!(multisets(3, 3).len(), 10);
    }
}
