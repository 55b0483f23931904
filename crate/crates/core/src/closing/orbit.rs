use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::field::{estimate_lipschitz, Region, VectorField};
use crate::flow::{flow_series, fmt12, integrate, ReturnEvent, Trajectory};
use crate::geometry::{ChartedManifold, ManifoldKind};
use crate::jet::{factorial, layout, Jet};
use crate::{Error, Result};

/// Nodes in the arclength / curvature table.
const TABLE_NODES: usize = 2000;
/// Cap on the reported radius of curvature.
pub const RC_CAP: f64 = 1e6;

/// A closed curve `f` of period `T`: the true flow from `x0`, with a
/// Hermite correction on the window `[T − w, T]` that carries the
/// derivatives at `T` onto those at `0`.
pub struct ClosedOrbit {
    field: Arc<dyn VectorField>,
    pub manifold: ChartedManifold,
    pub x0: Vec<f64>,
    pub t_anchor: f64,
    pub period: f64,
    pub order: usize,
    pub window: f64,
    pub alpha: f64,
    base: Trajectory,
    /// Per coordinate, monomial coefficients in `u = (t − T + w)/w`; empty when uncorrected.
    correction: Vec<Vec<f64>>,
    /// Endpoint data `f^{(q)}(0) − φ^{(q)}(T)` that the correction absorbs.
    pub endpoint_jump: Vec<Vec<f64>>,
    /// `‖f^{(q)}(0) − f^{(q)}(T⁻)‖` for `q = 0..=r`.
    pub endpoint_mismatch: Vec<f64>,
    pub table: ArcTable,
    pub rc_min: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl std::fmt::Debug for ClosedOrbit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosedOrbit")
            .field("x0", &self.x0)
            .field("period", &self.period)
            .field("order", &self.order)
            .field("window", &self.window)
            .field("alpha", &self.alpha)
            .field("rc_min", &self.rc_min)
            .finish()
    }
}

/// Arclength `s(t)` and curvature at table nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArcTable {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub speed: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl ArcTable {
    pub fn length(&self) -> f64 {
        *self.s.last().expect("non-empty table")
    }
}

/// Default blend window `max(T/20, 10 α^{1/(r+1)})`, capped at `T/5`.
pub fn default_window(period: f64, alpha: f64, order: usize) -> f64 {
    (period / 20.0).max(10.0 * alpha.powf(1.0 / (order as f64 + 1.0))).min(period / 5.0)
}

fn uniqueness_radius(man: &ChartedManifold) -> f64 {
    match &man.kind {
        ManifoldKind::Euclidean => f64::INFINITY,
        ManifoldKind::FlatTorus { periods } => periods.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0,
        ManifoldKind::Sphere2 { radius } => radius * std::f64::consts::PI,
    }
}

/// Coefficients `a_{r+1}..a_{2r+1}` of `C(u) = Σ a_k u^k` with all derivatives
/// through `r` zero at `u = 0` and `C^{(q)}(1) = targets[q]`.
fn hermite_coefficients(targets: &[f64], r: usize) -> Result<Vec<f64>> {
    let m = DMatrix::from_fn(r + 1, r + 1, |q, j| {
        let k = r + 1 + j;
        factorial(k) / factorial(k - q)
    });
    let rhs = DVector::from_column_slice(targets);
    let sol = m.lu().solve(&rhs).ok_or_else(|| Error::WindowTooSmall("singular Hermite system".into()))?;
    let mut out = vec![0.0; 2 * r + 2];
    for j in 0..=r {
        out[r + 1 + j] = sol[j];
    }
    Ok(out)
}

/// j-th u-derivative of `Σ a_k u^k`.
fn poly_derivative(a: &[f64], u: f64, j: usize) -> f64 {
    let mut acc = 0.0;
    for k in (j..a.len()).rev() {
        acc = acc * u + a[k] * factorial(k) / factorial(k - j);
    }
    acc
}

impl ClosedOrbit {
    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }

    pub fn dimension(&self) -> usize {
        self.x0.len()
    }

    pub fn base(&self) -> &Trajectory {
        &self.base
    }

    pub fn is_corrected(&self) -> bool {
        !self.correction.is_empty()
    }

    /// Orbit parameter reduced to `[0, T)`.
    pub fn wrap(&self, t: f64) -> f64 {
        let r = t.rem_euclid(self.period);
        if r >= self.period { 0.0 } else { r }
    }

    pub fn in_window(&self, t: f64) -> bool {
        self.is_corrected() && self.wrap(t) >= self.period - self.window
    }

    fn window_u(&self, t: f64) -> f64 {
        (t - (self.period - self.window)) / self.window
    }

    /// Field time at orbit parameter `t` (already wrapped).
    pub fn field_time(&self, t: f64) -> f64 {
        self.t_anchor + t
    }

    pub fn point(&self, t: f64) -> Vec<f64> {
        let t = self.wrap(t);
        let mut x = self.base.eval(self.t_anchor + t);
        if self.in_window(t) {
            let u = self.window_u(t);
            for (xi, a) in x.iter_mut().zip(&self.correction) {
                *xi += poly_derivative(a, u, 0);
            }
        }
        x
    }

    /// Normalized Taylor coefficients of `τ ↦ f(t + τ)`, `[k][component]`.
    pub fn series(&self, t: f64, order: usize) -> Result<Vec<Vec<f64>>> {
        let t = self.wrap(t);
        let x = self.base.eval(self.t_anchor + t);
        let mut c = flow_series(&*self.field, &x, self.t_anchor + t, order)?;
        if self.in_window(t) {
            let u = self.window_u(t);
            for (k, ck) in c.iter_mut().enumerate() {
                let scale = self.window.powi(-(k as i32)) / factorial(k);
                for (i, a) in self.correction.iter().enumerate() {
                    ck[i] += scale * poly_derivative(a, u, k);
                }
            }
        }
        Ok(c)
    }

    /// One-sided series at `T⁻`, for endpoint comparisons.
    fn series_at_end(&self, order: usize) -> Result<Vec<Vec<f64>>> {
        let end = self.base.end().to_vec();
        let mut c = flow_series(&*self.field, &end, self.t_anchor + self.period, order)?;
        if self.is_corrected() {
            for (k, ck) in c.iter_mut().enumerate() {
                let scale = self.window.powi(-(k as i32)) / factorial(k);
                for (i, a) in self.correction.iter().enumerate() {
                    ck[i] += scale * poly_derivative(a, 1.0, k);
                }
            }
        }
        Ok(c)
    }

    pub fn velocity(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.series(t, 1)?.swap_remove(1))
    }

    pub fn speed(&self, t: f64) -> Result<f64> {
        let t = self.wrap(t);
        let v = self.velocity(t)?;
        Ok(self.manifold.norm(&self.point(t), &v))
    }

    /// `s(t)` for `t` in `[0, T]`, by interpolating the table with Hermite cubics.
    pub fn arclength_at(&self, t: f64) -> f64 {
        let tab = &self.table;
        let t = t.clamp(0.0, self.period);
        let i = tab.t.partition_point(|v| *v <= t).clamp(1, tab.t.len() - 1) - 1;
        hermite_eval(tab.t[i], tab.t[i + 1], tab.s[i], tab.s[i + 1], tab.speed[i], tab.speed[i + 1], t)
    }

    /// Inverse of [`arclength_at`](Self::arclength_at), monotone cubic in `s`.
    pub fn param_at(&self, s: f64) -> f64 {
        let tab = &self.table;
        let s = s.clamp(0.0, tab.length());
        let i = tab.s.partition_point(|v| *v <= s).clamp(1, tab.s.len() - 1) - 1;
        hermite_eval(
            tab.s[i],
            tab.s[i + 1],
            tab.t[i],
            tab.t[i + 1],
            1.0 / tab.speed[i],
            1.0 / tab.speed[i + 1],
            s,
        )
    }

    /// Curvature `‖∇_{T} T‖_g` with `T = f'/‖f'‖_g`.
    pub fn curvature(&self, t: f64) -> Result<f64> {
        let c = self.series(t, 2)?;
        curvature_from(&self.manifold, &c[0], &c[1], &c[2].iter().map(|v| 2.0 * v).collect::<Vec<_>>())
    }

    /// CSV `t,s,x1..xn,kappa` at the table nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dimension();
        let mut header = vec!["t".to_string(), "s".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("kappa".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, &t) in self.table.t.iter().enumerate() {
            let mut row = vec![fmt12(t), fmt12(self.table.s[k])];
            row.extend(self.point(t).into_iter().map(fmt12));
            row.push(fmt12(self.table.kappa[k]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn hermite_eval(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    if h <= 0.0 {
        return y0;
    }
    let s = (x - x0) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s).powi(2);
    let h10 = s * (1.0 - s).powi(2);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

fn curvature_from(man: &ChartedManifold, x: &[f64], v: &[f64], acc: &[f64]) -> Result<f64> {
    let n = x.len();
    let gamma = man.christoffel(x)?;
    let mut a = acc.to_vec();
    for j in 0..n {
        for k in 0..n {
            for l in 0..n {
                a[j] += gamma[j][k][l] * v[k] * v[l];
            }
        }
    }
    let vv = man.inner(x, v, v);
    if vv <= 0.0 {
        return Err(Error::ZeroSpeed(f64::NAN));
    }
    let along = man.inner(x, &a, v) / vv;
    let perp: Vec<f64> = (0..n).map(|i| a[i] - along * v[i]).collect();
    Ok(man.norm(x, &perp) / vv)
}

/// 5-point Gauss–Legendre on `[a, b]`.
fn gauss5<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64) -> Result<f64> {
    const X: [f64; 5] = [0.0, 0.538_469_310_105_683_1, -0.538_469_310_105_683_1, 0.906_179_845_938_664, -0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut s = 0.0;
    for k in 0..5 {
        s += W[k] * f(m + h * X[k])?;
    }
    Ok(s * h)
}

fn adaptive_quad<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let whole = gauss5(f, a, b)?;
    let m = 0.5 * (a + b);
    let left = gauss5(f, a, m)?;
    let right = gauss5(f, m, b)?;
    if (left + right - whole).abs() <= tol || depth == 0 {
        return Ok(left + right);
    }
    Ok(adaptive_quad(f, a, m, 0.5 * tol, depth - 1)? + adaptive_quad(f, m, b, 0.5 * tol, depth - 1)?)
}

/// Closes the trajectory from `event.x0` over `[0, event.period]` by a
/// degree-`2r+1` Hermite correction on `[T − w, T]`.
pub fn hermite_close(
    field: Arc<dyn VectorField>,
    man: &ChartedManifold,
    event: &ReturnEvent,
    order: usize,
    window: Option<f64>,
) -> Result<ClosedOrbit> {
    let n = field.dimension();
    let period = event.period;
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::Domain(format!("period {period} must be positive")));
    }
    let limit = 0.5 * uniqueness_radius(man);
    if event.alpha > limit {
        return Err(Error::AlphaTooLarge { alpha: event.alpha, limit });
    }
    let w = window.unwrap_or_else(|| default_window(period, event.alpha, order));
    if !(w > 0.0 && w < period / 4.0) {
        return Err(Error::WindowTooSmall(format!("window {w} must lie in (0, T/4) with T = {period}")));
    }
    let base = integrate(&*field, man, &event.x0, (event.t_anchor, event.t_anchor + period))?;
    let end = base.end().to_vec();
    let start_series = flow_series(&*field, &event.x0, event.t_anchor, order)?;
    let end_series = flow_series(&*field, &end, event.t_anchor + period, order)?;
    // position jump measured through the manifold (wraps on the torus)
    let shift = man.log_map(&end, &event.x0)?;
    let mut jump = vec![vec![0.0; n]; order + 1];
    for q in 0..=order {
        for i in 0..n {
            jump[q][i] = if q == 0 {
                shift[i]
            } else {
                factorial(q) * (start_series[q][i] - end_series[q][i])
            };
        }
    }
    // an exact return keeps the trajectory untouched
    let needs = event.alpha > 0.0 && jump.iter().flatten().any(|v| *v != 0.0);
    let mut correction = Vec::new();
    if needs {
        for i in 0..n {
            let targets: Vec<f64> = jump.iter().enumerate().map(|(q, j)| j[i] * w.powi(q as i32)).collect();
            correction.push(hermite_coefficients(&targets, order)?);
        }
        // overshoot guard: the polynomial should stay comparable to its data
        let scale: f64 = (0..=order)
            .map(|q| {
                let norm = jump[q].iter().map(|v| v * v).sum::<f64>().sqrt();
                norm * w.powi(q as i32) / factorial(q)
            })
            .sum();
        let mut peak = 0.0f64;
        for k in 0..=200 {
            let u = k as f64 / 200.0;
            let v: f64 = correction.iter().map(|a| poly_derivative(a, u, 0).powi(2)).sum::<f64>().sqrt();
            peak = peak.max(v);
        }
        let b = man.b_constant(&event.x0);
        if peak > 10.0 * b * scale {
            return Err(Error::WindowTooSmall(format!("Hermite overshoot {peak:e} against data scale {scale:e}")));
        }
    }
    let mut orbit = ClosedOrbit {
        field,
        manifold: man.clone(),
        x0: event.x0.clone(),
        t_anchor: event.t_anchor,
        period,
        order,
        window: w,
        alpha: event.alpha,
        base,
        correction,
        endpoint_jump: jump,
        endpoint_mismatch: Vec::new(),
        table: ArcTable { t: vec![], s: vec![], speed: vec![], kappa: vec![] },
        rc_min: RC_CAP,
        v_min: 0.0,
        v_max: 0.0,
    };
    let a = orbit.series(0.0, order)?;
    let b = orbit.series_at_end(order)?;
    orbit.endpoint_mismatch = (0..=order)
        .map(|q| {
            if q == 0 {
                man.distance(&a[0], &b[0])
            } else {
                let d: Vec<f64> = (0..n).map(|i| factorial(q) * (a[q][i] - b[q][i])).collect();
                d.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
        })
        .collect();
    build_table(&mut orbit)?;
    Ok(orbit)
}

fn build_table(orbit: &mut ClosedOrbit) -> Result<()> {
    let period = orbit.period;
    let mut ts: Vec<f64> = (0..=TABLE_NODES).map(|k| period * k as f64 / TABLE_NODES as f64).collect();
    if orbit.is_corrected() {
        ts.push(period - orbit.window);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
    }
    let mut speed = Vec::with_capacity(ts.len());
    let mut kappa = Vec::with_capacity(ts.len());
    for &t in &ts {
        // the last node is T itself; evaluate it from the left
        let c = if t >= period { orbit.series_at_end(2)? } else { orbit.series(t, 2)? };
        let v = orbit.manifold.norm(&c[0], &c[1]);
        if !(v > 0.0) {
            return Err(Error::ZeroSpeed(t));
        }
        speed.push(v);
        let acc: Vec<f64> = c[2].iter().map(|x| 2.0 * x).collect();
        kappa.push(curvature_from(&orbit.manifold, &c[0], &c[1], &acc)?);
    }
    let mut s = vec![0.0; ts.len()];
    for k in 1..ts.len() {
        let mut f = |t: f64| orbit.speed(t);
        let piece = adaptive_quad(&mut f, ts[k - 1], ts[k], 1e-10 / ts.len() as f64, 20)?;
        s[k] = s[k - 1] + piece;
    }
    let v_min = speed.iter().cloned().fold(f64::INFINITY, f64::min);
    let v_max = speed.iter().cloned().fold(0.0, f64::max);
    if v_min <= 1e-12 * v_max.max(1e-300) {
        return Err(Error::ZeroSpeed(ts[speed.iter().position(|v| *v == v_min).unwrap_or(0)]));
    }
    // refine the curvature maximum around the best node by golden section
    let (imax, _) = kappa.iter().enumerate().fold((0, f64::MIN), |acc, (i, k)| if *k > acc.1 { (i, *k) } else { acc });
    let lo = ts[imax.saturating_sub(1)];
    let hi = ts[(imax + 1).min(ts.len() - 1)];
    let kmax = golden_max(|t| orbit.curvature(t).unwrap_or(0.0), lo, hi, 1e-12).max(kappa[imax]);
    orbit.rc_min = if kmax > 0.0 { (1.0 / kmax).min(RC_CAP) } else { RC_CAP };
    orbit.v_min = v_min;
    orbit.v_max = v_max;
    orbit.table = ArcTable { t: ts, s, speed, kappa };
    Ok(())
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

/// Sup over samples of `‖d^q/dt^q (f' − X(f))‖` for `q = 0..=r`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualProfile {
    pub times: Vec<f64>,
    /// `values[sample][q]`.
    pub values: Vec<Vec<f64>>,
    pub sup: Vec<f64>,
    pub b: f64,
    pub l: f64,
    pub alpha: f64,
    /// Measured interpolation amplification `max_q (res_q / (b L^r α))^{1/q}`.
    pub h: f64,
}

impl ResidualProfile {
    /// `b² (L^r + H^r) L^r α` for the given order.
    pub fn bound(&self, r: usize) -> f64 {
        let r = r as i32;
        self.b * self.b * (self.l.powi(r) + self.h.powi(r)) * self.l.powi(r) * self.alpha
    }
}

/// `d^q/dt^q (f' − X(f, t))` at `t` for `q = 0..=order`.
pub fn residual_at(orbit: &ClosedOrbit, t: f64, order: usize) -> Result<Vec<f64>> {
    let t = orbit.wrap(t);
    let n = orbit.dimension();
    if !orbit.in_window(t) {
        // f is a flow line here, its series is generated by X itself
        return Ok(vec![0.0; order + 1]);
    }
    let c = orbit.series(t, order + 1)?;
    let lay = layout(1, order);
    let xs: Vec<Jet> = (0..n)
        .map(|i| Jet::from_coeffs(&lay, (0..=order).map(|k| c[k][i]).collect()))
        .collect();
    let tj = Jet::variable(&lay, 0, orbit.field_time(t));
    let xv = orbit.field.eval_jets(&xs, &tj)?;
    Ok((0..=order)
        .map(|q| {
            let d: Vec<f64> = (0..n)
                .map(|i| factorial(q) * ((q + 1) as f64 * c[q + 1][i] - xv[i].coeffs()[q]))
                .collect();
            orbit.manifold.norm(&c[0], &d)
        })
        .collect())
}

/// Enclosing box of the orbit, padded by `margin`.
pub fn orbit_region(orbit: &ClosedOrbit, margin: f64) -> Region {
    let pts: Vec<Vec<f64>> = orbit.table.t.iter().step_by(10).map(|&t| orbit.point(t)).collect();
    Region::bounding(&pts, margin)
}

pub fn interpolation_residual(orbit: &ClosedOrbit) -> Result<ResidualProfile> {
    let r = orbit.order;
    let mut times: Vec<f64> = (0..1000).map(|k| orbit.period * k as f64 / 1000.0).collect();
    if orbit.is_corrected() {
        let w0 = orbit.period - orbit.window;
        times.extend((0..1000).map(|k| w0 + orbit.window * k as f64 / 1000.0));
    }
    let mut values = Vec::with_capacity(times.len());
    let mut sup = vec![0.0f64; r + 1];
    for &t in &times {
        let v = residual_at(orbit, t, r)?;
        for (s, x) in sup.iter_mut().zip(&v) {
            *s = s.max(*x);
        }
        values.push(v);
    }
    let lip = estimate_lipschitz(&*orbit.field, &orbit_region(orbit, 0.05), r, 7)?;
    let l = lip.l.max(1.0);
    let b = orbit.manifold.b_constant(&orbit.x0);
    let denom = b * l.powi(r as i32) * orbit.alpha;
    let mut h = 0.0f64;
    if denom > 0.0 {
        for (q, s) in sup.iter().enumerate().skip(1) {
            h = h.max((s / denom).powf(1.0 / q as f64));
        }
    }
    Ok(ResidualProfile { times, values, sup, b, l, alpha: orbit.alpha, h })
}
