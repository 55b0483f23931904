//! Charted Riemannian manifolds: euclidean space, the flat torus and the
//! round 2-sphere.
//!
//! Points and tangent vectors are always exchanged in the primary chart.
//! For the sphere that is the stereographic projection from the north pole
//! onto the equatorial plane; integrators hand off to the projection from the
//! south pole whenever `|x| > 1.5 R` and convert back on output.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::jet::{layout, Jet};
use crate::ode::{DenseSolution, Dopri5};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldKind {
    Euclidean,
    FlatTorus { periods: Vec<f64> },
    Sphere2 { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartedManifold {
    pub dimension: usize,
    #[serde(flatten)]
    pub kind: ManifoldKind,
    #[serde(default)]
    pub solver: Dopri5,
}

/// Christoffel symbols, indexed `gamma[j][k][l]` for Γ^j_{kl}.
pub type Christoffel = Vec<Vec<Vec<f64>>>;

impl ChartedManifold {
    pub fn euclidean(n: usize) -> Self {
        ChartedManifold { dimension: n, kind: ManifoldKind::Euclidean, solver: Dopri5::default() }
    }

    pub fn flat_torus(periods: Vec<f64>) -> Self {
        ChartedManifold {
            dimension: periods.len(),
            kind: ManifoldKind::FlatTorus { periods },
            solver: Dopri5::default(),
        }
    }

    pub fn sphere2(radius: f64) -> Self {
        ChartedManifold { dimension: 2, kind: ManifoldKind::Sphere2 { radius }, solver: Dopri5::default() }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ManifoldKind::Euclidean => "euclidean",
            ManifoldKind::FlatTorus { .. } => "flat_torus",
            ManifoldKind::Sphere2 { .. } => "sphere2",
        }
    }

    /// True when the Levi-Civita connection is trivial in the primary chart.
    pub fn is_flat(&self) -> bool {
        !matches!(self.kind, ManifoldKind::Sphere2 { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ManifoldKind::Euclidean if self.dimension == 0 => Err(Error::Schema("dimension must be positive".into())),
            ManifoldKind::FlatTorus { periods } => {
                if periods.len() != self.dimension {
                    return Err(Error::DimensionMismatch { expected: self.dimension, found: periods.len() });
                }
                if periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                    return Err(Error::Schema("torus periods must be positive".into()));
                }
                Ok(())
            }
            ManifoldKind::Sphere2 { radius } => {
                if self.dimension != 2 {
                    return Err(Error::DimensionMismatch { expected: 2, found: self.dimension });
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::Schema("sphere radius must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::ChartDomain);
        }
        Ok(())
    }

    /// Metric coefficients as jets, in whichever chart `x` is expressed
    /// (both sphere charts share the same conformal form).
    pub fn metric_jets(&self, x: &[Jet]) -> Vec<Vec<Jet>> {
        let n = self.dimension;
        let lay = x[0].layout().clone();
        let zero = Jet::constant(&lay, 0.0);
        let factor = match &self.kind {
            ManifoldKind::Sphere2 { radius } => {
                let r2 = radius * radius;
                let mut s = Jet::constant(&lay, r2);
                for xi in x {
                    s = &s + &(xi * xi);
                }
                // 4R⁴ / (R² + |x|²)²; the denominator is never zero
                let d = &s * &s;
                d.recip().expect("positive denominator").scale(4.0 * r2 * r2)
            }
            _ => Jet::constant(&lay, 1.0),
        };
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { factor.clone() } else { zero.clone() }).collect())
            .collect()
    }

    pub fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        let lay = layout(self.dimension, 0);
        let xs: Vec<Jet> = x.iter().map(|&v| Jet::constant(&lay, v)).collect();
        let g = self.metric_jets(&xs);
        DMatrix::from_fn(self.dimension, self.dimension, |i, j| g[i][j].value())
    }

    pub fn inner(&self, x: &[f64], u: &[f64], v: &[f64]) -> f64 {
        let g = self.metric(x);
        let mut s = 0.0;
        for i in 0..self.dimension {
            for j in 0..self.dimension {
                s += g[(i, j)] * u[i] * v[j];
            }
        }
        s
    }

    pub fn norm(&self, x: &[f64], v: &[f64]) -> f64 {
        self.inner(x, v, v).max(0.0).sqrt()
    }

    /// `3 Σ_j ‖∂/∂x^j‖` at `x`.
    pub fn b_constant(&self, x: &[f64]) -> f64 {
        let g = self.metric(x);
        3.0 * (0..self.dimension).map(|j| g[(j, j)].sqrt()).sum::<f64>()
    }

    fn christoffel_raw(&self, x: &[f64]) -> (Christoffel, DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = self.dimension;
        let lay = layout(n, 1);
        let xs: Vec<Jet> = x.iter().enumerate().map(|(i, &v)| Jet::variable(&lay, i, v)).collect();
        let gj = self.metric_jets(&xs);
        let g = DMatrix::from_fn(n, n, |i, j| gj[i][j].value());
        // dg[k][(i, j)] = ∂_k g_ij
        let dg: Vec<DMatrix<f64>> = (0..n)
            .map(|k| DMatrix::from_fn(n, n, |i, j| gj[i][j].gradient()[k]))
            .collect();
        let ginv = g.clone().try_inverse().expect("metric is positive definite");
        let mut gamma = vec![vec![vec![0.0; n]; n]; n];
        for j in 0..n {
            for k in 0..n {
                for l in k..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += ginv[(j, m)] * (dg[k][(m, l)] + dg[l][(m, k)] - dg[m][(k, l)]);
                    }
                    gamma[j][k][l] = 0.5 * s;
                    gamma[j][l][k] = 0.5 * s;
                }
            }
        }
        (gamma, g, dg)
    }

    pub fn christoffel(&self, x: &[f64]) -> Result<Christoffel> {
        self.check_dim(x)?;
        Ok(self.christoffel_raw(x).0)
    }

    /// Largest |∇_k g_ij| of the derived connection at `x`.
    pub fn metric_compatibility_defect(&self, x: &[f64]) -> f64 {
        let n = self.dimension;
        let (gamma, g, dg) = self.christoffel_raw(x);
        let mut worst = 0.0f64;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = dg[k][(i, j)];
                    for m in 0..n {
                        v -= gamma[m][k][i] * g[(m, j)] + gamma[m][k][j] * g[(i, m)];
                    }
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }

    /// Γ(x)(u, w) contracted: out^j = Γ^j_{kl} u^k w^l.
    fn contract(&self, gamma: &Christoffel, u: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.dimension;
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..n {
                    s += gamma[j][k][l] * u[k] * w[l];
                }
            }
            out[j] = s;
        }
    }

    fn radius(&self) -> Option<f64> {
        match self.kind {
            ManifoldKind::Sphere2 { radius } => Some(radius),
            _ => None,
        }
    }

    /// Reduces torus coordinates into `[0, period)`; identity elsewhere.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            ManifoldKind::FlatTorus { periods } => {
                x.iter().zip(periods).map(|(v, p)| v.rem_euclid(*p)).collect()
            }
            _ => x.to_vec(),
        }
    }

    /// Sphere point in ambient R³ from primary-chart coordinates.
    pub fn embed(&self, x: &[f64]) -> Result<[f64; 3]> {
        let r = self.radius().ok_or_else(|| Error::UnsupportedManifold(self.kind_name().into()))?;
        self.check_dim(x)?;
        let s = x[0] * x[0] + x[1] * x[1];
        let d = s + r * r;
        Ok([2.0 * r * r * x[0] / d, 2.0 * r * r * x[1] / d, r * (s - r * r) / d])
    }

    /// Inverse of [`embed`](Self::embed); the north pole has no primary coordinates.
    pub fn unembed(&self, p: [f64; 3]) -> Result<Vec<f64>> {
        let r = self.radius().ok_or_else(|| Error::UnsupportedManifold(self.kind_name().into()))?;
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let q = [p[0] * r / norm, p[1] * r / norm, p[2] * r / norm];
        let den = r - q[2];
        if den <= 1e-300 {
            return Err(Error::ChartDomain);
        }
        Ok(vec![r * q[0] / den, r * q[1] / den])
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.kind {
            ManifoldKind::Euclidean => x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
            ManifoldKind::FlatTorus { periods } => x
                .iter()
                .zip(y)
                .zip(periods)
                .map(|((a, b), p)| {
                    let d = (a - b).rem_euclid(*p);
                    d.min(p - d).powi(2)
                })
                .sum::<f64>()
                .sqrt(),
            ManifoldKind::Sphere2 { radius } => {
                let (Ok(a), Ok(b)) = (self.embed(x), self.embed(y)) else {
                    return f64::NAN;
                };
                let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                let c = [
                    a[1] * b[2] - a[2] * b[1],
                    a[2] * b[0] - a[0] * b[2],
                    a[0] * b[1] - a[1] * b[0],
                ];
                let cross = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                radius * cross.atan2(dot)
            }
        }
    }

    /// Initial velocity at `x` of the minimal unit-time geodesic to `y`.
    pub fn log_map(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        match &self.kind {
            ManifoldKind::Euclidean => Ok(y.iter().zip(x).map(|(b, a)| b - a).collect()),
            ManifoldKind::FlatTorus { periods } => Ok(x
                .iter()
                .zip(y)
                .zip(periods)
                .map(|((a, b), p)| {
                    let d = (b - a).rem_euclid(*p);
                    if d > p / 2.0 { d - p } else { d }
                })
                .collect()),
            ManifoldKind::Sphere2 { radius } => {
                let dist = self.distance(x, y);
                if dist == 0.0 {
                    return Ok(vec![0.0; 2]);
                }
                if dist > radius * (PI - 1e-6) {
                    return Err(Error::GeodesicAmbiguous(dist));
                }
                let a = self.embed(x)?;
                let b = self.embed(y)?;
                let r2 = radius * radius;
                let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / r2;
                let mut t = [b[0] - dot * a[0], b[1] - dot * a[1], b[2] - dot * a[2]];
                let tn = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
                for c in t.iter_mut() {
                    *c *= dist / tn;
                }
                // pull the ambient tangent back through the embedding Jacobian
                let jac = self.embed_jacobian(x);
                let mut v = [0.0; 2];
                let scale = self.metric(x)[(0, 0)];
                for k in 0..2 {
                    v[k] = (0..3).map(|i| jac[i][k] * t[i]).sum::<f64>() / scale;
                }
                Ok(v.to_vec())
            }
        }
    }

    fn embed_jacobian(&self, x: &[f64]) -> [[f64; 2]; 3] {
        let r = self.radius().unwrap_or(1.0);
        let lay = layout(2, 1);
        let xs = [Jet::variable(&lay, 0, x[0]), Jet::variable(&lay, 1, x[1])];
        let s = &(&xs[0] * &xs[0]) + &(&xs[1] * &xs[1]);
        let inv = s.add_scalar(r * r).recip().expect("positive");
        let p0 = (&xs[0] * &inv).scale(2.0 * r * r);
        let p1 = (&xs[1] * &inv).scale(2.0 * r * r);
        let p2 = (&s.add_scalar(-r * r) * &inv).scale(r);
        let mut out = [[0.0; 2]; 3];
        for (i, p) in [p0, p1, p2].iter().enumerate() {
            let g = p.gradient();
            out[i] = [g[0], g[1]];
        }
        out
    }
}

/// The sphere chart transition `x ↦ R² x / |x|²` (its own inverse) and its
/// Jacobian applied to tangent vectors.
fn invert_point(r: f64, x: &[f64]) -> Vec<f64> {
    let s = x[0] * x[0] + x[1] * x[1];
    vec![r * r * x[0] / s, r * r * x[1] / s]
}

fn invert_tangent(r: f64, x: &[f64], v: &[f64]) -> Vec<f64> {
    let s = x[0] * x[0] + x[1] * x[1];
    let dot = x[0] * v[0] + x[1] * v[1];
    let c = r * r / s;
    vec![c * (v[0] - 2.0 * dot * x[0] / s), c * (v[1] - 2.0 * dot * x[1] / s)]
}

/// A solved piece of a chart-switching integration. State layout is
/// `[x, then tangent vectors]`, each of length `n`.
#[derive(Debug, Clone)]
pub struct ChartPiece {
    pub chart: usize,
    pub solution: DenseSolution,
}

#[derive(Debug, Clone)]
pub struct GeodesicSegment {
    pub start: Vec<f64>,
    pub initial_velocity: Vec<f64>,
    pub tau_end: f64,
    pub speed: f64,
    pub pieces: Vec<ChartPiece>,
    manifold: ChartedManifold,
}

impl GeodesicSegment {
    fn state(&self, tau: f64) -> Result<Vec<f64>> {
        let piece = self
            .pieces
            .iter()
            .find(|p| tau <= p.solution.t_end)
            .unwrap_or_else(|| self.pieces.last().expect("non-empty"));
        let raw = piece.solution.eval(tau);
        to_primary(&self.manifold, piece.chart, &raw)
    }

    /// Point at parameter `tau`, in the primary chart.
    pub fn point(&self, tau: f64) -> Result<Vec<f64>> {
        let n = self.manifold.dimension;
        Ok(self.state(tau)?[..n].to_vec())
    }

    pub fn velocity(&self, tau: f64) -> Result<Vec<f64>> {
        let n = self.manifold.dimension;
        Ok(self.state(tau)?[n..2 * n].to_vec())
    }

    pub fn end(&self) -> Result<Vec<f64>> {
        self.point(self.tau_end)
    }
}

fn to_primary(man: &ChartedManifold, chart: usize, raw: &[f64]) -> Result<Vec<f64>> {
    if chart == 0 {
        return Ok(raw.to_vec());
    }
    let r = man.radius().expect("only the sphere has a second chart");
    let n = man.dimension;
    let x = &raw[..n];
    if x[0] * x[0] + x[1] * x[1] == 0.0 {
        return Err(Error::ChartDomain);
    }
    let mut out = invert_point(r, x);
    for chunk in raw[n..].chunks(n) {
        out.extend(invert_tangent(r, x, chunk));
    }
    Ok(out)
}

fn switch_chart(man: &ChartedManifold, state: &[f64]) -> Vec<f64> {
    let r = man.radius().expect("sphere");
    let n = man.dimension;
    let x = &state[..n];
    let mut out = invert_point(r, x);
    for chunk in state[n..].chunks(n) {
        out.extend(invert_tangent(r, x, chunk));
    }
    out
}

impl ChartedManifold {
    /// Integrates `x' = v`, `v' = −Γ(v, v)` with `extra` tangent vectors
    /// parallel-transported alongside, switching sphere charts as needed.
    fn transport_system(&self, p: &[f64], v: &[f64], extra: &[Vec<f64>], tau_end: f64) -> Result<Vec<ChartPiece>> {
        let n = self.dimension;
        let mut state: Vec<f64> = p.iter().chain(v).copied().collect();
        for w in extra {
            state.extend_from_slice(w);
        }
        let handoff = self.radius().map(|r| 1.5 * r);
        let mut chart = 0usize;
        if let Some(h) = handoff {
            if p[0] * p[0] + p[1] * p[1] > h * h {
                state = switch_chart(self, &state);
                chart = 1;
            }
        }
        let mut pieces = Vec::new();
        let mut t = 0.0;
        let mut switches = 0;
        loop {
            let man = self.clone();
            let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
                let (gamma, _, _) = man.christoffel_raw(&y[..n]);
                dy[..n].copy_from_slice(&y[n..2 * n]);
                let vel = y[n..2 * n].to_vec();
                let mut buf = vec![0.0; n];
                for (b, chunk) in y[n..].chunks(n).enumerate() {
                    man.contract(&gamma, &vel, chunk, &mut buf);
                    for j in 0..n {
                        dy[n + b * n + j] = -buf[j];
                    }
                }
                Ok(())
            };
            let stop = |_t: f64, y: &[f64]| match handoff {
                Some(h) => y[0] * y[0] + y[1] * y[1] > h * h,
                None => false,
            };
            let sol = self.solver.solve(rhs, t, &state, tau_end, stop)?;
            let stopped = sol.stopped;
            t = sol.t_end;
            state = sol.y_end.clone();
            pieces.push(ChartPiece { chart, solution: sol });
            if !stopped {
                break;
            }
            switches += 1;
            if switches > 10_000 {
                return Err(Error::ToleranceFailure { t });
            }
            state = switch_chart(self, &state);
            chart = 1 - chart;
        }
        Ok(pieces)
    }

    pub fn geodesic(&self, p: &[f64], v: &[f64], tau_end: f64) -> Result<GeodesicSegment> {
        self.check_dim(p)?;
        self.check_dim(v)?;
        if !(tau_end >= 0.0 && tau_end.is_finite()) {
            return Err(Error::Domain(format!("geodesic span {tau_end} must be non-negative")));
        }
        let pieces = self.transport_system(p, v, &[], tau_end)?;
        Ok(GeodesicSegment {
            start: p.to_vec(),
            initial_velocity: v.to_vec(),
            tau_end,
            speed: self.norm(p, v),
            pieces,
            manifold: self.clone(),
        })
    }

    /// Parallel transport of `w0` from the start to the end of `seg`.
    pub fn parallel_transport(&self, seg: &GeodesicSegment, w0: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(w0)?;
        if self.is_flat() {
            return Ok(w0.to_vec());
        }
        let pieces = self.transport_system(&seg.start, &seg.initial_velocity, &[w0.to_vec()], seg.tau_end)?;
        let last = pieces.last().expect("non-empty");
        let out = to_primary(self, last.chart, &last.solution.y_end)?;
        Ok(out[2 * self.dimension..].to_vec())
    }

    /// Transports `w0` from `x` to the nearby point `y` along the minimal geodesic.
    pub fn transport_between(&self, x: &[f64], y: &[f64], w0: &[f64]) -> Result<Vec<f64>> {
        if self.is_flat() {
            return Ok(w0.to_vec());
        }
        let v = self.log_map(x, y)?;
        let seg = self.geodesic(x, &v, 1.0)?;
        self.parallel_transport(&seg, w0)
    }

    pub fn exp_map(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if v.iter().all(|c| *c == 0.0) {
            self.check_dim(p)?;
            return Ok(p.to_vec());
        }
        match &self.kind {
            ManifoldKind::Euclidean => Ok(p.iter().zip(v).map(|(a, b)| a + b).collect()),
            ManifoldKind::FlatTorus { .. } => Ok(self.wrap(&p.iter().zip(v).map(|(a, b)| a + b).collect::<Vec<_>>())),
            ManifoldKind::Sphere2 { .. } => self.geodesic(p, v, 1.0)?.end(),
        }
    }

    /// Transport along an arbitrary primary-chart curve `c(t)` with velocity
    /// `dc(t)`, for `t` in `[t0, t1]`.
    pub fn transport_along<C, D>(&self, c: C, dc: D, t0: f64, t1: f64, w0: &[f64]) -> Result<Vec<f64>>
    where
        C: Fn(f64) -> Vec<f64>,
        D: Fn(f64) -> Vec<f64>,
    {
        let n = self.dimension;
        let man = self.clone();
        let rhs = |t: f64, w: &[f64], dw: &mut [f64]| -> Result<()> {
            let (gamma, _, _) = man.christoffel_raw(&c(t));
            let mut buf = vec![0.0; n];
            man.contract(&gamma, &dc(t), w, &mut buf);
            for j in 0..n {
                dw[j] = -buf[j];
            }
            Ok(())
        };
        Ok(self.solver.solve(rhs, t0, w0, t1, |_, _| false)?.y_end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_christoffel_vanishes() {
        let m = ChartedManifold::flat_torus(vec![1.0, 2.0]);
        let g = m.christoffel(&[0.3, 0.4]).unwrap();
        assert!(g.iter().flatten().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn sphere_christoffel_matches_conformal_formula() {
        // g = e^{2φ} δ with φ = ln 2R² − ln(R² + |x|²) gives
        // Γ^j_{kl} = δ_jk ∂_l φ + δ_jl ∂_k φ − δ_kl ∂_j φ.
        let r = 1.7;
        let m = ChartedManifold::sphere2(r);
        let x = [0.4, -0.9];
        let s = r * r + x[0] * x[0] + x[1] * x[1];
        let dphi = [-2.0 * x[0] / s, -2.0 * x[1] / s];
        let g = m.christoffel(&x).unwrap();
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let want = d(j, k) * dphi[l] + d(j, l) * dphi[k] - d(k, l) * dphi[j];
                    assert!((g[j][k][l] - want).abs() < 1e-13);
                }
            }
        }
        let at0 = m.christoffel(&[0.0, 0.0]).unwrap();
        assert!(at0.iter().flatten().flatten().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn torus_distance_wraps() {
        let m = ChartedManifold::flat_torus(vec![1.0, 1.0]);
        assert!((m.distance(&[0.1, 0.0], &[0.9, 0.0]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sphere_antipode() {
        let m = ChartedManifold::sphere2(1.0);
        assert!((m.distance(&[0.0, 0.0], &[1e9, 0.0]) - PI).abs() < 1e-8);
        let p = [0.3, 0.2];
        let v = m.log_map(&p, &[0.5, -0.1]).unwrap();
        let e = m.exp_map(&p, &v).unwrap();
        assert!(m.distance(&e, &[0.5, -0.1]) < 1e-8);
    }

    #[test]
    fn compatibility_defect_is_small() {
        let m = ChartedManifold::sphere2(2.0);
        assert!(m.metric_compatibility_defect(&[0.7, -1.1]) < 1e-12);
    }
}
