use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::section::{eigenvalues, spectral_basis, tight, to_rows, Eigenvalue, MonodromyReport};
use crate::closing::FlowBox;
use crate::field::VectorField;
use crate::flow::{variational_trajectory, VariationalTrajectory};
use crate::jet::Jet;
use crate::perturbation::{make_bump, BumpProfile};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustReport {
    /// The multiplier moved to the unit circle.
    pub mu: f64,
    /// Exponent rate `−ln|μ| / T` of the correction.
    pub kappa: f64,
    pub period: f64,
    pub epsilon: f64,
    /// Ambient eigenvector of `dψ_T` for `μ`, unit length.
    pub eigenvector: Vec<f64>,
    /// Realized `dA_T` in section coordinates, row-major.
    pub realized_da: Vec<Vec<f64>>,
}

/// `Z = Y + ρ(d) κ K(t_x)(x − f(t_x))` with `K(t) = M(t) u e*ᵀ M(t)⁻¹` the
/// Floquet projector onto the `μ`-direction; `Z = Y` outside the tube.
///
/// Along the orbit the linearized flow of `Z` is `M(t)` with the `u`-component
/// scaled by `e^{κt} = |μ|^{−t/T}`; every other direction and the orbit itself
/// (hence the return time) are untouched.
pub struct AdjustedField {
    base: Arc<dyn VectorField>,
    pub flowbox: Arc<FlowBox>,
    pub bump: BumpProfile,
    pub report: AdjustReport,
    variation: VariationalTrajectory,
    right: DVector<f64>,
    left: DVector<f64>,
}

fn null_vector(a: &DMatrix<f64>) -> DVector<f64> {
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let (i, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc });
    v_t.row(i).transpose()
}

/// Builds `Z` so that the real multiplier whose eigendirection best matches
/// `target` (an ambient vector at the section anchor) becomes `±1`.
/// Only multipliers with `|μ| ∈ (1 − window, 1)` are moved; `window ≤ 0.5`.
pub fn eigenvalue_adjuster(
    base: Arc<dyn VectorField>,
    flowbox: Arc<FlowBox>,
    report: &MonodromyReport,
    target: &[f64],
    window: f64,
) -> Result<AdjustedField> {
    let orbit = &flowbox.orbit;
    let man = &orbit.manifold;
    if !man.is_flat() {
        return Err(Error::UnsupportedManifold(man.kind_name().into()));
    }
    if !(window > 0.0 && window <= 0.5) {
        return Err(Error::Domain(format!("adjustable window {window} must lie in (0, 0.5]")));
    }
    if !flowbox.overlaps.is_empty() {
        return Err(Error::OverlapPresent(flowbox.overlaps.len()));
    }
    let p0 = orbit.point(0.0);
    let scale = p0.iter().map(|c| c * c).sum::<f64>().sqrt().max(1.0);
    if man.distance(&p0, &report.section.anchor) > 1e-6 * scale {
        return Err(Error::Domain("monodromy report is not anchored at the orbit start".into()));
    }

    let p = report.matrix();
    let tgt = DVector::from_vec(report.section.coordinates(man, target));
    let tnorm = tgt.norm();
    if !(tnorm > 0.0) {
        return Err(Error::Domain("target direction has no component in the section".into()));
    }
    let tgt = tgt / tnorm;
    let mut best: Option<(Eigenvalue, f64)> = None;
    for l in report.eigenvalues.iter().filter(|l| l.im >= 0.0) {
        let group = if l.im > 0.0 { vec![*l, Eigenvalue { re: l.re, im: -l.im }] } else { vec![*l] };
        let q = spectral_basis(&p, &group);
        let align = (q.transpose() * &tgt).norm();
        if best.is_none_or(|(_, a)| align > a) {
            best = Some((*l, align));
        }
    }
    let (mu, _) = best.ok_or_else(|| Error::EigenvalueNotSimple("section has no multipliers".into()))?;
    let tol = 1e-12 * mu.modulus().max(1.0);
    if mu.im.abs() > tol {
        return Err(Error::EigenvalueNotSimple(format!("complex pair {} ± {}i", mu.re, mu.im.abs())));
    }
    let repeats = report.eigenvalues.iter().filter(|l| (l.re - mu.re).hypot(l.im) <= 1e-8 * mu.modulus().max(1.0)).count();
    if repeats > 1 {
        return Err(Error::EigenvalueNotSimple(format!("{} has multiplicity {repeats}", mu.re)));
    }
    let lo = 1.0 - window;
    if !(mu.modulus() > lo && mu.modulus() < 1.0) {
        return Err(Error::WindowTooWide { modulus: mu.modulus(), lo });
    }

    let n = p0.len();
    let period = orbit.period;
    let variation = variational_trajectory(&*base, &tight(man), &p0, orbit.t_anchor, orbit.t_anchor + period)?;
    let m = variation.final_matrix();
    // the same multiplier as an eigenvalue of the full monodromy
    let mu_full = eigenvalues(&m)
        .into_iter()
        .filter(|l| l.im.abs() <= tol)
        .min_by(|a, b| (a.re - mu.re).abs().total_cmp(&(b.re - mu.re).abs()))
        .map(|l| l.re)
        .unwrap_or(mu.re);
    let shifted = &m - DMatrix::<f64>::identity(n, n) * mu_full;
    let right = null_vector(&shifted);
    let left = null_vector(&shifted.transpose());
    let pair = left.dot(&right);
    if pair.abs() < 1e-10 {
        return Err(Error::EigenvalueNotSimple(format!("{mu_full} is defective")));
    }
    let left = left / pair;
    let kappa = -mu_full.abs().ln() / period;

    let b = report.section.basis_matrix();
    let g = man.metric(&p0);
    let x = DVector::from_column_slice(&report.section.flow);
    let nu = &g * &x;
    let quotient = DMatrix::<f64>::identity(n, n) - &x * nu.transpose() / nu.dot(&x);
    let da = DMatrix::<f64>::identity(n, n) + &right * left.transpose() * ((kappa * period).exp() - 1.0);
    let realized = b.transpose() * g * quotient * da * b;

    let bump = make_bump(flowbox.epsilon, 1.0, orbit.order.max(1))?;
    let report = AdjustReport {
        mu: mu_full,
        kappa,
        period,
        epsilon: flowbox.epsilon,
        eigenvector: (&right / right.norm()).iter().copied().collect(),
        realized_da: to_rows(&realized),
    };
    Ok(AdjustedField { base, flowbox, bump, report, variation, right, left })
}

impl AdjustedField {
    pub fn base(&self) -> &Arc<dyn VectorField> {
        &self.base
    }

    /// `K(t)` for orbit time `t`.
    pub fn projector(&self, t: f64) -> DMatrix<f64> {
        let m = self.variation.matrix(self.flowbox.orbit.t_anchor + t);
        let inv = m.clone().try_inverse().expect("fundamental matrices are invertible");
        m * &self.right * self.left.transpose() * inv
    }

    /// The correction `Z − Y` and its spatial Jacobian, `None` outside the tube.
    fn correction(&self, x: &[f64]) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
        let proj = self.flowbox.project(x);
        let Some(branch) = proj.branches().iter().min_by(|a, b| a.distance.total_cmp(&b.distance)) else {
            return Ok(None);
        };
        let orbit = &self.flowbox.orbit;
        let n = x.len();
        let t = branch.t;
        let s = orbit.series(t, 2)?;
        let v = DVector::from_column_slice(&s[1]);
        let acc = DVector::from_column_slice(&s[2]) * 2.0;
        let delta = DVector::from_vec(orbit.manifold.log_map(&branch.foot, x)?);
        let d = branch.distance;
        let rho = self.bump.value(d);
        let drho = self.bump.derivative(d, 1);
        let grad_t = &v / (v.dot(&v) - delta.dot(&acc));
        let k = self.projector(t);
        let a = self.base.jacobian(&branch.foot, orbit.field_time(t))?;
        let dk = &a * &k - &k * &a;
        let kappa = self.report.kappa;
        let kd = &k * &delta;
        let value = &kd * (rho * kappa);
        let mut jac = &k * (DMatrix::<f64>::identity(n, n) - &v * grad_t.transpose()) * rho;
        jac += &dk * &delta * grad_t.transpose() * rho;
        if d > 0.0 {
            jac += &kd * delta.transpose() * (drho / d);
        }
        Ok(Some((value, jac * kappa)))
    }
}

impl VectorField for AdjustedField {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }

    fn is_autonomous(&self) -> bool {
        self.base.is_autonomous()
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let y = self.base.eval(x, t)?;
        Ok(match self.correction(x)? {
            None => y,
            Some((c, _)) => y.iter().zip(c.iter()).map(|(a, b)| a + b).collect(),
        })
    }

    fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let j = self.base.jacobian(x, t)?;
        Ok(match self.correction(x)? {
            None => j,
            Some((_, dc)) => j + dc,
        })
    }

    /// Exact through order 1 inside the tube; the correction is assembled
    /// from its value and Jacobian.
    fn eval_jets(&self, x: &[Jet], t: &Jet) -> Result<Vec<Jet>> {
        let x0: Vec<f64> = x.iter().map(Jet::value).collect();
        let y = self.base.eval_jets(x, t)?;
        let Some((c, dc)) = self.correction(&x0)? else {
            return Ok(y);
        };
        let order = x.first().map_or(0, Jet::order);
        if order > 1 {
            return Err(Error::OrderUnsupported { requested: order, max: 1 });
        }
        let offsets: Vec<Jet> = x.iter().zip(&x0).map(|(xi, v)| xi.add_scalar(-v)).collect();
        Ok(y
            .iter()
            .enumerate()
            .map(|(i, yi)| {
                let mut acc = yi.add_scalar(c[i]);
                for (j, off) in offsets.iter().enumerate() {
                    acc = &acc + &off.scale(dc[(i, j)]);
                }
                acc
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_vector_of_rank_deficient_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0]);
        let v = null_vector(&a);
        assert!((&a * &v).norm() < 1e-14);
        assert!((v.norm() - 1.0).abs() < 1e-14);
    }
}
