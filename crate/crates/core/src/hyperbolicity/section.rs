use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::field::VectorField;
use crate::flow::{integrate, variational_trajectory, VariationalTrajectory};
use crate::geometry::ChartedManifold;
use crate::ode::Dopri5;
use crate::{Error, Result};

/// Default half-width of the band `| |λ| − 1 | ≤ tol` classified as center.
pub const CENTER_TOL: f64 = 1e-3;

/// Hyperplane through `anchor` g-orthogonal to the field there, with a
/// g-orthonormal basis stored as ambient tangent vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub anchor: Vec<f64>,
    /// Field value at the anchor; the section is its g-orthogonal complement.
    pub flow: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub radius: f64,
}

impl CrossSection {
    pub fn new(man: &ChartedManifold, anchor: &[f64], flow: &[f64], radius: f64) -> Result<Self> {
        let n = anchor.len();
        let g = man.metric(anchor);
        let ip = |u: &DVector<f64>, v: &DVector<f64>| (u.transpose() * &g * v)[0];
        let x = DVector::from_column_slice(flow);
        let xx = ip(&x, &x);
        if !(xx.sqrt() > 1e-12) {
            return Err(Error::TangentialSection);
        }
        let mut basis: Vec<DVector<f64>> = Vec::new();
        // Gram–Schmidt over coordinate directions, keeping the n − 1 best conditioned
        let mut candidates: Vec<DVector<f64>> = (0..n)
            .map(|j| {
                let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
                let c = ip(&e, &x) / xx;
                e - &x * c
            })
            .collect();
        while basis.len() + 1 < n {
            let (best, _) = candidates
                .iter()
                .enumerate()
                .map(|(k, v)| (k, ip(v, v)))
                .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            let v = candidates.swap_remove(best);
            let norm = ip(&v, &v).sqrt();
            let v = v / norm;
            for c in candidates.iter_mut() {
                let k = ip(&v, c);
                *c -= &v * k;
            }
            basis.push(v);
        }
        Ok(CrossSection {
            anchor: anchor.to_vec(),
            flow: flow.to_vec(),
            basis: basis.iter().map(|v| v.iter().copied().collect()).collect(),
            radius,
        })
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    /// Basis as the columns of an `n × (n−1)` matrix.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let n = self.anchor.len();
        DMatrix::from_fn(n, self.basis.len(), |i, j| self.basis[j][i])
    }

    /// Section coordinates `g(b_i, v)` of an ambient tangent vector, after
    /// quotienting the flow direction.
    pub fn coordinates(&self, man: &ChartedManifold, v: &[f64]) -> Vec<f64> {
        let g = man.metric(&self.anchor);
        let gv = g * DVector::from_column_slice(v);
        self.basis.iter().map(|b| b.iter().zip(gv.iter()).map(|(x, y)| x * y).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }

    /// `1 − min(|λ|, 1/|λ|)`: how far the multiplier sits from the unit circle.
    pub fn gap(&self) -> f64 {
        let m = self.modulus();
        1.0 - m.min(1.0 / m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplittingDims {
    pub s: usize,
    pub u: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Liouville {
    pub det_monodromy: f64,
    /// `exp ∫ div X dt` along the orbit.
    pub exp_divergence: f64,
    /// Product of the section multipliers.
    pub section_product: f64,
    /// Multiplier of the flow direction, `1` on a periodic orbit of an autonomous field.
    pub flow_multiplier: f64,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonodromyReport {
    pub section: CrossSection,
    #[serde(rename = "T0")]
    pub t0: f64,
    #[serde(rename = "T1")]
    pub t1: f64,
    /// Return-map linearization in section coordinates, row-major.
    pub matrix: Vec<Vec<f64>>,
    /// Sorted by decreasing modulus.
    pub eigenvalues: Vec<Eigenvalue>,
    pub splitting_dims: SplittingDims,
    /// Orthonormal bases (section coordinates) of `E^s`, `E^u`, `E^c`.
    pub stable: Vec<Vec<f64>>,
    pub unstable: Vec<Vec<f64>>,
    pub center: Vec<Vec<f64>>,
    pub center_tol: f64,
    pub margin: f64,
    /// `‖P^k|E^s‖, ‖P^{−k}|E^u‖ ≤ C λ_rate^k` for `k = 1..=5`.
    #[serde(rename = "C")]
    pub c: f64,
    pub lambda_rate: f64,
    /// Largest `‖(I − QQᵀ) P Q‖` over the three subspaces.
    pub invariance_residual: f64,
    pub return_mismatch: f64,
    pub liouville: Liouville,
}

impl MonodromyReport {
    pub fn matrix(&self) -> DMatrix<f64> {
        let k = self.matrix.len();
        DMatrix::from_fn(k, k, |i, j| self.matrix[i][j])
    }

    pub fn period(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn write_json<W: std::io::Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Io(e.to_string()))
    }
}

pub(crate) fn tight(man: &ChartedManifold) -> ChartedManifold {
    let mut m = man.clone();
    m.solver = Dopri5 { rtol: 1e-12, atol: 1e-12, ..man.solver };
    m
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect()
}

pub(crate) fn eigenvalues(p: &DMatrix<f64>) -> Vec<Eigenvalue> {
    let mut ev: Vec<Eigenvalue> =
        p.complex_eigenvalues().iter().map(|z| Eigenvalue { re: z.re, im: z.im }).collect();
    ev.sort_by(|a, b| {
        b.modulus().total_cmp(&a.modulus()).then(b.im.total_cmp(&a.im))
    });
    ev
}

/// Orthonormal basis of the generalized eigenspace of `p` for `group`
/// (closed under conjugation): the kernel of `Π (p − λ)`.
pub(crate) fn spectral_basis(p: &DMatrix<f64>, group: &[Eigenvalue]) -> DMatrix<f64> {
    let k = p.nrows();
    if group.is_empty() {
        return DMatrix::zeros(k, 0);
    }
    let pc = p.map(|v| Complex::new(v, 0.0));
    let mut acc = DMatrix::<Complex<f64>>::identity(k, k);
    for l in group {
        let shift = DMatrix::<Complex<f64>>::identity(k, k) * Complex::new(l.re, l.im);
        acc = (&pc - shift) * acc;
    }
    let real = acc.map(|z| z.re);
    let svd = real.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*a].total_cmp(&svd.singular_values[*b]));
    let cols: Vec<DVector<f64>> = order[..group.len()].iter().map(|&i| v_t.row(i).transpose()).collect();
    DMatrix::from_columns(&cols)
}

fn invariance(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    if q.ncols() == 0 {
        return 0.0;
    }
    let pq = p * q;
    let proj = q * (q.transpose() * &pq);
    (pq - proj).norm()
}

/// Linearized return map `P = Bᵀ G (I − X νᵀ/(ν·X)) M B` of the flow from
/// `q` (at field time `t0`) up to `t1`, with `ν = G X`.
pub(crate) fn return_linearization(
    field: &dyn VectorField,
    man: &ChartedManifold,
    q: &[f64],
    t0: f64,
    t1: f64,
) -> Result<(CrossSection, DMatrix<f64>, VariationalTrajectory, f64)> {
    if !(t1 > t0 && t1.is_finite()) {
        return Err(Error::Domain(format!("need T0 < T1, got ({t0}, {t1})")));
    }
    let man = tight(man);
    let q = q.to_vec();
    let xq = field.eval(&q, t0)?;
    let section = CrossSection::new(&man, &q, &xq, f64::INFINITY)?;
    let vt = variational_trajectory(field, &man, &q, t0, t1)?;
    let end = vt.point(t1);
    let mismatch = man.distance(&end, &q);
    let m = vt.final_matrix();
    let g = man.metric(&q);
    let x = DVector::from_column_slice(&xq);
    let nu = &g * &x;
    let nx = nu.dot(&x);
    if nx.abs() <= 1e-12 * x.norm().max(1.0) {
        return Err(Error::TangentialSection);
    }
    let n = q.len();
    let quotient = DMatrix::<f64>::identity(n, n) - &x * nu.transpose() / nx;
    let b = section.basis_matrix();
    let pm = b.transpose() * g * quotient * m * b;
    Ok((section, pm, vt, mismatch))
}

/// Monodromy on the section through `φ_{T0}(p)` over `T1 − T0`; the point
/// must return to itself.
pub fn section_monodromy(
    field: &dyn VectorField,
    man: &ChartedManifold,
    p: &[f64],
    t0: f64,
    t1: f64,
) -> Result<MonodromyReport> {
    section_monodromy_with(field, man, p, t0, t1, CENTER_TOL)
}

pub fn section_monodromy_with(
    field: &dyn VectorField,
    man: &ChartedManifold,
    p: &[f64],
    t0: f64,
    t1: f64,
    center_tol: f64,
) -> Result<MonodromyReport> {
    if field.dimension() < 2 {
        return Err(Error::Domain("a cross-section needs dimension at least 2".into()));
    }
    if !(t0 >= 0.0 && t1 > t0 && t1.is_finite()) {
        return Err(Error::Domain(format!("need 0 ≤ T0 < T1, got ({t0}, {t1})")));
    }
    let q = if t0 > 0.0 { integrate(field, &tight(man), p, (0.0, t0))?.end().to_vec() } else { p.to_vec() };
    let (section, pm, vt, mismatch) = return_linearization(field, man, &q, t0, t1)?;
    let scale = section.anchor.iter().map(|c| c * c).sum::<f64>().sqrt().max(1.0);
    if !(mismatch <= 1e-8 * scale) {
        return Err(Error::NotPeriodic(mismatch));
    }
    let eigenvalues = eigenvalues(&pm);
    let class = |l: &Eigenvalue| {
        let m = l.modulus();
        if (m - 1.0).abs() <= center_tol {
            'c'
        } else if m < 1.0 {
            's'
        } else {
            'u'
        }
    };
    let pick = |c: char| eigenvalues.iter().filter(|l| class(l) == c).copied().collect::<Vec<_>>();
    let (gs, gu, gc) = (pick('s'), pick('u'), pick('c'));
    let (qs, qu, qc) = (spectral_basis(&pm, &gs), spectral_basis(&pm, &gu), spectral_basis(&pm, &gc));
    let invariance_residual = [&qs, &qu, &qc].iter().map(|q| invariance(&pm, q)).fold(0.0, f64::max);
    // a center multiplier leaves no margin at all
    let margin = if gc.is_empty() { eigenvalues.iter().map(Eigenvalue::gap).fold(1.0, f64::min).clamp(0.0, 1.0) } else { 0.0 };

    let ms = qs.transpose() * &pm * &qs;
    let mu_inv = (qu.transpose() * &pm * &qu).try_inverse().unwrap_or_else(|| DMatrix::zeros(qu.ncols(), qu.ncols()));
    let rate_s = gs.iter().map(Eigenvalue::modulus).fold(0.0, f64::max);
    let rate_u = gu.iter().map(|l| 1.0 / l.modulus()).fold(0.0, f64::max);
    let lambda_rate = rate_s.max(rate_u);
    let mut c = 0.0f64;
    if lambda_rate > 0.0 {
        let (mut ps, mut pu) = (ms.clone(), mu_inv.clone());
        for k in 1..=5 {
            let worst = ps.norm().max(pu.norm());
            c = c.max(worst / lambda_rate.powi(k));
            ps = &ps * &ms;
            pu = &pu * &mu_inv;
        }
    }

    let liouville = liouville(field, man, &vt, &section, t0, t1, &pm)?;
    Ok(MonodromyReport {
        section,
        t0,
        t1,
        matrix: to_rows(&pm),
        splitting_dims: SplittingDims { s: gs.len(), u: gu.len(), c: gc.len() },
        eigenvalues,
        stable: columns(&qs),
        unstable: columns(&qu),
        center: columns(&qc),
        center_tol,
        margin,
        c,
        lambda_rate,
        invariance_residual,
        return_mismatch: mismatch,
        liouville,
    })
}

fn liouville(
    field: &dyn VectorField,
    man: &ChartedManifold,
    vt: &VariationalTrajectory,
    section: &CrossSection,
    t0: f64,
    t1: f64,
    pm: &DMatrix<f64>,
) -> Result<Liouville> {
    let m = vt.final_matrix();
    // trapezoid rule: spectrally accurate for the periodic integrand
    let steps = 4096;
    let h = (t1 - t0) / steps as f64;
    let mut integral = 0.0;
    for k in 0..steps {
        let t = t0 + h * k as f64;
        integral += field.jacobian(&vt.point(t), t)?.trace() * h;
    }
    let x = DVector::from_column_slice(&section.flow);
    let nu = man.metric(&section.anchor) * &x;
    let flow_multiplier = nu.dot(&(&m * &x)) / nu.dot(&x);
    let det_monodromy = m.determinant();
    let section_product = pm.determinant();
    let exp_divergence = integral.exp();
    Ok(Liouville {
        det_monodromy,
        exp_divergence,
        section_product,
        flow_multiplier,
        defect: (section_product * flow_multiplier - exp_divergence).abs() / exp_divergence.abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginCheck {
    pub pass: bool,
    pub margin: f64,
    pub required: f64,
    /// Multiplier closest to the unit circle, reported on failure.
    pub witness: Option<Eigenvalue>,
}

pub fn check_hyperbolic_margin(report: &MonodromyReport, delta_req: f64) -> MarginCheck {
    let pass = report.splitting_dims.c == 0 && report.margin >= delta_req;
    let witness = if pass {
        None
    } else {
        report.eigenvalues.iter().copied().min_by(|a, b| a.gap().total_cmp(&b.gap()))
    };
    MarginCheck { pass, margin: report.margin, required: delta_req, witness }
}
