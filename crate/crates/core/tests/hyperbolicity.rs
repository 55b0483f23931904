use std::f64::consts::PI;
use std::sync::Arc;

use orbitclose::closing::*;
use orbitclose::field::{parse_field, VectorField};
use orbitclose::flow::{find_returns, first_return, refine_periodic, Section};
use orbitclose::geometry::ChartedManifold;
use orbitclose::hyperbolicity::*;
use orbitclose::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn limit_cycle() -> Arc<dyn VectorField> {
    Arc::new(parse_field("[x - y - x*(x^2 + y^2), x + y - y*(x^2 + y^2)]", 2).unwrap())
}

/// Unit cycle attracting at rate `a`, crossed with `z' = (ln μ / 2π) z`.
fn skew(a: f64, mu: f64) -> Arc<dyn VectorField> {
    let src = format!("[{a}*(x - x*(x^2+y^2)) - y, {a}*(y - y*(x^2+y^2)) + x, log({mu})/(2*pi)*z]");
    Arc::new(parse_field(&src, 3).unwrap())
}

fn lorenz() -> Arc<dyn VectorField> {
    Arc::new(parse_field("[10*(y - x), x*(28 - z) - y, x*y - 8/3*z]", 3).unwrap())
}

fn closed(field: &Arc<dyn VectorField>, man: &ChartedManifold, x0: &[f64], alpha_max: f64) -> ClosedOrbit {
    let ev = find_returns(&**field, man, x0, 0.0, alpha_max, 8.0, 1.0)
        .unwrap()
        .into_iter()
        .min_by(|a, b| a.alpha.total_cmp(&b.alpha))
        .unwrap();
    hermite_close(field.clone(), man, &ev, 1, None).unwrap()
}

fn moduli(r: &MonodromyReport) -> Vec<f64> {
    r.eigenvalues.iter().map(Eigenvalue::modulus).collect()
}

#[test]
fn limit_cycle_floquet_multiplier() {
    let man = ChartedManifold::euclidean(2);
    let r = section_monodromy(&*limit_cycle(), &man, &[1.0, 0.0], 0.0, 2.0 * PI).unwrap();
    let expected = (-4.0 * PI).exp();
    assert_eq!(r.eigenvalues.len(), 1);
    let rel = (r.eigenvalues[0].re - expected).abs() / expected;
    assert!(rel < 1e-6, "relative error {rel:e}");
    assert_eq!(r.splitting_dims, SplittingDims { s: 1, u: 0, c: 0 });
    let check = check_hyperbolic_margin(&r, 0.5);
    assert!(check.pass && check.witness.is_none());
    assert!((r.margin - (1.0 - expected)).abs() < 1e-9);
}

#[test]
fn shifted_sub_period_sees_the_same_multiplier() {
    let man = ChartedManifold::euclidean(2);
    let r = section_monodromy(&*limit_cycle(), &man, &[1.0, 0.0], 1.3, 1.3 + 2.0 * PI).unwrap();
    let expected = (-4.0 * PI).exp();
    assert!((r.eigenvalues[0].re - expected).abs() / expected < 1e-6);
    // the section sits at φ_1.3(p) = (cos 1.3, sin 1.3)
    assert!((r.section.anchor[0] - 1.3f64.cos()).abs() < 1e-9);
}

#[test]
fn rotation_is_neutral() {
    let man = ChartedManifold::euclidean(2);
    let f = parse_field("[-y, x]", 2).unwrap();
    let r = section_monodromy(&f, &man, &[1.0, 0.0], 0.0, 2.0 * PI).unwrap();
    assert!((r.eigenvalues[0].re - 1.0).abs() < 1e-9);
    assert_eq!(r.splitting_dims.c, 1);
    assert_eq!(r.margin, 0.0);
    let check = check_hyperbolic_margin(&r, 1e-6);
    assert!(!check.pass);
    assert!((check.witness.unwrap().re - 1.0).abs() < 1e-9);
}

#[test]
fn non_periodic_and_tangential_points_are_rejected() {
    let man = ChartedManifold::euclidean(2);
    let f = limit_cycle();
    assert!(matches!(section_monodromy(&*f, &man, &[1.5, 0.0], 0.0, 2.0 * PI), Err(Error::NotPeriodic(_))));
    assert!(matches!(section_monodromy(&*f, &man, &[0.0, 0.0], 0.0, 2.0 * PI), Err(Error::TangentialSection)));
}

#[test]
fn saddle_cycle_margin() {
    // radial multiplier e^{−4πa} = 1/2, vertical multiplier 2
    let a = 2f64.ln() / (4.0 * PI);
    let man = ChartedManifold::euclidean(3);
    let r = section_monodromy(&*skew(a, 2.0), &man, &[1.0, 0.0, 0.0], 0.0, 2.0 * PI).unwrap();
    let m = moduli(&r);
    assert!((m[0] - 2.0).abs() < 1e-6 && (m[1] - 0.5).abs() < 1e-6, "{m:?}");
    assert_eq!(r.splitting_dims, SplittingDims { s: 1, u: 1, c: 0 });
    assert!((r.margin - 0.5).abs() < 1e-6);
    let check = check_hyperbolic_margin(&r, 0.4);
    assert!(check.pass);
    assert!(!check_hyperbolic_margin(&r, 0.6).pass);
    // E^s is the radial direction, E^u the vertical one
    let es: Vec<f64> = (0..3).map(|i| r.section.basis.iter().zip(&r.stable[0]).map(|(b, c)| b[i] * c).sum()).collect();
    assert!((es[0].abs() - 1.0).abs() < 1e-6, "{es:?}");
}

#[test]
fn splitting_is_invariant_and_contracting() {
    let man = ChartedManifold::euclidean(3);
    let r = section_monodromy(&*skew(1.0, 0.9), &man, &[1.0, 0.0, 0.0], 0.0, 2.0 * PI).unwrap();
    let m = moduli(&r);
    assert!((m[0] - 0.9).abs() < 1e-6);
    assert!((m[1] - (-4.0 * PI).exp()).abs() < 1e-9);
    assert!(r.invariance_residual < 1e-7, "{:e}", r.invariance_residual);
    assert!(r.lambda_rate < 1.0);
    let p = r.matrix();
    let q = nalgebra::DMatrix::from_fn(2, r.stable.len(), |i, j| r.stable[j][i]);
    let mut pk = p.clone();
    for k in 1..=5 {
        let norm = (&pk * &q).norm();
        assert!(norm <= r.c * r.lambda_rate.powi(k) * (1.0 + 1e-12), "k={k}");
        pk = &pk * &p;
    }
}

#[test]
fn liouville_consistency() {
    // div X = a(2 − 4r²) + ln μ/2π on the unit circle: ∫ = −4πa + ln μ
    let man = ChartedManifold::euclidean(3);
    let (a, mu) = (1.0, 0.9);
    let r = section_monodromy(&*skew(a, mu), &man, &[1.0, 0.0, 0.0], 0.0, 2.0 * PI).unwrap();
    let oracle = (-4.0 * PI * a).exp() * mu;
    let l = &r.liouville;
    assert!((l.exp_divergence - oracle).abs() / oracle < 1e-6);
    assert!((l.section_product * l.flow_multiplier - oracle).abs() / oracle < 1e-6);
    assert!(l.defect < 1e-6);
    assert!((l.flow_multiplier - 1.0).abs() < 1e-8);
}

#[test]
fn lorenz_periodic_orbit_is_a_saddle() {
    let man = ChartedManifold::euclidean(3);
    let f = lorenz();
    let (p, period) = refine_periodic(&*f, &man, &[-13.7636, -19.5788, 27.0], 1.5587, 1e-9).unwrap();
    assert!((period - 1.5587).abs() < 1e-3, "{period}");
    let r = section_monodromy(&*f, &man, &p, 0.0, period).unwrap();
    assert_eq!(r.splitting_dims, SplittingDims { s: 1, u: 1, c: 0 });
    // det dφ_T = exp(−(σ + 1 + β) T) exactly for Lorenz
    let oracle = (-(10.0 + 1.0 + 8.0 / 3.0) * period).exp();
    assert!((r.liouville.exp_divergence - oracle).abs() / oracle < 1e-9);
    assert!((r.liouville.flow_multiplier - 1.0).abs() < 1e-6);
    assert!(check_hyperbolic_margin(&r, 0.1).pass);
}

#[test]
fn report_json_keys() {
    let man = ChartedManifold::euclidean(2);
    let r = section_monodromy(&*limit_cycle(), &man, &[1.0, 0.0], 0.0, 2.0 * PI).unwrap();
    let mut buf = Vec::new();
    r.write_json(&mut buf).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    for key in ["T0", "T1", "eigenvalues", "margin", "splitting_dims"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert!(v["eigenvalues"][0].get("re").is_some() && v["eigenvalues"][0].get("im").is_some());
    assert_eq!(v["splitting_dims"]["s"], 1);
}

fn skew_adjuster(mu: f64) -> (Arc<dyn VectorField>, MonodromyReport, Result<AdjustedField, Error>) {
    let man = ChartedManifold::euclidean(3);
    let f = skew(1.0, mu);
    let orbit = Arc::new(closed(&f, &man, &[1.0, 0.0, 0.0], 1e-6));
    let fb = Arc::new(build_flowbox(orbit, None).unwrap());
    let report = section_monodromy(&*f, &man, &[1.0, 0.0, 0.0], 0.0, fb.orbit.period).unwrap();
    let z = eigenvalue_adjuster(f.clone(), fb, &report, &[0.0, 0.0, 1.0], 0.5);
    (f, report, z)
}

#[test]
fn eigenvalue_surgery() {
    let man = ChartedManifold::euclidean(3);
    let (y, ry, z) = skew_adjuster(0.9);
    let z = z.unwrap();
    assert!((z.report.mu - 0.9).abs() < 1e-8);
    let rz = section_monodromy(&z, &man, &[1.0, 0.0, 0.0], 0.0, ry.t1).unwrap();
    let (my, mz) = (moduli(&ry), moduli(&rz));
    assert!((mz[0] - 1.0).abs() < 1e-6, "{mz:?}");
    assert!((mz[1] - my[1]).abs() < 1e-6, "{my:?} {mz:?}");
    // same return time to the section through p0
    let p0 = [1.0, 0.0, 0.0];
    let sec = Section::new(p0.to_vec(), y.eval(&p0, 0.0).unwrap(), 0.5);
    let (ty, _) = first_return(&*y, &man, &sec, &p0, 0.0, 10.0).unwrap();
    let (tz, _) = first_return(&z, &man, &sec, &p0, 0.0, 10.0).unwrap();
    assert!((ty - tz).abs() < 1e-8, "{ty} {tz}");
    // the realized dA_T scales the target multiplier by 1/μ
    let da = &z.report.realized_da;
    let pda = nalgebra::DMatrix::from_fn(2, 2, |i, j| da[i][j]) * ry.matrix();
    let ev = pda.complex_eigenvalues();
    assert!(ev.iter().any(|l| (l.re - 1.0).abs() < 1e-6));
}

#[test]
fn adjuster_is_local() {
    let (y, _, z) = skew_adjuster(0.9);
    let z = z.unwrap();
    let eps = z.flowbox.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut outside = 0;
    while outside < 2000 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if ((r - 1.0).powi(2) + x[2] * x[2]).sqrt() <= eps * 1.01 {
            continue;
        }
        outside += 1;
        assert_eq!(z.eval(&x, 0.0).unwrap(), y.eval(&x, 0.0).unwrap());
        assert_eq!(z.jacobian(&x, 0.0).unwrap(), y.jacobian(&x, 0.0).unwrap());
    }
}

#[test]
fn adjuster_jacobian_matches_differences() {
    let (_, _, z) = skew_adjuster(0.9);
    let z = z.unwrap();
    for x in [[1.1, 0.05, 0.1], [0.8, -0.3, -0.05], [-0.95, 0.2, 0.2]] {
        let j = z.jacobian(&x, 0.0).unwrap();
        for k in 0..3 {
            let h = 1e-6;
            let mut a = x;
            let mut b = x;
            a[k] += h;
            b[k] -= h;
            let (fa, fb) = (z.eval(&a, 0.0).unwrap(), z.eval(&b, 0.0).unwrap());
            for i in 0..3 {
                let fd = (fa[i] - fb[i]) / (2.0 * h);
                assert!((fd - j[(i, k)]).abs() < 1e-6, "x={x:?} ({i},{k}) {fd} {}", j[(i, k)]);
            }
        }
    }
}

#[test]
fn adjuster_refuses_far_multipliers() {
    let (_, _, z) = skew_adjuster(0.3);
    assert!(matches!(z, Err(Error::WindowTooWide { .. })));
}

#[test]
fn adjuster_refuses_complex_pairs() {
    let (f, mut report, _) = skew_adjuster(0.9);
    let (c, s) = (0.9 * 0.3f64.cos(), 0.9 * 0.3f64.sin());
    report.matrix = vec![vec![c, -s], vec![s, c]];
    report.eigenvalues = vec![Eigenvalue { re: c, im: s }, Eigenvalue { re: c, im: -s }];
    let man = ChartedManifold::euclidean(3);
    let orbit = Arc::new(closed(&f, &man, &[1.0, 0.0, 0.0], 1e-6));
    let fb = Arc::new(build_flowbox(orbit, None).unwrap());
    let z = eigenvalue_adjuster(f, fb, &report, &[0.0, 0.0, 1.0], 0.5);
    assert!(matches!(z, Err(Error::EigenvalueNotSimple(_))));
}

#[test]
fn gronwall_equality_for_linear_growth() {
    let man = ChartedManifold::euclidean(1);
    let f = parse_field("[2*x]", 1).unwrap();
    let g = gronwall_check(&f, &man, &[1.0], &[1.001], 2.0).unwrap();
    assert!((g.l - 2.0).abs() < 1e-12);
    assert!((g.max_ratio - 1.0).abs() < 1e-6, "{}", g.max_ratio);
    assert!(g.pass);
    assert!((g.bound_factor - 4f64.exp()).abs() < 1e-9);
}

#[test]
fn gronwall_for_isometric_flow() {
    let man = ChartedManifold::euclidean(2);
    let f = parse_field("[-y, x]", 2).unwrap();
    let g = gronwall_check(&f, &man, &[1.0, 0.0], &[1.0, 0.01], 5.0).unwrap();
    assert!((g.l - 1.0).abs() < 1e-12);
    assert_eq!(g.t_at_max, 0.0);
    assert!((g.max_ratio - 1.0).abs() < 1e-12);
}

#[test]
fn gronwall_on_lorenz_pairs() {
    let man = ChartedManifold::euclidean(3);
    let f = lorenz();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = orbitclose::flow::integrate(&*f, &man, &[1.0, 1.0, 1.0], (0.0, 20.0)).unwrap();
    for _ in 0..5 {
        let p = start.eval(rng.gen_range(5.0..20.0));
        let w: Vec<f64> = p.iter().map(|c| c + rng.gen_range(-1e-6..1e-6)).collect();
        let g = gronwall_check(&*f, &man, &p, &w, 3.0).unwrap();
        assert!(g.pass, "{}", g.max_ratio);
    }
}

#[test]
fn splitting_needs_three_orbits() {
    let man = ChartedManifold::euclidean(2);
    let f = limit_cycle();
    let o1 = closed(&f, &man, &[1.01, 0.0], 0.03);
    let o2 = closed(&f, &man, &[1.001, 0.0], 0.003);
    let err = splitting_continuity(&*f, &man, &[&o1, &o2], &[1.0, 0.0]).unwrap_err();
    assert_eq!(err, Error::InsufficientFamily { needed: 3, found: 2 });
}

#[test]
fn limit_cycle_splittings_converge() {
    let man = ChartedManifold::euclidean(2);
    let f = limit_cycle();
    let orbits: Vec<ClosedOrbit> =
        [1e-2, 1e-3, 1e-4].iter().map(|d| closed(&f, &man, &[1.0 + d, 0.0], 3.0 * d)).collect();
    let refs: Vec<&ClosedOrbit> = orbits.iter().collect();
    let s = splitting_continuity(&*f, &man, &refs, &[1.0, 0.0]).unwrap();
    assert_eq!(s.angles.len(), 2);
    assert!(s.angles[1] < s.angles[0], "{:?}", s.angles);
    assert!(s.monotone);
}

#[test]
fn constant_splitting_of_a_suspended_saddle() {
    let man = ChartedManifold::flat_torus(vec![10.0, 10.0, 1.0]);
    let f: Arc<dyn VectorField> = Arc::new(parse_field("[log(2)*x, -log(2)*y, 1]", 3).unwrap());
    let orbits: Vec<ClosedOrbit> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|d| {
            let ev = find_returns(&*f, &man, &[*d, 0.0, 0.0], 0.0, 3.0 * d, 1.5, 0.5).unwrap().remove(0);
            hermite_close(f.clone(), &man, &ev, 1, Some(0.2)).unwrap()
        })
        .collect();
    let refs: Vec<&ClosedOrbit> = orbits.iter().collect();
    let s = splitting_continuity(&*f, &man, &refs, &[0.0, 0.0, 0.0]).unwrap();
    assert!(s.angles.iter().all(|a| *a < 1e-12), "{:?}", s.angles);
    assert_eq!(s.stable_dims, vec![1, 1, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn section_basis_is_orthonormal(
        x in -2.0f64..2.0, y in -2.0f64..2.0, vx in -1.0f64..1.0, vy in -1.0f64..1.0,
    ) {
        prop_assume!(vx.abs() + vy.abs() > 1e-3);
        for man in [ChartedManifold::euclidean(2), ChartedManifold::sphere2(1.0)] {
            let s = CrossSection::new(&man, &[x, y], &[vx, vy], 0.5).unwrap();
            let b = &s.basis[0];
            prop_assert!((man.inner(&[x, y], b, b) - 1.0).abs() < 1e-10);
            prop_assert!(man.inner(&[x, y], b, &[vx, vy]).abs() < 1e-10);
        }
    }
}
