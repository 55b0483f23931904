use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use orbitclose::closing::*;
use orbitclose::field::{eval_jet, parse_field, unit_field_family, VectorField};
use orbitclose::flow::{find_returns, integrate_with, ReturnEvent};
use orbitclose::geometry::ChartedManifold;
use orbitclose::ode::Dopri5;
use orbitclose::perturbation::*;
use orbitclose::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rotation() -> Arc<dyn VectorField> {
    Arc::new(parse_field("[-y, x]", 2).unwrap())
}

fn offset_event(offset: f64) -> ReturnEvent {
    let man = ChartedManifold::euclidean(2);
    let t = 2.0 * PI - offset;
    let x_ret = vec![t.cos(), t.sin()];
    let x0 = vec![1.0, 0.0];
    ReturnEvent { alpha: man.distance(&x0, &x_ret), x0, t_anchor: 0.0, period: t, x_ret }
}

fn rotation_box(offset: f64, eps: f64, window: Option<f64>) -> Arc<FlowBox> {
    let man = ChartedManifold::euclidean(2);
    let ev = if offset == 0.0 {
        ReturnEvent { x0: vec![1.0, 0.0], t_anchor: 0.0, period: 2.0 * PI, x_ret: vec![1.0, 0.0], alpha: 0.0 }
    } else {
        offset_event(offset)
    };
    let orbit = hermite_close(rotation(), &man, &ev, 2, window).unwrap();
    Arc::new(build_flowbox(Arc::new(orbit), Some(eps)).unwrap())
}

fn family() -> Vec<Vec<f64>> {
    unit_field_family(2, 8, 7)
}

fn autonomous(fb: &Arc<FlowBox>, amplitude: f64) -> PerturbedField {
    perturb_autonomous(rotation(), fb.clone(), make_bump(fb.epsilon, amplitude, 2).unwrap()).unwrap()
}

fn nonautonomous(fb: &Arc<FlowBox>) -> PerturbedField {
    perturb_nonautonomous(rotation(), fb.clone(), make_bump(fb.epsilon, 1.0, 2).unwrap()).unwrap()
}

fn pendulum() -> Arc<dyn VectorField> {
    Arc::new(parse_field("[y, -sin(x)]", 2).unwrap())
}

/// Libration orbit turning at x = ±(π − 0.05), stalled at the right turning point.
fn homoclinic() -> (PerturbedField, Vec<f64>) {
    let f = pendulum();
    let man = ChartedManifold::euclidean(2);
    let x0 = [0.0, 2.0 * 0.025f64.cos()];
    let ev = find_returns(&*f, &man, &x0, 0.0, 1e-6, 40.0, 1.0).unwrap().remove(0);
    let orbit = hermite_close(f.clone(), &man, &ev, 2, None).unwrap();
    let fb = Arc::new(build_flowbox(Arc::new(orbit), None).unwrap());
    let s0 = slowest_parameter(&fb, Some((&[PI, 0.0], 0.2))).unwrap();
    let y_slow = fb.orbit.point(s0);
    let bump = make_bump(fb.epsilon, 1.0, 2).unwrap();
    (perturb_homoclinic(f, fb, &y_slow, 1.0, bump, 0.05).unwrap(), y_slow)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[test]
fn field_follows_the_orbit() {
    let fb = rotation_box(1e-4, 0.3, None);
    let na = nonautonomous(&fb);
    let au = autonomous(&fb, 1.0);
    for k in 0..100 {
        let t = fb.orbit.period * (k as f64 + 0.25) / 100.0;
        let p = fb.orbit.point(t);
        let v = fb.orbit.velocity(t).unwrap();
        let time = fb.orbit.field_time(t);
        for y in [&na, &au] {
            let yv = y.eval(&p, time).unwrap();
            assert!(norm(&[yv[0] - v[0], yv[1] - v[1]]) <= 1e-9, "{:?} t={t}", y.mode);
        }
    }
}

#[test]
fn single_branch_modes_agree_at_anchor_time() {
    let fb = rotation_box(1e-3, 0.3, None);
    let na = nonautonomous(&fb);
    let au = autonomous(&fb, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let x = [rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3)];
        let Projection::Inside { branches } = fb.project(&x) else { continue };
        let time = fb.orbit.field_time(branches[0].t);
        let (a, b) = (na.eval(&x, time).unwrap(), au.eval(&x, time).unwrap());
        assert!(norm(&[a[0] - b[0], a[1] - b[1]]) <= 1e-12);
    }
}

fn assert_outside_exact(y: &PerturbedField, base: &dyn VectorField, lo: f64, hi: f64, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outside = 0;
    while outside < 10_000 {
        let x = [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
        if !y.flowbox.project(&x).is_outside() {
            continue;
        }
        outside += 1;
        let t = rng.gen_range(-10.0..10.0);
        assert_eq!(y.eval(&x, t).unwrap(), base.eval(&x, t).unwrap());
        if outside % 50 == 0 {
            let (jy, jx) = (eval_jet(y, &x, t, 2).unwrap(), eval_jet(base, &x, t, 2).unwrap());
            for (a, b) in jy.components.iter().zip(&jx.components) {
                assert_eq!(a.coeffs(), b.coeffs());
            }
        }
    }
    outside
}

#[test]
fn support_is_exact_in_every_mode() {
    let fb = rotation_box(1e-4, 0.3, None);
    assert_outside_exact(&nonautonomous(&fb), &*rotation(), -1.6, 1.6, 1);
    assert_outside_exact(&autonomous(&fb, 1.0), &*rotation(), -1.6, 1.6, 2);
    let (h, _) = homoclinic();
    assert_outside_exact(&h, &*pendulum(), -3.5, 3.5, 3);
}

#[test]
fn exact_orbit_leaves_field_unchanged() {
    let fb = rotation_box(0.0, 0.3, None);
    let y = nonautonomous(&fb);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let x = [rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3)];
        let t = rng.gen_range(0.0..7.0);
        let (a, b) = (y.eval(&x, t).unwrap(), rotation().eval(&x, t).unwrap());
        assert!(norm(&[a[0] - b[0], a[1] - b[1]]) <= 1e-12);
    }
    let rep = cr_distance(&*rotation(), &y, 2, &family(), 1000, 11).unwrap();
    assert!(rep.measured().iter().all(|m| *m <= 1e-12), "{:?}", rep.measured());
    let c = verify_closure(&y, 2).unwrap();
    assert!(c.position_mismatch <= 1e-9);
}

#[test]
fn rotation_distance_within_bound() {
    let fb = rotation_box(1e-4, 0.3, None);
    for y in [nonautonomous(&fb), autonomous(&fb, 1.0)] {
        let rep = cr_distance(&*rotation(), &y, 2, &family(), 1000, 1).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.per_order.iter().all(|v| v.measured > 0.0));
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["mode", "r", "alpha", "epsilon", "rho0", "constants", "per_order", "seed"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(json["constants"].get("L").is_some() && json["constants"].get("H").is_some());
    }
}

#[test]
fn doubling_the_amplitude_doubles_the_distance() {
    let fb = rotation_box(1e-4, 0.3, None);
    let one = cr_distance(&*rotation(), &autonomous(&fb, 1.0), 2, &family(), 1000, 4).unwrap();
    let two = cr_distance(&*rotation(), &autonomous(&fb, 2.0), 2, &family(), 1000, 4).unwrap();
    let ratio = two.per_order[0].measured / one.per_order[0].measured;
    assert!((ratio - 2.0).abs() <= 0.1, "{ratio}");
    assert!((two.rho0 / one.rho0 - 2.0).abs() < 1e-12);
}

#[test]
fn closure_of_the_perturbed_flow() {
    let fb = rotation_box(1e-4, 0.3, None);
    for y in [nonautonomous(&fb), autonomous(&fb, 1.0)] {
        let c = verify_closure(&y, 2).unwrap();
        assert!(c.position_mismatch <= 1e-6, "{c:?}");
        assert!(c.derivative_mismatch[0] <= 1e-5, "{c:?}");
    }
}

#[test]
fn alpha_scaling_of_the_distance() {
    let alphas = [1e-3, 1e-4, 1e-5];
    let m0: Vec<f64> = alphas
        .iter()
        .map(|a| {
            let fb = rotation_box(*a, 0.3, Some(1.5));
            cr_distance(&*rotation(), &autonomous(&fb, 1.0), 2, &family(), 1000, 9).unwrap().per_order[0].measured
        })
        .collect();
    let slope = fit_slope(&alphas, &m0);
    assert!((slope - 1.0).abs() <= 0.15, "slope {slope}");
}

fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

#[test]
fn epsilon_scaling_of_the_distance() {
    let eps = [0.4, 0.2, 0.1];
    let reps: Vec<Vec<f64>> = eps
        .iter()
        .map(|e| {
            let fb = rotation_box(1e-4, *e, Some(1.5));
            cr_distance(&*rotation(), &autonomous(&fb, 1.0), 2, &family(), 1000, 9).unwrap().measured()
        })
        .collect();
    for q in 0..=2 {
        let m: Vec<f64> = reps.iter().map(|r| r[q]).collect();
        let slope = fit_slope(&eps, &m);
        assert!((slope + q as f64).abs() <= 0.2, "q={q} exponent {slope}");
    }
}

#[test]
fn jets_continuous_across_the_rim() {
    // rotation scenario settings; the order-r jet moves by about
    // ρ^(r+1)·|Ȳ − X̄|·1e-6 across the pair, so the margin depends on them
    let fb = rotation_box(1e-4, 0.3, Some(1.5));
    let y = autonomous(&fb, 1.0);
    let w = fb.orbit.window;
    for k in 0..40 {
        let t = fb.orbit.period - w + w * k as f64 / 40.0;
        let p = fb.orbit.point(t);
        let r = norm(&p);
        let inner: Vec<f64> = p.iter().map(|c| c * (r + 0.3 - 5e-7) / r).collect();
        let outer: Vec<f64> = p.iter().map(|c| c * (r + 0.3 + 5e-7) / r).collect();
        // X is smooth; compare the jets of the perturbation Y − X on both sides
        let diff = |x: &[f64]| {
            let (a, b) = (eval_jet(&y, x, t, 2).unwrap(), eval_jet(&*rotation(), x, t, 2).unwrap());
            a.components.iter().zip(&b.components).map(|(u, v)| u - v).collect::<Vec<_>>()
        };
        for (ca, cb) in diff(&inner).iter().zip(&diff(&outer)) {
            for (u, v) in ca.coeffs().iter().zip(cb.coeffs()) {
                assert!((u - v).abs() <= 1e-7, "t={t}: {u} vs {v}");
            }
        }
    }
}

#[test]
fn transported_difference_keeps_its_length() {
    let fb = rotation_box(1e-3, 0.3, Some(1.0));
    let y = autonomous(&fb, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 200 {
        let x = [rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3)];
        let Projection::Inside { branches } = fb.project(&x) else { continue };
        let b = &branches[0];
        let rho = y.bump.value(b.distance);
        if rho < 0.1 || !fb.orbit.in_window(b.t) {
            continue;
        }
        checked += 1;
        let (yx, xx) = (y.eval(&x, 0.0).unwrap(), rotation().eval(&x, 0.0).unwrap());
        let (yf, xf) = (y.eval(&b.foot, 0.0).unwrap(), rotation().eval(&b.foot, 0.0).unwrap());
        let moved = norm(&[yx[0] - xx[0], yx[1] - xx[1]]) / rho;
        let at_foot = norm(&[yf[0] - xf[0], yf[1] - xf[1]]);
        assert!((moved - at_foot).abs() <= 1e-9, "{moved} vs {at_foot}");
    }
}

/// Forced curve `(cos t, sin 2t / 2, h sin t)` whose two passes come within `2h`.
fn near_pass_box(offset: f64) -> (Arc<dyn VectorField>, Arc<FlowBox>) {
    let src = "[-sin(t) - (x - cos(t)), cos(2*t) - (y - sin(2*t)/2), 0.05*cos(t) - (z - 0.05*sin(t))]";
    let f: Arc<dyn VectorField> = Arc::new(parse_field(src, 3).unwrap());
    let man = ChartedManifold::euclidean(3);
    let period = 2.0 * PI - offset;
    let x_ret = vec![period.cos(), (2.0 * period).sin() / 2.0, 0.05 * period.sin()];
    let x0 = vec![1.0, 0.0, 0.0];
    let ev = ReturnEvent { alpha: man.distance(&x0, &x_ret), x0, t_anchor: 0.0, period, x_ret };
    let orbit = hermite_close(f.clone(), &man, &ev, 2, None).unwrap();
    (f, Arc::new(build_flowbox(Arc::new(orbit), Some(0.2)).unwrap()))
}

#[test]
fn overlaps_need_the_autonomous_mode() {
    let (f, fb) = near_pass_box(1e-3);
    assert!(!fb.overlaps.is_empty());
    let err = perturb_nonautonomous(f.clone(), fb.clone(), make_bump(0.2, 1.0, 2).unwrap()).unwrap_err();
    assert!(matches!(err, Error::OverlapPresent(_)));
    let y = perturb_autonomous(f, fb.clone(), make_bump(0.2, 1.0, 2).unwrap()).unwrap();
    // on the orbit inside an overlap the own branch carries full weight
    for t in [PI / 2.0 - 0.05, PI / 2.0, 3.0 * PI / 2.0, 3.0 * PI / 2.0 + 0.05] {
        let p = fb.orbit.point(t);
        assert_eq!(fb.project(&p).branches().len(), 2);
        let v = fb.orbit.velocity(t).unwrap();
        let yv = y.eval(&p, fb.orbit.field_time(t)).unwrap();
        let d: Vec<f64> = (0..3).map(|i| yv[i] - v[i]).collect();
        assert!(norm(&d) <= 1e-9, "t={t}: {d:?}");
    }
}

#[test]
fn homoclinic_equilibrium_and_convergence() {
    let (y, y_slow) = homoclinic();
    assert_eq!(y.eval(&y_slow, 0.0).unwrap(), vec![0.0, 0.0]);
    assert!((y_slow[0] - PI).abs() < 0.1 && y_slow[1].abs() < 0.1);
    let h = y.homoclinic.as_ref().unwrap();
    assert!(h.time_change_bounds.iter().all(|m| *m <= 1.0 + h.tau));
    let man = ChartedManifold::euclidean(2);
    let solver = Dopri5 { rtol: 1e-12, atol: 1e-12, ..Dopri5::default() };
    let outgoing = y.flowbox.orbit.point(h.sigma0 + h.tau);
    let fwd = integrate_with(&y, &man, &outgoing, (0.0, 50.0), &solver).unwrap();
    assert!(man.distance(fwd.end(), &y_slow) < 1e-3);
    let incoming = y.flowbox.orbit.point(h.sigma0 - h.tau);
    let bwd = integrate_with(&y, &man, &incoming, (0.0, -50.0), &solver).unwrap();
    assert!(man.distance(bwd.end(), &y_slow) < 1e-3);
}

#[test]
fn fast_point_is_rejected() {
    let (y, _) = homoclinic();
    let fast = y.flowbox.orbit.point(0.0);
    let err = perturb_homoclinic(pendulum(), y.flowbox.clone(), &fast, 1.0, y.bump.clone(), 0.05).unwrap_err();
    assert!(matches!(err, Error::NotSlowEnough { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn outside_points_are_untouched(x in -3.0f64..3.0, y in -3.0f64..3.0, t in -5.0f64..5.0) {
        static FIELD: OnceLock<PerturbedField> = OnceLock::new();
        let au = FIELD.get_or_init(|| autonomous(&rotation_box(1e-3, 0.3, None), 1.0));
        let p = [x, y];
        if au.flowbox.project(&p).is_outside() {
            prop_assert_eq!(au.eval(&p, t).unwrap(), rotation().eval(&p, t).unwrap());
        }
    }
}
