use std::f64::consts::PI;

use orbitclose::geometry::ChartedManifold;
use proptest::prelude::*;

fn manifolds() -> Vec<ChartedManifold> {
    vec![
        ChartedManifold::euclidean(3),
        ChartedManifold::flat_torus(vec![1.0, 2.0]),
        ChartedManifold::sphere2(1.3),
    ]
}

fn embedded_tangent(m: &ChartedManifold, x: &[f64], v: &[f64]) -> [f64; 3] {
    let h = 1e-6;
    let mut out = [0.0; 3];
    let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let (p, q) = (m.embed(&xp).unwrap(), m.embed(&xm).unwrap());
    for i in 0..3 {
        out[i] = (p[i] - q[i]) / (2.0 * h);
    }
    out
}

#[test]
fn euclidean_geodesic_is_straight() {
    let m = ChartedManifold::euclidean(3);
    let seg = m.geodesic(&[1.0, 2.0, 3.0], &[0.5, -1.0, 2.0], 2.0).unwrap();
    let end = seg.end().unwrap();
    for (e, w) in end.iter().zip([2.0, 0.0, 7.0]) {
        assert!((e - w).abs() < 1e-12);
    }
    assert_eq!(m.exp_map(&[1.0, 1.0, 1.0], &[0.0; 3]).unwrap(), vec![1.0; 3]);
}

#[test]
fn torus_geodesic_wraps() {
    let m = ChartedManifold::flat_torus(vec![1.0, 1.0]);
    let v = [1.0, 2f64.sqrt()];
    let seg = m.geodesic(&[0.0, 0.0], &v, 10.0).unwrap();
    let end = m.wrap(&seg.end().unwrap());
    let want = m.wrap(&[10.0, 10.0 * 2f64.sqrt()]);
    assert!(m.distance(&end, &want) < 1e-9);
}

#[test]
fn sphere_geodesic_is_great_circle() {
    let r = 1.3;
    let m = ChartedManifold::sphere2(r);
    let p = [0.6, -0.2];
    let v = [0.9, 1.4];
    // long enough to pass the north pole and exercise chart handoff twice
    let seg = m.geodesic(&p, &v, 6.0).unwrap();
    assert!(seg.pieces.len() >= 2);
    let a = m.embed(&p).unwrap();
    let t = embedded_tangent(&m, &p, &v);
    let speed = t.iter().map(|c| c * c).sum::<f64>().sqrt();
    assert!((speed - m.norm(&p, &v)).abs() < 1e-8);
    for k in 1..=30 {
        let tau = 6.0 * k as f64 / 30.0;
        let ang = speed * tau / r;
        let want: Vec<f64> = (0..3).map(|i| a[i] * ang.cos() + t[i] / speed * r * ang.sin()).collect();
        let got = seg.point(tau).ok();
        if let Some(got) = got {
            let e = m.embed(&got).unwrap();
            let err = (0..3).map(|i| (e[i] - want[i]).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-8, "tau {tau}: {err}");
        }
    }
}

#[test]
fn sphere_exp_of_half_circumference_is_antipode() {
    let r = 1.0;
    let m = ChartedManifold::sphere2(r);
    let p = [0.3, 0.4];
    let dir = [1.0, -0.5];
    let n = m.norm(&p, &dir);
    let v: Vec<f64> = dir.iter().map(|c| c * PI * r / n).collect();
    let q = m.exp_map(&p, &v).unwrap();
    let (a, b) = (m.embed(&p).unwrap(), m.embed(&q).unwrap());
    for i in 0..3 {
        assert!((a[i] + b[i]).abs() < 1e-7);
    }
    assert!((m.distance(&[0.0, 0.0], &[1e12, 0.0]) - PI).abs() < 1e-9);
}

#[test]
fn latitude_holonomy() {
    for theta0 in [0.4, 1.0, PI / 2.0, 2.0] {
        let r = 1.0;
        let m = ChartedManifold::sphere2(r);
        let rho = r * (theta0 / 2.0).tan();
        let c = |s: f64| vec![rho * s.cos(), rho * s.sin()];
        let dc = |s: f64| vec![-rho * s.sin(), rho * s.cos()];
        let w0 = [1.0, 0.0];
        let w = m.transport_along(c, dc, 0.0, 2.0 * PI, &w0).unwrap();
        let x = c(0.0);
        assert!((m.norm(&x, &w) - m.norm(&x, &w0)).abs() < 1e-9);
        // conformal chart: euclidean angles are metric angles
        let got = w[1].atan2(w[0]);
        let want = 2.0 * PI * (1.0 - theta0.cos());
        let diff = (got - want).rem_euclid(2.0 * PI);
        let diff = diff.min(2.0 * PI - diff);
        assert!(diff < 1e-8, "theta0 {theta0}: got {got}, want {want}");
    }
}

fn arb_point(m: &ChartedManifold) -> BoxedStrategy<Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, m.dimension).boxed()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transport_preserves_inner_products(
        which in 0usize..3,
        seed in prop::collection::vec(-2.0f64..2.0, 12),
    ) {
        let m = &manifolds()[which];
        let n = m.dimension;
        let p = &seed[..n];
        let v = &seed[3..3 + n];
        let u = &seed[6..6 + n];
        let w = &seed[9..9 + n];
        let seg = m.geodesic(p, v, 1.0).unwrap();
        let end = seg.end().unwrap();
        let tu = m.parallel_transport(&seg, u).unwrap();
        let tw = m.parallel_transport(&seg, w).unwrap();
        let before = m.inner(p, u, w);
        let after = m.inner(&end, &tu, &tw);
        prop_assert!((before - after).abs() <= 1e-8 * before.abs().max(1.0), "{before} vs {after}");
    }

    #[test]
    fn geodesic_speed_is_conserved(
        p in prop::collection::vec(-2.0f64..2.0, 2),
        v in prop::collection::vec(-1.5f64..1.5, 2),
    ) {
        let m = ChartedManifold::sphere2(1.3);
        let seg = m.geodesic(&p, &v, 3.0).unwrap();
        let s0 = seg.speed;
        for k in 1..=10 {
            let tau = 0.3 * k as f64;
            if let (Ok(x), Ok(dx)) = (seg.point(tau), seg.velocity(tau)) {
                let s = m.norm(&x, &dx);
                prop_assert!((s - s0).abs() <= 1e-8 * s0.max(1e-300));
            }
        }
    }

    #[test]
    fn transport_then_reverse_is_identity(
        which in 0usize..3,
        seed in prop::collection::vec(-1.5f64..1.5, 9),
    ) {
        let m = &manifolds()[which];
        let n = m.dimension;
        let p = &seed[..n];
        let v = &seed[3..3 + n];
        let w = &seed[6..6 + n];
        let seg = m.geodesic(p, v, 1.0).unwrap();
        let end = seg.end().unwrap();
        let back_v: Vec<f64> = seg.velocity(1.0).unwrap().iter().map(|c| -c).collect();
        let back = m.geodesic(&end, &back_v, 1.0).unwrap();
        let tw = m.parallel_transport(&seg, w).unwrap();
        let ww = m.parallel_transport(&back, &tw).unwrap();
        for i in 0..n {
            prop_assert!((ww[i] - w[i]).abs() <= 1e-8 * (1.0 + w[i].abs()));
        }
    }

    #[test]
    fn triangle_inequality(
        which in 0usize..3,
        seed in prop::collection::vec(-3.0f64..3.0, 9),
    ) {
        let m = &manifolds()[which];
        let n = m.dimension;
        let (x, y, z) = (&seed[..n], &seed[3..3 + n], &seed[6..6 + n]);
        prop_assert!(m.distance(x, z) <= m.distance(x, y) + m.distance(y, z) + 1e-12);
        prop_assert!(m.distance(x, x) == 0.0);
    }

    // indices run both ways round, which the lint cannot see
    #[allow(clippy::needless_range_loop)]
    #[test]
    fn metric_is_positive_and_compatible(p in arb_point(&ChartedManifold::sphere2(1.0))) {
        let m = ChartedManifold::sphere2(1.0);
        let g = m.metric(&p);
        prop_assert!(g.symmetric_eigenvalues().min() > 0.0);
        prop_assert!(m.metric_compatibility_defect(&p) <= 1e-9);
        let gamma = m.christoffel(&p).unwrap();
        for j in 0..2 { for k in 0..2 { for l in 0..2 {
            prop_assert_eq!(gamma[j][k][l], gamma[j][l][k]);
        }}}
    }
}
