use tfe6_core::m1exact::{
    build_profile, find_matching_ratios, maxima_ratio_limit, oscillatory_component, write_profile_csv,
    PiecewiseProfile, DEFAULT_PIECES,
};
use tfe6_core::odeflow::{integrate, IntegrateOptions, PhysicalSystem, Tolerance};
use tfe6_core::params::Sign;

fn profiles() -> [PiecewiseProfile; 2] {
    let r = find_matching_ratios().unwrap();
    [
        build_profile(r.g1, Sign::Plus, DEFAULT_PIECES).unwrap(),
        build_profile(r.g2, Sign::Minus, DEFAULT_PIECES).unwrap(),
    ]
}

#[test]
fn each_piece_is_the_rescaled_previous_one() {
    for pr in profiles() {
        let g = pr.g;
        for w in pr.pieces.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!((b.len - g * a.len).abs() < 1e-15 * a.len);
            // on the local chart the shift-rescale is a pure amplitude factor
            let expected = a.poly.scale(-g.powi(5));
            for t in [0.0, 0.3, 0.7, 1.0] {
                let (x, y) = (b.poly.eval(t), expected.eval(t));
                assert!(
                    (x - y).abs() <= 1e-13 * a.poly.max_abs_coeff() * g.powi(5),
                    "piece {}",
                    b.index
                );
            }
            assert_eq!(a.sign(), -b.sign());
        }
    }
}

#[test]
fn fifth_derivative_is_piecewise_constant() {
    for pr in profiles() {
        for piece in pr.pieces.iter().take(8) {
            let d0 = piece.derivatives_at(0.2)[5];
            let d1 = piece.derivatives_at(0.9)[5];
            assert!((d0 - d1).abs() <= 1e-9 * d0.abs());
            assert!((d0.abs() - 120.0).abs() < 1e-8, "piece {}: {d0}", piece.index);
            assert_eq!(
                d0.signum() * piece.sign(),
                pr.pieces[0].derivatives_at(0.5)[5].signum() * pr.pieces[0].sign()
            );
        }
    }
}

/// Integrating the unit interface equation from data read off the profile
/// reproduces the next pieces, sign changes included.
#[test]
fn physical_flow_follows_the_exact_profile() {
    for pr in profiles() {
        let start = &pr.pieces[2];
        let d = start.derivatives_at(0.0);
        let data: [f64; 5] = std::array::from_fn(|j| d[j] / 120.0);
        // the interface is on the right, so f⁽⁵⁾ = ±120 sign f with the sign
        // read off the first piece
        let ratio = pr.pieces[0].derivatives_at(0.5)[5] / pr.pieces[0].sign() / 120.0;
        let lambda = if ratio < 0.0 { Sign::Plus } else { Sign::Minus };
        let (x0, a4) = PhysicalSystem::initial_state(&data);
        let sys = PhysicalSystem::new(a4, 0.0, lambda, 0.0).unwrap();
        let span = start.len + pr.pieces[3].len;
        let scale = start.poly.max_abs_coeff() / 120.0;
        let opts = IntegrateOptions {
            tol: Tolerance::new(1e-13 * scale, 1e-12).unwrap(),
            event_components: vec![0],
            ..Default::default()
        };
        let traj = integrate(&sys, 0.0, span, &x0, &opts).unwrap();
        for i in 1..=20 {
            let dy = span * i as f64 / 20.0;
            let exact = pr.eval(start.y_left + dy).unwrap() / 120.0;
            let got = traj.interpolate(dy).unwrap()[0];
            assert!(
                (got - exact).abs() < 1e-8 * scale,
                "lambda {}: y+{dy}: {got} vs {exact}",
                pr.lambda
            );
        }
        assert!(!traj.events.is_empty(), "the flow must cross the junction zero");
    }
}

#[test]
fn maxima_ratios_are_constant() {
    for pr in profiles() {
        let r = maxima_ratio_limit(&pr).unwrap();
        assert!(r.max_rel_deviation < 1e-9, "{}", r.max_rel_deviation);
        assert!(r.closed_form_residual < 1e-12);
        assert!(r.limit > 0.0);
    }
}

#[test]
fn phi_star_is_periodic_in_log_distance() {
    for pr in profiles() {
        let period = 2.0 * pr.g.ln().abs();
        let (lo, hi) = pr.s_range();
        let grid: Vec<f64> = (0..200)
            .map(|i| lo + 1.0 + (hi - lo - period - 2.0) * i as f64 / 199.0)
            .collect();
        let shifted: Vec<f64> = grid.iter().map(|s| s + period).collect();
        let a = oscillatory_component(&pr, &grid).unwrap();
        let b = oscillatory_component(&pr, &shifted).unwrap();
        let amp = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9 * amp);
        }
    }
}

#[test]
fn profile_csv_has_one_row_per_piece() {
    let [pr, _] = profiles();
    let mut buf = Vec::new();
    write_profile_csv(&pr, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), DEFAULT_PIECES + 1);
    let first: Vec<f64> = rows[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first.len(), 9);
    assert_eq!(first[1], -1.0);
}
