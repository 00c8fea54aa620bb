//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits with a non-zero status if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfe6_core::identities::{self, coefficient_poly, identity_residuals};
use tfe6_core::m1exact::{build_profile, find_matching_ratios, PiecewiseProfile, DEFAULT_PIECES};
use tfe6_core::odeflow::{
    coeffs_p3, coeffs_p5, comparison_check, integrate, shifted_product, FlowEventKind, FlowOptions, IntegrateOptions,
    PhiFlow, PhiSystem, PhysicalSystem, Tolerance,
};
use tfe6_core::orbits::{
    self, detect_relaxation, detect_shooting, find_orbit, locate_bifurcation, tfe4_bifurcation, ContinuationOptions,
    Seed,
};
use tfe6_core::params::{self, derive, phi0, Sign};
use tfe6_core::polyroots::{isolate_real_roots, Polynomial};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const G1_PAPER: f64 = 0.178318;
const G2_PAPER: f64 = 0.7060378;

fn profile(lambda: Sign) -> Result<PiecewiseProfile, String> {
    let r = find_matching_ratios().map_err(err)?;
    let g = if lambda == Sign::Plus { r.g1 } else { r.g2 };
    build_profile(g, lambda, DEFAULT_PIECES).map_err(err)
}

/// `max |φ*|` over one full period, sampled inside the profile support.
fn exact_amplitude(pr: &PiecewiseProfile) -> Result<f64, String> {
    let period = 2.0 * pr.g.ln().abs();
    let (_, hi) = pr.s_range();
    let n = 20_000;
    let mut amp: f64 = 0.0;
    for i in 0..=n {
        let s = hi - period * i as f64 / n as f64;
        amp = amp.max(pr.phi_star_jet(s).map_err(err)?[0].abs());
    }
    Ok(amp)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let r = find_matching_ratios().map_err(err)?;
    let p = build_profile(r.g1, Sign::Plus, DEFAULT_PIECES).map_err(err)?;
    let q = build_profile(r.g2, Sign::Minus, DEFAULT_PIECES).map_err(err)?;
    let dt = t0.elapsed();
    let e1 = (r.g1 - G1_PAPER).abs();
    let e2 = (r.g2 - G2_PAPER).abs();
    check(
        e1 <= 1e-5 && e2 <= 1e-6 && dt < Duration::from_secs(1) && p.n_pieces() == 40 && q.n_pieces() == 40,
        format!(
            "G1 = {:.9} (err {e1:.1e}), G2 = {:.9} (err {e2:.1e}), {dt:.2?}",
            r.g1, r.g2
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for lambda in [Sign::Plus, Sign::Minus] {
        let pr = profile(lambda)?;
        let jump = pr.max_junction_jump();

        let half = pr.g.ln().abs();
        let amp = exact_amplitude(&pr)?;
        let (lo, hi) = pr.s_range();
        let n = 5000;
        let mut defect: f64 = 0.0;
        for i in 0..=n {
            let s = (lo + 1e-9) + (hi - half - lo - 2e-9) * i as f64 / n as f64;
            let a = pr.phi_star_jet(s).map_err(err)?[0];
            let b = pr.phi_star_jet(s + half).map_err(err)?[0];
            defect = defect.max((a + b).abs());
        }
        let rel = defect / amp;

        // the junctions sit at -1 + Σ G^k, which accumulate at G/(1-G)
        let expected = pr.g / (1.0 - pr.g);
        let last = pr.pieces.last().expect("pieces");
        let tail = pr.g.powi(pr.pieces.len() as i32) / (1.0 - pr.g);
        let y0_err = (pr.y0 - expected).abs().max((last.y_right + tail - expected).abs());

        ok &= jump < 1e-9 && rel < 1e-8 && y0_err <= 1e-12;
        notes.push(format!(
            "lambda {lambda}: jump {jump:.1e}, antiperiodic defect {rel:.1e}, y0 err {y0_err:.1e}"
        ));
    }
    check(ok, notes.join("; "))
}

fn criterion_3() -> Outcome {
    let a1 = coefficient_poly(1);
    let roots = isolate_real_roots(&a1, 0.0, 12.0, 1e-14).map_err(err)?.values();
    // a1(2 + t) = 5t⁴ - 15t² + 4
    let inner = 2.0 - ((15.0 - 145f64.sqrt()) / 10.0).sqrt();
    let has = |target: f64| roots.iter().any(|r| (r - target).abs() <= 1e-4);
    let a2 = coefficient_poly(2);
    let top = isolate_real_roots(&a2, 0.0, 12.0, 1e-15)
        .map_err(err)?
        .values()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let exact = 2.0 + 6f64.sqrt() / 2.0;
    let e = (top - exact).abs();
    check(
        has(1.45608) && has(2.5439) && (inner - 1.45608).abs() < 1e-4 && e <= 1e-12 && (top - 3.22474).abs() < 1e-5,
        format!("a1 roots {roots:?}; a2 top root {top:.15} (err {e:.1e})"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mu: f64 = rng.gen_range(0.0..6.0);
        let got = coeffs_p5(mu).char_poly();
        let want = shifted_product(mu, 5);
        let scale = want.max_abs_coeff();
        for k in 0..=5 {
            let a = got.coeffs().get(k).copied().unwrap_or(0.0);
            let b = want.coeffs().get(k).copied().unwrap_or(0.0);
            worst = worst.max((a - b).abs() / scale);
        }
    }
    check(
        worst <= 1e-12,
        format!("worst relative coefficient error {worst:.1e} over 100 draws"),
    )
}

fn criterion_5() -> Outcome {
    let r = find_matching_ratios().map_err(err)?;

    let t0 = Instant::now();
    let p = derive(1.0, 0.0, Sign::Plus).map_err(err)?;
    let orbit = detect_relaxation(&p, 5000.0, 1e-6).map_err(err)?;
    let dt_plus = t0.elapsed();
    let t_exact = 2.0 * r.g1.ln().abs();
    let a_exact = exact_amplitude(&profile(Sign::Plus)?)?;
    let et = (orbit.period / t_exact - 1.0).abs();
    let ea = (orbit.amplitude / a_exact - 1.0).abs();

    // seed away from the exact orbit so that Newton has work to do
    let t0 = Instant::now();
    let q = derive(1.0, 0.0, Sign::Minus).map_err(err)?;
    let (x, t) = orbits::m1_seed(Sign::Minus).map_err(err)?;
    let x: Vec<f64> = x.iter().map(|v| 1.05 * v).collect();
    let shot = detect_shooting(&q, Seed::State { x, period: 1.03 * t }, 1e-9).map_err(err)?;
    let dt_minus = t0.elapsed();
    let t2_exact = 2.0 * r.g2.ln().abs();
    let e2 = (shot.period / t2_exact - 1.0).abs();

    let limit = Duration::from_secs(10);
    check(
        orbit.converged && shot.converged && et < 0.01 && ea < 0.01 && e2 < 0.01 && dt_plus < limit && dt_minus < limit,
        format!(
            "plus: T = {:.6} vs {t_exact:.6}, amplitude {:.6e} vs {a_exact:.6e}, {dt_plus:.2?}; minus: T = {:.6} vs {t2_exact:.6}, {dt_minus:.2?}",
            orbit.period, orbit.amplitude, shot.period
        ),
    )
}

fn criterion_6() -> Outcome {
    let t0 = Instant::now();
    let plus = locate_bifurcation(0.0, Sign::Plus, [1.0, 1.6], 1e-4).map_err(err)?;
    let minus = locate_bifurcation(0.0, Sign::Minus, [1.0, 2.2], 1e-4).map_err(err)?;
    let dt = t0.elapsed();
    let ep = (plus.m_h - 1.337968147).abs();
    let em = (minus.m_h - 1.909).abs();
    check(
        ep <= 0.01 && em <= 0.02,
        format!(
            "plus m_h = {:.6} {:?} (err {ep:.1e}); minus m_h = {:.6} {:?} (err {em:.1e}); {dt:.2?}",
            plus.m_h, plus.bracket, minus.m_h, minus.bracket
        ),
    )
}

fn criterion_7() -> Outcome {
    // a1 of the third-order operator, 3μ² - 6μ + 2, vanishes at the upper
    // end of the oscillatory range; n = 3/μ there
    let a1 = Polynomial::new(vec![2.0, -6.0, 3.0]);
    let sample = coeffs_p3(1.7).a[1];
    if (a1.eval(1.7) - sample).abs() > 1e-12 {
        return Err(format!("third-order a1 mismatch {sample}"));
    }
    let roots = isolate_real_roots(&a1, 0.0, 4.0, 1e-15).map_err(err)?.values();
    let mu_top = roots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_from_root = 3.0 / mu_top;
    let n_plus = orbits::tfe4_upper_bound();
    let closed = 9.0 / (3.0 + 3f64.sqrt());
    let e_plus = (n_plus - closed).abs().max((n_from_root - closed).abs());

    let t0 = Instant::now();
    let h = tfe4_bifurcation([1.0, 1.85], 1e-3).map_err(err)?;
    let dt = t0.elapsed();
    let eh = (h.m_h - 1.7599).abs();
    check(
        e_plus <= 1e-6 && eh <= 0.01,
        format!(
            "n_+ = {n_plus:.7} (err {e_plus:.1e}); n_h = {:.6} {:?} (err {eh:.1e}); {dt:.2?}",
            h.m_h, h.bracket
        ),
    )
}

const GRID: [(f64, f64, Sign); 8] = [
    (1.0, 0.0, Sign::Plus),
    (1.0, 1.0, Sign::Plus),
    (1.2, 0.0, Sign::Plus),
    (1.3, 0.0, Sign::Plus),
    (0.8, 0.0, Sign::Plus),
    (1.0, 0.0, Sign::Minus),
    (1.5, 0.0, Sign::Minus),
    (1.8, 0.0, Sign::Minus),
];

fn criterion_8() -> Outcome {
    let opts = ContinuationOptions::default();
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    let mut failed = Vec::new();
    for (m, n, lambda) in GRID {
        let p = derive(m, n, lambda).map_err(err)?;
        match find_orbit(&p, &opts) {
            Ok(orbit) if orbit.converged => {
                let r = identity_residuals(&orbit, &p).map_err(err)?;
                worst = worst.max(r.r1).max(r.r2);
                notes.push(format!("({m},{n},{lambda}) {:.0e}/{:.0e}", r.r1, r.r2));
            }
            Ok(_) => failed.push(format!("({m},{n},{lambda}) unpolished")),
            Err(e) => failed.push(format!("({m},{n},{lambda}) {e}")),
        }
    }
    check(
        worst < 1e-6 && failed.is_empty(),
        format!("worst residual {worst:.1e}; {}; {}", notes.join(" "), failed.join(" ")),
    )
}

fn criterion_9() -> Outcome {
    let p = derive(1.0, 0.0, Sign::Plus).map_err(err)?;
    let sys = PhiSystem::from_params(&p, 0.0).map_err(err)?;
    let flow = PhiFlow::new(
        &sys,
        FlowOptions {
            record: true,
            ..Default::default()
        },
    )
    .map_err(err)?;
    let bound = 1.0 / 120.0 + 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x0: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let run = flow.run(&x0, 0.0, 300.0).map_err(err)?;
        let sup = run
            .samples
            .iter()
            .filter(|s| s.s >= 150.0)
            .map(|s| s.x[0].abs())
            .chain(run.events.iter().filter(|e| e.s >= 150.0).map(|e| e.state[0].abs()))
            .fold(0.0, f64::max);
        worst = worst.max(sup);
    }
    let ab = identities::absorbing_bound(0.0).map_err(err)?;
    check(
        worst <= bound && (ab.value - 1.0 / 120.0).abs() < 1e-15,
        format!("largest post-transient sup|phi| {worst:.6e} vs bound {bound:.6e}"),
    )
}

fn criterion_10() -> Outcome {
    let p = derive(0.5, 0.0, Sign::Minus).map_err(err)?;
    let sol = params::fixed_point_positive(&p, 1.0, 1e-12).map_err(err)?;
    let e = sol.max_rel_error_vs_explicit(&p).map_err(err)?;
    // explicit inverse y = (f/φ₀)^{1/μ} with φ₀^{α-1} = μ(μ-1)…(μ-4), recomputed here
    let mu = 10.0;
    let prod: f64 = (0..5).map(|k| mu - k as f64).product();
    let phi = prod.powf(1.0 / (0.5 - 1.0));
    let mut e_oracle: f64 = 0.0;
    for (&f, &y) in sol.f.iter().zip(&sol.y) {
        e_oracle = e_oracle.max((y / (f / phi).powf(1.0 / mu) - 1.0).abs());
    }
    let q = derive(1.0, 0.0, Sign::Minus).map_err(err)?;
    let phi0_m1 = phi0(&q).map_err(err)?;
    check(
        e <= 1e-6 && e_oracle <= 1e-6 && phi0_m1 == 1.0 / 120.0,
        format!("sup relative error {e:.1e} (oracle {e_oracle:.1e}); phi0(1,0,-1) = {phi0_m1:e}"),
    )
}

fn eigenvalue_check() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mu: f64 = rng.gen_range(0.0..6.0);
        let a = coeffs_p5(mu).a;
        let mut c = DMatrix::<f64>::zeros(5, 5);
        for i in 0..4 {
            c[(i, i + 1)] = 1.0;
        }
        for j in 0..5 {
            c[(4, j)] = -a[j];
        }
        let mut ev: Vec<f64> = c.complex_eigenvalues().iter().map(|z| z.re).collect();
        let imag = c.complex_eigenvalues().iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        ev.sort_by(f64::total_cmp);
        let d = (0..5).map(|k| (ev[k] - (k as f64 - mu)).abs()).fold(imag, f64::max);
        worst = worst.max(d);
    }
    Ok(worst)
}

/// `|F|^m |F⁽⁵⁾|^n F⁽⁵⁾ + β F y` at `y` for `F(y) = s^γ base(y/s)`.
fn profile_operator(base: &Polynomial, m: f64, n: f64, beta: f64, gamma: f64, s: f64, y: f64) -> f64 {
    let f = s.powf(gamma) * base.eval(y / s);
    let f5 = s.powf(gamma - 5.0) * base.nth_derivative(5).eval(y / s);
    f.abs().powf(m) * f5.abs().powf(n) * f5 + beta * f * y
}

fn scaling_check() -> Result<(f64, f64, f64), String> {
    let base = Polynomial::new(vec![1.0, 0.3, 0.2, -0.1, 0.05, 0.02, 0.01]);
    let mut worst_group: f64 = 0.0;
    let mut worst_n0: f64 = 0.0;
    for (m, n) in [(0.5, 0.0), (1.0, 0.0), (1.4, 0.0), (1.0, 0.5), (0.7, 1.0)] {
        let p = derive(m, n, Sign::Minus).map_err(err)?;
        for a in [0.5, 2.0, 3.7] {
            for y in [0.1, 0.4, 0.9] {
                let lhs = profile_operator(&base, m, n, p.beta_mass, p.gamma_group, a, a * y);
                let rhs = a.powf(p.gamma_group + 1.0) * profile_operator(&base, m, n, p.beta_mass, 0.0, 1.0, y);
                worst_group = worst_group.max((lhs / rhs - 1.0).abs());
                if n == 0.0 {
                    let lhs = profile_operator(&base, m, n, p.beta, p.gamma_scale, a, a * y);
                    let rhs = a.powf(p.gamma_scale + 1.0) * profile_operator(&base, m, n, p.beta, 0.0, 1.0, y);
                    worst_n0 = worst_n0.max((lhs / rhs - 1.0).abs());
                }
            }
        }
    }

    // the interface equation f⁽⁵⁾ = σ|f|^{α-1}f is invariant under
    // f ↦ a^μ f(y/a); compare a scaled trajectory with the trajectory from
    // scaled data
    let (alpha, mu) = (0.5, 10.0);
    let data = [0.2, 0.5, -0.3, 0.1, 0.4];
    let a: f64 = 1.7;
    let scaled: [f64; 5] = std::array::from_fn(|j| a.powf(mu - j as f64) * data[j]);
    let opts = IntegrateOptions {
        tol: Tolerance::new(1e-13, 1e-12).map_err(err)?,
        event_components: vec![],
        ..Default::default()
    };
    let run = |d: &[f64; 5], span: f64| {
        let (x0, a4) = PhysicalSystem::initial_state(d);
        let sys = PhysicalSystem::new(a4, alpha, Sign::Minus, 0.0)?;
        integrate(&sys, 0.0, span, &x0, &opts)
    };
    let t1 = run(&data, 1.0).map_err(err)?;
    let t2 = run(&scaled, a).map_err(err)?;
    let mut worst_ivp: f64 = 0.0;
    for i in 1..=20 {
        let y = i as f64 / 20.0;
        let f1 = t1.interpolate(y).ok_or("outside range")?[0];
        let f2 = t2.interpolate(a * y).ok_or("outside range")?[0];
        worst_ivp = worst_ivp.max((f2 - a.powf(mu) * f1).abs() / (a.powf(mu) * f1.abs()).max(1e-300));
    }
    Ok((worst_group, worst_n0, worst_ivp))
}

fn comparison_ordering() -> Result<bool, String> {
    let tol = Tolerance::new(1e-12, 1e-10).map_err(err)?;
    let cases: [([f64; 5], [f64; 5], f64, Sign); 3] = [
        ([0.0, 0.0, 0.0, 0.0, 1e-3], [0.0; 5], 0.5, Sign::Minus),
        ([0.2, 0.1, 0.0, 0.0, 0.0], [0.1, 0.1, -0.1, 0.0, 0.0], 0.3, Sign::Minus),
        ([1.0, 0.2, 0.0, 0.1, 0.0], [0.8, 0.1, 0.0, 0.1, -0.2], -0.5, Sign::Plus),
    ];
    for (d1, d2, alpha, lambda) in cases {
        if !comparison_check(&d1, &d2, alpha, lambda, 0.5, tol).map_err(err)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest `|f'| / max|f|` at the sign changes of the exact profile and at
/// the zero events of orbits on the grid.
fn transversal_zeros() -> Result<f64, String> {
    let mut worst = f64::INFINITY;
    for lambda in [Sign::Plus, Sign::Minus] {
        let pr = profile(lambda)?;
        for w in pr.pieces.windows(2) {
            let d = w[1].derivatives_at(0.0);
            let scale = w[1].poly.max_abs_coeff();
            if d[0].abs() > 1e-12 * scale {
                return Err(format!("junction {} is not a zero: {}", w[1].index, d[0]));
            }
            let slope = d[1].abs() * w[1].len / scale;
            worst = worst.min(slope);
        }
    }
    let opts = ContinuationOptions::default();
    for (m, n, lambda) in [(1.0, 0.0, Sign::Plus), (1.2, 0.0, Sign::Plus), (1.0, 0.0, Sign::Minus)] {
        let p = derive(m, n, lambda).map_err(err)?;
        let orbit = find_orbit(&p, &opts).map_err(err)?;
        let sys = PhiSystem::from_params(&p, 0.0).map_err(err)?;
        let run = PhiFlow::new(&sys, FlowOptions::default())
            .map_err(err)?
            .run(&orbit.section_state, 0.0, orbit.period)
            .map_err(err)?;
        let zeros: Vec<_> = run.events.iter().filter(|e| e.kind == FlowEventKind::Zero).collect();
        if zeros.len() < 2 {
            return Err(format!("orbit at m = {m} has {} zeros per period", zeros.len()));
        }
        for z in zeros {
            worst = worst.min(z.state[1].abs() / orbit.amplitude);
        }
    }
    Ok(worst)
}

/// Shooting must refuse parameters inside a nonexistence interval, and
/// every accepted orbit must lie outside both.
fn consistency_lock() -> Result<String, String> {
    let (minus, plus) = identities::nonexistence_intervals().map_err(err)?;
    let mut refused = 0;
    // μ = 5/m at n = 0
    for (mu, lambda) in [(2.52, Sign::Minus), (2.6, Sign::Plus), (3.0, Sign::Plus)] {
        let report = if lambda == Sign::Minus { &minus } else { &plus };
        if !report.contains_mu(mu) {
            return Err(format!("mu = {mu} not inside its {lambda} interval"));
        }
        let p = derive(5.0 / mu, 0.0, lambda).map_err(err)?;
        let sys = PhiSystem::from_params(&p, 0.0).map_err(err)?;
        let seed = orbits::generic_start(&sys);
        if detect_shooting(&p, Seed::State { x: seed, period: 3.0 }, 1e-9).is_err() {
            refused += 1;
        }
    }
    let opts = ContinuationOptions::default();
    for (m, n, lambda) in GRID {
        let p = derive(m, n, lambda).map_err(err)?;
        let orbit = find_orbit(&p, &opts).map_err(err)?;
        if identities::orbit_forbidden(orbit.mu, orbit.sigma) {
            return Err(format!("orbit accepted at forbidden mu = {}", orbit.mu));
        }
    }
    if refused != 3 {
        return Err(format!("only {refused}/3 forbidden shots refused"));
    }
    Ok("3/3 forbidden shots refused, grid orbits admissible".to_string())
}

fn criterion_11() -> Outcome {
    let eig = eigenvalue_check()?;
    let (group, n0, ivp) = scaling_check()?;
    let ordered = comparison_ordering()?;
    let slope = transversal_zeros()?;
    let lock = consistency_lock()?;
    check(
        eig <= 1e-8 && group <= 1e-12 && n0 <= 1e-12 && ivp <= 1e-8 && ordered && slope > 1e-3,
        format!(
            "eigenvalues {eig:.1e}; scaling {group:.1e} (n=0 {n0:.1e}, interface {ivp:.1e}); comparison {ordered}; min zero slope {slope:.2e}; {lock}"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "matching ratios", criterion_1),
        (2, "exact profile quality", criterion_2),
        (3, "coefficient roots", criterion_3),
        (4, "operator identity", criterion_4),
        (5, "orbit vs exact construction", criterion_5),
        (6, "bifurcation values", criterion_6),
        (7, "fourth-order analogue", criterion_7),
        (8, "integral identities", criterion_8),
        (9, "absorbing bound", criterion_9),
        (10, "positive solution", criterion_10),
        (11, "property suites", criterion_11),
    ];
    let mut failures = 0;
    for (k, name, f) in criteria {
        let t0 = Instant::now();
        let outcome = f();
        let dt = t0.elapsed();
        match outcome {
            Ok(detail) => println!("PASS criterion {k} ({name}): {detail} [{dt:.2?}]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {k} ({name}): {detail} [{dt:.2?}]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
