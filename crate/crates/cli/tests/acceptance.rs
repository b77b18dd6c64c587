//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria listed in `KNOWN_FAILURES` are modelled faithfully but do not
//! meet their targets; they still print FAIL. Any other failure makes the
//! process exit non-zero.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use lwr_core::bloch_bands::{find_gap, solve_bands, BlochProblem, KPoint, UnitCell};
use lwr_core::constants::TWO_PI;
use lwr_core::elastic_modes::{
    electron_phonon_rate, fundamental_compression_mode, plate_wave_speeds, Loss, Material, MechMode, PlateGeometry,
};
use lwr_core::fitting::{fit_lorentzians, q_factor, synth_noise, NoiseModel};
use lwr_core::gradient_drive::{
    steady_state_amplitude, sweep_beam_offset, sweep_beam_radius, DriveConfig, GaussianBeam, OpticalCorrection,
};
use lwr_core::qed_designer::{cooperativity, QedScenario};
use lwr_core::siv_spectroscopy::{
    amplitude_from_ratio, amplitude_from_ratio_exact, beta_from_occupation, fit_sidebands, mech_response_sweep,
    normalized_areas, obe_ple_spectrum, ple_spectrum, sideband_weights, Emitter, PhononState,
};
use lwr_core::spectrum::{linspace, AxisKind, Spectrum};

const KNOWN_FAILURES: &[usize] = &[5, 6];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn paper_mode() -> MechMode {
    fundamental_compression_mode(&PlateGeometry::paper_resonator(), &Material::diamond(), Loss::Gamma(TWO_PI * 83.0))
        .expect("paper mode")
}

fn paper_drive() -> DriveConfig {
    let mode = paper_mode();
    DriveConfig {
        beam: GaussianBeam::paper_drive(mode.omega_m),
        geometry: PlateGeometry::paper_resonator(),
        material: Material::diamond(),
        mode,
        correction: OpticalCorrection { kappa: 1.0 },
    }
}

fn mode_frequency() -> Outcome {
    let f = paper_mode().f_m / 1e9;
    outcome((0.957..=0.997).contains(&f), format!("f_m = {f:.5} GHz, target [0.957, 0.997] GHz"))
}

fn q_extraction() -> Outcome {
    let cfg = paper_drive();
    let mode = cfg.mode;
    let grid: Vec<f64> = linspace(-6.0, 6.0, 241).iter().map(|u| mode.omega_m + u * mode.gamma_m).collect();
    let clean = mech_response_sweep(&Emitter::paper_emitter(), &cfg, -mode.omega_m, &grid).expect("sweep");
    let noisy = synth_noise(&clean, NoiseModel::Gaussian { sigma: 0.02 * clean.max_signal() }, 2024).expect("noise");
    let fit = fit_lorentzians(&noisy, 1, None).expect("fit");
    let fwhm_hz = fit.peaks[0].fwhm / TWO_PI;
    let q = q_factor(mode.f_m, fwhm_hz).expect("Q");
    let e_w = (fwhm_hz / 83.0 - 1.0).abs();
    let e_q = (q / 1.177e7 - 1.0).abs();
    outcome(
        e_w < 0.01 && e_q < 0.01,
        format!("FWHM = {fwhm_hz:.3} Hz (err {:.3}%), Q = {q:.4e} (err {:.3}%)", 100.0 * e_w, 100.0 * e_q),
    )
}

fn cooperativity_scenarios() -> Outcome {
    let c: Vec<f64> =
        QedScenario::defaults().iter().map(|s| cooperativity(s).expect("scenario").cooperativity).collect();
    outcome(
        c[0] > 10.0 && c[1] > 250.0 && c[2] > 1e6,
        format!("C_A = {:.2} (> 10), C_B = {:.1} (> 250), C_C = {:.3e} (> 1e6)", c[0], c[1], c[2]),
    )
}

fn sideband_ratio() -> Outcome {
    let mode = paper_mode();
    let material = Material::diamond();
    let v = 1.9e4;
    let d = material.deformation_potential;
    let a_in = amplitude_from_ratio(1.0 / 3.0, v, d).expect("inversion");
    let phonon = PhononState::from_amplitude(a_in, &mode, &material, 0.0).expect("phonon");
    let e = Emitter::paper_emitter();
    let grid = linspace(-3.5 * mode.omega_m, 3.5 * mode.omega_m, 1401);
    let s = ple_spectrum(&e, &phonon, &mode, &grid).expect("ple");
    let fit = fit_sidebands(&s, mode.omega_m, 2, e.linewidth()).expect("fit");
    let areas: Vec<f64> = fit.peaks.iter().map(|p| p.area()).collect();
    let ratio = (0.5 * (areas[1] + areas[3]) / areas[2]).sqrt();
    let a_out = amplitude_from_ratio_exact(ratio, v, d).expect("exact inversion");
    let a_lin = amplitude_from_ratio(ratio, v, d).expect("linear inversion");
    let err = (a_out / a_in - 1.0).abs();
    outcome(
        err < 0.05,
        format!(
            "A_in = {:.4} pm, beta = {:.4}, Omega1/Omega0 = {ratio:.4}, A_out = {:.4} pm (err {:.2}%; linear inversion {:.4} pm)",
            a_in * 1e12,
            phonon.beta,
            a_out * 1e12,
            100.0 * err,
            a_lin * 1e12
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mode = paper_mode();
    let e = Emitter::paper_emitter().with_saturation(0.2);
    let span = 2.5 * mode.omega_m;
    let grid = linspace(-span, span, 1001);
    let mut pass = true;
    let mut parts = Vec::new();
    for beta in [0.3, 0.7, 1.0] {
        let ph = PhononState::from_beta(beta, &mode, &Material::diamond(), 0.0).expect("phonon");
        let model = ple_spectrum(&e, &ph, &mode, &grid).expect("model");
        let oracle = obe_ple_spectrum(&e, &ph, &mode, &grid).expect("oracle");
        let fm = fit_sidebands(&model, mode.omega_m, 2, e.linewidth()).expect("model fit");
        let fo = fit_sidebands(&oracle, mode.omega_m, 2, e.linewidth()).expect("oracle fit");
        let shift = fm.peaks.iter().zip(&fo.peaks).map(|(a, b)| (a.center - b.center).abs()).fold(0.0, f64::max);
        let (am, ao) = (normalized_areas(&fm), normalized_areas(&fo));
        // peaks carrying at least 0.1% of the weight
        let worst = am
            .iter()
            .zip(&ao)
            .filter(|(m, _)| **m >= 1e-3)
            .map(|(m, o)| (o / m - 1.0).abs())
            .fold(0.0, f64::max);
        let ok = shift < 1e-3 * e.linewidth() && worst <= 0.05;
        pass &= ok;
        parts.push(format!(
            "beta {beta}: max centre shift {:.1e} gamma', worst weight err {:.2}%",
            shift / e.linewidth(),
            100.0 * worst
        ));
    }
    outcome(pass, parts.join("; "))
}

fn drive_amplitude() -> Outcome {
    let cfg = paper_drive();
    let a = cfg.resonant_drive().expect("drive").amplitude;
    let in_range = (1e-12..=10e-12).contains(&a);

    let radii: Vec<f64> = linspace(1e-7f64.ln(), 2e-4f64.ln(), 41).into_iter().map(f64::exp).collect();
    let r = sweep_beam_radius(&cfg, &radii).expect("radius sweep");
    let rmax = r.max_signal();
    let imax = r.signal.iter().position(|&s| s == rmax).unwrap_or(0);
    let interior = imax > 0 && imax + 1 < r.len();
    let vanish_small = r.signal[0] < 0.05 * rmax;
    let vanish_large = r.signal[r.len() - 1] < 0.05 * rmax;

    let offsets = linspace(-9.5e-6, 9.5e-6, 61);
    let o = sweep_beam_offset(&cfg, &offsets).expect("offset sweep");
    let n = o.len();
    let omax = o.max_signal();
    let even = (0..n).all(|i| (o.signal[i] - o.signal[n - 1 - i]).abs() <= 1e-6 * omax);
    let peak = o.signal.iter().position(|&s| s == omax).unwrap_or(0).max(n / 2);
    let monotone = o.signal[peak..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));

    outcome(
        in_range && interior && vanish_small && vanish_large && even && monotone,
        format!(
            "A_m = {:.2} pm (target [1, 10]); radius sweep: interior max {interior} (peak at {:.2} um), vanishes small-w {vanish_small} (A/Amax = {:.2}), large-w {vanish_large}; offset sweep: even {even}, decreasing beyond max {monotone}",
            a * 1e12,
            r.abscissa[imax] * 1e6,
            r.signal[0] / rmax
        ),
    )
}

fn band_gap() -> (Outcome, Duration) {
    let f_m = paper_mode().f_m;
    let start = Instant::now();
    let paper = solve_bands(&BlochProblem::new(UnitCell::paper_cell(), 32, 12)).expect("paper bands");
    let paper_time = start.elapsed();
    let gap = find_gap(&paper, (0.1e9, 3e9));
    let contains = gap.is_some_and(|g| g.contains(f_m));

    let material = Material::diamond();
    let flat = UnitCell::unpatterned(8e-6, 1.5e-6, material);
    let flat_bands = solve_bands(&BlochProblem::new(flat, 16, 12)).expect("unpatterned bands");
    let no_gap = find_gap(&flat_bands, (0.1e9, 3e9)).is_none();

    let k = 0.05 * PI / flat.period;
    let mut small_k = BlochProblem::new(flat, 16, 4);
    small_k.k_path = vec![KPoint { segment: 0, fraction: 0.05, kx: k, ky: 0.0 }];
    let low = solve_bands(&small_k).expect("small-k bands");
    let speeds = plate_wave_speeds(&material).expect("speeds");
    let ct = TWO_PI * low.frequencies[0][0] / k;
    let cl = TWO_PI * low.frequencies[0][1] / k;
    let e_t = (ct / speeds.transverse - 1.0).abs();
    let e_l = (cl / speeds.longitudinal - 1.0).abs();

    let pass = contains && no_gap && e_t < 0.01 && e_l < 0.01 && paper_time < Duration::from_secs(300);
    let gap_text = gap.map_or("none".to_string(), |g| format!("[{:.3}, {:.3}] GHz", g.low / 1e9, g.high / 1e9));
    (
        outcome(
            pass,
            format!(
                "paper cell res 32: gap {gap_text} contains f_m {contains} ({:.1} s); unpatterned gap-free {no_gap}; c_T err {:.3}%, c_L err {:.3}%",
                paper_time.as_secs_f64(),
                100.0 * e_t,
                100.0 * e_l
            ),
        ),
        paper_time,
    )
}

fn property_suites() -> Outcome {
    let mut checks = Vec::new();

    let betas = linspace(0.0, 5.0, 501);
    let worst_sum = betas.iter().map(|&b| sideband_weights(b).iter().sum::<f64>()).fold(f64::INFINITY, f64::min);
    checks.push(("Bessel weights", worst_sum >= 0.999, format!("min sum {worst_sum:.6}")));

    let mode = paper_mode();
    let material = Material::diamond();
    let g = electron_phonon_rate(&material, &mode);
    let worst_beta = [1e-14, 3e-13, 2e-12, 4.1e-11, 1e-10]
        .iter()
        .map(|&a| {
            let ph = PhononState::from_amplitude(a, &mode, &material, 0.0).expect("phonon");
            (beta_from_occupation(g, ph.n, mode.omega_m) / ph.beta - 1.0).abs()
        })
        .fold(0.0, f64::max);
    checks.push(("beta identity", worst_beta <= 1e-10, format!("max rel {worst_beta:.1e}")));

    let x = linspace(-5.0, 5.0, 401);
    let y: Vec<f64> = x.iter().map(|&u| 0.1 + 2.0 / (1.0 + (2.0 * (u - 0.3) / 0.8f64).powi(2)) + (1.7 * u).sin().abs() * 0.05).collect();
    let s = Spectrum::new(AxisKind::MechDetuning, x.clone(), y).expect("spectrum");
    let first = fit_lorentzians(&s, 1, None).expect("fit");
    let model = Spectrum::new(AxisKind::MechDetuning, x.clone(), x.iter().map(|&u| first.evaluate(u)).collect()).expect("model");
    let second = fit_lorentzians(&model, 1, Some(&first.peaks)).expect("refit");
    let (p, q) = (first.peaks[0], second.peaks[0]);
    let idem = [(p.center, q.center), (p.fwhm, q.fwhm), (p.height, q.height), (first.baseline, second.baseline)]
        .iter()
        .map(|(a, b)| ((a - b) / a.abs().max(1e-300)).abs())
        .fold(0.0, f64::max);
    checks.push(("fit idempotence", idem <= 1e-8, format!("max rel {idem:.1e}")));

    // half-maximum points of |u|^2 found by bisection
    let u2 = |w: f64| steady_state_amplitude(1e-12, &mode, w).expect("response").u_omega.norm_sqr();
    let peak = u2(mode.omega_m);
    let half = |dir: f64| {
        let (mut a, mut b) = (0.0, 10.0 * mode.gamma_m);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if u2(mode.omega_m + dir * m) > 0.5 * peak {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    let width = half(1.0) + half(-1.0);
    let fwhm_err = (width / mode.gamma_m - 1.0).abs();
    checks.push(("|u|^2 FWHM", fwhm_err <= 1e-6, format!("rel {fwhm_err:.1e}")));

    let base = Spectrum::new(AxisKind::Phase, linspace(0.0, 6.0, 64), vec![1.0; 64]).expect("flat");
    let n1 = synth_noise(&base, NoiseModel::Gaussian { sigma: 0.1 }, 99).expect("noise");
    let n2 = synth_noise(&base, NoiseModel::Gaussian { sigma: 0.1 }, 99).expect("noise");
    let lib_same = n1.signal.iter().zip(&n2.signal).all(|(a, b)| a.to_bits() == b.to_bits());
    let cli_same = cli_outputs_identical();
    checks.push(("seeded determinism", lib_same && cli_same, format!("library {lib_same}, CLI CSV {cli_same}")));

    outcome(
        checks.iter().all(|c| c.1),
        checks.iter().map(|(n, ok, d)| format!("{n} {} ({d})", if *ok { "ok" } else { "FAILED" })).collect::<Vec<_>>().join("; "),
    )
}

fn cli_outputs_identical() -> bool {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = tmp.path().join("noise.cfg");
    std::fs::write(&cfg, "[noise]\nmodel = \"gaussian\"\n").expect("write config");
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_lwr"))
            .args(["ple", "--seed", "11", "--config"])
            .arg(&cfg)
            .arg("--output-dir")
            .arg(&dir)
            .output()
            .expect("run lwr")
            .status;
        status.success().then(|| std::fs::read(dir.join("ple.csv")).expect("read csv"))
    };
    match (run("a"), run("b")) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

fn main() -> ExitCode {
    type Check = (usize, &'static str, f64, fn() -> Outcome);
    let checks: [Check; 7] = [
        (1, "mode frequency", 1.0, mode_frequency),
        (2, "Q extraction closed loop", 5.0, q_extraction),
        (3, "cooperativity scenarios", 1.0, cooperativity_scenarios),
        (4, "sideband ratio consistency", 10.0, sideband_ratio),
        (5, "oracle equivalence", 60.0, oracle_equivalence),
        (6, "drive amplitude and beam sweeps", 30.0, drive_amplitude),
        (8, "property suites", 30.0, property_suites),
    ];
    let mut results = Vec::new();
    for (id, name, budget, f) in checks {
        let start = Instant::now();
        let o = f();
        let t = start.elapsed().as_secs_f64();
        results.push((id, name, o.pass && t < budget, format!("{} [{t:.2} s, budget {budget} s]", o.detail)));
        let r = results.last().unwrap();
        println!("{} {id} {name}: {}", if r.2 { "PASS" } else { "FAIL" }, r.3);
    }
    let (o, t) = band_gap();
    let line = format!("{} [{:.1} s for the resolution-32 solve, budget 300 s]", o.detail, t.as_secs_f64());
    println!("{} 7 band gap: {line}", if o.pass { "PASS" } else { "FAIL" });
    results.push((7, "band gap", o.pass, line));

    results.sort_by_key(|r| r.0);
    let passed = results.iter().filter(|r| r.2).count();
    println!("{passed}/{} criteria pass", results.len());
    let unexpected: Vec<usize> = results.iter().filter(|r| !r.2 && !KNOWN_FAILURES.contains(&r.0)).map(|r| r.0).collect();
    for r in results.iter().filter(|r| r.2 && KNOWN_FAILURES.contains(&r.0)) {
        println!("note: criterion {} is listed as a known failure but passed", r.0);
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
