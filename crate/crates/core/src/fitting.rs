//! Least-squares fitting of Lorentzian peaks and 2π-periodic sinusoids, plus a
//! seeded noise generator for closed-loop tests.
//!
//! All fits use uniform weighting.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ensure, Error, Result};
use crate::spectrum::Spectrum;

pub const MAX_ITERATIONS: usize = 200;
pub const RELATIVE_COST_TOLERANCE: f64 = 1e-10;
/// Centres closer than this fraction of the narrower FWHM are flagged.
pub const COLLISION_FRACTION: f64 = 1e-3;

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_UP: f64 = 10.0;
const LAMBDA_DOWN: f64 = 0.3;
const LAMBDA_MAX: f64 = 1e12;

/// Unit conventions follow the spectrum abscissa and signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: f64,
    pub fwhm: f64,
    pub height: f64,
}

impl Peak {
    pub fn value(&self, x: f64) -> f64 {
        lorentzian(x, self.center, self.fwhm, self.height)
    }

    /// Integrated area `pi/2 * height * fwhm`.
    pub fn area(&self) -> f64 {
        0.5 * PI * self.height * self.fwhm
    }
}

pub fn lorentzian(x: f64, center: f64, fwhm: f64, height: f64) -> f64 {
    let u = 2.0 * (x - center) / fwhm;
    height / (1.0 + u * u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    /// Sorted by centre.
    pub peaks: Vec<Peak>,
    pub baseline: f64,
    /// Parameter order: baseline, then (center, fwhm, height) per peak.
    pub covariance: Vec<Vec<f64>>,
    /// `|residual| / |signal|`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Index pairs of peaks whose centres coincide to within the collision fraction.
    pub collisions: Vec<(usize, usize)>,
    pub weighting: String,
}

impl LorentzianFit {
    pub fn evaluate(&self, x: f64) -> f64 {
        self.baseline + self.peaks.iter().map(|p| p.value(x)).sum::<f64>()
    }

    /// One-sigma uncertainty of each parameter, in covariance order.
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.covariance.len()).map(|i| self.covariance[i][i].max(0.0).sqrt()).collect()
    }
}

fn model(p: &[f64], x: f64) -> f64 {
    let mut v = p[0];
    for q in p[1..].chunks_exact(3) {
        v += lorentzian(x, q[0], q[1], q[2]);
    }
    v
}

fn jacobian_row(p: &[f64], x: f64, row: &mut [f64]) {
    row[0] = 1.0;
    for (q, r) in p[1..].chunks_exact(3).zip(row[1..].chunks_exact_mut(3)) {
        let (c, w, h) = (q[0], q[1], q[2]);
        let u = 2.0 * (x - c) / w;
        let d = 1.0 / (1.0 + u * u);
        let d2 = d * d;
        r[0] = h * d2 * 4.0 * u / w;
        r[1] = h * d2 * 2.0 * u * u / w;
        r[2] = d;
    }
}

fn cost(p: &[f64], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (model(p, xi) - yi).powi(2)).sum()
}

fn admissible(p: &[f64]) -> bool {
    p.iter().all(|v| v.is_finite()) && p[1..].chunks_exact(3).all(|q| q[1] > 0.0 && q[2] >= 0.0)
}

/// Seed peaks at the largest well-separated local maxima, widths from
/// half-height crossings. Returns (baseline, peaks).
fn seed_peaks(x: &[f64], y: &[f64], n_peaks: usize) -> (f64, Vec<Peak>) {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let baseline = sorted[sorted.len() / 20];
    let n = y.len();
    let mut maxima: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || y[i] >= y[i - 1]) && (i + 1 == n || y[i] >= y[i + 1]))
        .collect();
    maxima.sort_by(|&a, &b| y[b].total_cmp(&y[a]));

    let span = x[n - 1] - x[0];
    let mut peaks: Vec<(Peak, f64, f64)> = Vec::new();
    for i in maxima {
        if peaks.len() == n_peaks {
            break;
        }
        if peaks.iter().any(|(_, lo, hi)| x[i] >= *lo && x[i] <= *hi) {
            continue;
        }
        let half = baseline + 0.5 * (y[i] - baseline);
        let mut l = i;
        while l > 0 && y[l] > half {
            l -= 1;
        }
        let mut r = i;
        while r + 1 < n && y[r] > half {
            r += 1;
        }
        let fwhm = (x[r] - x[l]).max(span / n as f64);
        peaks.push((
            Peak { center: x[i], fwhm, height: (y[i] - baseline).max(0.0) },
            x[l],
            x[r],
        ));
    }
    // not enough distinct maxima: split the widest seed region evenly
    while peaks.len() < n_peaks {
        let k = peaks.len();
        let c = x[0] + span * (k as f64 + 0.5) / n_peaks as f64;
        peaks.push((Peak { center: c, fwhm: span / (4.0 * n_peaks as f64), height: 0.0 }, c, c));
    }
    (baseline, peaks.into_iter().map(|p| p.0).collect())
}

/// Fit `n_peaks` Lorentzians plus a constant baseline.
///
/// Non-convergence is not an error: the best iterate is returned with
/// `converged = false`.
pub fn fit_lorentzians(spectrum: &Spectrum, n_peaks: usize, init: Option<&[Peak]>) -> Result<LorentzianFit> {
    ensure(n_peaks >= 1, "n_peaks", || "must be at least 1".into())?;
    let n_params = 3 * n_peaks + 1;
    ensure(spectrum.len() >= 3 * n_params, "spectrum", || {
        format!("{} samples is too few for {} peaks (need {})", spectrum.len(), n_peaks, 3 * n_params)
    })?;
    if let Some(init) = init {
        ensure(init.len() == n_peaks, "init", || format!("expected {n_peaks} peaks, got {}", init.len()))?;
    }

    // work in normalised coordinates
    let x0 = 0.5 * (spectrum.abscissa[0] + spectrum.abscissa[spectrum.len() - 1]);
    let xs = 0.5 * (spectrum.abscissa[spectrum.len() - 1] - spectrum.abscissa[0]);
    let ys = spectrum.max_signal().max(f64::MIN_POSITIVE);
    let x: Vec<f64> = spectrum.abscissa.iter().map(|v| (v - x0) / xs).collect();
    let y: Vec<f64> = spectrum.signal.iter().map(|v| v / ys).collect();

    let (baseline, seeds) = match init {
        Some(p) => {
            let mut s = spectrum.signal.clone();
            s.sort_by(f64::total_cmp);
            (s[s.len() / 20], p.to_vec())
        }
        None => seed_peaks(&spectrum.abscissa, &spectrum.signal, n_peaks),
    };
    let mut p = vec![baseline / ys];
    for s in &seeds {
        p.extend([(s.center - x0) / xs, s.fwhm / xs, s.height / ys]);
    }
    ensure(admissible(&p), "init", || "initial peaks need positive FWHM and non-negative height".into())?;

    let m = x.len();
    let mut jac = DMatrix::<f64>::zeros(m, n_params);
    let mut res = DVector::<f64>::zeros(m);
    let fill = |p: &[f64], jac: &mut DMatrix<f64>, res: &mut DVector<f64>| {
        let mut row = vec![0.0; n_params];
        for i in 0..m {
            jacobian_row(p, x[i], &mut row);
            for j in 0..n_params {
                jac[(i, j)] = row[j];
            }
            res[i] = model(p, x[i]) - y[i];
        }
    };

    let total = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut c = cost(&p, &x, &y);
    let mut lambda = LAMBDA_INIT;
    let mut converged = false;
    let mut iterations = 0;
    fill(&p, &mut jac, &mut res);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if c <= 1e-28 * total {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &res;
        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut a = jtj.clone();
            for j in 0..n_params {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= LAMBDA_UP;
                    continue;
                }
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let tc = if admissible(&trial) { cost(&trial, &x, &y) } else { f64::INFINITY };
            if tc < c {
                let rel = (c - tc) / c;
                let small_step = step.norm() <= 1e-14 * (1.0 + DVector::from_column_slice(&p).norm());
                p = trial;
                c = tc;
                lambda = (lambda * LAMBDA_DOWN).max(1e-15);
                accepted = true;
                if rel < RELATIVE_COST_TOLERANCE || small_step {
                    converged = true;
                }
                break;
            }
            lambda *= LAMBDA_UP;
        }
        if !accepted {
            // no descent direction left at any damping: a numerical minimum
            converged = true;
            break;
        }
        fill(&p, &mut jac, &mut res);
        if converged {
            break;
        }
    }
    if !converged {
        log::warn!("Lorentzian fit stopped after {iterations} iterations without converging");
    }

    fill(&p, &mut jac, &mut res);
    let dof = (m - n_params).max(1) as f64;
    let s2 = c / dof;
    let jtj = jac.transpose() * &jac;
    let inv = jtj.clone().try_inverse().unwrap_or_else(|| {
        log::warn!("singular normal matrix; covariance set to infinity");
        DMatrix::from_element(n_params, n_params, f64::INFINITY)
    });
    let scale: Vec<f64> = std::iter::once(ys)
        .chain((0..n_peaks).flat_map(|_| [xs, xs, ys]))
        .collect();
    let covariance: Vec<Vec<f64>> = (0..n_params)
        .map(|i| (0..n_params).map(|j| s2 * inv[(i, j)] * scale[i] * scale[j]).collect())
        .collect();

    let mut order: Vec<usize> = (0..n_peaks).collect();
    order.sort_by(|&a, &b| p[1 + 3 * a].total_cmp(&p[1 + 3 * b]));
    let peaks: Vec<Peak> = order
        .iter()
        .map(|&k| Peak {
            center: x0 + xs * p[1 + 3 * k],
            fwhm: xs * p[2 + 3 * k],
            height: ys * p[3 + 3 * k],
        })
        .collect();
    let perm: Vec<usize> = std::iter::once(0)
        .chain(order.iter().flat_map(|&k| [1 + 3 * k, 2 + 3 * k, 3 + 3 * k]))
        .collect();
    let covariance = perm.iter().map(|&i| perm.iter().map(|&j| covariance[i][j]).collect()).collect();

    let mut collisions = Vec::new();
    for i in 0..n_peaks {
        for j in i + 1..n_peaks {
            let w = peaks[i].fwhm.min(peaks[j].fwhm);
            if (peaks[i].center - peaks[j].center).abs() < COLLISION_FRACTION * w {
                collisions.push((i, j));
            }
        }
    }
    if !collisions.is_empty() {
        log::warn!("fitted peaks collide: {collisions:?}");
    }

    Ok(LorentzianFit {
        peaks,
        baseline: ys * p[0],
        covariance,
        residual_norm: (c / total).sqrt(),
        iterations,
        converged,
        collisions,
        weighting: "uniform".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub amplitude: f64,
    /// In (-pi, pi]; 0 when the amplitude vanishes.
    pub phase: f64,
    pub offset: f64,
    /// Order: offset, amplitude, phase.
    pub covariance: [[f64; 3]; 3],
}

impl SinusoidFit {
    pub fn evaluate(&self, phi: f64) -> f64 {
        self.offset + self.amplitude * (phi + self.phase).cos()
    }
}

/// Fit `offset + amplitude * cos(phi + phase)` by linear least squares.
pub fn fit_sinusoid(spectrum: &Spectrum) -> Result<SinusoidFit> {
    let n = spectrum.len();
    ensure(n >= 8, "spectrum", || format!("need at least 8 samples, got {n}"))?;
    let span = spectrum.abscissa[n - 1] - spectrum.abscissa[0];
    if span < 2.0 * PI * (1.0 - 1.0 / n as f64) {
        log::warn!("phase samples span {span:.3} rad, less than one period");
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (phi, s) in spectrum.iter() {
        let row = Vector3::new(1.0, phi.cos(), phi.sin());
        ata += row * row.transpose();
        aty += row * s;
    }
    let svd = ata.svd(false, false);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax {
        return Err(Error::RankDeficient("phase samples do not determine a sinusoid".into()));
    }
    let inv = ata.try_inverse().ok_or_else(|| Error::RankDeficient("singular normal matrix".into()))?;
    let coef = inv * aty;
    let (c0, a, b) = (coef[0], coef[1], coef[2]);
    let rss: f64 = spectrum
        .iter()
        .map(|(phi, s)| (c0 + a * phi.cos() + b * phi.sin() - s).powi(2))
        .sum();
    let s2 = rss / (n - 3) as f64;
    let cov_lin = inv * s2;

    let amplitude = a.hypot(b);
    let mut phase = if amplitude > 0.0 { (-b).atan2(a) } else { 0.0 };
    if phase <= -PI {
        phase = PI;
    }
    // delta method from (offset, a, b) to (offset, amplitude, phase)
    let mut jac = Matrix3::<f64>::zeros();
    jac[(0, 0)] = 1.0;
    if amplitude > 0.0 {
        jac[(1, 1)] = a / amplitude;
        jac[(1, 2)] = b / amplitude;
        jac[(2, 1)] = b / (amplitude * amplitude);
        jac[(2, 2)] = -a / (amplitude * amplitude);
    }
    let cov = jac * cov_lin * jac.transpose();
    let mut covariance = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            covariance[i][j] = cov[(i, j)];
        }
    }
    Ok(SinusoidFit { amplitude, phase, offset: c0, covariance })
}

/// `f / fwhm`.
pub fn q_factor(f: f64, fwhm: f64) -> Result<f64> {
    ensure(f > 0.0, "f_m", || format!("must be positive, got {f}"))?;
    ensure(fwhm > 0.0, "fwhm", || format!("must be positive, got {fwhm}"))?;
    Ok(f / fwhm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseModel {
    /// Additive white noise with absolute standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Shot noise: signal scaled to expected counts, sampled, scaled back.
    Poisson { counts_scale: f64 },
}

/// Deterministic noisy copy of `spectrum`. Gaussian samples are clamped at
/// zero so the result remains a valid spectrum.
pub fn synth_noise(spectrum: &Spectrum, model: NoiseModel, seed: u64) -> Result<Spectrum> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let signal: Vec<f64> = match model {
        NoiseModel::Gaussian { sigma } => {
            ensure(sigma >= 0.0, "sigma", || format!("must be non-negative, got {sigma}"))?;
            if sigma == 0.0 {
                return Ok(spectrum.clone());
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter {
                name: "sigma",
                reason: e.to_string(),
            })?;
            spectrum.signal.iter().map(|s| (s + normal.sample(&mut rng)).max(0.0)).collect()
        }
        NoiseModel::Poisson { counts_scale } => {
            ensure(counts_scale > 0.0, "counts_scale", || format!("must be positive, got {counts_scale}"))?;
            spectrum
                .signal
                .iter()
                .map(|&s| {
                    let lam = s * counts_scale;
                    if lam > 0.0 {
                        Poisson::new(lam).map(|d| d.sample(&mut rng) / counts_scale).map_err(|e| {
                            Error::InvalidParameter { name: "counts_scale", reason: e.to_string() }
                        })
                    } else {
                        Ok(0.0)
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    let mut out = Spectrum::new(spectrum.axis_kind, spectrum.abscissa.clone(), signal)?;
    out.meta = spectrum.meta.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{linspace, AxisKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sampled(x: Vec<f64>, f: impl Fn(f64) -> f64, kind: AxisKind) -> Spectrum {
        let y = x.iter().map(|&v| f(v)).collect();
        Spectrum::new(kind, x, y).unwrap()
    }

    #[test]
    fn single_lorentzian_exact() {
        let s = sampled(linspace(-500.0, 500.0, 401), |x| lorentzian(x, 0.0, 83.0, 1.0), AxisKind::MechDetuning);
        let fit = fit_lorentzians(&s, 1, None).unwrap();
        assert!(fit.converged);
        let p = fit.peaks[0];
        assert!(p.center.abs() < 1e-6 * 83.0);
        assert_relative_eq!(p.fwhm, 83.0, max_relative = 1e-6);
        assert_relative_eq!(p.height, 1.0, max_relative = 1e-6);
        assert!(fit.baseline.abs() < 1e-6);
    }

    #[test]
    fn three_peaks_with_baseline() {
        let truth = [
            Peak { center: -2.0, fwhm: 0.3, height: 0.2 },
            Peak { center: 0.1, fwhm: 0.35, height: 1.0 },
            Peak { center: 2.2, fwhm: 0.3, height: 0.25 },
        ];
        let s = sampled(linspace(-4.0, 4.0, 600), |x| 0.05 + truth.iter().map(|p| p.value(x)).sum::<f64>(), AxisKind::OpticalDetuning);
        let fit = fit_lorentzians(&s, 3, None).unwrap();
        assert!(fit.converged);
        for (a, b) in fit.peaks.iter().zip(&truth) {
            assert_relative_eq!(a.center, b.center, epsilon = 1e-8);
            assert_relative_eq!(a.fwhm, b.fwhm, max_relative = 1e-7);
            assert_relative_eq!(a.height, b.height, max_relative = 1e-7);
        }
        assert_relative_eq!(fit.baseline, 0.05, max_relative = 1e-7);
        assert!(fit.collisions.is_empty());
    }

    #[test]
    fn noisy_fit_covariance_is_symmetric_and_sensible() {
        let s = sampled(linspace(-5.0, 5.0, 301), |x| lorentzian(x, 0.3, 1.0, 2.0) + 0.1, AxisKind::MechDetuning);
        let noisy = synth_noise(&s, NoiseModel::Gaussian { sigma: 0.02 }, 7).unwrap();
        let fit = fit_lorentzians(&noisy, 1, None).unwrap();
        for i in 0..4 {
            assert!(fit.covariance[i][i] > 0.0);
            for j in 0..4 {
                assert_relative_eq!(fit.covariance[i][j], fit.covariance[j][i], max_relative = 1e-9);
            }
        }
        let err = fit.std_errors();
        assert!((fit.peaks[0].center - 0.3).abs() < 5.0 * err[1]);
        assert!((fit.peaks[0].fwhm - 1.0).abs() < 5.0 * err[2]);
    }

    #[test]
    fn too_few_samples_rejected() {
        let s = sampled(linspace(0.0, 1.0, 10), |_| 1.0, AxisKind::Phase);
        assert!(fit_lorentzians(&s, 1, None).is_err());
        assert!(fit_lorentzians(&s, 0, None).is_err());
    }

    #[test]
    fn colliding_peaks_flagged() {
        let s = sampled(linspace(-5.0, 5.0, 200), |x| lorentzian(x, 0.0, 1.0, 1.0), AxisKind::OpticalDetuning);
        let init = [
            Peak { center: 0.0, fwhm: 1.0, height: 0.5 },
            Peak { center: 1e-6, fwhm: 1.0, height: 0.5 },
        ];
        let fit = fit_lorentzians(&s, 2, Some(&init)).unwrap();
        assert_eq!(fit.collisions, vec![(0, 1)]);
    }

    #[test]
    fn sinusoid_exact() {
        let phi = linspace(0.0, 2.0 * PI, 17)[..16].to_vec();
        let s = sampled(phi, |p| 3.0 + 2.0 * (p + 0.4).cos(), AxisKind::Phase);
        let fit = fit_sinusoid(&s).unwrap();
        assert_relative_eq!(fit.amplitude, 2.0, max_relative = 1e-12);
        assert_relative_eq!(fit.phase, 0.4, max_relative = 1e-12);
        assert_relative_eq!(fit.offset, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn sinusoid_zero_amplitude_has_zero_phase() {
        let s = sampled(linspace(0.0, 2.0 * PI, 12), |_| 1.5, AxisKind::Phase);
        let fit = fit_sinusoid(&s).unwrap();
        assert!(fit.amplitude < 1e-12);
        if fit.amplitude == 0.0 {
            assert_eq!(fit.phase, 0.0);
        }
    }

    #[test]
    fn sinusoid_phase_branch() {
        let s = sampled(linspace(0.0, 2.0 * PI, 20), |p| 1.0 + (p + PI).cos(), AxisKind::Phase);
        let fit = fit_sinusoid(&s).unwrap();
        assert_relative_eq!(fit.phase.abs(), PI, max_relative = 1e-9);
        assert!(fit.phase > -PI);
    }

    #[test]
    fn sinusoid_rank_deficiency() {
        // samples at a single phase modulo 2 pi
        let x: Vec<f64> = (0..10).map(|k| 0.3 + 2.0 * PI * k as f64).collect();
        let s = sampled(x, |_| 1.0, AxisKind::Phase);
        assert!(matches!(fit_sinusoid(&s), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn sinusoid_noise_statistics() {
        let phi = linspace(0.0, 2.0 * PI, 65)[..64].to_vec();
        let clean = sampled(phi, |p| 3.0 + 1.0 * (p - 1.1).cos(), AxisKind::Phase);
        let mut errs: Vec<f64> = (0..100)
            .map(|seed| {
                let noisy = synth_noise(&clean, NoiseModel::Gaussian { sigma: 0.05 }, seed).unwrap();
                (fit_sinusoid(&noisy).unwrap().amplitude - 1.0).abs()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        assert!(errs[94] < 0.03, "95th percentile {}", errs[94]);
    }

    #[test]
    fn q_factor_values() {
        assert_relative_eq!(q_factor(0.977e9, 83.0).unwrap(), 1.177e7, max_relative = 1e-3);
        assert_eq!(q_factor(5.0, 5.0).unwrap(), 1.0);
        assert_relative_eq!(q_factor(5.1e9, 5.1e9 / 5.8e5).unwrap(), 5.8e5, max_relative = 1e-12);
        assert!(q_factor(0.0, 1.0).is_err());
    }

    #[test]
    fn noise_is_deterministic_and_zero_sigma_is_identity() {
        let s = sampled(linspace(0.0, 1.0, 50), |x| 1.0 + x, AxisKind::Phase);
        assert_eq!(synth_noise(&s, NoiseModel::Gaussian { sigma: 0.0 }, 3).unwrap(), s);
        let a = synth_noise(&s, NoiseModel::Gaussian { sigma: 0.1 }, 3).unwrap();
        let b = synth_noise(&s, NoiseModel::Gaussian { sigma: 0.1 }, 3).unwrap();
        assert_eq!(a, b);
        let c = synth_noise(&s, NoiseModel::Poisson { counts_scale: 50.0 }, 3).unwrap();
        assert_eq!(c, synth_noise(&s, NoiseModel::Poisson { counts_scale: 50.0 }, 3).unwrap());
    }

    #[test]
    fn poisson_relative_fluctuation() {
        let s = sampled(linspace(0.0, 1.0, 1000), |_| 1.0, AxisKind::Phase);
        let n = synth_noise(&s, NoiseModel::Poisson { counts_scale: 1e4 }, 11).unwrap();
        let mean = n.signal.iter().sum::<f64>() / 1000.0;
        let var = n.signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
        let rel = var.sqrt() / mean;
        assert!((rel - 0.01).abs() < 0.2 * 0.01, "{rel}");
    }

    #[test]
    fn noise_degrades_fits_monotonically() {
        let clean = sampled(linspace(-5.0, 5.0, 200), |x| lorentzian(x, 0.0, 1.0, 1.0), AxisKind::MechDetuning);
        let rms = |sigma: f64| {
            let sq: f64 = (0..100)
                .map(|seed| {
                    let noisy = synth_noise(&clean, NoiseModel::Gaussian { sigma }, seed).unwrap();
                    let f = fit_lorentzians(&noisy, 1, None).unwrap();
                    (f.peaks[0].fwhm - 1.0).powi(2)
                })
                .sum();
            (sq / 100.0).sqrt()
        };
        let (a, b, c) = (rms(0.0), rms(0.01), rms(0.05));
        assert!(a <= b && b <= c, "{a} {b} {c}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fit_is_idempotent(c in -1.0f64..1.0, w in 0.2f64..1.5, h in 0.1f64..10.0, base in 0.0f64..0.5) {
            let s = sampled(linspace(-6.0, 6.0, 300), |x| base + lorentzian(x, c, w, h), AxisKind::OpticalDetuning);
            let first = fit_lorentzians(&s, 1, None).unwrap();
            let refit_input = sampled(s.abscissa.clone(), |x| first.evaluate(x), AxisKind::OpticalDetuning);
            let second = fit_lorentzians(&refit_input, 1, None).unwrap();
            let (p, q) = (first.peaks[0], second.peaks[0]);
            prop_assert!((p.center - q.center).abs() <= 1e-8 * p.fwhm);
            prop_assert!((p.fwhm - q.fwhm).abs() <= 1e-8 * p.fwhm);
            prop_assert!((p.height - q.height).abs() <= 1e-8 * p.height);
        }

        #[test]
        fn shifting_abscissa_shifts_centres(c in -1.0f64..1.0, w in 0.3f64..1.0, shift in -50.0f64..50.0) {
            let x = linspace(-6.0, 6.0, 250);
            let f = |x: f64| lorentzian(x, c, w, 1.0) + lorentzian(x, c + 2.5, w, 0.4);
            let a = fit_lorentzians(&sampled(x.clone(), f, AxisKind::OpticalDetuning), 2, None).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let b = fit_lorentzians(&sampled(xs, |v| f(v - shift), AxisKind::OpticalDetuning), 2, None).unwrap();
            for (p, q) in a.peaks.iter().zip(&b.peaks) {
                prop_assert!((q.center - p.center - shift).abs() <= 1e-9 * (1.0 + shift.abs()));
            }
        }

        #[test]
        fn sinusoid_recovers_parameters(amp in 0.01f64..5.0, phase in -3.1f64..3.1, offset in 0.0f64..10.0) {
            let phi = linspace(0.0, 2.0 * PI, 25)[..24].to_vec();
            let s = sampled(phi, |p| offset + amp + amp * (p + phase).cos(), AxisKind::Phase);
            let fit = fit_sinusoid(&s).unwrap();
            prop_assert!((fit.amplitude - amp).abs() <= 1e-10 * amp.max(1.0));
            prop_assert!((fit.phase - phase).abs() <= 1e-9);
        }
    }
}
