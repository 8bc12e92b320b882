//! Desk-scale stand-in for numerically exact spin-boson dynamics.
//!
//! A two-level Lindblad equation with relaxation and pure dephasing,
//!
//! ```text
//! dρ/dt = −i[H, ρ] + γ (σ⁻ρσ⁺ − ½{σ⁺σ⁻, ρ}) + γ_φ (σz ρ σz − ρ),   H = ε σz + Δ σx,
//! ```
//!
//! integrated with fixed-step RK4 from ρ(0) = |0⟩⟨0|. The rates are free
//! knobs derived from the trajectory metadata; the mapping has no physical
//! meaning beyond producing families of damped oscillations.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Source, Trajectory, TrajectoryMeta};
use crate::{Error, Result};

type Mat2 = [[Complex64; 2]; 2];

const TRACE_TOLERANCE: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn axpy(y: &Mat2, a: Complex64, x: &Mat2) -> Mat2 {
    let mut out = *y;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += a * x[i][j];
        }
    }
    out
}

fn sub(a: &Mat2, b: &Mat2) -> Mat2 {
    axpy(a, -ONE, b)
}

/// Relaxation and dephasing rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub gamma: f64,
    pub gamma_phi: f64,
}

/// Rate mapping and integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    /// γ = gamma_scale · λ
    pub gamma_scale: f64,
    /// γ_φ = dephasing_scale · λ / β
    pub dephasing_scale: f64,
    /// RK4 steps per output grid interval.
    pub substeps: usize,
    /// Half-width of uniform noise added after t = 0 when a noise seed is given.
    pub noise: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            gamma_scale: 1.0,
            dephasing_scale: 1.0,
            substeps: 20,
            noise: 0.0,
        }
    }
}

impl SurrogateConfig {
    pub fn rates(&self, meta: &TrajectoryMeta) -> Rates {
        Rates {
            gamma: self.gamma_scale * meta.lambda,
            gamma_phi: self.dephasing_scale * meta.lambda / meta.beta,
        }
    }
}

/// Lindblad generator for a fixed Hamiltonian and rate pair.
struct Generator {
    h: Mat2,
    lower: Mat2,
    raise: Mat2,
    excited: Mat2,
    z: Mat2,
    rates: Rates,
}

impl Generator {
    fn new(epsilon: f64, delta: f64, rates: Rates) -> Self {
        let c = |v: f64| Complex64::new(v, 0.0);
        Self {
            h: [[c(epsilon), c(delta)], [c(delta), c(-epsilon)]],
            lower: [[ZERO, ZERO], [ONE, ZERO]],
            raise: [[ZERO, ONE], [ZERO, ZERO]],
            excited: [[ONE, ZERO], [ZERO, ZERO]],
            z: [[ONE, ZERO], [ZERO, -ONE]],
            rates,
        }
    }

    fn rhs(&self, rho: &Mat2) -> Mat2 {
        let i = Complex64::new(0.0, 1.0);
        let comm = sub(&mul(&self.h, rho), &mul(rho, &self.h));
        let mut out = [[ZERO; 2]; 2];
        out = axpy(&out, -i, &comm);
        if self.rates.gamma != 0.0 {
            let jump = mul(&mul(&self.lower, rho), &self.raise);
            let anti = axpy(&mul(&self.excited, rho), ONE, &mul(rho, &self.excited));
            let d = axpy(&jump, Complex64::new(-0.5, 0.0), &anti);
            out = axpy(&out, Complex64::new(self.rates.gamma, 0.0), &d);
        }
        if self.rates.gamma_phi != 0.0 {
            let d = sub(&mul(&mul(&self.z, rho), &self.z), rho);
            out = axpy(&out, Complex64::new(self.rates.gamma_phi, 0.0), &d);
        }
        out
    }

    fn rk4(&self, rho: &Mat2, h: f64) -> Mat2 {
        let hc = Complex64::new(h, 0.0);
        let half = Complex64::new(0.5 * h, 0.0);
        let k1 = self.rhs(rho);
        let k2 = self.rhs(&axpy(rho, half, &k1));
        let k3 = self.rhs(&axpy(rho, half, &k2));
        let k4 = self.rhs(&axpy(rho, hc, &k3));
        let mut out = *rho;
        let sixth = hc / 6.0;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += sixth * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
        }
        out
    }
}

/// Raw integration output.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladRun {
    /// ⟨σz⟩ at each output grid point.
    pub values: Vec<f64>,
    /// Largest |tr ρ − 1| over every internal step.
    pub max_trace_deviation: f64,
}

/// Integrates from ρ(0) = |0⟩⟨0| and records ⟨σz⟩ every `dt`.
pub fn integrate(
    epsilon: f64,
    delta: f64,
    rates: Rates,
    dt: f64,
    points: usize,
    substeps: usize,
) -> Result<LindbladRun> {
    if !(dt > 0.0) || points < 2 || substeps == 0 {
        return Err(Error::Contract(alloc::format!(
            "need dt > 0, at least 2 points and 1 substep; got dt={dt} points={points} substeps={substeps}"
        )));
    }
    let generator = Generator::new(epsilon, delta, rates);
    let h = dt / substeps as f64;
    let mut rho: Mat2 = [[ONE, ZERO], [ZERO, ZERO]];
    let mut values = Vec::with_capacity(points);
    values.push(1.0);
    let mut max_dev: f64 = 0.0;
    for n in 1..points {
        for s in 0..substeps {
            rho = generator.rk4(&rho, h);
            let dev = ((rho[0][0] + rho[1][1]) - ONE).norm();
            max_dev = max_dev.max(dev);
            if !(dev <= TRACE_TOLERANCE) {
                return Err(Error::Integration {
                    time: (n - 1) as f64 * dt + (s + 1) as f64 * h,
                    deviation: dev,
                });
            }
        }
        values.push(rho[0][0].re - rho[1][1].re);
    }
    Ok(LindbladRun {
        values,
        max_trace_deviation: max_dev,
    })
}

/// Surrogate trajectory for `meta` on `points` grid points spaced by `dt`.
pub fn generate_surrogate(
    meta: &TrajectoryMeta,
    cfg: &SurrogateConfig,
    dt: f64,
    points: usize,
    noise_seed: Option<u64>,
) -> Result<Trajectory> {
    meta.validate()?;
    let run = integrate(
        meta.epsilon,
        meta.delta,
        cfg.rates(meta),
        dt,
        points,
        cfg.substeps,
    )?;
    let mut values = run.values;
    if let (Some(seed), true) = (noise_seed, cfg.noise > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in values.iter_mut().skip(1) {
            *v = (*v + rng.random_range(-cfg.noise..=cfg.noise)).clamp(-1.0, 1.0);
        }
    }
    let meta = TrajectoryMeta {
        source: Source::Surrogate,
        ..meta.clone()
    };
    Trajectory::on_grid(meta, dt, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(epsilon: f64, lambda: f64) -> TrajectoryMeta {
        TrajectoryMeta::new(epsilon, lambda, 1.0, 1.0, Source::Surrogate)
    }

    #[test]
    fn closed_system_rabi() {
        let t = generate_surrogate(&meta(0.0, 0.0), &SurrogateConfig::default(), 0.1, 201, None)
            .unwrap();
        for (time, v) in t.times.iter().zip(&t.values) {
            assert!((v - libm::cos(2.0 * time)).abs() < 1e-8, "t={time}");
        }
        assert_eq!(t.values[0], 1.0);
    }

    #[test]
    fn trace_and_step_halving() {
        let rates = Rates {
            gamma: 0.5,
            gamma_phi: 0.0,
        };
        let coarse = integrate(0.0, 1.0, rates, 0.1, 201, 20).unwrap();
        let fine = integrate(0.0, 1.0, rates, 0.1, 201, 40).unwrap();
        assert!(coarse.max_trace_deviation < 1e-10);
        let worst = coarse
            .values
            .iter()
            .zip(&fine.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn damped_values_stay_physical() {
        for &(eps, lam) in &[(0.0, 0.3), (1.0, 0.8), (1.0, 0.05)] {
            let t = generate_surrogate(&meta(eps, lam), &SurrogateConfig::default(), 0.1, 201, None)
                .unwrap();
            assert_eq!(t.values[0], 1.0);
            assert!(t.values.iter().all(|v| v.abs() <= 1.0 + 1e-9));
        }
    }

    #[test]
    fn unstable_step_reported() {
        let rates = Rates {
            gamma: 400.0,
            gamma_phi: 0.0,
        };
        let err = integrate(0.0, 1.0, rates, 0.1, 10, 1).unwrap_err();
        assert!(matches!(err, Error::Integration { .. }), "{err:?}");
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = SurrogateConfig {
            noise: 1e-3,
            ..SurrogateConfig::default()
        };
        let a = generate_surrogate(&meta(1.0, 0.2), &cfg, 0.1, 50, Some(4)).unwrap();
        let b = generate_surrogate(&meta(1.0, 0.2), &cfg, 0.1, 50, Some(4)).unwrap();
        let clean = generate_surrogate(&meta(1.0, 0.2), &cfg, 0.1, 50, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, clean.values);
        assert_eq!(a.values[0], 1.0);
    }
}
