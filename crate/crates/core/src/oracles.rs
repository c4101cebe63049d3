//! Independent reference computations: closed forms, quadratures, exact
//! generating-function iterations, finite-difference derivatives in measure
//! space and a small event-driven branching simulator. Nothing here calls
//! the production solvers or simulators.

use rand::Rng;

use crate::calculus::CylindricalFunction;
use crate::measure_space::{AtomicMeasure, MeasureError};

const FD_LEVEL_FIRST: u64 = 1_000_000;
const FD_LEVEL_SECOND: u64 = 1_000;

fn perturbed(lambda: &AtomicMeasure, level: u64, points: &[&[f64]]) -> Result<AtomicMeasure, MeasureError> {
    let factor = level;
    let mut m = lambda.refine(factor);
    for p in points {
        m = m.add_units(p, 1)?;
    }
    Ok(m)
}

/// `(u(l + e delta_x) - u(l)) / e` at `e = 1/(n 10^6)` and `e/2`,
/// combined by Richardson extrapolation.
pub fn flat_derivative_fd(u: &CylindricalFunction, lambda: &AtomicMeasure, x: &[f64]) -> Result<f64, MeasureError> {
    let base = u.eval(lambda)?;
    let quotient = |factor: u64| -> Result<f64, MeasureError> {
        let eps = 1.0 / (lambda.level() * factor) as f64;
        Ok((u.eval(&perturbed(lambda, factor, &[x])?)? - base) / eps)
    };
    let coarse = quotient(FD_LEVEL_FIRST)?;
    let fine = quotient(2 * FD_LEVEL_FIRST)?;
    Ok(2.0 * fine - coarse)
}

/// Mixed second difference in the directions `delta_x`, `delta_y`, with
/// Richardson extrapolation over `e = 1/(n 10^3)` and `e/2`.
pub fn second_flat_derivative_fd(
    u: &CylindricalFunction,
    lambda: &AtomicMeasure,
    x: &[f64],
    y: &[f64],
) -> Result<f64, MeasureError> {
    let base = u.eval(lambda)?;
    let quotient = |factor: u64| -> Result<f64, MeasureError> {
        let eps = 1.0 / (lambda.level() * factor) as f64;
        let uxy = u.eval(&perturbed(lambda, factor, &[x, y])?)?;
        let ux = u.eval(&perturbed(lambda, factor, &[x])?)?;
        let uy = u.eval(&perturbed(lambda, factor, &[y])?)?;
        Ok((uxy - ux - uy + base) / (eps * eps))
    };
    let coarse = quotient(FD_LEVEL_SECOND)?;
    let fine = quotient(2 * FD_LEVEL_SECOND)?;
    Ok(2.0 * fine - coarse)
}

/// Centered differences in `x` of [`flat_derivative_fd`] at steps `h = 1e-2`
/// and `h/2`, combined by Richardson extrapolation.
pub fn intrinsic_derivative_fd(
    u: &CylindricalFunction,
    lambda: &AtomicMeasure,
    x: &[f64],
) -> Result<Vec<f64>, MeasureError> {
    let centered = |i: usize, h: f64| -> Result<f64, MeasureError> {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[i] += h;
        minus[i] -= h;
        Ok((flat_derivative_fd(u, lambda, &plus)? - flat_derivative_fd(u, lambda, &minus)?) / (2.0 * h))
    };
    let h = 1e-2;
    (0..x.len())
        .map(|i| Ok((4.0 * centered(i, h / 2.0)? - centered(i, h)?) / 3.0))
        .collect()
}

/// Solution of `-w' = -gamma w^2 / 2` backwards from `w(T) = theta`, at
/// time-to-go `s`.
pub fn riccati_w(theta: f64, gamma: f64, s: f64) -> f64 {
    theta / (1.0 + gamma * theta * s / 2.0)
}

/// `E exp(-theta Z_s)` for a Feller diffusion `dZ = sqrt(gamma Z) dW`, `Z_0 = z`.
pub fn feller_laplace(z: f64, theta: f64, gamma: f64, s: f64) -> f64 {
    (-z * riccati_w(theta, gamma, s)).exp()
}

/// `P(Z_s = 0)` for the same Feller diffusion.
pub fn feller_extinction(z: f64, gamma: f64, s: f64) -> f64 {
    (-2.0 * z / (gamma * s)).exp()
}

/// Exact `E exp(-theta <1, mu_T>)` for the level-`n` thinned scheme with
/// motionless particles: `steps` iterations of the offspring generating
/// function `p/2 + (1 - p) s + p/2 s^2`, `p = 1 - exp(-n gamma dt)`.
pub fn thinned_scheme_laplace(n: u64, gamma: f64, dt: f64, steps: usize, units: u64, theta: f64) -> f64 {
    let p = -(-(n as f64) * gamma * dt).exp_m1();
    let mut s = (-theta / n as f64).exp();
    for _ in 0..steps {
        s = 0.5 * p + (1.0 - p) * s + 0.5 * p * s * s;
    }
    s.powf(units as f64)
}

/// Exact `E exp(-theta <1, mu_T>)` for continuous-time critical binary
/// branching of `units` particles of mass `1/n` at per-particle rate `n gamma`.
pub fn branching_laplace(n: u64, gamma: f64, s: f64, units: u64, theta: f64) -> f64 {
    let r = n as f64 * gamma;
    let z = (-theta / n as f64).exp();
    let g = 1.0 - (1.0 - z) / (1.0 + r * s * (1.0 - z) / 2.0);
    g.powf(units as f64)
}

/// `exp(-x^2)` transported by the heat semigroup of `dX = sqrt(2) dW` for time
/// `s`: `(1 + 4s)^{-1/2} exp(-x^2 / (1 + 4s))`.
pub fn heat_gaussian(x: f64, s: f64) -> f64 {
    (-(x * x) / (1.0 + 4.0 * s)).exp() / (1.0 + 4.0 * s).sqrt()
}

/// `E h(x + N(0, variance))` by composite Simpson quadrature over
/// `+- 12` standard deviations.
pub fn gaussian_convolution(h: impl Fn(f64) -> f64, x: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return h(x);
    }
    let sd = variance.sqrt();
    let m = 4000;
    let (a, b) = (-12.0 * sd, 12.0 * sd);
    let step = (b - a) / m as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
    let f = |z: f64| h(x + z) * norm * (-(z * z) / (2.0 * variance)).exp();
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * step);
    }
    acc * step / 3.0
}

/// Branching Brownian motion from `delta_0` with `sigma = gamma = 1`, horizon 1,
/// test function `exp(-x^2)`: `Var <phi, mu_1> = v_inf + c / n` with
/// `v_inf = asin(2/3)/2` and `c = 5^{-1/2} - 1/3`.
pub fn gaussian_bbm_variance_terms() -> (f64, f64) {
    ((2.0f64 / 3.0).asin() / 2.0, 1.0 / 5.0f64.sqrt() - 1.0 / 3.0)
}

/// Continuous-time event-driven simulation of motionless critical binary
/// branching, `count` particles of mass `1/n`, per-particle rate `n gamma`.
/// Returns the final mass and `int_0^T gamma <1, mu_r> dr`.
pub fn event_driven_mass<R: Rng>(rng: &mut R, n: u64, gamma: f64, count: u64, horizon: f64) -> (f64, f64) {
    let rate = n as f64 * gamma;
    let mut k = count;
    let mut t = 0.0;
    let mut integral = 0.0;
    while k > 0 {
        let total = rate * k as f64;
        let u: f64 = rng.random();
        let wait = -(1.0 - u).ln() / total;
        if t + wait >= horizon {
            integral += (horizon - t) * k as f64;
            break;
        }
        integral += wait * k as f64;
        t += wait;
        if rng.random::<bool>() {
            k += 1;
        } else {
            k -= 1;
        }
    }
    (k as f64 / n as f64, gamma * integral / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn riccati_closed_form_satisfies_ode() {
        let (theta, gamma) = (1.3, 0.7);
        let s = 0.8;
        let h = 1e-5;
        let d = (riccati_w(theta, gamma, s + h) - riccati_w(theta, gamma, s - h)) / (2.0 * h);
        let w = riccati_w(theta, gamma, s);
        assert!((d + 0.5 * gamma * w * w).abs() < 1e-9);
        assert!((feller_laplace(1.0, 1.0, 1.0, 1.0) - 0.51342).abs() < 1e-5);
    }

    #[test]
    fn laplace_exponent_composes() {
        let half = riccati_w(riccati_w(1.0, 1.0, 0.5), 1.0, 0.5);
        assert!((half - riccati_w(1.0, 1.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn exact_branching_laplace_tends_to_feller() {
        let limit = feller_laplace(1.0, 1.0, 1.0, 1.0);
        let e50 = branching_laplace(50, 1.0, 1.0, 50, 1.0);
        let e5000 = branching_laplace(5000, 1.0, 1.0, 5000, 1.0);
        assert!((e5000 - limit).abs() < (e50 - limit).abs() + 1e-12);
        assert!((e5000 - limit).abs() < 1e-6);
        let coarse = (thinned_scheme_laplace(50, 1.0, 1e-3, 1_000, 50, 1.0) - e50).abs();
        let fine = (thinned_scheme_laplace(50, 1.0, 1e-4, 10_000, 50, 1.0) - e50).abs();
        assert!(fine < coarse / 8.0 && fine < 1e-3, "{coarse} {fine}");
    }

    #[test]
    fn convolution_matches_gaussian_closed_form() {
        for x in [-2.0, 0.0, 0.7, 3.0] {
            let s = 0.4;
            let q = gaussian_convolution(|y| (-y * y).exp(), x, 2.0 * s);
            assert!((q - heat_gaussian(x, s)).abs() < 1e-12);
        }
    }

    #[test]
    fn event_driven_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reps = 20_000;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for _ in 0..reps {
            let (m, _) = event_driven_mass(&mut rng, 1, 1.0, 1, 1.0);
            s1 += m;
            s2 += m * m;
        }
        let mean = s1 / reps as f64;
        let m2 = s2 / reps as f64;
        assert!((mean - 1.0).abs() < 0.05);
        assert!((m2 - 2.0).abs() < 0.15);
    }

    #[test]
    fn scaling_terms() {
        let (v, c) = gaussian_bbm_variance_terms();
        assert!((v - 0.36486).abs() < 1e-4);
        assert!((c - 0.11388).abs() < 1e-4);
    }
}
