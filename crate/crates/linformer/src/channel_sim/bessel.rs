//! Zero-order Bessel function of the first kind.
//!
//! Power series for small arguments, Hart-style rational asymptotic
//! expansion beyond |x| = 8. Absolute error below 1e-7 over the real line.

/// J0(x).
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 8.0 {
        // Ascending series: sum_m (-1)^m (x/2)^{2m} / (m!)^2
        let q = ax * ax / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for m in 1..64 {
            term *= -q / ((m * m) as f64);
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1.0) {
                break;
            }
        }
        sum
    } else {
        // Abramowitz & Stegun 9.4.3 form: J0(x) = sqrt(2/(pi x)) [P cos(x - pi/4) - Q sin(x - pi/4)]
        let z = 8.0 / ax;
        let y = z * z;
        let p = 1.0
            + y * (-0.1098628627e-2
                + y * (0.2734510407e-4 + y * (-0.2073370639e-5 + y * 0.2093887211e-6)));
        let q = z
            * (-0.1562499995e-1
                + y * (0.1430488765e-3
                    + y * (-0.6911147651e-5 + y * (0.7621095161e-6 + y * (-0.934935152e-7)))));
        let chi = ax - std::f64::consts::FRAC_PI_4;
        (2.0 / (std::f64::consts::PI * ax)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: J0(x) = (1/pi) * integral_0^pi cos(x sin t) dt,
    // composite Simpson rule.
    fn j0_quadrature(x: f64) -> f64 {
        let n = 20_000; // even
        let h = std::f64::consts::PI / n as f64;
        let f = |t: f64| (x * t.sin()).cos();
        let mut s = f(0.0) + f(std::f64::consts::PI);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(k as f64 * h);
        }
        s * h / 3.0 / std::f64::consts::PI
    }

    #[test]
    fn j0_at_zero_is_one() {
        assert_eq!(bessel_j0(0.0), 1.0);
    }

    #[test]
    fn j0_first_root() {
        // First root located independently by bisection on the quadrature oracle.
        let (mut lo, mut hi) = (2.0_f64, 3.0_f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if j0_quadrature(lo) * j0_quadrature(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!((root - 2.404825557695773).abs() < 1e-9);
        assert!(bessel_j0(2.404825557695773).abs() < 1e-7);
    }

    #[test]
    fn j0_matches_quadrature_oracle() {
        for i in 0..200 {
            let x = i as f64 * 0.25;
            let diff = (bessel_j0(x) - j0_quadrature(x)).abs();
            assert!(diff < 1e-7, "x={} diff={}", x, diff);
        }
    }

    #[test]
    fn j0_asymptotic_form_at_large_argument() {
        let x = 100.0;
        let approx =
            (2.0 / (std::f64::consts::PI * x)).sqrt() * (x - std::f64::consts::FRAC_PI_4).cos();
        assert!((bessel_j0(x) - approx).abs() < 1e-3);
    }

    #[test]
    fn j0_even_symmetry() {
        for &x in &[0.5, 3.0, 9.0, 25.0] {
            assert_eq!(bessel_j0(x), bessel_j0(-x));
        }
    }
}
