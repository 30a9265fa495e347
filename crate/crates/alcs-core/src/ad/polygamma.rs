//! Polygamma functions ψ, ψ', ψ'', ψ''' for the log-gamma Taylor recurrences.
//!
//! Upward recurrence pushes the argument above 10, then the Bernoulli
//! asymptotic series applies. For x >= 0.5 the absolute error is below 1e-13
//! (the first dropped Bernoulli term at x = 10); non-positive arguments
//! return NaN so the failure surfaces as a non-finite derivative.

/// Shift threshold for the asymptotic series.
const XMIN: f64 = 10.0;

pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < XMIN {
        acc -= 1.0 / x;
        x += 1.0;
    }
    // psi(x) ~ ln x - 1/(2x) - sum B_{2n}/(2n x^{2n})
    let w = 1.0 / (x * x);
    let series = w
        * (-1.0 / 12.0
            + w * (1.0 / 120.0
                + w * (-1.0 / 252.0
                    + w * (1.0 / 240.0
                        + w * (-1.0 / 132.0 + w * (691.0 / 32760.0 + w * (-1.0 / 12.0)))))));
    acc + x.ln() - 0.5 / x + series
}

pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < XMIN {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let w = 1.0 / (x * x);
    let series = w
        * (1.0 / 6.0
            + w * (-1.0 / 30.0
                + w * (1.0 / 42.0
                    + w * (-1.0 / 30.0
                        + w * (5.0 / 66.0 + w * (-691.0 / 2730.0 + w * (7.0 / 6.0)))))));
    acc + 1.0 / x + 0.5 * w + series / x
}

pub fn polygamma2(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < XMIN {
        acc -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let w = 1.0 / (x * x);
    let series = w
        * (-0.5
            + w * (1.0 / 6.0
                + w * (-1.0 / 6.0 + w * (3.0 / 10.0 + w * (-5.0 / 6.0 + w * (691.0 / 210.0))))));
    acc - w - w / x + series * w
}

pub fn polygamma3(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < XMIN {
        acc += 6.0 / (x * x * x * x);
        x += 1.0;
    }
    let w = 1.0 / (x * x);
    let iw = 1.0 / x;
    let series = w
        * (2.0
            + w * (-1.0 + w * (4.0 / 3.0 + w * (-3.0 + w * (10.0 + w * (-691.0 / 15.0))))))
        * iw;
    acc + 2.0 * w * iw + 3.0 * w * w + series * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn known_values() {
        assert_relative_eq!(digamma(1.0), -EULER_GAMMA, epsilon = 1e-13);
        assert_relative_eq!(
            digamma(0.5),
            -EULER_GAMMA - 2.0 * std::f64::consts::LN_2,
            epsilon = 1e-13
        );
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert_relative_eq!(trigamma(1.0), pi2 / 6.0, epsilon = 1e-13);
        assert_relative_eq!(trigamma(0.5), pi2 / 2.0, epsilon = 1e-13);
        // psi''(1) = -2 zeta(3), psi'''(1) = pi^4/15
        assert_relative_eq!(polygamma2(1.0), -2.404_113_806_319_188_5, epsilon = 1e-12);
        assert_relative_eq!(polygamma3(1.0), pi2 * pi2 / 15.0, epsilon = 1e-12);
    }

    #[test]
    fn recurrence_consistency() {
        // psi_k(x+1) - psi_k(x) = d^k/dx^k (1/x)
        for &x in &[0.6, 1.3, 2.5, 7.9, 25.0] {
            assert_relative_eq!(digamma(x + 1.0) - digamma(x), 1.0 / x, epsilon = 1e-12);
            assert_relative_eq!(
                trigamma(x + 1.0) - trigamma(x),
                -1.0 / (x * x),
                epsilon = 1e-12
            );
            assert_relative_eq!(
                polygamma2(x + 1.0) - polygamma2(x),
                2.0 / (x * x * x),
                epsilon = 1e-11
            );
            assert_relative_eq!(
                polygamma3(x + 1.0) - polygamma3(x),
                -6.0 / (x * x * x * x),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn derivative_ladder_matches_finite_differences() {
        let h = 1e-5;
        for &x in &[0.7, 1.8, 4.2, 12.0] {
            let fd1 = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert_relative_eq!(fd1, trigamma(x), epsilon = 1e-7, max_relative = 1e-7);
            let fd2 = (trigamma(x + h) - trigamma(x - h)) / (2.0 * h);
            assert_relative_eq!(fd2, polygamma2(x), epsilon = 1e-6, max_relative = 1e-6);
            let fd3 = (polygamma2(x + h) - polygamma2(x - h)) / (2.0 * h);
            assert_relative_eq!(fd3, polygamma3(x), epsilon = 1e-5, max_relative = 1e-5);
        }
    }

    #[test]
    fn non_positive_arguments_are_nan() {
        assert!(digamma(0.0).is_nan());
        assert!(trigamma(-1.5).is_nan());
    }
}
