//! Transcendental functions without `std`.

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Neumaier-compensated running sum. Summation order is the caller's
/// iteration order, so results are reproducible for a fixed traversal.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if abs(self.sum) >= abs(x) {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Bernoulli function `z / (e^z − 1)` with `B(0) = 1`.
#[inline]
pub(crate) fn bernoulli(z: f64) -> f64 {
    if abs(z) < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / expm1(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = KahanSum::default();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-14).abs() < 1e-20);
    }

    #[test]
    fn bernoulli_is_continuous_at_zero() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-7) - bernoulli(-1e-7) + 1e-7).abs() < 1e-14);
        assert!((bernoulli(2.0) - 2.0 / (2f64.exp() - 1.0)).abs() < 1e-15);
        // B(-z) - B(z) = z
        assert!((bernoulli(-0.3) - bernoulli(0.3) - 0.3).abs() < 1e-15);
    }
}
