//! GLM families with canonical links and the IRLS working set.

use crate::scalar::Scalar;
use ndarray::{Array1, ArrayView1};
use thiserror::Error;

/// Floor applied to the binomial mean (and `1 - mean`) and to the Poisson
/// mean before weights and working responses are formed, so quasi-separated
/// data cannot produce infinite working responses.
pub const MEAN_FLOOR: f64 = 1e-10;
/// Ceiling for the Poisson mean, keeping weights finite under runaway
/// linear predictors.
pub const POISSON_MEAN_CEIL: f64 = 1e10;

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("target invalid for {family:?} family at row {row}: {value}")]
    InvalidTarget { family: Family, row: usize, value: f64 },
    #[error("{operation} supports only the gaussian family")]
    GaussianOnly { operation: &'static str },
}

/// GLM family, each paired with its canonical link:
/// gaussian/identity, binomial/logit, poisson/log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
}

impl Family {
    /// Stable one-byte tag used on the wire and in file headers.
    pub fn tag(self) -> u8 {
        match self {
            Family::Gaussian => 0,
            Family::Binomial => 1,
            Family::Poisson => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Family::Gaussian),
            1 => Some(Family::Binomial),
            2 => Some(Family::Poisson),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" | "linear" => Some(Family::Gaussian),
            "binomial" | "logistic" | "logit" => Some(Family::Binomial),
            "poisson" | "count" | "log" => Some(Family::Poisson),
            _ => None,
        }
    }

    /// Inverse link: mean as a function of the linear predictor.
    pub fn mean<F: Scalar>(self, eta: F) -> F {
        match self {
            Family::Gaussian => eta,
            Family::Binomial => F::one() / (F::one() + (-eta).exp()),
            Family::Poisson => eta.exp(),
        }
    }

    /// Derivative of the mean with respect to the linear predictor.
    pub fn mean_derivative<F: Scalar>(self, eta: F) -> F {
        match self {
            Family::Gaussian => F::one(),
            Family::Binomial => {
                let mu = self.mean(eta);
                mu * (F::one() - mu)
            }
            Family::Poisson => eta.exp(),
        }
    }

    /// Variance function evaluated at the mean.
    pub fn variance<F: Scalar>(self, mu: F) -> F {
        match self {
            Family::Gaussian => F::one(),
            Family::Binomial => mu * (F::one() - mu),
            Family::Poisson => mu,
        }
    }

    /// Whether this family estimates a free dispersion (only gaussian does;
    /// binomial and poisson use dispersion 1).
    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::Gaussian)
    }

    /// Validate a target vector for this family.
    pub fn validate_target<F: Scalar>(self, y: &ArrayView1<F>) -> Result<(), FamilyError> {
        for (row, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(FamilyError::NonFinite { what: "target" });
            }
            let bad = match self {
                Family::Gaussian => false,
                Family::Binomial => !(v == F::zero() || v == F::one()),
                Family::Poisson => v < F::zero() || v.fract() != F::zero(),
            };
            if bad {
                return Err(FamilyError::InvalidTarget {
                    family: self,
                    row,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }
}

/// One IRLS linearization: mean, weights and working response at a given
/// linear predictor.
#[derive(Debug, Clone)]
pub struct WorkingSet<F> {
    pub eta: Array1<F>,
    pub mu: Array1<F>,
    /// Diagonal of the IRLS weight matrix, `(dmu/deta)^2 / var(mu)`.
    pub weights: Array1<F>,
    /// Working response `z = eta + (y - mu) / (dmu/deta)`.
    pub working_response: Array1<F>,
}

/// Linearize the likelihood at `eta`.
///
/// The gaussian branch returns the target itself and unit weights, bit for
/// bit, so the linear protocol path works on `y` exactly.
pub fn update_working_set<F: Scalar>(
    family: Family,
    y: &ArrayView1<F>,
    eta: &ArrayView1<F>,
) -> Result<WorkingSet<F>, FamilyError> {
    if y.len() != eta.len() {
        return Err(FamilyError::NonFinite { what: "length mismatch" });
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(FamilyError::NonFinite { what: "linear predictor" });
    }
    let n = y.len();
    match family {
        Family::Gaussian => Ok(WorkingSet {
            eta: eta.to_owned(),
            mu: eta.to_owned(),
            weights: Array1::ones(n),
            working_response: y.to_owned(),
        }),
        Family::Binomial | Family::Poisson => {
            let floor = F::from_f64_lossy(MEAN_FLOOR);
            let mut mu = Array1::zeros(n);
            let mut w = Array1::zeros(n);
            let mut z = Array1::zeros(n);
            for i in 0..n {
                let e = eta[i];
                let m = match family {
                    Family::Binomial => family.mean(e).max(floor).min(F::one() - floor),
                    Family::Poisson => family
                        .mean(e)
                        .max(floor)
                        .min(F::from_f64_lossy(POISSON_MEAN_CEIL)),
                    Family::Gaussian => unreachable!(),
                };
                // canonical links: dmu/deta = var(mu), so weights = var(mu)
                let d = family.variance(m);
                mu[i] = m;
                w[i] = d;
                z[i] = e + (y[i] - m) / d;
            }
            Ok(WorkingSet { eta: eta.to_owned(), mu, weights: w, working_response: z })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn gaussian_working_set_is_identity() {
        let y = array![1.0, 2.0];
        let eta = array![0.0, 0.0];
        let ws = update_working_set(Family::Gaussian, &y.view(), &eta.view()).unwrap();
        // exact equality demanded: z must be y itself, not eta + (y - eta)
        assert_eq!(ws.working_response, y);
        assert_eq!(ws.weights, array![1.0, 1.0]);
    }

    #[test]
    fn binomial_working_set_at_symmetry_point() {
        let y = array![1.0, 0.0];
        let eta = array![0.0, 0.0];
        let ws = update_working_set(Family::Binomial, &y.view(), &eta.view()).unwrap();
        assert_abs_diff_eq!(ws.mu[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ws.weights[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(ws.working_response[0], (1.0 - 0.5) / 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(ws.working_response[1], (0.0 - 0.5) / 0.25, epsilon = 1e-15);
    }

    #[test]
    fn poisson_working_set_hand_evaluated() {
        // mu = exp(log 2) = 2, weight = mu = 2, z = log 2 + (3 - 2) / 2
        let y = array![3.0];
        let eta = array![2.0_f64.ln()];
        let ws = update_working_set(Family::Poisson, &y.view(), &eta.view()).unwrap();
        assert_abs_diff_eq!(ws.mu[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ws.weights[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ws.working_response[0], 2.0_f64.ln() + 0.5, epsilon = 1e-14);
    }

    #[test]
    fn mean_derivative_matches_central_differences() {
        let h = 1e-6_f64;
        for family in [Family::Gaussian, Family::Binomial, Family::Poisson] {
            let mut eta = -10.0;
            while eta <= 10.0 {
                let fd = (family.mean(eta + h) - family.mean(eta - h)) / (2.0 * h);
                let an = family.mean_derivative(eta);
                // the central difference itself carries ~eps/h absolute noise
                assert!(
                    (fd - an).abs() <= 1e-6 * an.abs() + 1e-9,
                    "family {:?} eta {eta}: fd {fd} vs analytic {an}",
                    family
                );
                eta += 0.25;
            }
        }
    }

    #[test]
    fn mean_is_strictly_monotone() {
        for family in [Family::Gaussian, Family::Binomial, Family::Poisson] {
            let mut prev = family.mean(-20.0_f64);
            let mut eta = -19.5;
            while eta <= 20.0 {
                let m = family.mean(eta);
                assert!(m > prev, "family {:?} not monotone at {eta}", family);
                prev = m;
                eta += 0.5;
            }
        }
    }

    #[test]
    fn target_validation_per_family() {
        let ok_bin = array![0.0, 1.0, 1.0];
        assert!(Family::Binomial.validate_target(&ok_bin.view()).is_ok());
        let bad_bin = array![0.0, 0.5];
        assert!(Family::Binomial.validate_target(&bad_bin.view()).is_err());
        let bad_pois = array![1.0, 2.5];
        assert!(Family::Poisson.validate_target(&bad_pois.view()).is_err());
        let neg_pois = array![-1.0];
        assert!(Family::Poisson.validate_target(&neg_pois.view()).is_err());
        let inf = array![f64::INFINITY];
        assert!(Family::Gaussian.validate_target(&inf.view()).is_err());
    }

    #[test]
    fn binomial_mean_clamped_under_extreme_eta() {
        let y: ndarray::Array1<f64> = array![1.0];
        let eta = array![60.0];
        let ws = update_working_set(Family::Binomial, &y.view(), &eta.view()).unwrap();
        assert!(ws.weights[0] > 0.0);
        assert!(ws.working_response[0].is_finite());
    }
}
