//! Ion-photon and remote entanglement rate budgets.

use crate::{Error, Result};

/// Per-attempt loss factors of a photonic interface plus the attempt rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonBudget {
    pub p_exc: f64,
    /// Branching ratio back to the ground state used for the qubit.
    pub branching: f64,
    pub quantum_efficiency: f64,
    /// Collected solid angle over 4π.
    pub solid_angle_fraction: f64,
    pub gate_fraction: f64,
    pub transmission: f64,
    /// Attempts per second (Hz).
    pub repetition_rate: f64,
}

impl PhotonBudget {
    pub fn new(
        p_exc: f64,
        branching: f64,
        quantum_efficiency: f64,
        solid_angle_fraction: f64,
        gate_fraction: f64,
        transmission: f64,
        repetition_rate: f64,
    ) -> Result<Self> {
        let budget = Self {
            p_exc,
            branching,
            quantum_efficiency,
            solid_angle_fraction,
            gate_fraction,
            transmission,
            repetition_rate,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn factors(&self) -> [(&'static str, f64); 6] {
        [
            ("p_exc", self.p_exc),
            ("branching", self.branching),
            ("quantum_efficiency", self.quantum_efficiency),
            ("solid_angle_fraction", self.solid_angle_fraction),
            ("gate_fraction", self.gate_fraction),
            ("transmission", self.transmission),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.factors() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if !(self.repetition_rate.is_finite() && self.repetition_rate > 0.0) {
            return Err(Error::invalid(
                "repetition_rate",
                format!("must be > 0, got {}", self.repetition_rate),
            ));
        }
        Ok(())
    }
}

/// Probability that one attempt heralds an ion-photon pair.
pub fn success_probability(budget: &PhotonBudget) -> f64 {
    budget.factors().iter().map(|(_, v)| v).product()
}

pub fn ion_photon_rate(budget: &PhotonBudget) -> f64 {
    success_probability(budget) * budget.repetition_rate
}

/// Two nodes must each succeed on the same attempt.
pub fn remote_rate(budget: &PhotonBudget) -> f64 {
    success_probability(budget).powi(2) * budget.repetition_rate
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateComparison {
    pub ion_photon_factor: f64,
    pub remote_factor: f64,
}

/// Rate improvement of `candidate` over `baseline`.
pub fn compare(baseline: &PhotonBudget, candidate: &PhotonBudget) -> Result<RateComparison> {
    let base = ion_photon_rate(baseline);
    if base == 0.0 {
        return Err(Error::DivisionByZero(
            "baseline budget has zero success probability".into(),
        ));
    }
    Ok(RateComparison {
        ion_photon_factor: ion_photon_rate(candidate) / base,
        remote_factor: remote_rate(candidate) / remote_rate(baseline),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> PhotonBudget {
        PhotonBudget::new(0.2, 0.75, 0.2, 0.02, 0.8, 0.3, 17e3).unwrap()
    }

    #[test]
    fn reference_budget() {
        let b = reference();
        assert!((success_probability(&b) - 1.44e-4).abs() < 1e-18);
        assert!((ion_photon_rate(&b) - 2.448).abs() < 1e-12);
        assert!((remote_rate(&b) - 3.52512e-4).abs() < 1e-15);
    }

    #[test]
    fn comparisons() {
        let b = reference();
        let c = compare(&b, &b).unwrap();
        assert_eq!((c.ion_photon_factor, c.remote_factor), (1.0, 1.0));
        let wide = PhotonBudget {
            solid_angle_fraction: 0.4,
            ..b
        };
        let c = compare(&b, &wide).unwrap();
        assert!((c.ion_photon_factor - 20.0).abs() < 1e-9 && (c.remote_factor - 400.0).abs() < 1e-9);
        let unity = PhotonBudget { p_exc: 1.0, ..b };
        let c = compare(&b, &unity).unwrap();
        assert!((c.ion_photon_factor - 5.0).abs() < 1e-12 && (c.remote_factor - 25.0).abs() < 1e-12);
        let dead = PhotonBudget { transmission: 0.0, ..b };
        assert!(matches!(compare(&dead, &b), Err(Error::DivisionByZero(_))));
    }

    #[test]
    fn extremes_and_validation() {
        let ones = PhotonBudget::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 17e3).unwrap();
        assert_eq!(success_probability(&ones), 1.0);
        assert_eq!(ion_photon_rate(&ones), 17e3);
        assert_eq!(remote_rate(&ones), 17e3);
        let zero = PhotonBudget {
            branching: 0.0,
            ..reference()
        };
        assert_eq!(success_probability(&zero), 0.0);
        assert!(PhotonBudget::new(0.2, 0.75, 0.2, 0.02, 0.8, 0.3, 0.0).is_err());
        assert!(PhotonBudget::new(1.2, 0.75, 0.2, 0.02, 0.8, 0.3, 1.0).is_err());
        assert!(PhotonBudget::new(f64::NAN, 0.75, 0.2, 0.02, 0.8, 0.3, 1.0).is_err());
        let double = PhotonBudget {
            p_exc: 0.4,
            ..reference()
        };
        assert!((ion_photon_rate(&double) / ion_photon_rate(&reference()) - 2.0).abs() < 1e-12);
    }

    fn budget() -> impl Strategy<Value = PhotonBudget> {
        (prop::array::uniform6(0.0f64..=1.0), 1.0f64..1e6)
            .prop_map(|(f, r)| PhotonBudget::new(f[0], f[1], f[2], f[3], f[4], f[5], r).unwrap())
    }

    proptest! {
        #[test]
        fn remote_over_ion_photon_is_success_probability(b in budget()) {
            let p = success_probability(&b);
            prop_assume!(p > 0.0);
            let ratio = remote_rate(&b) / ion_photon_rate(&b);
            prop_assert!((ratio - p).abs() <= 1e-14 * p);
        }

        #[test]
        fn monotone_in_every_factor(b in budget(), k in 0usize..6, bump in 0.0f64..=1.0) {
            let mut f: Vec<f64> = b.factors().iter().map(|(_, v)| *v).collect();
            f[k] = f[k] + (1.0 - f[k]) * bump;
            let up = PhotonBudget::new(f[0], f[1], f[2], f[3], f[4], f[5], b.repetition_rate).unwrap();
            prop_assert!(success_probability(&up) >= success_probability(&b));
        }

        #[test]
        fn remote_factor_is_square(a in budget(), b in budget()) {
            prop_assume!(success_probability(&a) > 1e-12);
            let b = PhotonBudget { repetition_rate: a.repetition_rate, ..b };
            let c = compare(&a, &b).unwrap();
            let square = c.ion_photon_factor * c.ion_photon_factor;
            prop_assert!((c.remote_factor - square).abs() <= 1e-12 * square.max(f64::MIN_POSITIVE));
        }
    }
}
