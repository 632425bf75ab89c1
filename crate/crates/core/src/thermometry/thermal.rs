use crate::constants::{BOLTZMANN, HBAR};

/// Largest allowed `η²(2n̄+1)` before a sideband scan warns.
pub const LAMB_DICKE_LIMIT: f64 = 0.3;

/// Thermal occupation probability `p_n = n̄ⁿ / (n̄+1)ⁿ⁺¹`.
pub fn thermal_pn(nbar: f64, n: u64) -> f64 {
    if nbar == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let ratio = nbar / (nbar + 1.0);
    ratio.powf(n as f64) / (nbar + 1.0)
}

/// Highest occupation number kept when summing a thermal distribution:
/// `ceil(14 (n̄ + 1))`, which leaves a tail below 10⁻⁶.
pub fn truncation(nbar: f64) -> u64 {
    (14.0 * (nbar + 1.0)).ceil() as u64
}

/// Temperature (K) of a mode at angular frequency `omega` with mean occupation `nbar`.
pub fn nbar_temperature(nbar: f64, omega: f64) -> f64 {
    if nbar <= 0.0 {
        return 0.0;
    }
    HBAR * omega / (BOLTZMANN * (1.0 / nbar).ln_1p())
}

/// Mean occupation of a mode at angular frequency `omega` and temperature `t` (K).
pub fn temperature_nbar(t: f64, omega: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    1.0 / (HBAR * omega / (BOLTZMANN * t)).exp_m1()
}

/// Doppler cooling limit `ħΓ / (2 k_B)` for a transition of linewidth `gamma` (rad/s).
pub fn doppler_limit(gamma: f64) -> f64 {
    HBAR * gamma / (2.0 * BOLTZMANN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::mhz;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn ground_state_and_unit_nbar() {
        assert_eq!(thermal_pn(0.0, 0), 1.0);
        assert_eq!(thermal_pn(0.0, 3), 0.0);
        assert_eq!(thermal_pn(1.0, 0), 0.5);
    }

    #[test]
    fn truncated_mass_exceeds_bound() {
        for nbar in [0.0, 0.3, 1.0, 10.0, 64.5, 140.0, 1000.0] {
            let mass: f64 = (0..=truncation(nbar)).map(|n| thermal_pn(nbar, n)).sum();
            assert!(mass >= 1.0 - 1e-6, "nbar {nbar}: {mass}");
        }
    }

    #[test]
    fn single_barium_temperature() {
        let t = nbar_temperature(64.5, mhz(1.1));
        // 3.431391 mK from a 40-digit evaluation.
        assert_relative_eq!(t, 3.431_391_112_65e-3, max_relative = 1e-9);
        assert_eq!(temperature_nbar(0.0, mhz(1.1)), 0.0);
        assert_eq!(nbar_temperature(0.0, mhz(1.1)), 0.0);
    }

    #[test]
    fn barium_doppler_limit() {
        let td = doppler_limit(mhz(15.1));
        assert_relative_eq!(td, 3.623_428_518_17e-4, max_relative = 1e-9);
        assert_relative_eq!(doppler_limit(2.0 * mhz(15.1)), 2.0 * td, max_relative = 1e-15);
        assert_relative_eq!(temperature_nbar(td, mhz(1.1)), 6.375_773_350_75, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn temperature_round_trip(log_n in -3.0f64..4.0, f_mhz in 0.05f64..5.0) {
            let nbar = 10f64.powf(log_n);
            let w = mhz(f_mhz);
            let back = temperature_nbar(nbar_temperature(nbar, w), w);
            prop_assert!((back - nbar).abs() <= 1e-10 * nbar);
        }
    }
}
