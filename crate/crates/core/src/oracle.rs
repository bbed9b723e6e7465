//! Independent one-dimensional laminate reference.
//!
//! For a two-phase laminate with layer normal `ν = e_axis`, a simple laminate
//! fluctuation has gradient `a_A ⊗ ν` in the high phase (volume fraction `θ`)
//! and `a_B ⊗ ν` in the low phase, with `θ a_A + (1 − θ) a_B = 0`. Since
//! `det(F + a ⊗ ν) = det F + (adj(F)ᵀν) · a`, both layers stay volume
//! preserving exactly when `a ⊥ adj(F)ᵀν`, which leaves the single scalar
//! amplitude `s` in `a_A = s t`. The reference value is the brute-force
//! minimum over `s` of the layer-averaged `W̃`; it never touches the mesh or
//! the solvers.

use serde::{Deserialize, Serialize};

use crate::density::{EnergySpec, PhaseKind};
use crate::error::{Error, Result};
use crate::tensor::{perp, vnorm, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaminateReference {
    /// Minimal layer-averaged energy.
    pub value: f64,
    /// Optimal amplitude of the high-phase jump.
    pub amplitude: f64,
    /// Unit direction `t` of the jumps.
    pub direction: [f64; 2],
    /// Energy of the affine deformation (`s = 0`).
    pub unrelaxed: f64,
}

/// Scan half-width and resolution for the amplitude.
const SCAN_RANGE: f64 = 10.0;
const SCAN_POINTS: usize = 200_001;

/// Brute-force laminate reference for `spec` at `F ∈ Σ`.
pub fn laminate_reference(spec: &EnergySpec, f: &Mat) -> Result<LaminateReference> {
    spec.validate()?;
    let PhaseKind::Laminate { axis, theta } = spec.phase.kind else {
        return Err(Error::invalid("phase", "laminate reference needs a laminate phase field"));
    };
    if (f.det() - 1.0).abs() > 1e-10 {
        return Err(Error::OffSigma { det: f.det() });
    }
    let nu = if axis == 1 { [1.0, 0.0] } else { [0.0, 1.0] };
    let w = f.adjugate().transpose().apply(nu);
    let t = perp(w);
    let t = [t[0] / vnorm(t), t[1] / vnorm(t)];
    let ratio = theta / (1.0 - theta);
    let energy = |s: f64| {
        let fa = *f + Mat::outer(t, nu).scale(s);
        let fb = *f + Mat::outer(t, nu).scale(-ratio * s);
        theta * spec.w_tilde_mu(spec.phase.mu_high, &fa).value
            + (1.0 - theta) * spec.w_tilde_mu(spec.phase.mu_low, &fb).value
    };

    let h = 2.0 * SCAN_RANGE / (SCAN_POINTS - 1) as f64;
    let (mut best_s, mut best) = (0.0, energy(0.0));
    for i in 0..SCAN_POINTS {
        let s = -SCAN_RANGE + i as f64 * h;
        let e = energy(s);
        if e < best {
            best = e;
            best_s = s;
        }
    }
    // Golden-section refinement inside the winning scan bracket.
    let (mut lo, mut hi) = (best_s - h, best_s + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if energy(a) < energy(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let s = 0.5 * (lo + hi);
    let (amplitude, value) = if energy(s) < best { (s, energy(s)) } else { (best_s, best) };
    Ok(LaminateReference {
        value,
        amplitude,
        direction: t,
        unrelaxed: energy(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::PhaseField;

    fn shear() -> Mat {
        Mat::IDENTITY + Mat::outer([1.0, 0.0], [0.0, 1.0]).scale(0.5)
    }

    #[test]
    fn laminate_shear_fixture() {
        let spec = EnergySpec::neo_hookean(PhaseField::laminate(1, 0.5, 1.0, 10.0));
        let r = laminate_reference(&spec, &shear()).unwrap();
        // Affine: (1 + 10)/2 · 0.5 · 0.25.
        assert!((r.unrelaxed - 0.6875).abs() < 1e-14);
        assert!((r.value - 0.319_318_4).abs() < 1e-6, "{}", r.value);
        assert!(r.value < r.unrelaxed);
    }

    #[test]
    fn layers_stay_volume_preserving() {
        let spec = EnergySpec::neo_hookean(PhaseField::laminate(2, 0.3, 2.0, 5.0));
        let f = Mat::new(1.2, 0.4, 0.1, (1.0 + 0.4 * 0.1) / 1.2);
        let r = laminate_reference(&spec, &f).unwrap();
        let nu = [0.0, 1.0];
        for s in [r.amplitude, -0.3 / 0.7 * r.amplitude] {
            let fl = f + Mat::outer(r.direction, nu).scale(s);
            assert!((fl.det() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_phases_do_not_relax() {
        let spec = EnergySpec::neo_hookean(PhaseField::laminate(1, 0.5, 3.0, 3.0));
        let r = laminate_reference(&spec, &shear()).unwrap();
        assert!((r.value - r.unrelaxed).abs() < 1e-12);
        assert!(r.amplitude.abs() < 1e-4);
    }

    #[test]
    fn rejects_other_phases_and_off_sigma() {
        let spec = EnergySpec::neo_hookean(PhaseField::constant(1.0));
        assert!(laminate_reference(&spec, &shear()).is_err());
        let spec = EnergySpec::neo_hookean(PhaseField::laminate(1, 0.5, 1.0, 10.0));
        assert!(matches!(
            laminate_reference(&spec, &Mat::diag(2.0, 1.0)),
            Err(Error::OffSigma { .. })
        ));
    }
}
