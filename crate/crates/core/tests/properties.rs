//! Library-level checks against closed-form values.

use cellhom::cell::{Boundary, CellProblem, Grid};
use cellhom::density::{EnergySpec, PhaseField, TruncationLevel};
use cellhom::homog::{estimate, quasiconvexity_probe, ProbeCell, Schedule};
use cellhom::oracle::laminate_reference;
use cellhom::recovery::{build_corrector, limsup_experiment, MacroDeformation, Recovery, RecoverySettings, Slack};
use cellhom::solve::{solve_constrained, SolverConfig};
use cellhom::tensor::Mat;

fn homogeneous() -> EnergySpec {
    EnergySpec::neo_hookean(PhaseField::constant(1.0))
}

fn laminate() -> EnergySpec {
    EnergySpec::neo_hookean(PhaseField::laminate(1, 0.5, 1.0, 10.0))
}

fn shear() -> Mat {
    Mat::new(1.0, 0.5, 0.0, 1.0)
}

fn settings(m: usize) -> RecoverySettings {
    RecoverySettings {
        k_values: vec![1],
        m,
        ..RecoverySettings::default()
    }
}

#[test]
fn homogeneous_estimate_is_the_affine_energy() {
    let schedule = Schedule {
        n_values: vec![1.0, 16.0],
        k_values: vec![1, 2],
        m_values: vec![4],
        starts: 2,
        ..Schedule::default()
    };
    let f = Mat::new(2.0, 0.0, 0.0, 0.5);
    let report = estimate(&homogeneous(), &f, &schedule, false).unwrap();
    // (|F|² − 2)/2 = (4 + 0.25 − 2)/2.
    assert!((report.estimate_w_hom.unwrap() - 1.125).abs() < 1e-8);
    assert!(report.flags.n_monotone && report.flags.k_subadditive);
}

#[test]
fn periodic_cell_reproduces_the_laminate_value() {
    let spec = laminate();
    let reference = laminate_reference(&spec, &shear()).unwrap();
    let grid = Grid::new(1, 8).unwrap().with_boundary(Boundary::Periodic);
    let problem = CellProblem::new(spec, shear(), TruncationLevel::new(64.0).unwrap(), grid).unwrap();
    let result = solve_constrained(&problem, &SolverConfig::default()).unwrap();
    let rel = (result.value - reference.value).abs() / reference.value;
    assert!(rel < 0.01, "{} vs {}", result.value, reference.value);
    assert!(reference.value < reference.unrelaxed);
}

#[test]
fn homogeneous_two_piece_recovery_has_the_piecewise_energy() {
    let spec = homogeneous();
    let u = MacroDeformation::two_piece_laminate(shear(), 1, 0.5, 0.3).unwrap();
    let report = limsup_experiment(&spec, &u, Slack::Relative(0.05), &[0.5, 0.25], None, &settings(4)).unwrap();
    let exact: f64 = u.pieces().iter().map(|p| p.area() * spec.eval_w([0.5, 0.5], &p.f)).sum();
    for row in &report.rows {
        assert!((row.energy - exact).abs() < 1e-9 * exact, "{} vs {exact}", row.energy);
        assert!(row.det_residual < 1e-9);
    }
    assert!(report.passed);
}

#[test]
fn recovery_matches_u_on_the_boundary_and_obeys_the_chain_rule() {
    let spec = laminate();
    let u = MacroDeformation::two_piece_laminate(shear(), 2, 0.5, 0.2).unwrap();
    let correctors = u
        .pieces()
        .iter()
        .map(|p| build_corrector(&spec, &p.f, Slack::Relative(0.05), &settings(4)).unwrap())
        .collect();
    let recovery = Recovery::new(&u, correctors).unwrap();
    let pieces = u.pieces();
    let eps = 0.125;
    for i in 0..=20 {
        let s = i as f64 / 20.0;
        for x in [[s, 0.0], [s, 1.0], [0.0, s], [1.0, s]] {
            let z = recovery.evaluate(eps, x).unwrap().z;
            let piece = pieces.iter().find(|p| p.contains(x, 1e-12)).unwrap();
            let expected = piece.apply(x);
            assert!((z[0] - expected[0]).abs() < 1e-12 && (z[1] - expected[1]).abs() < 1e-12, "{x:?}");
        }
    }
    // Inside one element of a masked cell the map is affine, so central
    // differences are exact up to round-off.
    let h = 1e-7;
    let mut masked = 0;
    for &x in &[[0.3013, 0.2071], [0.6517, 0.8123], [0.4411, 0.1537]] {
        let sample = recovery.evaluate(eps, x).unwrap();
        masked += sample.masked as usize;
        for (j, d) in [[h, 0.0], [0.0, h]].iter().enumerate() {
            let plus = recovery.evaluate(eps, [x[0] + d[0], x[1] + d[1]]).unwrap().z;
            let minus = recovery.evaluate(eps, [x[0] - d[0], x[1] - d[1]]).unwrap().z;
            for r in 0..2 {
                let fd = (plus[r] - minus[r]) / (2.0 * h);
                assert!((fd - sample.grad.0[r][j]).abs() < 1e-6, "{x:?} ({r},{j}): {fd} vs {}", sample.grad.0[r][j]);
            }
        }
    }
    assert!(masked > 0);
}

#[test]
fn homogeneous_quasiconvexity_probe_has_no_violations() {
    let f = Mat::new(2.0, 0.0, 0.0, 0.5);
    let cell = ProbeCell::new(1, 4);
    let report = quasiconvexity_probe(&homogeneous(), &f, 4, &cell, 3, 1e-3).unwrap();
    assert_eq!(report.samples.len(), 4);
    assert_eq!(report.violations, 0);
    // Strict inequality away from φ = 0: the density is strictly polyconvex.
    assert!(report.samples[1..].iter().all(|s| s.rhs > s.lhs));
}
