use nlcontrol::rotor::*;
use nlcontrol::thermal::*;
use nlcontrol::Error;

#[test]
fn ground_state_limit() {
    let p = RotorParams::co();
    let s = thermal_state(&p, 0.01, 8).unwrap();
    assert!(s.populations[0] >= 1.0 - 1e-6);
    assert!((s.trace() - 1.0).abs() < 1e-12);
    let t = build_target_density(&p, 0.01, 4).unwrap();
    let pure = build_target(4, 0).unwrap().embed(8).unwrap();
    let rho = t.block(0).unwrap().matrix(8);
    let want = &pure * pure.adjoint();
    assert!((rho - want).camax() < 1e-10);
}

#[test]
fn levels_are_degenerate_in_m() {
    let s = thermal_state(&RotorParams::co(), 5.0, 8).unwrap();
    for (m, b) in s.blocks() {
        for (k, j) in (m.unsigned_abs() as usize..=8).enumerate() {
            assert_eq!(b[(k, k)].re, s.populations[j]);
        }
    }
}

#[test]
fn truncation_is_checked() {
    let p = RotorParams::co();
    assert!(matches!(
        thermal_state(&p, 300.0, 8),
        Err(Error::TruncationTooSmall { .. })
    ));
    assert!(thermal_state(&p, 10.0, 9).is_ok());
    assert!(thermal_state(&p, -1.0, 8).is_err());
}

#[test]
fn target_has_thermal_spectrum() {
    let p = RotorParams::co();
    for t in [1.0, 5.0, 10.0] {
        let tgt = build_target_density(&p, t, 4).unwrap();
        assert!((tgt.trace() - 1.0).abs() < 1e-12);
        let restricted = thermal_state(&p, t, 12).unwrap();
        let z: f64 = (0..=4).map(|j| restricted.level_population(j)).sum();
        let purity: f64 = (0..=4)
            .map(|j| (2 * j + 1) as f64 * (restricted.populations[j] / z).powi(2))
            .sum();
        assert!((tgt.purity() - purity).abs() < 1e-12);
        for b in &tgt.blocks {
            let m = b.matrix(4);
            assert!(nlcontrol::propagate::hermitian_defect(&m) < 1e-14);
            let e = m.hermitian_part().symmetric_eigenvalues();
            assert!(e.iter().all(|x| *x > -1e-14));
        }
        assert!(tgt.orientation() > 0.0);
    }
}

#[test]
fn ordered_pairing_maximizes_orientation() {
    let p = RotorParams::co();
    let tgt = build_target_density(&p, 5.0, 4).unwrap();
    // Reversing the pairing within each block can only lower Tr[ρ cos θ].
    let reversed: f64 = tgt
        .blocks
        .iter()
        .map(|b| {
            b.weights
                .iter()
                .zip(b.cos_eigenvalues.iter().rev())
                .map(|(w, c)| w * c)
                .sum::<f64>()
        })
        .sum();
    assert!(tgt.orientation() > reversed);
    // The equilibrium state has no orientation.
    assert!(tgt.orientation() > 0.0);
}
