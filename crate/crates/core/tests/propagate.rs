use nalgebra::{DMatrix, DVector};
use nlcontrol::propagate::*;
use nlcontrol::rotor::{build_target, RotorParams, RotorSystem};
use nlcontrol::{Error, C64};

fn co() -> RotorSystem {
    RotorSystem::new(RotorParams::co(), 8, 0).unwrap()
}

fn grid(n: usize) -> TimeGrid {
    TimeGrid::new(RotorParams::co().rotational_period(), n).unwrap()
}

fn trial(g: TimeGrid) -> ControlField {
    ControlField::gaussian(g, 5.34e-3, g.t_f / 2.0, g.t_f / 4.0)
}

#[test]
fn grid_validation() {
    assert!(TimeGrid::new(1.0, 1).is_err());
    assert!(TimeGrid::new(0.0, 10).is_err());
    let g = TimeGrid::new(2.0, 4).unwrap();
    assert_eq!(g.dt(), 0.5);
    let widths: f64 = (0..g.n_nodes()).map(|i| g.cell_width(i)).sum();
    assert!((widths - 2.0).abs() < 1e-15);
}

#[test]
fn field_length_checked() {
    let g = TimeGrid::new(1.0, 4).unwrap();
    assert!(matches!(
        ControlField::new(g, vec![0.0; 4]),
        Err(Error::DimensionMismatch {
            expected: 5,
            got: 4
        })
    ));
}

#[test]
fn field_free_ground_state_is_stationary() {
    let sys = co();
    let g = grid(256);
    let psi0 = sys.basis_state(0).unwrap();
    let traj = propagate_forward(&sys.coupling(), &ControlField::zeros(g), &psi0).unwrap();
    for s in &traj.states {
        assert!((fidelity(&psi0, s) - 1.0).abs() < 1e-14);
    }
}

#[test]
fn field_free_phase() {
    let sys = co();
    let g = grid(256);
    let j = 3;
    let psi0 = sys.basis_state(j).unwrap();
    let traj = propagate_forward(&sys.coupling(), &ControlField::zeros(g), &psi0).unwrap();
    let amp = traj.last()[sys.index_of(j).unwrap()];
    let energy = sys.params.b * (j * (j + 1)) as f64;
    let expect = C64::from_polar(1.0, -energy * g.t_f);
    assert!((amp - expect).norm() < 1e-12);
}

#[test]
fn dimension_mismatch_rejected() {
    let sys = co();
    let bad = DVector::from_element(3, C64::new(1.0, 0.0));
    assert!(propagate_forward(&sys.coupling(), &ControlField::zeros(grid(16)), &bad).is_err());
}

#[test]
fn trial_pulse_orients() {
    let sys = co();
    let g = grid(4096);
    let psi0 = sys.basis_state(0).unwrap();
    let traj = propagate_forward(&sys.coupling(), &trial(g), &psi0).unwrap();
    let orient = sys.orientation(traj.last());
    assert!(orient.abs() > 1e-3, "orientation {orient}");
    for s in &traj.states {
        assert!((s.norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn backward_forward_round_trip() {
    let sys = co();
    let g = grid(1024);
    let f = trial(g);
    let phi_f = build_target(4, 0).unwrap().embed(8).unwrap();
    let back = propagate_backward(&sys.coupling(), &f, &phi_f).unwrap();
    let fwd = propagate_forward(&sys.coupling(), &f, &back.states[0]).unwrap();
    assert!((fidelity(&phi_f, fwd.last()) - 1.0).abs() < 1e-10);
    // same field: ⟨χ|ψ⟩ is invariant
    let psi0 = sys.basis_state(0).unwrap();
    let psi = propagate_forward(&sys.coupling(), &f, &psi0).unwrap();
    let o0 = back.states[0].dotc(&psi.states[0]);
    for (c, p) in back.states.iter().zip(&psi.states) {
        assert!((c.dotc(p) - o0).norm() < 1e-10);
    }
}

#[test]
fn backward_field_free_keeps_populations() {
    let sys = co();
    let phi_f = build_target(4, 0).unwrap().embed(8).unwrap();
    let back =
        propagate_backward(&sys.coupling(), &ControlField::zeros(grid(128)), &phi_f).unwrap();
    for s in &back.states {
        for (a, b) in s.iter().zip(phi_f.iter()) {
            assert!((a.norm_sqr() - b.norm_sqr()).abs() < 1e-14);
        }
    }
}

#[test]
fn density_matches_pure() {
    let sys = co();
    let g = grid(512);
    let f = trial(g);
    let psi0 = sys.basis_state(0).unwrap();
    let rho0 = &psi0 * psi0.adjoint();
    let pure = propagate_forward(&sys.coupling(), &f, &psi0).unwrap();
    let dens = propagate_density(&[sys.coupling()], &f, &[rho0]).unwrap();
    for (p, r) in pure.states.iter().zip(&dens.states) {
        let outer = p * p.adjoint();
        assert!((outer - &r[0]).camax() < 1e-12);
        assert!((r[0].trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(hermitian_defect(&r[0]) < 1e-12);
    }
}

#[test]
fn density_rejects_non_hermitian() {
    let sys = co();
    let mut rho = DMatrix::<C64>::zeros(9, 9);
    rho[(0, 1)] = C64::new(0.1, 0.0);
    rho[(0, 0)] = C64::new(1.0, 0.0);
    let err =
        propagate_density(&[sys.coupling()], &ControlField::zeros(grid(8)), &[rho]).unwrap_err();
    assert!(matches!(err, Error::NonHermitian(_)));
}

#[test]
fn cell_matches_dense_exponential() {
    let sys = co();
    let c = CellBlock::new(&sys.coupling(), powers(4e-3), 300.0);
    let u = expm_symmetric(&sys.hamiltonian(4e-3), 300.0);
    assert!((c.u - u).camax() < 1e-13);
}

/// The cell-averaged bracket is the exact derivative of the cell overlap:
/// d/dE |⟨χ|U(E)ψ⟩|² = −τ Σ_p p E^{p−1} A_p.
#[test]
fn brackets_are_exact_cell_derivative() {
    let sys = co();
    let dynamics = PureDynamics::new(sys.coupling());
    let tau = 800.0;
    let e = 6e-3;
    let psi = propagate_forward(
        &sys.coupling(),
        &trial(grid(64)),
        &sys.basis_state(0).unwrap(),
    )
    .unwrap()
    .states[20]
        .clone();
    let chi = build_target(4, 0).unwrap().embed(8).unwrap();
    let f = |x: f64| {
        dynamics
            .overlap(
                &chi,
                &dynamics.forward(&dynamics.cell(powers(x), tau), &psi),
            )
            .norm_sqr()
    };
    let h = 1e-6;
    let fd = (f(e + h) - f(e - h)) / (2.0 * h);
    let b = dynamics.brackets(&dynamics.cell(powers(e), tau), &chi, &psi);
    let analytic = -tau * (b[0] + 2.0 * e * b[1] + 3.0 * e * e * b[2]);
    assert!(
        (fd - analytic).abs() < 1e-6 * fd.abs().max(1e-6),
        "{fd} vs {analytic}"
    );
}

#[test]
fn density_brackets_are_exact_cell_derivative() {
    let sys = co();
    let sys1 = RotorSystem::new(RotorParams::co(), 8, 1).unwrap();
    let dynamics = DensityDynamics::new(vec![sys.coupling(), sys1.coupling()]);
    let tau = 800.0;
    let e = 6e-3;
    let mk = |v: DVector<C64>| &v * v.adjoint();
    let psi0 = propagate_forward(
        &sys.coupling(),
        &trial(grid(64)),
        &sys.basis_state(0).unwrap(),
    )
    .unwrap()
    .states[20]
        .clone();
    let rho = vec![
        mk(psi0) * C64::new(0.7, 0.0),
        mk(sys1.basis_state(2).unwrap()) * C64::new(0.3, 0.0),
    ];
    let t = build_target(4, 0).unwrap().embed(8).unwrap();
    let chi = vec![mk(t), mk(sys1.basis_state(1).unwrap()) * C64::new(0.5, 0.0)];
    let f = |x: f64| {
        dynamics
            .overlap(
                &chi,
                &dynamics.forward(&dynamics.cell(powers(x), tau), &rho),
            )
            .norm_sqr()
    };
    let h = 1e-6;
    let fd = (f(e + h) - f(e - h)) / (2.0 * h);
    let b = dynamics.brackets(&dynamics.cell(powers(e), tau), &chi, &rho);
    let analytic = -tau * (b[0] + 2.0 * e * b[1] + 3.0 * e * e * b[2]);
    assert!(
        (fd - analytic).abs() < 1e-6 * fd.abs().max(1e-6),
        "{fd} vs {analytic}"
    );
}

#[test]
fn field_csv_round_trip() {
    let g = TimeGrid::new(10.0, 8).unwrap();
    let f = ControlField::gaussian(g, 1.0, 5.0, 2.0);
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let back = ControlField::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back.samples, f.samples);
    assert!((back.grid.t_f - 10.0).abs() < 1e-12);
}
