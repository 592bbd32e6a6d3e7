use super::*;
use crate::hilbert::GaussLegendre;
use crate::noise::NoiseSource;

fn model16() -> BoxImpurityModel {
    BoxImpurityModel::new(16, 1.0, 14, 1.0).unwrap()
}

fn integrate_box<F: Fn(f64) -> f64>(l: f64, f: F) -> f64 {
    let gl = GaussLegendre::new(20);
    gl.integrate(-0.5 * l, 0.0, 200, &f) + gl.integrate(0.0, 0.5 * l, 200, &f)
}

#[test]
fn orbitals_vanish_at_walls_and_impurity() {
    let m = model16();
    for basis in [OrbitalBasis::Parity, OrbitalBasis::LeftRight] {
        let o = build_orbitals(&m, basis);
        for k in 0..o.len() {
            for z in [-0.5, 0.0, 0.5] {
                assert!(o.eval(k, z).abs() < 1e-12, "{basis:?} k={k} z={z}");
            }
        }
    }
}

#[test]
fn orbitals_are_orthonormal_and_degenerate_in_pairs() {
    let m = BoxImpurityModel::new(8, 2.0, 6, 1.0).unwrap();
    for basis in [OrbitalBasis::Parity, OrbitalBasis::LeftRight] {
        let o = build_orbitals(&m, basis);
        for a in 0..o.len() {
            for b in 0..=a {
                let s = integrate_box(2.0, |z| o.eval(a, z) * o.eval(b, z));
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-8, "{basis:?} ⟨{a}|{b}⟩ = {s}");
            }
        }
        for n in 1..=6 {
            let (i, j) = (OrbitalSet::index(n, false), OrbitalSet::index(n, true));
            assert_eq!(o.energies[i], o.energies[j]);
            assert!((o.energies[i] - m.energy_unit() * (n * n) as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn density_vanishes_at_impurity() {
    let m = model16();
    assert!(ground_state_density(&m, 0.0).abs() < 1e-9);
    assert!(ground_state_density(&m, 1e-9).abs() < 1e-6);
    assert!(ground_state_density(&m, 0.5).abs() < 1e-9);
    assert_eq!(friedel_density(&m, 0.0), 0.0);
}

#[test]
fn closed_form_density_matches_orbital_sum() {
    let m = model16();
    for basis in [OrbitalBasis::Parity, OrbitalBasis::LeftRight] {
        let o = build_orbitals(&m, basis);
        for i in 0..=1000 {
            let z = -0.5 + i as f64 / 1000.0;
            let direct = orbital_density(&o, 16, z);
            let closed = ground_state_density(&m, z);
            assert!((direct - closed).abs() < 1e-8, "z = {z}: {direct} vs {closed}");
        }
    }
}

#[test]
fn friedel_form_holds_near_impurity() {
    let m = model16();
    for i in 1..200 {
        let z = 0.02 * i as f64 / 200.0;
        for s in [-1.0, 1.0] {
            let d = ground_state_density(&m, s * z) - friedel_density(&m, s * z);
            assert!(d.abs() < 2.0 / m.box_length, "z = {z}, Δ = {d}");
        }
    }
}

#[test]
fn broad_profile_gives_identity_elements() {
    let m = BoxImpurityModel::new(4, 1.0, 4, 1.0).unwrap();
    let o = build_orbitals(&m, OrbitalBasis::Parity);
    let sigma = 1e3;
    let focus = FocusFunction::gaussian(sigma, 1.0).unwrap();
    let f = single_particle_f_elements(&focus, 0.0, &o).unwrap();
    let c = focus.eval(0.0, 0.0);
    for a in 0..o.len() {
        for b in 0..o.len() {
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((f[(a, b)] / c - want).abs() < 1e-6);
        }
    }
}

#[test]
fn left_right_elements_decouple() {
    let m = model16();
    let o = build_orbitals(&m, OrbitalBasis::LeftRight);
    let focus = FocusFunction::gaussian(0.01, 1.0 / 16.0).unwrap();
    let f = single_particle_f_elements(&focus, 0.3, &o).unwrap();
    for a in 0..o.len() {
        for b in 0..o.len() {
            let (la, lb) = (o.labels[a], o.labels[b]);
            if la != lb {
                assert_eq!(f[(a, b)], 0.0);
            } else if la == ModeLabel::Left {
                assert!(f[(a, b)].abs() < 1e-12);
            }
        }
    }
    let right_diag = (0..o.len()).filter(|&k| o.labels[k] == ModeLabel::Right).map(|k| f[(k, k)]).sum::<f64>();
    assert!(right_diag > 0.0);
}

#[test]
fn parity_cross_elements_vanish_for_centred_focus() {
    let m = model16();
    let o = build_orbitals(&m, OrbitalBasis::Parity);
    let focus = FocusFunction::gaussian(0.05, 1.0 / 16.0).unwrap();
    let f = single_particle_f_elements(&focus, 0.0, &o).unwrap();
    for a in 0..o.len() {
        for b in 0..o.len() {
            if o.labels[a] != o.labels[b] {
                assert!(f[(a, b)].abs() < 1e-10);
            }
        }
    }
}

#[test]
fn basis_sizes_and_particle_number() {
    let m = model16();
    let o = build_orbitals(&m, OrbitalBasis::LeftRight);
    let b1 = build_manybody_basis(&m, &o, 6, 1, DEFAULT_MAX_STATES).unwrap();
    assert_eq!(b1.len(), 145);
    let b2 = build_manybody_basis(&m, &o, 6, 2, DEFAULT_MAX_STATES).unwrap();
    assert_eq!(b2.len(), 145 + 66 * 66);
    assert!(b2.configs.iter().all(|c| c.count_ones() == 16));
    assert!(matches!(
        build_manybody_basis(&m, &o, 6, 2, 1000),
        Err(QscopeError::BasisOverflow { states: 4501, limit: 1000 })
    ));
    let focus = FocusFunction::gaussian(0.01, 1.0 / 16.0).unwrap();
    let f = single_particle_f_elements(&focus, 0.1, &o).unwrap();
    let ops = build_manybody_operators(&f, &o, &b2, 400.0, 4.0 * std::f64::consts::PI.powi(2)).unwrap();
    for list in &ops.transitions {
        for &(i, j, _) in list {
            assert_eq!(b2.configs[i].count_ones(), b2.configs[j].count_ones());
        }
    }
}

#[test]
fn ground_f0_is_density_convolution() {
    let m = model16();
    let o = build_orbitals(&m, OrbitalBasis::LeftRight);
    let basis = build_manybody_basis(&m, &o, 6, 1, DEFAULT_MAX_STATES).unwrap();
    let focus = FocusFunction::gaussian(0.01, 1.0 / 16.0).unwrap();
    for z0 in [-0.2, -0.013, 0.0, 0.07, 0.31] {
        let f = single_particle_f_elements(&focus, z0, &o).unwrap();
        let ops = build_manybody_operators(&f, &o, &basis, 1.0, 1.0).unwrap();
        let gl = GaussLegendre::new(20);
        let conv = gl.integrate(-0.5, 0.0, 400, |z| focus.eval(z, z0) * ground_state_density(&m, z))
            + gl.integrate(0.0, 0.5, 400, |z| focus.eval(z, z0) * ground_state_density(&m, z));
        let got = ops.f0[basis.ground_index()];
        assert!((got - conv).abs() < 1e-8, "z0 = {z0}: {got} vs {conv}");
    }
}

#[test]
fn channel_rates() {
    assert_eq!(suppressed_rate(2.0, 0.5, 0.0, 3.0), 0.5);
    let r = suppressed_rate(1.0, 1.0, 5.0, 1.0);
    assert!((r - 1.0 / 101.0).abs() < 1e-15);
    // degenerate parity partners are not suppressed
    let m = BoxImpurityModel::new(4, 1.0, 4, 1.0).unwrap();
    let o = build_orbitals(&m, OrbitalBasis::Parity);
    let basis = build_manybody_basis(&m, &o, 2, 1, DEFAULT_MAX_STATES).unwrap();
    let focus = FocusFunction::gaussian(0.05, 0.25).unwrap();
    let f = single_particle_f_elements(&focus, 0.13, &o).unwrap();
    let gamma = 3.0;
    let ops = build_manybody_operators(&f, &o, &basis, gamma, 0.7).unwrap();
    let (a, b) = (OrbitalSet::index(3, false), OrbitalSet::index(3, true));
    let p = ops.pairs.iter().position(|&pr| pr == (a, b)).unwrap();
    assert!((ops.rates[p] - gamma * f[(a, b)].powi(2)).abs() < 1e-15);
}

#[test]
fn ground_configuration_is_stationary_without_channels() {
    let m = model16();
    let o = build_orbitals(&m, OrbitalBasis::LeftRight);
    let basis = build_manybody_basis(&m, &o, 6, 1, DEFAULT_MAX_STATES).unwrap();
    let focus = FocusFunction::gaussian(0.01, 1.0 / 16.0).unwrap();
    let f = single_particle_f_elements(&focus, 0.05, &o).unwrap();
    let mut ops = build_manybody_operators(&f, &o, &basis, 100.0, 40.0).unwrap();
    ops.rates.iter_mut().for_each(|r| *r = 0.0);
    let mut st = ManyBodyState::ground(&basis, false);
    let mut noise = NoiseSource::new(1, 0);
    let s0 = ops.signal(&st);
    for k in 0..500 {
        step_manybody_sme(&mut st, &ops, 1e-4, &mut noise, k).unwrap();
    }
    assert_eq!(st.populations()[basis.ground_index()], 1.0);
    assert_eq!(ops.signal(&st), s0);
    assert!((manybody_increment(&st, &ops, 0.2, 1e-4).unwrap() - (s0 * 1e-4 + 0.2)).abs() < 1e-15);
}

#[test]
fn diagonal_path_matches_dense_path() {
    let m = BoxImpurityModel::new(4, 1.0, 4, 1.0).unwrap();
    let o = build_orbitals(&m, OrbitalBasis::LeftRight);
    let basis = build_manybody_basis(&m, &o, 2, 2, DEFAULT_MAX_STATES).unwrap();
    let focus = FocusFunction::gaussian(0.08, 0.25).unwrap();
    let f = single_particle_f_elements(&focus, 0.2, &o).unwrap();
    let ops = build_manybody_operators(&f, &o, &basis, 5.0, 2000.0).unwrap();
    assert!(ops.rates.iter().any(|r| *r > 0.1));
    let mut diag = ManyBodyState::ground(&basis, false);
    let mut dense = ManyBodyState::ground(&basis, true);
    let mut noise = NoiseSource::new(8, 0);
    let dt = 1e-3;
    for k in 0..400 {
        let dw = noise.increment(dt);
        let a = ops.step_with_increment(&mut diag, dt, dw, k).unwrap();
        let b = ops.step_with_increment(&mut dense, dt, dw, k).unwrap();
        assert!((a.increment - b.increment).abs() < 1e-12);
    }
    let (pa, pb) = (diag.populations(), dense.populations());
    assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-10));
    assert!(1.0 - pa[basis.ground_index()] > 1e-3);
    if let operators::ManyBodyRepr::Dense(rho) = &dense.repr {
        let mut off = 0.0f64;
        for i in 0..rho.dim() {
            for j in 0..rho.dim() {
                if i != j {
                    off = off.max(rho.get(i, j).norm());
                }
            }
        }
        assert!(off < 1e-14);
    }
}

#[test]
fn non_demolition_guard() {
    let m = model16();
    assert!(check_non_demolition(&m, 0.01, 1e5, false).is_err());
    assert!(check_non_demolition(&m, 0.01, 1e5, true).is_ok());
    assert!(check_non_demolition(&m, 0.01, 4.0 * std::f64::consts::PI.powi(2), false).is_ok());
}

#[test]
fn period_fit_recovers_synthetic_wavevector() {
    let kf = std::f64::consts::PI * 16.0;
    let z: Vec<f64> = (0..400).map(|i| -0.2 + 0.4 * i as f64 / 399.0).collect();
    let q = 2.0 * kf * 1.03;
    let y: Vec<f64> = z
        .iter()
        .map(|&x| {
            let u = q * x;
            let s = if u.abs() < 1e-12 { 1.0 } else { u.sin() / u };
            2.0 * (1.0 - s) + 0.4
        })
        .collect();
    let fit = fit_friedel_period(&z, &y, kf).unwrap();
    assert!((fit.q / q - 1.0).abs() < 1e-6);
    assert!((fit.amplitude - 2.0).abs() < 1e-6);
    assert!((fit.offset - 0.4).abs() < 1e-6);
}

#[test]
fn short_scan_runs_and_stays_near_ground() {
    let cfg = FriedelConfig {
        n_steps: 2000,
        scan_start: -0.1,
        scan_end: 0.1,
        tau_frac: 0.02,
        ..FriedelConfig::default()
    };
    let schedule = FriedelSchedule::build(&cfg).unwrap();
    assert_eq!(schedule.basis.len(), 145);
    let scan = run_friedel_scan(&cfg, &schedule, 3, 0).unwrap();
    assert_eq!(scan.record.len(), 2000);
    assert_eq!(scan.filtered.len(), 2000 - 40 + 1);
    assert!(scan.max_excited < 0.2, "excited {}", scan.max_excited);
    let again = run_friedel_scan(&cfg, &schedule, 3, 0).unwrap();
    assert_eq!(scan.record.increments, again.record.increments);
}
