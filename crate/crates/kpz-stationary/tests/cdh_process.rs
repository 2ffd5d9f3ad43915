//! Chapman-Kolmogorov and structural-zero checks for the continuous dual Hahn process.

use kpz_stationary::cdh::{check_consistency, structural_zeros, x_u, x_v, AtomFlavor, CdhProcessParams};
use kpz_stationary::measure::QuadratureSpec;

fn spec() -> QuadratureSpec {
    QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 900.0, rel_tol: 1e-10 }
}

const PROBES: [f64; 5] = [0.3, 1.0, 4.0, 12.0, 40.0];

#[test]
fn consistency_without_atoms() {
    let pp = CdhProcessParams::new(1.0, 0.5).unwrap();
    let rep = check_consistency(&pp, 0.1, 0.4, 0.9, &PROBES, &[0.7, 3.0], &spec()).unwrap();
    println!("{rep:?}");
    assert!(rep.max() <= 1e-5, "{rep:?}");
}

#[test]
fn consistency_with_v_atoms() {
    let pp = CdhProcessParams::new(2.0, -0.6).unwrap();
    let sources = [x_v(-0.6, 0, 0.0), 2.0];
    let rep = check_consistency(&pp, 0.0, 0.4, 0.9, &PROBES, &sources, &spec()).unwrap();
    println!("{rep:?}");
    assert!(rep.max() <= 1e-5, "{rep:?}");
    let rep = check_consistency(&pp, 0.2, 0.8, 1.5, &PROBES, &[x_v(-0.6, 0, 0.2), 1.0], &spec()).unwrap();
    println!("{rep:?}");
    assert!(rep.max() <= 1e-5, "{rep:?}");
}

#[test]
fn consistency_with_u_atoms() {
    let pp = CdhProcessParams::new(-0.6, 2.0).unwrap();
    assert_eq!(pp.atom_grid(0.9).unwrap().flavor, AtomFlavor::U);
    let sources = [x_u(-0.6, 0, 0.3), 2.5];
    let rep = check_consistency(&pp, 0.3, 0.9, 1.6, &PROBES, &sources, &spec()).unwrap();
    println!("{rep:?}");
    assert!(rep.max() <= 1e-5, "{rep:?}");
}

#[test]
fn structural_zeros_vanish_exactly() {
    for (u, v, s, t) in [(2.0, -0.6, 0.0, 0.8), (-0.6, 2.0, 0.3, 1.6), (-0.6, 2.0, 0.9, 1.7), (1.0, 0.5, 0.2, 0.8)] {
        let pp = CdhProcessParams::new(u, v).unwrap();
        assert_eq!(structural_zeros(&pp, s, t, &spec()).unwrap(), 0.0, "({u},{v},{s},{t})");
    }
}
