#![allow(dead_code)]

use std::sync::Arc;

use igapw::geometry::{build_decomposition, AtomicPatch, DomainDecomposition, UnitCell};
use igapw::potentials::{EwaldConstant, EwaldParams, EwaldPotential, Nucleus};

pub fn one_patch(d: usize) -> DomainDecomposition {
    build_decomposition(UnitCell::new(4.0, d).unwrap(), vec![AtomicPatch::centered([0.0; 3], 0.2)]).unwrap()
}

pub fn ewald(d: usize, charge: f64) -> Arc<EwaldPotential> {
    let g_cut = if d == 2 { 2.0 } else { EwaldParams::converged_cutoff(5.0, 3, 1e-14) };
    Arc::new(
        EwaldPotential::new(
            UnitCell::new(4.0, d).unwrap(),
            EwaldParams {
                alpha: 5.0,
                g_cut,
                nuclei: vec![Nucleus {
                    charge,
                    position: [0.0; 3],
                }],
                constant: EwaldConstant::SelfTerm,
            },
        )
        .unwrap(),
    )
}

/// Gauss rule on `[a, b]`.
pub fn gauss(order: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = igapw::geometry::gauss_legendre(order);
    x.iter()
        .zip(&w)
        .map(|(t, wi)| (0.5 * (a + b) + 0.5 * (b - a) * t, 0.5 * (b - a) * wi))
        .collect()
}
