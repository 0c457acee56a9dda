//! Model problems: geometry, external potential, and the interstitial
//! integral pipeline feeding the assembly.

use std::path::Path;
use std::sync::Arc;

use crate::assembly::{assemble, AssembledSystem, Discretization};
use crate::cache::{self, CacheKey};
use crate::error::Result;
use crate::fftcheb::{v_out_table, FourierTable, VoutSettings};
use crate::geometry::{build_decomposition, AtomicPatch, DomainDecomposition, UnitCell};
use crate::potentials::{ConstantField, EwaldConstant, EwaldParams, EwaldPotential, Nucleus, PotentialField, SmoothExtensionParams};

/// Geometry plus external potential.
#[derive(Clone)]
pub struct Model {
    pub name: String,
    pub decomp: DomainDecomposition,
    /// `None` is the free particle.
    pub potential: Option<Arc<dyn PotentialField>>,
    pub vout: VoutSettings,
}

/// Default interstitial settings for a cell dimension.
pub fn default_vout(dim: usize, half_width: f64) -> VoutSettings {
    VoutSettings {
        n_grid: if dim == 2 { 256 } else { 128 },
        cheb_degree: if dim == 2 { 48 } else { 40 },
        extension: SmoothExtensionParams::default_for(half_width),
    }
}

/// Ewald attraction of the given nuclei with the self-term constant.
pub fn ewald(cell: UnitCell, alpha: f64, g_cut: f64, nuclei: Vec<Nucleus>) -> Result<EwaldPotential> {
    EwaldPotential::new(
        cell,
        EwaldParams {
            alpha,
            g_cut,
            nuclei,
            constant: EwaldConstant::SelfTerm,
        },
    )
}

impl Model {
    pub fn new(name: &str, decomp: DomainDecomposition, potential: Option<Arc<dyn PotentialField>>) -> Self {
        let vout = default_vout(decomp.dim(), decomp.patches[0].half_width);
        Self {
            name: name.to_string(),
            decomp,
            potential,
            vout,
        }
    }

    /// One nucleus of charge `z` at the origin, `|G| ≤ g_cut` reciprocal modes
    /// (`None` converges the reciprocal sum to 1e-14).
    pub fn single_atom(name: &str, dim: usize, length: f64, half_width: f64, z: f64, alpha: f64, g_cut: Option<f64>) -> Result<Self> {
        let cell = UnitCell::new(length, dim)?;
        let decomp = build_decomposition(cell, vec![AtomicPatch::centered([0.0; 3], half_width)])?;
        let g_cut = g_cut.unwrap_or_else(|| EwaldParams::converged_cutoff(alpha, dim, 1e-14));
        let v = ewald(cell, alpha, g_cut, vec![Nucleus { charge: z, position: [0.0; 3] }])?;
        Ok(Self::new(name, decomp, Some(Arc::new(v))))
    }

    /// Two-dimensional hydrogen-like atom with `|G| ≤ 2`.
    pub fn example1() -> Result<Self> {
        Self::single_atom("example1", 2, 4.0, 0.2, 1.0, 5.0, Some(2.0))
    }

    /// Two nuclei at `(±1, 0)`.
    pub fn example2() -> Result<Self> {
        let cell = UnitCell::new(4.0, 2)?;
        let patches = vec![
            AtomicPatch::centered([-1.0, 0.0, 0.0], 0.2),
            AtomicPatch::centered([1.0, 0.0, 0.0], 0.2),
        ];
        let decomp = build_decomposition(cell, patches)?;
        let nuclei = vec![
            Nucleus { charge: 1.0, position: [-1.0, 0.0, 0.0] },
            Nucleus { charge: 1.0, position: [1.0, 0.0, 0.0] },
        ];
        let v = ewald(cell, 5.0, 2.0, nuclei)?;
        Ok(Self::new("example2", decomp, Some(Arc::new(v))))
    }

    /// External potential of the periodic helium model, `Z = 2`.
    pub fn helium() -> Result<Self> {
        Self::single_atom("example4", 3, 4.0, 0.2, 2.0, 5.0, None)
    }

    pub fn free_particle(dim: usize) -> Result<Self> {
        let cell = UnitCell::new(4.0, dim)?;
        let decomp = build_decomposition(cell, vec![AtomicPatch::centered([0.0; 3], 0.2)])?;
        Ok(Self::new("free_particle", decomp, None))
    }

    pub fn dim(&self) -> usize {
        self.decomp.dim()
    }

    pub fn discretize(&self, cutoff: usize, degree: usize, n_elem: usize, c_sigma: f64) -> Result<Discretization> {
        Discretization::new(self.decomp.clone(), cutoff, degree, n_elem, c_sigma)
    }

    /// Interstitial table over offsets up to `2K`.
    pub fn v_out(&self, cutoff: usize) -> Result<FourierTable> {
        match &self.potential {
            None => Ok(FourierTable::zeros(self.dim(), 2 * cutoff as i64)),
            Some(v) => v_out_table(v.clone(), &self.decomp, cutoff, &self.vout),
        }
    }

    /// Same as [`Model::v_out`], through the on-disk cache.
    pub fn v_out_cached(&self, cutoff: usize, dir: &Path) -> Result<FourierTable> {
        if self.potential.is_none() {
            return self.v_out(cutoff);
        }
        let key = CacheKey {
            potential_id: self.potential_id(),
            cutoff,
            n_grid: self.vout.n_grid,
            cheb_degree: self.vout.cheb_degree,
            b: self.vout.extension.b,
            a_c: self.vout.extension.a_c,
        };
        cache::load_or_compute(dir, &key, || self.v_out(cutoff))
    }

    fn potential_id(&self) -> String {
        let mut id = format!("{}:d{}:L{}", self.name, self.dim(), self.decomp.cell.length);
        for p in &self.decomp.patches {
            id.push_str(&format!(":p{:?}/{}", &p.center[..self.dim()], p.half_width));
        }
        id
    }

    pub fn assemble(&self, disc: &Discretization, v_out: &FourierTable) -> Result<AssembledSystem> {
        match &self.potential {
            Some(v) => assemble(disc, v.as_ref(), v_out),
            None => assemble(disc, &ConstantField { dim: self.dim(), value: 0.0 }, v_out),
        }
    }
}

/// Spline element count for refinement level `r`, `h = 0.4 / 2^r`.
pub fn elements_for_level(r: u32) -> usize {
    1usize << r
}
